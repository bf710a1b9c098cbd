#include "sslface/cli.hpp"

#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "sslface/active_data.hpp"
#include "sslface/error.hpp"
#include "sslface/imageio.hpp"
#include "sslface/parallel.hpp"
#include "sslface/service.hpp"
#include "sslface/verification.hpp"

namespace sslface {

namespace fs = std::filesystem;

std::string with_thousands(long value) {
  std::string digits = std::to_string(value < 0 ? -value : value);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return value < 0 ? "-" + out : out;
}

namespace {

struct HopFlags {
  double ec = 0.0005;
  double ef = 0.0005;
};

struct Common {
  unsigned threads = 0;
};

struct TrainFlags {
  std::string data = ".";
  std::string pairs = "pairs.txt";
  HopFlags y{0.0005, 0.0005};
  HopFlags crcb{0.0004, 0.0004};
  int window = 5;
  int size = 32;
  int low_res = 0;
  bool no_equalize = false;
  double subsample = 1.0;
  std::uint64_t seed = 0;
  double lambda = -1.0;
  bool augment = false;
  int holdout = -1;
  std::string out = "model.sslf";
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--data", f.data, "Dataset root (identity folders)");
  cmd->add_option("--pairs", f.pairs, "Pairs file, relative to --data unless absolute");
  cmd->add_option("--ec", f.y.ec, "Y cutoff energy E_C");
  cmd->add_option("--ef", f.y.ef, "Y forward energy E_F");
  cmd->add_option("--crcb-ec", f.crcb.ec, "CrCb cutoff energy E_C");
  cmd->add_option("--crcb-ef", f.crcb.ef, "CrCb forward energy E_F");
  cmd->add_option("--window", f.window, "Patch window side");
  cmd->add_option("--size", f.size, "Face size after resizing");
  cmd->add_option("--low-res", f.low_res, "Simulated low resolution (0 = off)");
  cmd->add_flag("--no-equalize", f.no_equalize, "Skip histogram equalization of Y");
  cmd->add_option("--subsample", f.subsample, "Fraction of patches used when fitting transforms");
  cmd->add_option("--seed", f.seed, "Seed for patch subsampling");
  cmd->add_option("--lambda", f.lambda, "L2 strength (negative = 1/n)");
}

VerificationTrainConfig train_config(const TrainFlags& f, unsigned threads) {
  auto c = VerificationTrainConfig::defaults();
  c.preprocess.size = f.size;
  c.preprocess.low_resolution = f.low_res;
  c.preprocess.equalize = !f.no_equalize;
  for (PixelHopConfig* h : {&c.y_hop, &c.crcb_hop}) {
    h->window = f.window;
    h->input_size = f.size;
    h->patch_subsample = f.subsample;
    h->seed = f.seed;
    h->threads = threads;
  }
  c.y_hop.e_cutoff = f.y.ec;
  c.y_hop.e_forward = f.y.ef;
  c.crcb_hop.e_cutoff = f.crcb.ec;
  c.crcb_hop.e_forward = f.crcb.ef;
  c.hyper.lambda = f.lambda;
  c.threads = threads;
  return c;
}

fs::path resolve(const std::string& root, const std::string& file) {
  const fs::path p(file);
  return p.is_absolute() ? p : fs::path(root) / p;
}

PairProtocol load_protocol(const std::string& root, const std::string& pairs) {
  return parse_pairs_file(resolve(root, pairs), ImageLayout{root});
}

void print_submodel(std::ostream& out, const char* name, const SubmodelReport& r) {
  out << std::left << std::setw(6) << name << std::right << std::setw(6) << r.k[0] << std::setw(6) << r.k[1]
      << std::setw(6) << r.k[2] << std::setw(6) << r.p << std::setw(6) << r.n << "   " << std::fixed
      << std::setprecision(4) << r.train_accuracy << '\n';
}

void print_param_table(std::ostream& out, const std::vector<ParamRow>& rows) {
  out << std::left << std::setw(28) << "Component" << std::right << std::setw(12) << "Parameters" << '\n';
  for (const auto& r : rows) out << std::left << std::setw(28) << r.component << std::right << std::setw(12) << with_thousands(r.count) << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- commands ----

int cmd_synth(std::ostream& out, const SyntheticSpec& spec, const std::string& dir, int folds) {
  const auto data = make_synthetic(spec);
  write_synthetic(data, dir, folds);
  out << "wrote " << data.images.size() << " images and " << data.pairs.size() << " pairs to " << dir << '\n';
  return kExitOk;
}

int cmd_train(std::ostream& out, const TrainFlags& f, const Common& common) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto config = train_config(f, common.threads);
  const PairProtocol protocol = load_protocol(f.data, f.pairs);
  std::vector<FacePair> pairs;
  if (f.holdout >= 0) {
    pairs = kfold_split(protocol, static_cast<std::size_t>(f.holdout)).train;
  } else {
    for (const auto& fold : protocol.folds) {
      const auto p = fold.pairs();
      pairs.insert(pairs.end(), p.begin(), p.end());
    }
  }
  if (f.augment) pairs = augment_flip(pairs);
  ImageStore store;
  TrainReport report;
  const VerificationModel model = train_verification(pairs, store, config, &report);
  save_verification_model(model, f.out);
  out << "trained on " << pairs.size() << " pairs in " << std::fixed << std::setprecision(1) << seconds_since(t0)
      << " s\n\n";
  out << "model      K1    K2    K3     P     N   train acc\n";
  print_submodel(out, "Y", report.y);
  print_submodel(out, "CrCb", report.crcb);
  out << "meta train accuracy " << std::fixed << std::setprecision(4) << report.meta_train_accuracy << '\n';
  out << "saved " << f.out << '\n';
  return kExitOk;
}

int cmd_eval(std::ostream& out, const std::string& model_path, const TrainFlags& f, std::size_t folds,
             const std::string& csv_path, const Common& common) {
  VerificationTrainConfig config = train_config(f, common.threads);
  if (!model_path.empty()) {
    const auto base = load_verification_model(model_path);
    config.y_hop = base.y.hop.config;
    config.crcb_hop = base.crcb.hop.config;
    config.preprocess = base.preprocess;
    config.features = base.features;
    config.hyper = base.y.classifier.hyper;
    config.y_hop.threads = config.crcb_hop.threads = common.threads;
  }
  const PairProtocol protocol = load_protocol(f.data, f.pairs);
  if (protocol.folds.size() != folds) {
    throw DataError("pairs file has " + std::to_string(protocol.folds.size()) + " folds, expected " +
                    std::to_string(folds));
  }
  ImageStore store;
  std::vector<double> acc;
  std::ostringstream csv;
  csv << "fold,accuracy\n";
  for (std::size_t k = 0; k < folds; ++k) {
    SplitPairs split = kfold_split(protocol, k);
    if (f.augment) split.train = augment_flip(split.train);
    const auto model = train_verification(split.train, store, config);
    const double a = evaluate(model, compute_pair_features(model, split.test, store, common.threads));
    acc.push_back(a);
    out << "fold " << std::setw(2) << k + 1 << "  accuracy " << std::fixed << std::setprecision(4) << a << '\n';
    csv << k + 1 << ',' << std::fixed << std::setprecision(6) << a << '\n';
  }
  double mean = 0.0;
  for (double a : acc) mean += a;
  mean /= static_cast<double>(acc.size());
  double var = 0.0;
  for (double a : acc) var += (a - mean) * (a - mean);
  const double sd = acc.size() > 1 ? std::sqrt(var / static_cast<double>(acc.size() - 1)) : 0.0;
  out << "mean accuracy " << std::fixed << std::setprecision(2) << 100.0 * mean << "% +/- " << 100.0 * sd << '\n';
  csv << "mean," << std::fixed << std::setprecision(6) << mean << "\nstd," << sd << '\n';
  if (!csv_path.empty()) {
    std::ofstream file(csv_path);
    if (!file) throw DataError("cannot write " + csv_path);
    file << csv.str();
  }
  return kExitOk;
}

int cmd_verify(std::ostream& out, const std::string& model_path, const std::string& a, const std::string& b) {
  const auto model = load_verification_model(model_path);
  const auto r = verify(model, preprocess_face(read_image(a), model.preprocess),
                        preprocess_face(read_image(b), model.preprocess));
  out << std::fixed << std::setprecision(6) << "p_y " << r.p_y << "\np_crcb " << r.p_crcb << "\nprobability "
      << r.probability << '\n'
      << (r.match ? "match" : "mismatch") << '\n';
  return kExitOk;
}

int cmd_identify(std::ostream& out, const std::string& model_path, const std::string& gallery_dir,
                 const std::string& probe, std::size_t top, const Common& common) {
  const auto model = load_verification_model(model_path);
  const auto refs = scan_identity_folders(gallery_dir);
  if (refs.empty()) throw DataError("no gallery images under " + gallery_dir);
  std::vector<GalleryFace> gallery(refs.size());
  ImageStore store;
  parallel_for(refs.size(), common.threads, [&](std::size_t i) {
    gallery[i] = {refs[i].identity, encode(model, preprocess_face(store.load(refs[i].image), model.preprocess))};
  });
  const auto ranked = identify(model, gallery, encode(model, preprocess_face(read_image(probe), model.preprocess)));
  for (std::size_t i = 0; i < std::min(top, ranked.size()); ++i) {
    out << i + 1 << '\t' << ranked[i].identity << '\t' << std::fixed << std::setprecision(6) << ranked[i].score << '\n';
  }
  return kExitOk;
}

struct ActiveFlags {
  std::string model;
  std::string data = ".";
  std::string pairs = "pairs.txt";
  int test_fold = -1;
  std::string strategy = "entropy";
  std::size_t batch = 100;
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  double seed_fraction = 0.05;
  std::string oracle = "ground-truth";
  std::string out;
  std::string state;
  bool resume = false;
};

int cmd_active(std::ostream& out, const ActiveFlags& f, const Common& common) {
  if (f.oracle != "ground-truth") throw InvalidInput("only the ground-truth oracle runs headless");
  const auto model = load_verification_model(f.model);
  const PairProtocol protocol = load_protocol(f.data, f.pairs);
  if (protocol.folds.size() < 2) throw DataError("active learning needs at least two folds (pool and test)");
  const std::size_t held = f.test_fold < 0 ? protocol.folds.size() - 1 : static_cast<std::size_t>(f.test_fold);
  SplitPairs split = kfold_split(protocol, held);
  ImageStore store;
  const ActiveDataset data = build_active_dataset(model, split.train, split.test, store, common.threads);

  ActiveConfig config;
  config.strategy = parse_strategy(f.strategy);
  config.batch_size = f.batch;
  config.budget = f.budget == 0 ? data.pool.y.size() : f.budget;
  config.seed = f.seed;
  config.seed_fraction = f.seed_fraction;
  config.threads = common.threads;

  GroundTruthOracle oracle(data.pool.y);
  std::optional<fs::path> state_path;
  if (!f.state.empty()) state_path = fs::path(f.state);
  const ActiveState state = f.resume && state_path && fs::exists(*state_path)
                                ? resume_active_loop(data.pool, data.test, load_active_state(*state_path), oracle, state_path)
                                : run_active_loop(data.pool, data.test, config, oracle, state_path);

  const std::string csv = trace_csv(state.trace);
  if (f.out.empty() || f.out == "-") {
    out << csv;
  } else {
    std::ofstream file(f.out);
    if (!file) throw DataError("cannot write " + f.out);
    file << csv;
  }
  const double passive = ActiveSession::passive_accuracy(data.pool, data.test, config.hyper);
  out << "# pool " << data.pool.y.size() << " pairs, test " << data.test.y.size() << " pairs\n";
  out << "# passive full-pool accuracy " << std::fixed << std::setprecision(4) << passive << '\n';
  for (double frac : {0.95, 0.99, 1.0}) {
    const auto n = labels_to_reach(state.trace, frac * passive);
    out << "# labels to reach " << std::setprecision(0) << 100 * frac << "% of passive: "
        << (n ? std::to_string(*n) : std::string("not reached")) << '\n';
  }
  if (state.suspended) out << "# suspended; resume with --resume --state " << f.state << '\n';
  return kExitOk;
}

struct ParamFlags {
  std::string model;
  std::array<int, kHopLevels> y{};
  std::array<int, kHopLevels> crcb{};
  std::string accounting = "text";
};

int cmd_params(std::ostream& out, const ParamFlags& f, bool forced) {
  ParamAccounting acc;
  if (f.accounting == "text") {
    acc = ParamAccounting::kText;
  } else if (f.accounting == "table4") {
    acc = ParamAccounting::kTable4;
  } else {
    throw InvalidInput("--accounting must be text or table4");
  }
  std::vector<ParamRow> rows;
  int crcb_k1 = f.crcb[0];
  if (!f.model.empty() && !forced) {
    const auto model = load_verification_model(f.model);
    rows = parameter_table(model, acc);
    crcb_k1 = model.crcb.hop.level_counts[0];
  } else {
    rows = parameter_table(f.y, f.crcb, acc);
  }
  print_param_table(out, rows);
  if (acc == ParamAccounting::kText && crcb_k1 > 0) {
    out << "note: first CrCb hop counted with 5x5x2 = 50 weights per kernel (" << with_thousands(50L * crcb_k1 + 1)
        << "); the published table counts 25 per kernel (" << with_thousands(25L * crcb_k1 + 1)
        << ", use --accounting table4)\n";
  }
  return kExitOk;
}

struct ServeFlags {
  ServiceConfig config;
};

Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(std::ostream& out, ServeFlags f, const Common& common) {
  f.config.threads = common.threads;
  if (f.config.store_path.empty()) f.config.store_path = "sslface-sessions";
  Service service(f.config);
  const int port = service.bind();
  out << "listening on " << f.config.host << ':' << port << std::endl;
  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  service.run();
  g_service = nullptr;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Face verification with successive subspace learning"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--threads", common.threads, "Worker threads (0 = all cores)");

  SyntheticSpec synth;
  std::string synth_out = "synthetic";
  int synth_folds = 10;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic blob-face dataset");
  c_synth->add_option("--out", synth_out, "Output directory");
  c_synth->add_option("--identities", synth.n_identities, "Number of identities");
  c_synth->add_option("--images", synth.images_per_identity, "Images per identity");
  c_synth->add_option("--noise", synth.intra_class_noise, "Per-image noise sigma (gray levels)");
  c_synth->add_option("--pairs", synth.n_pairs, "Total pairs (0 = one per image)");
  c_synth->add_option("--folds", synth_folds, "Folds in the pairs file");
  c_synth->add_option("--seed", synth.seed, "Generator seed");
  c_synth->add_option("--size", synth.image_size, "Image side in pixels");

  TrainFlags train;
  auto* c_train = app.add_subcommand("train", "Fit transforms, classifiers and meta classifier");
  add_train_flags(c_train, train);
  c_train->add_flag("--augment", train.augment, "Add mirrored copies of every pair");
  c_train->add_option("--holdout", train.holdout, "Exclude this fold (0-based) from training");
  c_train->add_option("--out", train.out, "Model file");

  TrainFlags eval;
  std::string eval_model, eval_csv;
  std::size_t eval_folds = 10;
  auto* c_eval = app.add_subcommand("eval", "k-fold cross-validated accuracy");
  add_train_flags(c_eval, eval);
  c_eval->add_flag("--augment", eval.augment, "Add mirrored copies of training pairs");
  c_eval->add_option("--model", eval_model, "Take hyperparameters from this model");
  c_eval->add_option("--folds", eval_folds, "Expected number of folds");
  c_eval->add_option("--csv", eval_csv, "Write per-fold accuracies here");

  std::string v_model, v_a, v_b;
  auto* c_verify = app.add_subcommand("verify", "Match probability of two face images");
  c_verify->add_option("--model", v_model, "Model file")->required();
  c_verify->add_option("a", v_a, "First image")->required();
  c_verify->add_option("b", v_b, "Second image")->required();

  std::string i_model, i_gallery, i_probe;
  std::size_t i_top = 5;
  auto* c_identify = app.add_subcommand("identify", "Rank gallery identities for a probe image");
  c_identify->add_option("--model", i_model, "Model file")->required();
  c_identify->add_option("--gallery", i_gallery, "Gallery root (identity folders)")->required();
  c_identify->add_option("--probe", i_probe, "Probe image")->required();
  c_identify->add_option("--top", i_top, "Identities to print");

  ActiveFlags active;
  auto* c_active = app.add_subcommand("active", "Active-learning run with a simulated oracle");
  c_active->add_option("--model", active.model, "Model providing transforms and node statistics")->required();
  c_active->add_option("--data", active.data, "Dataset root");
  c_active->add_option("--pairs", active.pairs, "Pairs file");
  c_active->add_option("--test-fold", active.test_fold, "Held-out fold (default: last)");
  c_active->add_option("--strategy", active.strategy, "entropy, qbc or coreset");
  c_active->add_option("--batch", active.batch, "Pairs queried per round");
  c_active->add_option("--budget", active.budget, "Total labels (0 = whole pool)");
  c_active->add_option("--seed", active.seed, "Seed for the initial labeled set");
  c_active->add_option("--seed-fraction", active.seed_fraction, "Initial labeled fraction of the pool");
  c_active->add_option("--oracle", active.oracle, "Label source");
  c_active->add_option("--out", active.out, "Trace CSV (default stdout)");
  c_active->add_option("--state", active.state, "Resumable state file");
  c_active->add_flag("--resume", active.resume, "Continue from --state");

  ParamFlags params;
  auto* c_params = app.add_subcommand("params", "Parameter table");
  c_params->add_option("--model", params.model, "Model file");
  auto* o_k1 = c_params->add_option("--k1", params.y[0], "Y level-1 node count");
  auto* o_k2 = c_params->add_option("--k2", params.y[1], "Y level-2 node count");
  auto* o_k3 = c_params->add_option("--k3", params.y[2], "Y level-3 node count");
  auto* o_c1 = c_params->add_option("--crcb-k1", params.crcb[0], "CrCb level-1 node count");
  auto* o_c2 = c_params->add_option("--crcb-k2", params.crcb[1], "CrCb level-2 node count");
  auto* o_c3 = c_params->add_option("--crcb-k3", params.crcb[2], "CrCb level-3 node count");
  c_params->add_option("--accounting", params.accounting, "text or table4");

  ServeFlags serve;
  std::string serve_data, serve_model, serve_store;
  auto* c_serve = app.add_subcommand("serve", "Run the annotation and verification service");
  c_serve->add_option("--host", serve.config.host, "Bind address")->envname("SSLF_HOST");
  c_serve->add_option("--port", serve.config.port, "Port (0 = any)")->envname("SSLF_PORT");
  c_serve->add_option("--data", serve_data, "Data root")->envname("SSLF_DATA_ROOT");
  c_serve->add_option("--model", serve_model, "Model file")->envname("SSLF_MODEL")->required();
  c_serve->add_option("--store", serve_store, "Session store directory")->envname("SSLF_STORE");
  c_serve->add_option("--token", serve.config.token, "Bearer token")->envname("SSLF_TOKEN");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(out, synth, synth_out, synth_folds);
    if (c_train->parsed()) return cmd_train(out, train, common);
    if (c_eval->parsed()) return cmd_eval(out, eval_model, eval, eval_folds, eval_csv, common);
    if (c_verify->parsed()) return cmd_verify(out, v_model, v_a, v_b);
    if (c_identify->parsed()) return cmd_identify(out, i_model, i_gallery, i_probe, i_top, common);
    if (c_active->parsed()) return cmd_active(out, active, common);
    if (c_params->parsed()) {
      const std::array<const CLI::Option*, 6> counts{o_k1, o_k2, o_k3, o_c1, o_c2, o_c3};
      const bool forced = std::any_of(counts.begin(), counts.end(), [](const CLI::Option* o) { return o->count() > 0; });
      if (!forced && params.model.empty()) throw InvalidInput("params needs --model or forced --k1/--k2/--k3 counts");
      return cmd_params(out, params, forced);
    }
    if (c_serve->parsed()) {
      serve.config.data_root = serve_data;
      serve.config.model_path = serve_model;
      serve.config.store_path = serve_store;
      return cmd_serve(out, serve, common);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.category()) {
      case Error::Category::kUsage: return kExitUsage;
      case Error::Category::kData: return kExitData;
      case Error::Category::kNumeric: return kExitNumeric;
    }
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace sslface
