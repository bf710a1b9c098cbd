// Acceptance suite: one PASS/FAIL line per criterion.
//
// Set SSLF_LFW_ROOT to an aligned LFW tree (identity folders of PNG/PPM files
// plus pairs.txt) to run the LFW accuracy tier as part of criterion 9.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "sslface/active_data.hpp"
#include "sslface/cli.hpp"
#include "sslface/error.hpp"
#include "sslface/verification.hpp"
#include "test_util.hpp"

using namespace sslface;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- shared synthetic pipeline ----

struct Pipeline {
  SyntheticDataset data;
  ImageStore store;
  std::vector<FacePair> train, test;
  VerificationModel model;
  double train_seconds = 0.0;
  double test_accuracy = 0.0;
};

std::unique_ptr<Pipeline> g_pipeline;

const Pipeline& pipeline() {
  if (!g_pipeline) throw std::runtime_error("synthetic pipeline was not trained");
  return *g_pipeline;
}

std::vector<ImageTensor> synthetic_planes(int n, bool crcb, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_identities = 10;
  spec.images_per_identity = (n + 9) / 10;
  spec.intra_class_noise = 6.0;
  spec.n_pairs = 10;
  spec.seed = seed;
  const auto data = make_synthetic(spec);
  std::vector<ImageTensor> out;
  for (int i = 0; i < n; ++i) {
    auto planes = preprocess_face(data.images[i].image);
    out.push_back(crcb ? planes.crcb : planes.y);
  }
  return out;
}

// ---- criteria ----

Outcome parameter_table_exact() {
  const long expected[12] = {451, 2543, 2969, 740, 341, 476, 1369, 1348, 432, 242, 3, 10914};
  const auto rows = parameter_table({18, 119, 233}, {19, 73, 124}, ParamAccounting::kTable4);
  bool ok = rows.size() == 12;
  for (std::size_t i = 0; ok && i < 12; ++i) ok = rows[i].count == expected[i];

  std::ostringstream out, err;
  const int code = run_cli({"sslface", "params", "--k1", "18", "--k2", "119", "--k3", "233", "--crcb-k1", "19", "--crcb-k2",
                            "73", "--crcb-k3", "124", "--accounting", "table4"},
                           out, err);
  const std::string text = out.str();
  ok = ok && code == 0;
  for (const char* s : {"451", "2,543", "2,969", "740", "341", "476", "1,369", "1,348", "432", "242", "10,914"}) {
    ok = ok && text.find(s) != std::string::npos;
  }
  return {ok, "total " + with_thousands(rows.empty() ? 0 : rows.back().count)};
}

Outcome feature_dimension_law() {
  const auto y = FeatureLayout::from_counts(18, 119, 233), c = FeatureLayout::from_counts(19, 73, 124);
  bool ok = y.n == 340 && c.n == 241 && y.p == 23 && c.p == 12;
  int fits = 0;
  const std::pair<double, double> energies[] = {{0.0005, 0.0005}, {0.0002, 0.001}, {0.002, 0.002}, {0.0004, 0.0004}};
  for (bool crcb : {false, true}) {
    const auto images = synthetic_planes(40, crcb, 31);
    for (const auto& [ec, ef] : energies) {
      PixelHopConfig cfg;
      cfg.input_channels = crcb ? 2 : 1;
      cfg.e_cutoff = ec;
      cfg.e_forward = ef;
      const auto m = fit_pixelhop(images, cfg);
      const auto layout = FeatureLayout::from_model(m);
      const int k1 = m.level_counts[0], k2 = m.level_counts[1], k3 = m.level_counts[2];
      const auto a = apply_pixelhop(m, images[0]), b = apply_pixelhop(m, images[1]);
      const std::vector<HopOutputs> both{a, b};
      const auto f = extract_pair_feature(a, b, fit_stats(both), layout);
      ok = ok && layout.n == 7 + 4 * k1 + 2 * k2 + k3 / 10 && static_cast<int>(f.values.size()) == layout.n;
      ++fits;
    }
  }
  return {ok, "340 / 241; law held on " + std::to_string(fits) + " fits"};
}

Outcome saab_matches_pca() {
  double worst_vec = 0.0, worst_val = 0.0, worst_orth = 0.0, worst_share = 0.0;
  const int dims[5] = {25, 50, 25, 50, 25};
  for (int t = 0; t < 5; ++t) {
    const int d = dims[t];
    std::mt19937_64 gen(100 + t);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    // correlated rows so the spectrum is not flat
    Eigen::MatrixXd mix(d, d);
    for (int i = 0; i < mix.size(); ++i) mix.data()[i] = u(gen) - 0.5;
    Eigen::MatrixXd x(200, d);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = u(gen);
    x = x * mix + Eigen::MatrixXd::Constant(200, d, u(gen));

    PatchSet ps{d, 200, 1, x};
    const auto bank = fit_saab(ps);
    oracle::Matrix rows(200, std::vector<double>(d));
    for (int i = 0; i < 200; ++i) {
      for (int j = 0; j < d; ++j) rows[i][j] = x(i, j);
    }
    const auto ref = oracle::jacobi_eigen(oracle::residual_covariance(rows));
    for (int k = 1; k < bank.n_kept(); ++k) {
      worst_val = std::max(worst_val, std::abs(bank.eigenvalues[k - 1] - ref.values[k - 1]));
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += bank.kernels(j, k) * ref.vectors[k - 1][j];
      const double s = dot < 0 ? -1.0 : 1.0;
      for (int j = 0; j < d; ++j) worst_vec = std::max(worst_vec, std::abs(bank.kernels(j, k) - s * ref.vectors[k - 1][j]));
    }
    const Eigen::MatrixXd gram = bank.kernels.transpose() * bank.kernels;
    worst_orth = std::max(worst_orth, (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff());

    const auto spectrum = fit_spectrum(d, [&](const auto& sink) { sink(x); });
    double share = 0.0;
    for (double e : spectrum.energies) share += e / spectrum.total_energy();
    worst_share = std::max(worst_share, std::abs(share - 1.0));
  }

  // energy shares of every unit in a complete transform tree
  PixelHopConfig cfg;
  cfg.input_channels = 2;
  cfg.e_cutoff = cfg.e_forward = 0.0;
  const auto m = fit_pixelhop(synthetic_planes(12, true, 5), cfg);
  std::vector<double> sums(m.banks.size(), 0.0);
  for (const auto& n : m.nodes) sums[n.bank] += n.e_init;
  for (double s : sums) worst_share = std::max(worst_share, std::abs(s - 1.0));

  const bool ok = worst_vec < 1e-6 && worst_val < 1e-6 && worst_orth < 1e-8 && worst_share < 1e-9;
  std::ostringstream d;
  d << "kernel err " << fmt("%.1e", worst_vec) << ", eigenvalue err " << fmt("%.1e", worst_val) << ", orthonormality "
    << fmt("%.1e", worst_orth) << ", energy share err " << fmt("%.1e", worst_share);
  return {ok, d.str()};
}

Outcome spatial_chain() {
  bool ok = true;
  for (int channels : {1, 2}) {
    PixelHopConfig cfg;
    cfg.input_channels = channels;
    ok = ok && cfg.grid_sizes() == std::array<int, kHopLevels>{28, 10, 1};
    const auto m = fit_pixelhop(synthetic_planes(20, channels == 2, 9), cfg);
    for (int t = 0; t < 6; ++t) {
      ImageTensor img = t % 3 == 0   ? oracle::random_tensor(32, 32, channels, 50 + t)
                        : t % 3 == 1 ? oracle::smooth_tensor(32, channels, 50 + t)
                                     : ImageTensor(32, 32, channels);
      const auto out = apply_pixelhop(m, img);
      ok = ok && static_cast<int>(out.level1.size()) == m.level_counts[0];
      ok = ok && static_cast<int>(out.level2.size()) == m.level_counts[1];
      ok = ok && static_cast<int>(out.level3.size()) == m.level_counts[2];
      for (const auto& g : out.level1) {
        ok = ok && g.rows() == 28 && g.cols() == 28;
        const auto p = max_pool_2x2(g);
        ok = ok && p.rows() == 14 && p.cols() == 14;
      }
      for (const auto& g : out.level2) {
        ok = ok && g.rows() == 10 && g.cols() == 10;
        const auto p = max_pool_2x2(g);
        ok = ok && p.rows() == 5 && p.cols() == 5;
      }
    }
  }
  return {ok, "28x28 -> 14x14, 10x10 -> 5x5, 1x1 for Y and CrCb"};
}

RgbImage random_face(std::mt19937_64& gen, int kind) {
  RgbImage img(32, 32);
  std::uniform_int_distribution<int> px(0, 255);
  if (kind == 0) {
    for (auto& v : img.data) v = static_cast<std::uint8_t>(px(gen));
  } else if (kind == 1) {
    const int a = px(gen), b = px(gen), c = px(gen);
    for (int r = 0; r < 32; ++r) {
      for (int col = 0; col < 32; ++col) {
        img.at(r, col, 0) = static_cast<std::uint8_t>((a + 4 * r) % 256);
        img.at(r, col, 1) = static_cast<std::uint8_t>((b + 3 * col) % 256);
        img.at(r, col, 2) = static_cast<std::uint8_t>((c + r * col) % 256);
      }
    }
  }
  return img;  // kind 2: all black
}

Outcome pair_feature_laws() {
  const auto& p = pipeline();
  const auto& m = p.model;
  std::mt19937_64 gen(77);
  int cases = 0;
  double worst_self = 0.0, worst_swap = 0.0;
  bool finite = true;
  for (int t = 0; t < 1000; ++t) {
    const auto a = encode(m, preprocess_face(random_face(gen, t % 3), m.preprocess));
    const auto b = encode(m, preprocess_face(random_face(gen, (t / 3) % 3), m.preprocess));
    for (const SubModel* s : {&m.y, &m.crcb}) {
      const auto& ha = s == &m.y ? a.y : a.crcb;
      const auto& hb = s == &m.y ? b.y : b.crcb;
      const auto self = extract_pair_feature(ha, ha, s->stats, s->layout, m.features);
      const auto ab = extract_pair_feature(ha, hb, s->stats, s->layout, m.features);
      const auto ba = extract_pair_feature(hb, ha, s->stats, s->layout, m.features);
      for (double v : self.values) worst_self = std::max(worst_self, std::abs(v - 1.0));
      for (std::size_t i = 0; i < ab.values.size(); ++i) {
        worst_swap = std::max(worst_swap, std::abs(ab.values[i] - ba.values[i]));
        finite = finite && std::isfinite(ab.values[i]);
      }
    }
    ++cases;
  }
  const bool ok = finite && worst_self < 1e-12 && worst_swap < 1e-12;
  return {ok, std::to_string(cases) + " random pairs (noise, ramps, black); self err " + fmt("%.1e", worst_self) +
                  ", swap err " + fmt("%.1e", worst_swap)};
}

Outcome classifier_numerics() {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(60, 4);
  std::vector<int> y(60);
  for (int i = 0; i < 60; ++i) {
    y[i] = i % 2;
    for (int j = 0; j < 4; ++j) x(i, j) = g(gen) + (y[i] ? 0.7 : -0.7);
  }
  double worst_grad = 0.0;
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd w(4);
    for (int j = 0; j < 4; ++j) w(j) = g(gen);
    const double b = g(gen);
    for (int loss = 0; loss < 2; ++loss) {
      auto f = [&](const Eigen::VectorXd& ww, double bb, Eigen::VectorXd* gw, double* gb) {
        return loss == 0 ? logistic_objective(ww, bb, x, y, 0.1, gw, gb) : hinge_objective(ww, bb, x, y, 0.1, gw, gb);
      };
      Eigen::VectorXd gw;
      double gb = 0.0;
      f(w, b, &gw, &gb);
      Eigen::VectorXd ana(5), num(5);
      ana << gw, gb;
      for (int j = 0; j < 4; ++j) {
        Eigen::VectorXd wp = w, wm = w;
        wp(j) += h;
        wm(j) -= h;
        num(j) = (f(wp, b, nullptr, nullptr) - f(wm, b, nullptr, nullptr)) / (2 * h);
      }
      num(4) = (f(w, b + h, nullptr, nullptr) - f(w, b - h, nullptr, nullptr)) / (2 * h);
      worst_grad = std::max(worst_grad, (ana - num).norm() / std::max(1e-12, num.norm()));
    }
  }
  TrainTrace trace;
  train_logistic(x, y, {}, &trace);
  bool monotone = trace.objective.size() >= 2;
  for (std::size_t i = 1; i < trace.objective.size(); ++i) monotone = monotone && trace.objective[i] <= trace.objective[i - 1] + 1e-12;

  const auto t0 = std::chrono::steady_clock::now();
  auto p = std::make_unique<Pipeline>();
  SyntheticSpec spec;
  spec.n_identities = 20;
  spec.images_per_identity = 10;
  spec.intra_class_noise = 4.0;
  spec.n_pairs = 2000;
  spec.seed = 2024;
  p->data = make_synthetic(spec);
  p->store.insert(p->data);
  p->train.assign(p->data.pairs.begin(), p->data.pairs.begin() + 1000);
  p->test.assign(p->data.pairs.begin() + 1000, p->data.pairs.end());
  p->model = train_verification(p->train, p->store, VerificationTrainConfig::defaults());
  p->test_accuracy = evaluate(p->model, compute_pair_features(p->model, p->test, p->store));
  p->train_seconds = elapsed(t0);
  g_pipeline = std::move(p);
  const auto& q = *g_pipeline;

  const bool ok = worst_grad < 1e-5 && monotone && q.test_accuracy >= 0.90 && q.train_seconds < 120.0;
  return {ok, "gradient rel err " + fmt("%.1e", worst_grad) + (monotone ? ", loss non-increasing" : ", loss increased") +
                  ", held-out accuracy " + fmt("%.2f%%", 100.0 * q.test_accuracy) + " on 1000 pairs, train+test " +
                  fmt("%.1f s", q.train_seconds)};
}

double cover_radius(const std::vector<Eigen::Vector2d>& pts, const std::vector<std::size_t>& centers) {
  double r = 0.0;
  for (const auto& p : pts) {
    double best = 1e300;
    for (auto c : centers) best = std::min(best, (p - pts[c]).norm());
    r = std::max(r, best);
  }
  return r;
}

Outcome active_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::vector<std::string> notes;

  // unit values
  const auto e = entropy_scores({{0.5, 0.5}, {1.0, 0.0}});
  const auto v = vote_entropy_scores({{1, 1}, {0, 0}, {1, 0}}, 2);
  const bool units = e[0] == std::log(2.0) && e[1] == 0.0 && v[0] == 0.0 && v[1] == 0.0 && v[2] == std::log(2.0);
  ok = ok && units;

  // hand-simulated core-set picks on a line
  auto line = [](std::initializer_list<double> xs) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(xs.size()), 1);
    Eigen::Index i = 0;
    for (double x : xs) m(i++, 0) = x;
    return m;
  };
  const bool hand = k_center_greedy(line({1, 2, 10}), line({0}), 2) == std::vector<std::size_t>{2, 1} &&
                    k_center_greedy(line({1, 2, 3, 4, 10}), line({0}), 3) == std::vector<std::size_t>{4, 3, 1} &&
                    k_center_greedy(line({-5, 0, 1, 5}), Eigen::MatrixXd(0, 1), 2) == std::vector<std::size_t>{0, 3};
  ok = ok && hand;

  // 2-approximation against an exhaustive search
  std::mt19937_64 gen(13);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  double worst_ratio = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 6 + trial % 7, b = 1 + trial % 4;
    std::vector<Eigen::Vector2d> pts(n);
    for (auto& p : pts) p = {u(gen), u(gen)};
    Eigen::MatrixXd cand(n - 1, 2), lab(1, 2);
    lab.row(0) = pts[0].transpose();
    for (int i = 1; i < n; ++i) cand.row(i - 1) = pts[i].transpose();
    std::vector<std::size_t> greedy{0};
    for (auto k : k_center_greedy(cand, lab, b)) greedy.push_back(k + 1);
    double best = 1e300;
    for (unsigned mask = 0; mask < (1u << (n - 1)); ++mask) {
      if (std::popcount(mask) != b) continue;
      std::vector<std::size_t> centers{0};
      for (int i = 0; i < n - 1; ++i) {
        if (mask >> i & 1u) centers.push_back(i + 1);
      }
      best = std::min(best, cover_radius(pts, centers));
    }
    worst_ratio = std::max(worst_ratio, best > 0 ? cover_radius(pts, greedy) / best : 1.0);
  }
  ok = ok && worst_ratio <= 2.0 + 1e-12;

  // label efficiency on pipeline features: the shared pool and a noisier one
  const auto& p = pipeline();
  SyntheticSpec spec = p.data.spec;
  spec.intra_class_noise = 40.0;
  const auto noisy = make_synthetic(spec);
  ImageStore noisy_store;
  noisy_store.insert(noisy);
  const std::vector<FacePair> noisy_pool(noisy.pairs.begin(), noisy.pairs.begin() + 1000);
  const std::vector<FacePair> noisy_test(noisy.pairs.begin() + 1000, noisy.pairs.end());
  const auto noisy_model = train_verification(noisy_pool, noisy_store, VerificationTrainConfig::defaults());

  const ActiveDataset pools[] = {build_active_dataset(p.model, p.train, p.test, p.store),
                                 build_active_dataset(noisy_model, noisy_pool, noisy_test, noisy_store)};
  for (const auto& data : pools) {
    const double passive = ActiveSession::passive_accuracy(data.pool, data.test, {});
    const std::size_t half = data.pool.y.size() / 2;
    std::string note = "passive " + fmt("%.2f%%", 100.0 * passive) + ", labels to within 1% of it:";
    for (auto strategy : {Strategy::kEntropy, Strategy::kQbc}) {
      ActiveConfig cfg;
      cfg.strategy = strategy;
      cfg.batch_size = 25;
      cfg.budget = half;
      cfg.seed = 1;
      GroundTruthOracle oracle(data.pool.y);
      const auto s = run_active_loop(data.pool, data.test, cfg, oracle);
      const auto need = labels_to_reach(s.trace, passive - 0.01);
      ok = ok && need && *need <= half;
      note += std::string(" ") + to_string(strategy) + " " + (need ? std::to_string(*need) : std::string("never"));

      GroundTruthOracle again(data.pool.y);
      ok = ok && trace_csv(run_active_loop(data.pool, data.test, cfg, again).trace) == trace_csv(s.trace);
    }
    notes.push_back(note + " of " + std::to_string(data.pool.y.size()));
  }
  const double secs = elapsed(t0);
  ok = ok && secs < 300.0;

  std::string d = std::string(units ? "unit values exact" : "unit values wrong") + (hand ? ", hand picks match" : ", hand picks differ") +
                  ", cover ratio <= " + fmt("%.3f", worst_ratio);
  d += "; sigma 4 pool: " + notes[0] + "; sigma 40 pool: " + notes[1];
  return {ok, d + "; repeat runs identical"};
}

Outcome serialization() {
  const auto& p = pipeline();
  testutil::TempDir tmp("sslf_accept");
  const auto path = tmp.path / "model.sslf";
  save_verification_model(p.model, path);
  const auto loaded = load_verification_model(path);
  const std::vector<FacePair> some(p.test.begin(), p.test.begin() + 200);
  const auto t1 = compute_pair_features(p.model, some, p.store);
  const auto t2 = compute_pair_features(loaded, some, p.store);
  bool ok = t1.y == t2.y && t1.crcb == t2.crcb;
  for (Eigen::Index i = 0; ok && i < t1.y.rows(); ++i) {
    ok = verify_features(p.model, t1.y.row(i).transpose(), t1.crcb.row(i).transpose()).probability ==
         verify_features(loaded, t2.y.row(i).transpose(), t2.crcb.row(i).transpose()).probability;
  }

  std::ifstream in(path, std::ios::binary);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto rejected = [&](std::vector<char> b) {
    std::ofstream(tmp.path / "bad.sslf", std::ios::binary).write(b.data(), static_cast<std::streamsize>(b.size()));
    try {
      load_verification_model(tmp.path / "bad.sslf");
    } catch (const LoadError&) {
      return true;
    }
    return false;
  };
  int rejects = 0, tries = 0;
  for (std::size_t pos : {std::size_t{0}, std::size_t{4}, std::size_t{20}, bytes.size() / 3, bytes.size() / 2, bytes.size() - 1}) {
    auto b = bytes;
    b[pos] = static_cast<char>(b[pos] ^ 0x10);
    rejects += rejected(b) ? 1 : 0;
    ++tries;
  }
  for (std::size_t keep : {std::size_t{0}, std::size_t{6}, bytes.size() / 2, bytes.size() - 4}) {
    rejects += rejected(std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep))) ? 1 : 0;
    ++tries;
  }
  ok = ok && rejects == tries;
  return {ok, "200 pairs bit-exact after reload; " + std::to_string(rejects) + "/" + std::to_string(tries) +
                  " corrupted or truncated files rejected"};
}

double submodel_accuracy(const SubModel& s, const Eigen::MatrixXd& raw, const std::vector<int>& labels) {
  std::size_t hit = 0, n = 0;
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    if (labels[i] < 0) continue;
    ++n;
    hit += predict_label(s.classifier, s.scaler.transform(raw.row(i).transpose())) == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

std::string lfw_tier(const std::string& root, bool& ok) {
  const auto protocol = parse_pairs_file(std::filesystem::path(root) / "pairs.txt", ImageLayout{root});
  ImageStore store;
  std::string out;
  for (int res : {32, 16}) {
    auto cfg = VerificationTrainConfig::defaults();
    cfg.preprocess.low_resolution = res == 32 ? 0 : 16;
    double mean = 0.0, mean_y = 0.0, mean_c = 0.0;
    const auto folds = protocol.folds.size();
    for (std::size_t k = 0; k < folds; ++k) {
      const auto split = kfold_split(protocol, k);
      const auto model = train_verification(split.train, store, cfg);
      const auto table = compute_pair_features(model, split.test, store);
      mean += evaluate(model, table) / static_cast<double>(folds);
      mean_y += submodel_accuracy(model.y, table.y, table.labels) / static_cast<double>(folds);
      mean_c += submodel_accuracy(model.crcb, table.crcb, table.labels) / static_cast<double>(folds);
    }
    const double target = res == 32 ? 83.30 : 82.16;
    ok = ok && std::abs(100.0 * mean - target) <= 3.0;
    out += "; LFW " + std::to_string(res) + "x" + std::to_string(res) + " " + fmt("%.2f%%", 100.0 * mean);
    if (res == 32) {
      ok = ok && std::abs(100.0 * mean_y - 83.47) <= 3.0 && std::abs(100.0 * mean_c - 75.89) <= 3.0;
      out += " (Y " + fmt("%.2f%%", 100.0 * mean_y) + ", CrCb " + fmt("%.2f%%", 100.0 * mean_c) + ")";
    }
  }
  return out;
}

Outcome identification_and_lfw() {
  const auto& p = pipeline();
  std::vector<GalleryFace> gallery;
  for (const auto& img : p.data.images) {
    gallery.push_back({img.identity, encode(p.model, preprocess_face(img.image, p.model.preprocess))});
  }
  std::size_t hits = 0;
  for (const auto& probe : gallery) hits += identify(p.model, gallery, probe.encoding)[0].identity == probe.identity ? 1 : 0;
  const double rate = static_cast<double>(hits) / static_cast<double>(gallery.size());
  bool ok = rate >= 0.95;
  std::string d = "synthetic rank-1 " + fmt("%.2f%%", 100.0 * rate) + " over " + std::to_string(gallery.size()) + " probes";
  if (const char* root = std::getenv("SSLF_LFW_ROOT"); root && *root) {
    d += lfw_tier(root, ok);
  } else {
    d += "; LFW tier skipped (SSLF_LFW_ROOT not set)";
  }
  return {ok, d};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"parameter table with forced node counts", parameter_table_exact},
      {"feature dimension law", feature_dimension_law},
      {"Saab kernels against a dense eigensolver", saab_matches_pca},
      {"spatial chain", spatial_chain},
      {"pair-feature laws", pair_feature_laws},
      {"classifier numerics and synthetic verification", classifier_numerics},
      {"active-learning properties", active_learning},
      {"serialization", serialization},
      {"identification and LFW tier", identification_and_lfw},
  };
  // criterion 6 trains the shared pipeline used by 5, 7, 8 and 9
  const int order[] = {0, 1, 2, 3, 5, 4, 6, 7, 8};
  Outcome results[9];
  double seconds[9] = {};
  for (int i : order) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      results[i] = criteria[i].second();
    } catch (const std::exception& e) {
      results[i] = {false, std::string("exception: ") + e.what()};
    }
    seconds[i] = elapsed(t0);
  }
  if (seconds[0] >= 1.0) results[0].pass = false;

  int failed = 0;
  for (int i = 0; i < 9; ++i) {
    std::cout << (results[i].pass ? "PASS" : "FAIL") << "  [" << i + 1 << "] " << criteria[i].first << ": "
              << results[i].detail << " (" << fmt("%.2f s", seconds[i]) << ")\n";
    failed += results[i].pass ? 0 : 1;
  }
  std::cout << (9 - failed) << "/9 criteria passed\n";
  return failed == 0 ? 0 : 1;
}
