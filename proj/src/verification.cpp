#include "sslface/verification.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

#include "sslface/error.hpp"
#include "sslface/parallel.hpp"

namespace sslface {
namespace {

FacePlanes load_planes(const ImageStore& store, const ImageRef& ref, const PreprocessOptions& opts) {
  return preprocess_face(store.load(ref), opts);
}

std::size_t encoding_bytes(const VerificationModel& m) {
  auto hop_bytes = [](const PixelHopModel& h) {
    const auto g = h.config.grid_sizes();
    return (static_cast<std::size_t>(h.level_counts[0]) * g[0] * g[0] +
            static_cast<std::size_t>(h.level_counts[1]) * g[1] * g[1] + h.level_counts[2]) *
           sizeof(double);
  };
  return hop_bytes(m.y.hop) + hop_bytes(m.crcb.hop);
}

Eigen::VectorXd sub_feature(const SubModel& sm, const HopOutputs& a, const HopOutputs& b,
                            const PairFeatureOptions& opts) {
  const PairFeature f = extract_pair_feature(a, b, sm.stats, sm.layout, opts);
  return Eigen::Map<const Eigen::VectorXd>(f.values.data(), static_cast<Eigen::Index>(f.values.size()));
}

struct EncodingCache {
  std::vector<FaceEncoding> encodings;
  std::unordered_map<std::string, std::size_t> index;
};

PairFeatureTable features_from(const VerificationModel& model, const std::vector<FacePair>& pairs,
                               const ImageStore& store, unsigned threads, const EncodingCache* cache) {
  PairFeatureTable t;
  t.y.resize(static_cast<Eigen::Index>(pairs.size()), model.y.layout.n);
  t.crcb.resize(static_cast<Eigen::Index>(pairs.size()), model.crcb.layout.n);
  t.labels.resize(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const FacePair& p = pairs[i];
    FaceEncoding ea, eb;
    const FaceEncoding* a = nullptr;
    const FaceEncoding* b = nullptr;
    if (cache) {
      a = &cache->encodings.at(cache->index.at(p.a.key()));
      b = &cache->encodings.at(cache->index.at(p.b.key()));
    } else {
      ea = encode(model, load_planes(store, p.a, model.preprocess));
      eb = encode(model, load_planes(store, p.b, model.preprocess));
      a = &ea;
      b = &eb;
    }
    const auto r = static_cast<Eigen::Index>(i);
    t.y.row(r) = sub_feature(model.y, a->y, b->y, model.features).transpose();
    t.crcb.row(r) = sub_feature(model.crcb, a->crcb, b->crcb, model.features).transpose();
    t.labels[i] = p.match ? (*p.match ? 1 : 0) : -1;
  });
  return t;
}

EncodingCache encode_all(const VerificationModel& model, const std::vector<ImageRef>& refs, const ImageStore& store,
                         unsigned threads) {
  EncodingCache cache;
  cache.encodings.resize(refs.size());
  parallel_for(refs.size(), threads, [&](std::size_t i) {
    cache.encodings[i] = encode(model, load_planes(store, refs[i], model.preprocess));
  });
  for (std::size_t i = 0; i < refs.size(); ++i) cache.index.emplace(refs[i].key(), i);
  return cache;
}

std::vector<int> require_labels(const PairFeatureTable& t) {
  for (int l : t.labels) {
    if (l < 0) throw InvalidInput("training pairs must all be labeled");
  }
  return t.labels;
}

void fit_classifiers(VerificationModel& model, const PairFeatureTable& table, const TrainHyper& hyper,
                     TrainReport* report) {
  const auto labels = require_labels(table);
  model.y.scaler = MinMaxScaler::fit(table.y);
  model.crcb.scaler = MinMaxScaler::fit(table.crcb);
  const Eigen::MatrixXd xy = model.y.scaler.transform_rows(table.y);
  const Eigen::MatrixXd xc = model.crcb.scaler.transform_rows(table.crcb);
  model.y.classifier = train_logistic(xy, labels, hyper);
  model.crcb.classifier = train_logistic(xc, labels, hyper);

  Eigen::MatrixXd meta_x(xy.rows(), 2);
  for (Eigen::Index i = 0; i < xy.rows(); ++i) {
    meta_x(i, 0) = predict_proba(model.y.classifier, xy.row(i).transpose());
    meta_x(i, 1) = predict_proba(model.crcb.classifier, xc.row(i).transpose());
  }
  model.meta = train_logistic(meta_x, labels, hyper);

  if (report) {
    auto fill = [](SubmodelReport& r, const SubModel& sm, const Eigen::MatrixXd& x, const std::vector<int>& y) {
      r.k = sm.hop.level_counts;
      r.p = sm.layout.p;
      r.n = sm.layout.n;
      r.train_accuracy = accuracy(sm.classifier, x, y);
    };
    fill(report->y, model.y, xy, labels);
    fill(report->crcb, model.crcb, xc, labels);
    report->meta_train_accuracy = accuracy(model.meta, meta_x, labels);
  }
}

void check_config(const VerificationTrainConfig& c) {
  if (c.y_hop.input_channels != 1) throw InvalidInput("Y transform must take 1 input channel");
  if (c.crcb_hop.input_channels != 2) throw InvalidInput("CrCb transform must take 2 input channels");
  if (c.y_hop.input_size != c.preprocess.size || c.crcb_hop.input_size != c.preprocess.size) {
    throw InvalidInput("transform input size must equal the preprocessing size");
  }
  c.y_hop.validate();
  c.crcb_hop.validate();
  validate_rois(c.y_hop);
  validate_rois(c.crcb_hop);
}

nlohmann::json submodel_to_container(const SubModel& sm, ContainerWriter& w) {
  return {{"pixelhop", pixelhop_to_container(sm.hop, w)},
          {"stats", {{"mean", w.add_array(sm.stats.mean)}, {"std", w.add_array(sm.stats.std)}}},
          {"layout", {{"k1", sm.layout.k1}, {"k2", sm.layout.k2}, {"k3", sm.layout.k3}}},
          {"scaler", scaler_to_container(sm.scaler, w)},
          {"classifier", linear_model_to_container(sm.classifier, w)}};
}

SubModel submodel_from_container(const nlohmann::json& j, const ContainerReader& r) {
  SubModel sm;
  sm.hop = pixelhop_from_container(j.at("pixelhop"), r);
  sm.stats.mean = r.array(j.at("stats").at("mean"));
  sm.stats.std = r.array(j.at("stats").at("std"));
  const auto& l = j.at("layout");
  sm.layout = FeatureLayout::from_counts(l.at("k1"), l.at("k2"), l.at("k3"));
  if (sm.layout != FeatureLayout::from_model(sm.hop)) throw LoadError(LoadError::Reason::kFormat, "layout does not match transform");
  sm.scaler = scaler_from_container(j.at("scaler"), r);
  sm.classifier = linear_model_from_container(j.at("classifier"), r);
  const auto nodes = static_cast<std::size_t>(sm.layout.k1 + sm.layout.k2 + sm.layout.k3);
  if (sm.stats.mean.size() != nodes || sm.stats.std.size() != nodes ||
      sm.classifier.weights.size() != sm.layout.n || sm.scaler.lo.size() != sm.layout.n) {
    throw LoadError(LoadError::Reason::kFormat, "submodel sections disagree in size");
  }
  return sm;
}

}  // namespace

VerificationTrainConfig VerificationTrainConfig::defaults() {
  VerificationTrainConfig c;
  c.y_hop.input_channels = 1;
  c.y_hop.e_cutoff = c.y_hop.e_forward = 0.0005;
  c.crcb_hop.input_channels = 2;
  c.crcb_hop.e_cutoff = c.crcb_hop.e_forward = 0.0004;
  return c;
}

std::vector<ImageRef> unique_images(const std::vector<FacePair>& pairs) {
  std::vector<ImageRef> out;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& p : pairs) {
    for (const ImageRef* r : {&p.a, &p.b}) {
      if (seen.emplace(r->key(), out.size()).second) out.push_back(*r);
    }
  }
  return out;
}

FaceEncoding encode(const VerificationModel& model, const FacePlanes& face) {
  return {apply_pixelhop(model.y.hop, face.y), apply_pixelhop(model.crcb.hop, face.crcb)};
}

VerificationModel train_verification(const std::vector<FacePair>& pairs, const ImageStore& store,
                                     const VerificationTrainConfig& config, TrainReport* report) {
  check_config(config);
  if (pairs.empty()) throw InvalidInput("train_verification: no training pairs");
  const auto refs = unique_images(pairs);

  VerificationModel model;
  model.preprocess = config.preprocess;
  model.features = config.features;

  {
    std::vector<FacePlanes> planes(refs.size());
    parallel_for(refs.size(), config.threads,
                 [&](std::size_t i) { planes[i] = load_planes(store, refs[i], config.preprocess); });
    std::vector<ImageTensor> ys, cs;
    ys.reserve(planes.size());
    cs.reserve(planes.size());
    for (auto& p : planes) {
      ys.push_back(std::move(p.y));
      cs.push_back(std::move(p.crcb));
    }
    model.y.hop = fit_pixelhop(ys, config.y_hop);
    model.crcb.hop = fit_pixelhop(cs, config.crcb_hop);
  }
  model.y.layout = FeatureLayout::from_model(model.y.hop);
  model.crcb.layout = FeatureLayout::from_model(model.crcb.hop);

  const bool cache_all = refs.size() * encoding_bytes(model) <= config.output_cache_bytes;
  EncodingCache cache;
  StatsAccumulator acc_y, acc_c;
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < refs.size(); begin += kChunk) {
    const std::vector<ImageRef> chunk(refs.begin() + static_cast<std::ptrdiff_t>(begin),
                                      refs.begin() + static_cast<std::ptrdiff_t>(std::min(refs.size(), begin + kChunk)));
    EncodingCache part = encode_all(model, chunk, store, config.threads);
    for (auto& e : part.encodings) {
      acc_y.add(e.y);
      acc_c.add(e.crcb);
      if (cache_all) cache.encodings.push_back(std::move(e));
    }
  }
  if (cache_all) {
    for (std::size_t i = 0; i < refs.size(); ++i) cache.index.emplace(refs[i].key(), i);
  }
  model.y.stats = acc_y.finish();
  model.crcb.stats = acc_c.finish();

  const PairFeatureTable table = features_from(model, pairs, store, config.threads, cache_all ? &cache : nullptr);
  fit_classifiers(model, table, config.hyper, report);
  return model;
}

VerificationModel refit_classifiers(const VerificationModel& base, const std::vector<FacePair>& pairs,
                                    const ImageStore& store, const TrainHyper& hyper, unsigned threads,
                                    TrainReport* report) {
  VerificationModel model = base;
  fit_classifiers(model, compute_pair_features(model, pairs, store, threads), hyper, report);
  return model;
}

PairFeatureTable compute_pair_features(const VerificationModel& model, const std::vector<FacePair>& pairs,
                                       const ImageStore& store, unsigned threads, std::size_t output_cache_bytes) {
  const auto refs = unique_images(pairs);
  if (refs.size() * encoding_bytes(model) <= output_cache_bytes) {
    const EncodingCache cache = encode_all(model, refs, store, threads);
    return features_from(model, pairs, store, threads, &cache);
  }
  return features_from(model, pairs, store, threads, nullptr);
}

VerifyResult verify_features(const VerificationModel& model, const Eigen::VectorXd& raw_y,
                             const Eigen::VectorXd& raw_crcb) {
  VerifyResult r;
  r.p_y = predict_proba(model.y.classifier, model.y.scaler.transform(raw_y));
  r.p_crcb = predict_proba(model.crcb.classifier, model.crcb.scaler.transform(raw_crcb));
  Eigen::Vector2d meta_in(r.p_y, r.p_crcb);
  r.probability = predict_proba(model.meta, meta_in);
  r.match = r.probability >= 0.5;
  return r;
}

VerifyResult verify(const VerificationModel& model, const FaceEncoding& a, const FaceEncoding& b) {
  return verify_features(model, sub_feature(model.y, a.y, b.y, model.features),
                         sub_feature(model.crcb, a.crcb, b.crcb, model.features));
}

VerifyResult verify(const VerificationModel& model, const FacePlanes& a, const FacePlanes& b) {
  return verify(model, encode(model, a), encode(model, b));
}

double evaluate(const VerificationModel& model, const PairFeatureTable& table) {
  std::size_t total = 0, correct = 0;
  for (Eigen::Index i = 0; i < table.y.rows(); ++i) {
    const int label = table.labels[static_cast<std::size_t>(i)];
    if (label < 0) continue;
    const auto r = verify_features(model, table.y.row(i).transpose(), table.crcb.row(i).transpose());
    correct += (r.match ? 1 : 0) == label ? 1 : 0;
    ++total;
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

std::vector<IdentityScore> rank_identities(const std::vector<std::string>& identities,
                                           const std::vector<double>& scores) {
  if (identities.empty()) throw InvalidInput("identify: empty gallery");
  if (identities.size() != scores.size()) throw InvalidInput("identify: score count mismatch");
  std::map<std::string, double> best;
  for (std::size_t i = 0; i < identities.size(); ++i) {
    auto [it, inserted] = best.emplace(identities[i], scores[i]);
    if (!inserted) it->second = std::max(it->second, scores[i]);
  }
  std::vector<IdentityScore> out;
  for (const auto& [id, s] : best) out.push_back({id, s});
  std::stable_sort(out.begin(), out.end(), [](const IdentityScore& a, const IdentityScore& b) { return a.score > b.score; });
  return out;
}

std::vector<IdentityScore> identify(const VerificationModel& model, const std::vector<GalleryFace>& gallery,
                                    const FaceEncoding& probe) {
  if (gallery.empty()) throw InvalidInput("identify: empty gallery");
  std::vector<std::string> ids;
  std::vector<double> scores;
  for (const auto& g : gallery) {
    ids.push_back(g.identity);
    scores.push_back(verify(model, probe, g.encoding).probability);
  }
  return rank_identities(ids, scores);
}

namespace {

void append_submodel_rows(std::vector<ParamRow>& rows, const std::string& hop_name, const std::string& feat_name,
                          const std::string& clf_name, const HopParameterCounts& hops,
                          std::array<int, kHopLevels> k, long classifier) {
  static const char* kOrdinal[] = {"First", "Second", "Third"};
  for (int l = 0; l < kHopLevels; ++l) rows.push_back({std::string(kOrdinal[l]) + " hop - " + hop_name, hops.levels[l]});
  rows.push_back({"Pairwise Feat. Gen. - " + feat_name, 2L * (k[0] + k[1] + k[2])});
  rows.push_back({"LR Classifier - " + clf_name, classifier});
}

void append_total(std::vector<ParamRow>& rows) {
  long total = 0;
  for (const auto& r : rows) total += r.count;
  rows.push_back({"Total", total});
}

}  // namespace

std::vector<ParamRow> parameter_table(const VerificationModel& model, ParamAccounting accounting) {
  std::vector<ParamRow> rows;
  append_submodel_rows(rows, "M_Y", "Y", "C_Y", count_parameters(model.y.hop, accounting), model.y.hop.level_counts,
                       model.y.classifier.parameter_count());
  append_submodel_rows(rows, "M_CrCb", "CrCb", "C_CrCb", count_parameters(model.crcb.hop, accounting),
                       model.crcb.hop.level_counts, model.crcb.classifier.parameter_count());
  rows.push_back({"Meta Classifier", model.meta.parameter_count()});
  append_total(rows);
  return rows;
}

std::vector<ParamRow> parameter_table(std::array<int, kHopLevels> y, std::array<int, kHopLevels> c,
                                      ParamAccounting accounting) {
  constexpr int kArea = 25;
  std::vector<ParamRow> rows;
  append_submodel_rows(rows, "M_Y", "Y", "C_Y", count_parameters(y, kArea, kArea, accounting), y,
                       FeatureLayout::from_counts(y[0], y[1], y[2]).n + 1);
  append_submodel_rows(rows, "M_CrCb", "CrCb", "C_CrCb", count_parameters(c, 2 * kArea, kArea, accounting), c,
                       FeatureLayout::from_counts(c[0], c[1], c[2]).n + 1);
  rows.push_back({"Meta Classifier", 3});
  append_total(rows);
  return rows;
}

void save_verification_model(const VerificationModel& model, const std::filesystem::path& path) {
  ContainerWriter w;
  nlohmann::json h;
  h["kind"] = "verification";
  h["preprocess"] = {{"size", model.preprocess.size},
                     {"low_resolution", model.preprocess.low_resolution},
                     {"equalize", model.preprocess.equalize}};
  h["features"] = {{"standardize", model.features.standardize}, {"epsilon", model.features.epsilon}};
  h["y"] = submodel_to_container(model.y, w);
  h["crcb"] = submodel_to_container(model.crcb, w);
  h["meta"] = linear_model_to_container(model.meta, w);
  w.write(path, h);
}

VerificationModel load_verification_model(const std::filesystem::path& path) {
  const auto r = ContainerReader::read(path);
  const auto& h = r.header();
  try {
    if (h.at("kind") != "verification") {
      throw LoadError(LoadError::Reason::kFormat, path.string() + " does not hold a verification model");
    }
    VerificationModel m;
    m.preprocess.size = h.at("preprocess").at("size");
    m.preprocess.low_resolution = h.at("preprocess").at("low_resolution");
    m.preprocess.equalize = h.at("preprocess").at("equalize");
    m.features.standardize = h.at("features").at("standardize");
    m.features.epsilon = h.at("features").at("epsilon");
    m.y = submodel_from_container(h.at("y"), r);
    m.crcb = submodel_from_container(h.at("crcb"), r);
    m.meta = linear_model_from_container(h.at("meta"), r);
    if (m.meta.weights.size() != 2) throw LoadError(LoadError::Reason::kFormat, "meta classifier must take 2 inputs");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadError::Reason::kFormat, std::string("model header: ") + e.what());
  }
}

}  // namespace sslface
