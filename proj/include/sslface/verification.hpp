#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sslface/classify.hpp"
#include "sslface/dataio.hpp"
#include "sslface/pairfeat.hpp"
#include "sslface/pixelhop.hpp"
#include "sslface/preprocess.hpp"

namespace sslface {

/// One channel group's pipeline: transform tree, node statistics, feature
/// layout, feature scaler and the pair classifier.
struct SubModel {
  PixelHopModel hop;
  ChannelStats stats;
  FeatureLayout layout;
  MinMaxScaler scaler;
  LinearModel classifier;
};

struct VerificationModel {
  PreprocessOptions preprocess;
  PairFeatureOptions features;
  SubModel y;
  SubModel crcb;
  LinearModel meta;  // input: (p_y, p_crcb)
};

struct VerificationTrainConfig {
  PixelHopConfig y_hop;
  PixelHopConfig crcb_hop;
  TrainHyper hyper;
  PreprocessOptions preprocess;
  PairFeatureOptions features;
  unsigned threads = 0;
  /// Above this many bytes of transform outputs, outputs are recomputed per
  /// pair instead of cached per image.
  std::size_t output_cache_bytes = std::size_t{1} << 30;

  /// E_C = E_F = 0.0005 for Y and 0.0004 for CrCb.
  static VerificationTrainConfig defaults();
};

struct SubmodelReport {
  std::array<int, kHopLevels> k{};
  int p = 0;
  int n = 0;
  double train_accuracy = 0.0;
};

struct TrainReport {
  SubmodelReport y;
  SubmodelReport crcb;
  double meta_train_accuracy = 0.0;
};

/// Transform outputs of one face for both submodels.
struct FaceEncoding {
  HopOutputs y;
  HopOutputs crcb;
};

/// Raw (unscaled) pair features of both submodels, one row per pair.
struct PairFeatureTable {
  Eigen::MatrixXd y;
  Eigen::MatrixXd crcb;
  std::vector<int> labels;  // -1 where a pair is unlabeled
};

std::vector<ImageRef> unique_images(const std::vector<FacePair>& pairs);

FaceEncoding encode(const VerificationModel& model, const FacePlanes& face);

/// Fits both transforms and node statistics on the images of `pairs`, then
/// the pair classifiers and the meta classifier on the pairs themselves.
VerificationModel train_verification(const std::vector<FacePair>& pairs, const ImageStore& store,
                                     const VerificationTrainConfig& config, TrainReport* report = nullptr);

/// Keeps the transforms and statistics of `base`; retrains scalers, pair
/// classifiers and the meta classifier on `pairs`.
VerificationModel refit_classifiers(const VerificationModel& base, const std::vector<FacePair>& pairs,
                                    const ImageStore& store, const TrainHyper& hyper, unsigned threads = 0,
                                    TrainReport* report = nullptr);

PairFeatureTable compute_pair_features(const VerificationModel& model, const std::vector<FacePair>& pairs,
                                       const ImageStore& store, unsigned threads = 0,
                                       std::size_t output_cache_bytes = std::size_t{1} << 30);

struct VerifyResult {
  double p_y = 0.0;
  double p_crcb = 0.0;
  double probability = 0.0;
  bool match = false;
};

VerifyResult verify(const VerificationModel& model, const FaceEncoding& a, const FaceEncoding& b);
VerifyResult verify(const VerificationModel& model, const FacePlanes& a, const FacePlanes& b);

/// Combines submodel probabilities through the meta classifier.
VerifyResult verify_features(const VerificationModel& model, const Eigen::VectorXd& raw_y,
                             const Eigen::VectorXd& raw_crcb);

/// Fraction of labeled pairs whose decision matches the label.
double evaluate(const VerificationModel& model, const PairFeatureTable& table);

struct IdentityScore {
  std::string identity;
  double score = 0.0;
};

/// Identity score = best score over that identity's gallery images; sorted
/// by descending score, ties by identity name.
std::vector<IdentityScore> rank_identities(const std::vector<std::string>& identities, const std::vector<double>& scores);

struct GalleryFace {
  std::string identity;
  FaceEncoding encoding;
};

std::vector<IdentityScore> identify(const VerificationModel& model, const std::vector<GalleryFace>& gallery,
                                    const FaceEncoding& probe);

struct ParamRow {
  std::string component;
  long count = 0;
};

/// Rows follow the published size table: three hops, feature generator and
/// classifier per submodel, then the meta classifier and the total.
std::vector<ParamRow> parameter_table(const VerificationModel& model, ParamAccounting accounting);
std::vector<ParamRow> parameter_table(std::array<int, kHopLevels> y_counts, std::array<int, kHopLevels> crcb_counts,
                                      ParamAccounting accounting);

void save_verification_model(const VerificationModel& model, const std::filesystem::path& path);
VerificationModel load_verification_model(const std::filesystem::path& path);

}  // namespace sslface
