#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "sslface/pixelhop.hpp"

namespace sslface {

/// Rectangular region of a level's response grid; ranges are inclusive.
struct RoiSpec {
  int level = 1;
  const char* name = "";
  int row_begin = 0;
  int row_end = 0;
  int col_begin = 0;
  int col_end = 0;

  int size() const { return (row_end - row_begin + 1) * (col_end - col_begin + 1); }
};

/// Regions on the 28x28 level-1 grid.
inline constexpr std::array<RoiSpec, 4> kLevel1Rois{{
    {1, "left_eye", 4, 11, 3, 12},
    {1, "right_eye", 4, 11, 15, 24},
    {1, "nose", 10, 19, 9, 18},
    {1, "mouth", 18, 25, 6, 21},
}};

/// Regions on the 10x10 level-2 grid.
inline constexpr std::array<RoiSpec, 2> kLevel2Rois{{
    {2, "eye_stripe", 1, 4, 0, 9},
    {2, "nose_mouth_stripe", 3, 9, 3, 6},
}};

inline constexpr int kLevel3GroupSize = 10;

/// Per-node response mean and population standard deviation.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Streaming accumulator over training images (Chan's pairwise merge of
/// per-image moments, so the result does not depend on value magnitudes).
class StatsAccumulator {
 public:
  void add(const HopOutputs& outputs);
  ChannelStats finish() const;
  std::size_t images() const { return images_; }

 private:
  std::size_t images_ = 0;
  std::vector<double> count_;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

ChannelStats fit_stats(std::span<const HopOutputs> outputs);

/// Slot layout of a pair feature:
/// [4 level-1 ratios | 2 level-2 ratios | 1 level-3 ratio |
///  4*K1 level-1 cosines (node-major) | 2*K2 level-2 cosines | P level-3 cosines].
struct FeatureLayout {
  int k1 = 0;
  int k2 = 0;
  int k3 = 0;
  int p = 0;
  int n = 0;

  static FeatureLayout from_counts(int k1, int k2, int k3);
  static FeatureLayout from_model(const PixelHopModel& model) {
    return from_counts(model.level_counts[0], model.level_counts[1], model.level_counts[2]);
  }

  std::string slot_name(int index) const;
  friend bool operator==(const FeatureLayout&, const FeatureLayout&) = default;
};

struct PairFeature {
  std::vector<double> values;
};

struct PairFeatureOptions {
  /// Disables per-node standardization (ablation and test hook).
  bool standardize = true;
  double epsilon = 1e-8;
};

/// Cosine with the zero-vector conventions cos(u,0) = 0 and cos(0,0) = 1.
double cosine_similarity(std::span<const double> u, std::span<const double> v);
/// min(|u|,|v|) / max(|u|,|v|) with ratio(u,0) = 0 and ratio(0,0) = 1.
double length_ratio(std::span<const double> u, std::span<const double> v);

PairFeature extract_pair_feature(const HopOutputs& a, const HopOutputs& b, const ChannelStats& stats,
                                 const FeatureLayout& layout, const PairFeatureOptions& options = {});

/// Checks that the fixed regions fit the model's level-1 and level-2 grids.
void validate_rois(const PixelHopConfig& config);

}  // namespace sslface
