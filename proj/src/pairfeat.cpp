#include "sslface/pairfeat.hpp"

#include <algorithm>
#include <cmath>

#include "sslface/error.hpp"

namespace sslface {
namespace {

template <typename Fn>
void for_each_node(const HopOutputs& out, Fn&& fn) {
  std::size_t node = 0;
  for (const auto& m : out.level1) fn(node++, std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
  for (const auto& m : out.level2) fn(node++, std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
  for (const double& v : out.level3) fn(node++, std::span<const double>(&v, 1));
}

std::size_t node_count(const HopOutputs& out) { return out.level1.size() + out.level2.size() + out.level3.size(); }

double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

void slice_roi(const ChannelMap& map, const RoiSpec& roi, double mean, double scale, std::vector<double>& out) {
  out.clear();
  for (int r = roi.row_begin; r <= roi.row_end; ++r) {
    for (int c = roi.col_begin; c <= roi.col_end; ++c) out.push_back((map(r, c) - mean) * scale);
  }
}

}  // namespace

void StatsAccumulator::add(const HopOutputs& outputs) {
  const std::size_t nodes = node_count(outputs);
  if (images_ == 0) {
    count_.assign(nodes, 0.0);
    mean_.assign(nodes, 0.0);
    m2_.assign(nodes, 0.0);
  } else if (nodes != mean_.size()) {
    throw InvalidInput("fit_stats: outputs come from different models");
  }
  for_each_node(outputs, [&](std::size_t k, std::span<const double> values) {
    const double nb = static_cast<double>(values.size());
    double mb = 0.0;
    for (double v : values) mb += v;
    mb /= nb;
    double m2b = 0.0;
    for (double v : values) m2b += (v - mb) * (v - mb);
    const double na = count_[k];
    const double n = na + nb;
    const double delta = mb - mean_[k];
    mean_[k] += delta * nb / n;
    m2_[k] += m2b + delta * delta * na * nb / n;
    count_[k] = n;
  });
  ++images_;
}

ChannelStats StatsAccumulator::finish() const {
  ChannelStats stats;
  stats.mean = mean_;
  stats.std.resize(mean_.size());
  for (std::size_t k = 0; k < mean_.size(); ++k) {
    stats.std[k] = count_[k] > 0.0 ? std::sqrt(std::max(0.0, m2_[k] / count_[k])) : 0.0;
  }
  return stats;
}

ChannelStats fit_stats(std::span<const HopOutputs> outputs) {
  StatsAccumulator acc;
  for (const auto& o : outputs) acc.add(o);
  return acc.finish();
}

FeatureLayout FeatureLayout::from_counts(int k1, int k2, int k3) {
  if (k1 < 0 || k2 < 0 || k3 < 0) throw InvalidInput("FeatureLayout: negative node count");
  FeatureLayout l;
  l.k1 = k1;
  l.k2 = k2;
  l.k3 = k3;
  l.p = k3 / kLevel3GroupSize;
  l.n = 7 + 4 * k1 + 2 * k2 + l.p;
  return l;
}

std::string FeatureLayout::slot_name(int index) const {
  if (index < 0 || index >= n) throw InvalidInput("FeatureLayout: slot out of range");
  if (index < 4) return std::string("ratio.L1.") + kLevel1Rois[index].name;
  if (index < 6) return std::string("ratio.L2.") + kLevel2Rois[index - 4].name;
  if (index == 6) return "ratio.L3";
  index -= 7;
  if (index < 4 * k1) return "cos.L1.node" + std::to_string(index / 4) + "." + kLevel1Rois[index % 4].name;
  index -= 4 * k1;
  if (index < 2 * k2) return "cos.L2.node" + std::to_string(index / 2) + "." + kLevel2Rois[index % 2].name;
  index -= 2 * k2;
  return "cos.L3.group" + std::to_string(index);
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  const double uu = dot(u, u);
  const double vv = dot(v, v);
  if (uu == 0.0 && vv == 0.0) return 1.0;
  if (uu == 0.0 || vv == 0.0) return 0.0;
  return std::clamp(dot(u, v) / std::sqrt(uu * vv), -1.0, 1.0);
}

double length_ratio(std::span<const double> u, std::span<const double> v) {
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu == 0.0 && nv == 0.0) return 1.0;
  return std::min(nu, nv) / std::max(nu, nv);
}

void validate_rois(const PixelHopConfig& config) {
  const auto grids = config.grid_sizes();
  auto check = [](const RoiSpec& roi, int side) {
    if (roi.row_begin < 0 || roi.col_begin < 0 || roi.row_end >= side || roi.col_end >= side ||
        roi.row_begin > roi.row_end || roi.col_begin > roi.col_end) {
      throw InvalidInput(std::string("region ") + roi.name + " does not fit the " + std::to_string(side) + "x" +
                         std::to_string(side) + " level-" + std::to_string(roi.level) + " grid");
    }
  };
  for (const auto& roi : kLevel1Rois) check(roi, grids[0]);
  for (const auto& roi : kLevel2Rois) check(roi, grids[1]);
}

PairFeature extract_pair_feature(const HopOutputs& a, const HopOutputs& b, const ChannelStats& stats,
                                 const FeatureLayout& layout, const PairFeatureOptions& options) {
  auto matches = [&](const HopOutputs& o) {
    return static_cast<int>(o.level1.size()) == layout.k1 && static_cast<int>(o.level2.size()) == layout.k2 &&
           static_cast<int>(o.level3.size()) == layout.k3;
  };
  if (!matches(a) || !matches(b)) throw InvalidInput("extract_pair_feature: outputs do not match the feature layout");
  const std::size_t nodes = static_cast<std::size_t>(layout.k1 + layout.k2 + layout.k3);
  if (options.standardize && (stats.mean.size() != nodes || stats.std.size() != nodes)) {
    throw InvalidInput("extract_pair_feature: channel stats do not match the feature layout");
  }
  auto norm = [&](std::size_t node, double& mean, double& scale) {
    if (options.standardize) {
      mean = stats.mean[node];
      scale = 1.0 / (stats.std[node] + options.epsilon);
    } else {
      mean = 0.0;
      scale = 1.0;
    }
  };

  PairFeature f;
  f.values.assign(static_cast<std::size_t>(layout.n), 0.0);
  double* ratios = f.values.data();
  double* cos1 = ratios + 7;
  double* cos2 = cos1 + 4 * layout.k1;
  double* cos3 = cos2 + 2 * layout.k2;

  std::vector<double> u, v;
  for (int k = 0; k < layout.k1; ++k) {
    double mean, scale;
    norm(static_cast<std::size_t>(k), mean, scale);
    for (int r = 0; r < 4; ++r) {
      slice_roi(a.level1[k], kLevel1Rois[r], mean, scale, u);
      slice_roi(b.level1[k], kLevel1Rois[r], mean, scale, v);
      cos1[4 * k + r] = cosine_similarity(u, v);
      ratios[r] += length_ratio(u, v);
    }
  }
  for (int r = 0; r < 4; ++r) ratios[r] = layout.k1 > 0 ? ratios[r] / layout.k1 : 1.0;

  for (int k = 0; k < layout.k2; ++k) {
    double mean, scale;
    norm(static_cast<std::size_t>(layout.k1 + k), mean, scale);
    for (int r = 0; r < 2; ++r) {
      slice_roi(a.level2[k], kLevel2Rois[r], mean, scale, u);
      slice_roi(b.level2[k], kLevel2Rois[r], mean, scale, v);
      cos2[2 * k + r] = cosine_similarity(u, v);
      ratios[4 + r] += length_ratio(u, v);
    }
  }
  for (int r = 4; r < 6; ++r) ratios[r] = layout.k2 > 0 ? ratios[r] / layout.k2 : 1.0;

  std::vector<double> sa(static_cast<std::size_t>(layout.k3)), sb(static_cast<std::size_t>(layout.k3));
  for (int k = 0; k < layout.k3; ++k) {
    double mean, scale;
    norm(static_cast<std::size_t>(layout.k1 + layout.k2 + k), mean, scale);
    sa[k] = (a.level3[k] - mean) * scale;
    sb[k] = (b.level3[k] - mean) * scale;
  }
  double ratio3 = 0.0;
  for (int g = 0; g < layout.p; ++g) {
    const std::span<const double> ga(sa.data() + g * kLevel3GroupSize, kLevel3GroupSize);
    const std::span<const double> gb(sb.data() + g * kLevel3GroupSize, kLevel3GroupSize);
    cos3[g] = cosine_similarity(ga, gb);
    ratio3 += length_ratio(ga, gb);
  }
  ratios[6] = layout.p > 0 ? ratio3 / layout.p : 1.0;
  return f;
}

}  // namespace sslface
