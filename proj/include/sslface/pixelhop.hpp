#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sslface/container.hpp"
#include "sslface/image.hpp"
#include "sslface/saab.hpp"

namespace sslface {

inline constexpr int kHopLevels = 3;

enum class NodeStatus { kIntermediate, kLeaf, kDiscarded };

const char* to_string(NodeStatus s);

/// One frequency channel of the transform tree.
struct HopNode {
  std::vector<int> path;  // spectrum component chosen at each level, root first
  int level = 1;
  int parent = -1;      // index into PixelHopModel::nodes, -1 at level 1
  int bank = -1;        // bank that produces this node
  int column = -1;      // column inside that bank; -1 when discarded
  int child_bank = -1;  // bank fitted on this node's pooled output (intermediate only)
  double e_init = 0.0;
  double e_norm = 0.0;
  NodeStatus status = NodeStatus::kDiscarded;

  /// "level.c1.c2...", e.g. "2.0.5".
  std::string id() const;
};

struct PixelHopConfig {
  int window = 5;
  int stride = 1;
  int pool = 2;
  int input_size = 32;
  int input_channels = 1;
  double e_cutoff = 0.0005;
  double e_forward = 0.0005;
  /// Fraction of patches per image used for fitting; 1 keeps all.
  double patch_subsample = 1.0;
  std::uint64_t seed = 0;
  unsigned threads = 0;

  /// Throws InvalidInput on bad values.
  void validate() const;
  /// Pre-pooling grid side at each level.
  std::array<int, kHopLevels> grid_sizes() const;
};

struct HopBank {
  int level = 1;
  int parent_node = -1;
  SaabKernelBank bank;
};

struct PixelHopModel {
  PixelHopConfig config;
  std::vector<HopBank> banks;
  std::vector<HopNode> nodes;  // ordered by level, then path
  std::array<int, kHopLevels> level_counts{};

  /// Indices of intermediate and leaf nodes at `level`, in node order.
  std::vector<int> emitted(int level) const;
};

/// Pre-pooling responses of every non-discarded node.
struct HopOutputs {
  std::vector<ChannelMap> level1;
  std::vector<ChannelMap> level2;
  std::vector<double> level3;
};

PixelHopModel fit_pixelhop(const std::vector<ImageTensor>& images, const PixelHopConfig& config);

HopOutputs apply_pixelhop(const PixelHopModel& model, const ImageTensor& image);

enum class ParamAccounting {
  kText,    // first unit costs its real patch dimension per kernel
  kTable4,  // every kernel costs window^2, as in the published size table
};

struct HopParameterCounts {
  std::array<long, kHopLevels> levels{};
  long total() const { return levels[0] + levels[1] + levels[2]; }
};

/// Parameters of a fitted model: level 1 stores its kernels plus one bias;
/// deeper levels store the non-DC kernels plus one bias per bank.
HopParameterCounts count_parameters(const PixelHopModel& model, ParamAccounting accounting = ParamAccounting::kText);

/// The same accounting from level counts alone, assuming E_C = E_F:
/// level 1 = d*K1 + 1, level l = w*(K_l - K_{l-1}) + K_{l-1}, where d is the
/// first unit's patch dimension (w = window^2 under table-4 accounting).
HopParameterCounts count_parameters(std::array<int, kHopLevels> counts, int first_unit_patch_dim, int window_area,
                                    ParamAccounting accounting);

nlohmann::json pixelhop_to_container(const PixelHopModel& model, ContainerWriter& writer);
PixelHopModel pixelhop_from_container(const nlohmann::json& section, const ContainerReader& reader);

void save_model(const PixelHopModel& model, const std::filesystem::path& path);
PixelHopModel load_model(const std::filesystem::path& path);

}  // namespace sslface
