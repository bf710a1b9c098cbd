#pragma once

#include <functional>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "sslface/image.hpp"

namespace sslface {

/// Row-major 2-D response map of one channel.
using ChannelMap = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Patches as rows. Row order follows the output grid in row-major order;
/// within a row, spatial positions are row-major with channels innermost.
struct PatchSet {
  int patch_dim = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  Eigen::MatrixXd data;

  Eigen::Index n_patches() const { return data.rows(); }
};

/// Valid-padding sliding-window extraction.
PatchSet extract_patches(const ImageTensor& image, int window, int stride);
PatchSet extract_patches(const ChannelMap& channel, int window, int stride);

/// Eigen-structure of the patch distribution before any kernel is dropped.
/// Component 0 is DC; components 1.. are AC in descending eigenvalue order.
struct SaabSpectrum {
  int patch_dim = 0;
  Eigen::MatrixXd basis;        // patch_dim x patch_dim, orthonormal columns
  std::vector<double> energies; // [0] = DC second moment, [k] = AC eigenvalue
  int rank = 0;                 // AC components with nonzero energy
  double total_energy() const;
};

struct SaabKernelBank {
  int patch_dim = 0;
  Eigen::MatrixXd kernels;         // patch_dim x n_kept
  std::vector<int> components;     // spectrum component index of each column
  std::vector<double> eigenvalues; // energies of the kept AC columns
  double dc_energy_raw = 0.0;
  double bias = 0.0;

  int n_kept() const { return static_cast<int>(kernels.cols()); }
};

/// Keep the first `count` components (DC included).
struct KeepCount {
  int count;
};
/// Keep components whose share of the unit's total energy is >= `fraction`.
struct KeepEnergy {
  double fraction;
};
using KeepRule = std::variant<KeepCount, KeepEnergy>;

/// Invokes its argument once per batch of patches (rows). Must yield the
/// same batches every time it is called; fitting makes three passes.
using PatchSource = std::function<void(const std::function<void(const Eigen::MatrixXd&)>&)>;

/// Two passes: mean and DC energy, then covariance of the mean-removed
/// patches restricted to the complement of the DC direction.
SaabSpectrum fit_spectrum(int patch_dim, const PatchSource& source);

/// Builds a kernel bank from chosen spectrum components. The bias is the
/// smallest shift that makes every training response non-negative.
SaabKernelBank build_bank(const SaabSpectrum& spectrum, std::span<const int> components, const PatchSource& source);

std::vector<int> select_components(const SaabSpectrum& spectrum, const KeepRule& rule);

SaabKernelBank fit_saab(const PatchSet& patches, const KeepRule& rule = KeepCount{1 << 30});

/// n_patches x n_kept responses.
Eigen::MatrixXd apply_saab(const SaabKernelBank& bank, const PatchSet& patches, bool add_bias);

/// Non-overlapping 2x2 max; a trailing odd row or column is dropped.
ChannelMap max_pool_2x2(const ChannelMap& grid);

}  // namespace sslface
