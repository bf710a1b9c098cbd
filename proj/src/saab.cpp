#include "sslface/saab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sslface/error.hpp"

namespace sslface {
namespace {

PatchSet extract(const double* values, int height, int width, int channels, int window, int stride) {
  if (window < 1 || stride < 1) throw InvalidInput("extract_patches: window and stride must be >= 1");
  if (height < window || width < window) throw InvalidInput("extract_patches: image smaller than window");
  PatchSet set;
  set.patch_dim = window * window * channels;
  set.grid_rows = (height - window) / stride + 1;
  set.grid_cols = (width - window) / stride + 1;
  set.data.resize(static_cast<Eigen::Index>(set.grid_rows) * set.grid_cols, set.patch_dim);
  Eigen::Index row = 0;
  for (int gr = 0; gr < set.grid_rows; ++gr) {
    for (int gc = 0; gc < set.grid_cols; ++gc, ++row) {
      int col = 0;
      for (int dy = 0; dy < window; ++dy) {
        const double* src = values + (static_cast<std::size_t>(gr * stride + dy) * width + gc * stride) * channels;
        for (int k = 0; k < window * channels; ++k) set.data(row, col++) = src[k];
      }
    }
  }
  return set;
}

// Orthonormal basis of the complement of the unit constant vector: columns
// 1.. of the Householder reflection that maps e_0 onto it.
Eigen::MatrixXd dc_complement(int dim) {
  const double dc = 1.0 / std::sqrt(static_cast<double>(dim));
  Eigen::VectorXd u = Eigen::VectorXd::Constant(dim, dc);
  u(0) -= 1.0;
  const double norm2 = u.squaredNorm();
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(dim, dim);
  if (norm2 > 0.0) h -= (2.0 / norm2) * u * u.transpose();
  return h.rightCols(dim - 1);
}

void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (std::abs(v(i)) > std::abs(v(best))) best = i;
  }
  if (v(best) < 0.0) v = -v;
}

}  // namespace

PatchSet extract_patches(const ImageTensor& image, int window, int stride) {
  return extract(image.values.data(), image.height, image.width, image.channels, window, stride);
}

PatchSet extract_patches(const ChannelMap& channel, int window, int stride) {
  return extract(channel.data(), static_cast<int>(channel.rows()), static_cast<int>(channel.cols()), 1, window, stride);
}

double SaabSpectrum::total_energy() const { return std::accumulate(energies.begin(), energies.end(), 0.0); }

SaabSpectrum fit_spectrum(int patch_dim, const PatchSource& source) {
  if (patch_dim < 1) throw InvalidInput("fit_saab: patch_dim must be >= 1");
  const double dc_value = 1.0 / std::sqrt(static_cast<double>(patch_dim));
  const Eigen::VectorXd dc = Eigen::VectorXd::Constant(patch_dim, dc_value);

  Eigen::Index n = 0;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(patch_dim);
  double dc_sq = 0.0;
  bool finite = true;
  source([&](const Eigen::MatrixXd& batch) {
    if (batch.cols() != patch_dim) throw InvalidInput("fit_saab: patch dimension mismatch");
    if (!batch.allFinite()) finite = false;
    n += batch.rows();
    sum += batch.colwise().sum().transpose();
    dc_sq += (batch * dc).squaredNorm();
  });
  if (!finite) throw NumericError("fit_saab: non-finite patch values");
  if (n < 2) throw NumericError("fit_saab: need at least 2 patches, got " + std::to_string(n));

  const Eigen::VectorXd mean = sum / static_cast<double>(n);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(patch_dim, patch_dim);
  source([&](const Eigen::MatrixXd& batch) {
    const Eigen::MatrixXd centered = batch.rowwise() - mean.transpose();
    cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
  });
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n);

  SaabSpectrum spec;
  spec.patch_dim = patch_dim;
  spec.basis.resize(patch_dim, patch_dim);
  spec.basis.col(0) = dc;
  spec.energies.assign(patch_dim, 0.0);
  spec.energies[0] = dc_sq / static_cast<double>(n);
  if (patch_dim == 1) return spec;

  const Eigen::MatrixXd q = dc_complement(patch_dim);
  const Eigen::MatrixXd reduced = q.transpose() * cov * q;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(reduced);
  if (eig.info() != Eigen::Success) throw NumericError("fit_saab: eigendecomposition failed");

  const int m = patch_dim - 1;
  double ac_total = 0.0;
  for (int k = 0; k < m; ++k) ac_total += std::max(0.0, eig.eigenvalues()(m - 1 - k));
  const double tol = 1e-12 * (spec.energies[0] + ac_total);
  for (int k = 0; k < m; ++k) {
    // Eigen returns ascending order.
    const double lambda = eig.eigenvalues()(m - 1 - k);
    Eigen::VectorXd v = q * eig.eigenvectors().col(m - 1 - k);
    v.normalize();
    fix_sign(v);
    spec.basis.col(k + 1) = v;
    if (lambda > tol) {
      spec.energies[k + 1] = lambda;
      ++spec.rank;
    }
  }
  return spec;
}

std::vector<int> select_components(const SaabSpectrum& spectrum, const KeepRule& rule) {
  std::vector<int> out;
  const int usable = 1 + spectrum.rank;
  if (const auto* c = std::get_if<KeepCount>(&rule)) {
    const int k = std::clamp(c->count, 0, usable);
    for (int i = 0; i < k; ++i) out.push_back(i);
  } else {
    const double fraction = std::get<KeepEnergy>(rule).fraction;
    const double total = spectrum.total_energy();
    for (int i = 0; i < usable; ++i) {
      if (total > 0.0 && spectrum.energies[i] / total >= fraction) out.push_back(i);
    }
  }
  return out;
}

SaabKernelBank build_bank(const SaabSpectrum& spectrum, std::span<const int> components, const PatchSource& source) {
  SaabKernelBank bank;
  bank.patch_dim = spectrum.patch_dim;
  bank.dc_energy_raw = spectrum.energies[0];
  bank.kernels.resize(spectrum.patch_dim, static_cast<Eigen::Index>(components.size()));
  for (std::size_t i = 0; i < components.size(); ++i) {
    const int c = components[i];
    if (c < 0 || c >= spectrum.patch_dim) throw InvalidInput("build_bank: component index out of range");
    bank.kernels.col(static_cast<Eigen::Index>(i)) = spectrum.basis.col(c);
    bank.components.push_back(c);
    if (c > 0) bank.eigenvalues.push_back(spectrum.energies[c]);
  }
  if (components.empty()) return bank;

  double lowest = std::numeric_limits<double>::infinity();
  source([&](const Eigen::MatrixXd& batch) {
    if (batch.rows() > 0) lowest = std::min(lowest, (batch * bank.kernels).minCoeff());
  });
  bank.bias = std::isfinite(lowest) ? std::max(0.0, -lowest) : 0.0;
  return bank;
}

SaabKernelBank fit_saab(const PatchSet& patches, const KeepRule& rule) {
  const PatchSource source = [&](const std::function<void(const Eigen::MatrixXd&)>& sink) { sink(patches.data); };
  const SaabSpectrum spectrum = fit_spectrum(patches.patch_dim, source);
  const auto components = select_components(spectrum, rule);
  return build_bank(spectrum, components, source);
}

Eigen::MatrixXd apply_saab(const SaabKernelBank& bank, const PatchSet& patches, bool add_bias) {
  if (patches.patch_dim != bank.patch_dim || patches.data.cols() != bank.patch_dim) {
    throw InvalidInput("apply_saab: patch dimension " + std::to_string(patches.patch_dim) + " does not match bank " +
                       std::to_string(bank.patch_dim));
  }
  Eigen::MatrixXd out = patches.data * bank.kernels;
  if (add_bias) out.array() += bank.bias;
  return out;
}

ChannelMap max_pool_2x2(const ChannelMap& grid) {
  const Eigen::Index rows = grid.rows() / 2;
  const Eigen::Index cols = grid.cols() / 2;
  if (rows < 1 || cols < 1) throw InvalidInput("max_pool_2x2: grid must be at least 2x2");
  ChannelMap out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      out(r, c) = std::max(std::max(grid(2 * r, 2 * c), grid(2 * r, 2 * c + 1)),
                           std::max(grid(2 * r + 1, 2 * c), grid(2 * r + 1, 2 * c + 1)));
    }
  }
  return out;
}

}  // namespace sslface
