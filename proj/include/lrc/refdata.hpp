#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "lrc/domain.hpp"

namespace lrc {

enum class ComponentKind { kExponential, kScreenedCoulomb };

/// psi = alpha1 * psi^{mu1} + alpha2 * psi^{mu2}. With alpha2 == 0 only the
/// first component is used and mu2 is ignored.
struct KernelSpec {
  KernelKind kind = KernelKind::kExponential;
  double mu1 = 1.0;
  double mu2 = 0.0;
  double alpha1 = 1.0;
  double alpha2 = 0.0;

  int n_components() const { return alpha2 > 0.0 ? 2 : 1; }
  ComponentKind component_kind(int c) const;
  double mu(int c) const { return c == 0 ? mu1 : mu2; }
  double alpha(int c) const { return c == 0 ? alpha1 : alpha2; }
  void validate() const;

  static KernelSpec from_header(const DatasetHeader& h);
  void fill_header(DatasetHeader& h) const;
};

struct SpectralKernelConfig {
  int grid_size = 32;         // per dimension, even
  double eps_smooth = -1.0;   // negative selects (L / grid_size)^2

  void validate() const;
};

/// Smallest even grid that resolves both the decay length 1/mu and the
/// closest admissible pair distance.
int default_spectral_grid(const TorusDomain& dom, double mu, double delta_min);

double exponential_kernel(double r, double mu);

/// Periodic screened-Coulomb kernel psi(r) = L^{-d} sum_k c(k) cos(kappa.r)
/// with c(k) = chi(k) / (|kappa|^2 + mu^2), chi(k) = exp(-eps |kappa|^2).
/// Modes |k_a| <= n/2 - 1 are retained per dimension.
class SpectralKernel {
 public:
  SpectralKernel(const TorusDomain& dom, double mu, const SpectralKernelConfig& cfg);

  const TorusDomain& domain() const { return dom_; }
  double mu() const { return mu_; }
  int grid_size() const { return n_; }
  double eps_smooth() const { return eps_; }
  int modes_per_dim() const { return n_ - 1; }
  /// Retained wavenumbers along one axis: 2 pi k / L, k = -(n/2-1) .. n/2-1.
  const std::vector<double>& axis_kappa() const { return kappa_; }
  /// Row-major over the retained band, axis order (x, y, z).
  const std::vector<double>& coefficients() const { return coeffs_; }
  double coefficient(std::span<const int> k) const;

  /// Kernel value at a displacement.
  double value(std::span<const double> r) const;
  /// Value plus gradient with respect to the displacement.
  double value_and_gradient(std::span<const double> r, std::span<double> grad) const;
  double value_at_origin() const { return psi0_; }

  /// psi on the regular grid x_m = m L / n (row-major, n^d entries), exactly
  /// even under m -> -m. Computed on first use.
  const std::vector<double>& table() const;

  /// Pair energy sum_{i<j} psi(x_i - x_j); forces -dU/dx if requested.
  double energy_and_forces(const Matrix& positions, Matrix* forces) const;

 private:
  struct TableCache;

  TorusDomain dom_;
  double mu_;
  int n_;
  double eps_;
  std::vector<double> kappa_;
  std::vector<double> coeffs_;
  double psi0_ = 0.0;
  std::shared_ptr<TableCache> table_;
};

SpectralKernel screened_coulomb_table(const TorusDomain& dom, double mu,
                                      const SpectralKernelConfig& cfg);

/// Reference potential bound to a domain; holds the spectral kernels so
/// repeated evaluations share them. Immutable after construction.
class ReferenceModel {
 public:
  /// `grid_size` overrides the default spectral grid for screened-Coulomb parts.
  ReferenceModel(const KernelSpec& spec, const TorusDomain& dom, double delta_min,
                 std::optional<int> grid_size = std::nullopt);

  const KernelSpec& spec() const { return spec_; }
  const TorusDomain& domain() const { return dom_; }
  double delta_min() const { return delta_min_; }
  /// Spectral kernel of component c, or nullptr for exponential components.
  const SpectralKernel* spectral(int c) const;

  EnergyForces evaluate(const Matrix& positions) const;
  /// Pair kernel psi at a displacement, with gradient.
  double pair_value_and_gradient(std::span<const double> r, std::span<double> grad) const;

 private:
  KernelSpec spec_;
  TorusDomain dom_;
  double delta_min_;
  std::vector<std::shared_ptr<const SpectralKernel>> spectral_;
};

/// Convenience form; rebuilds spectral kernels on every call.
EnergyForces energy_and_forces(const Matrix& positions, const KernelSpec& spec,
                               const TorusDomain& dom, double delta_min = 0.0);

/// Samples `n_samples` snapshots (stream i for snapshot i) and labels them.
Dataset generate_dataset(const KernelSpec& spec, const TorusDomain& dom,
                         const SamplerConfig& sampler, int n_samples,
                         std::optional<int> grid_size = std::nullopt);

void generate_dataset(const std::filesystem::path& path, const KernelSpec& spec,
                      const TorusDomain& dom, const SamplerConfig& sampler, int n_samples,
                      std::optional<int> grid_size = std::nullopt);

}  // namespace lrc
