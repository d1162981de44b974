#pragma once

#include <complex>
#include <memory>
#include <span>
#include <vector>

#include "lrc/domain.hpp"

namespace lrc {

using Complex = std::complex<double>;

/// Fourier coefficients on the retained band, row-major over dimensions.
/// Index q_a in [0, L_FFT) maps to the signed frequency k_a = q_a - floor(L_FFT/2).
using Spectrum = std::vector<Complex>;

/// Immutable NUFFT precomputation.
///
/// `modes_per_dim()` (L_FFT) Fourier modes are retained per dimension. The
/// mollified point cloud is sampled on an internal grid with twice as many
/// points per dimension (`grid_per_dim()`), which keeps aliasing of the
/// Gaussian below e^{-24} across the whole retained band for the default
/// mollifier width tau = 12 (L / (2 pi L_FFT))^2.
class NufftPlan {
 public:
  NufftPlan(const TorusDomain& dom, int modes_per_dim);

  const TorusDomain& domain() const { return dom_; }
  int dim() const { return dom_.dim(); }
  int modes_per_dim() const { return modes_; }
  /// N_FFT = L_FFT^d.
  std::size_t n_modes() const { return n_modes_; }
  int grid_per_dim() const { return grid_; }
  std::size_t grid_size() const { return grid_size_; }
  double tau() const { return tau_; }
  /// Spreading half-width in units of the L/L_FFT spacing.
  int spread_half_width() const { return m_sp_; }
  /// Spreading half-width in internal grid points.
  int stencil_half_width() const { return stencil_; }

  /// Signed integer frequency of band index q.
  int frequency(int q) const { return q - modes_ / 2; }
  /// Wave number kappa = 2 pi k / L of band index q.
  double kappa(int q) const { return kappa_[q]; }
  std::span<const double> kappa_1d() const { return kappa_; }
  /// |kappa(k)|^2 for every retained mode.
  std::span<const double> kappa_sq() const { return kappa_sq_; }
  /// True for modes without a conjugate partner in the band (even L_FFT only).
  bool unpaired(std::size_t mode) const;

  struct FftHandles;

 private:
  friend class NufftKernels;

  TorusDomain dom_;
  int modes_;
  std::size_t n_modes_;
  int grid_;
  std::size_t grid_size_;
  double tau_;
  int m_sp_;
  int stencil_;
  std::vector<double> kappa_;
  std::vector<double> kappa_sq_;
  std::vector<double> deconv_1d_;  // e^{kappa^2 tau} / sqrt(4 pi tau) per band index
  std::vector<int> grid_index_;    // band index -> internal grid index
  std::shared_ptr<const FftHandles> fft_;
};

/// Builds a plan with the default mollifier width.
/// Throws GridTooSmall when the spreading stencil does not fit (m_sp >= L_FFT/2).
NufftPlan make_plan(const TorusDomain& dom, int modes_per_dim);

/// Per-point Gaussian stencil weights; reusable across transforms of the same cloud.
class PointStencil {
 public:
  PointStencil(const NufftPlan& plan, const Matrix& positions);

  std::size_t size() const { return n_; }
  int dim() const { return d_; }
  int width() const { return width_; }
  /// First internal grid index of the stencil of point i along dimension a.
  int start(std::size_t i, int a) const { return start_[i * d_ + a]; }
  const double* weights(std::size_t i, int a) const {
    return &weights_[(i * d_ + a) * width_];
  }

 private:
  std::size_t n_;
  int d_;
  int width_;
  std::vector<int> start_;
  std::vector<double> weights_;
};

/// Type-1 transform: F(k) ~ (1/L^d) sum_j f_j exp(-i kappa(k).x_j).
Spectrum type1(const NufftPlan& plan, const PointStencil& points, std::span<const double> weights);
Spectrum type1(const NufftPlan& plan, const Matrix& positions, std::span<const double> weights);

/// Type-2 transform: u(x_i) ~ sum_k V(k) exp(i kappa(k).x_i).
std::vector<Complex> type2(const NufftPlan& plan, const PointStencil& points, const Spectrum& coeffs);
std::vector<Complex> type2(const NufftPlan& plan, const Matrix& positions, const Spectrum& coeffs);

// ---------------------------------------------------------------------------
// Fourier multiplier

/// Floor added to the multiplier denominator so the k = 0 mode stays finite.
inline constexpr double kMultiplierFloor = 1e-6;

/// Per-channel (beta, lambda) of phi_hat(k) = 4 pi beta / (|kappa|^2 + lambda^2).
struct MultiplierParams {
  std::vector<double> beta;
  std::vector<double> lambda;

  int channels() const { return static_cast<int>(beta.size()); }
  void validate() const;
  bool operator==(const MultiplierParams&) const = default;
};

/// Real, even multiplier grids, one per channel. Unpaired Nyquist modes are zero.
std::vector<std::vector<double>> multiplier_eval(const MultiplierParams& params, const NufftPlan& plan);

// ---------------------------------------------------------------------------
// Long-range convolution layer

struct MultiplierGradients {
  std::vector<double> beta;
  std::vector<double> lambda;
};

struct LrcGradients {
  Matrix positions;  // N x d
  std::vector<double> beta;
  std::vector<double> lambda;
};

/// u_{i,c} = sum_j f_j phi_c(x_i - x_j), where phi_c is the periodic kernel
/// with coefficients phi_hat_c on the retained band: phi_c(r) = L^{-d}
/// sum_k phi_hat_c(k) exp(i kappa.r). The self term j = i is included.
///
/// Holds the spread stencils and spectra shared by the forward value and
/// every derivative product for one point cloud.
class LrcLayer {
 public:
  LrcLayer(const NufftPlan& plan, const Matrix& positions, std::span<const double> weights,
           const MultiplierParams& params);

  /// N x K output.
  const Matrix& output() const { return u_; }

  /// (grad_x u) . v for an N x d direction v; N x K.
  Matrix jvp(const Matrix& v) const;
  /// Gradient of sum_{i,c} ubar_{i,c} u_{i,c} with respect to the positions.
  Matrix vjp_positions(const Matrix& ubar) const;
  /// Gradient of sum_{i,c} ubar_{i,c} u_{i,c} with respect to (beta, lambda).
  MultiplierGradients vjp_multiplier(const Matrix& ubar) const;
  /// Gradient of sum_{i,c} ubar_{i,c} ((grad_x u) . v)_{i,c} with respect to (beta, lambda).
  MultiplierGradients jvp_vjp_multiplier(const Matrix& v, const Matrix& ubar) const;

 private:
  // sum_k m(k) Q(k) exp(i kappa.x_i), real part, with the imaginary residue checked.
  std::vector<double> apply(const Spectrum& q, std::span<const double> multiplier) const;
  // Same with multiplier i kappa_a m(k).
  std::vector<double> apply_gradient(const Spectrum& q, std::span<const double> multiplier, int axis) const;
  std::vector<double> finish(const std::vector<Complex>& values, const Spectrum& coeffs) const;
  MultiplierGradients contract(const std::vector<std::vector<double>>& mode_weights) const;
  const std::vector<double>& p(int axis, int channel) const;

  const NufftPlan* plan_;
  Matrix positions_;
  std::vector<double> f_;
  MultiplierParams params_;
  PointStencil stencil_;
  std::vector<std::vector<double>> phi_hat_;
  Spectrum f_hat_;
  Matrix u_;
  // p_{a,c,i} = sum_j f_j d_a phi_c(x_i - x_j); computed on first use.
  mutable std::vector<std::vector<double>> p_;
};

Matrix lrc_forward(const NufftPlan& plan, const Matrix& positions, std::span<const double> weights,
                   const MultiplierParams& params);
Matrix lrc_jvp(const NufftPlan& plan, const Matrix& positions, std::span<const double> weights,
               const MultiplierParams& params, const Matrix& v);
LrcGradients lrc_backward(const NufftPlan& plan, const Matrix& positions,
                          std::span<const double> weights, const MultiplierParams& params,
                          const Matrix& ubar);

/// Relative tolerance on the discarded imaginary part of the inverse transform.
inline constexpr double kImagResidueTolerance = 1e-8;

}  // namespace lrc
