#include "lrc/nufft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <string>

#include "lrc/errors.hpp"
#include "fftw_lock.hpp"

namespace lrc {

std::mutex& detail::fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

namespace {

constexpr double kSpreadTolerance = 1e-14;
constexpr double kPi = std::numbers::pi;

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : data(fftw_alloc_complex(n)), size(n) {
    if (data == nullptr) throw std::bad_alloc();
    std::fill_n(reinterpret_cast<double*>(data), 2 * n, 0.0);
  }
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;

  Complex& operator[](std::size_t i) { return reinterpret_cast<Complex*>(data)[i]; }
  Complex* begin() { return reinterpret_cast<Complex*>(data); }

  fftw_complex* data;
  std::size_t size;
};

}  // namespace

struct NufftPlan::FftHandles {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
  ~FftHandles() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (backward) fftw_destroy_plan(backward);
  }
};

/// Grid-level kernels of the transforms; friend of NufftPlan.
class NufftKernels {
 public:
  static void spread(const NufftPlan& plan, const PointStencil& pts, std::span<const double> f,
                     FftwBuffer& grid);
  static void interpolate(const NufftPlan& plan, const PointStencil& pts, FftwBuffer& grid,
                          std::vector<Complex>& out);
  static Spectrum grid_to_band(const NufftPlan& plan, FftwBuffer& grid);
  static void band_to_grid(const NufftPlan& plan, const Spectrum& coeffs, FftwBuffer& grid);
};

NufftPlan::NufftPlan(const TorusDomain& dom, int modes_per_dim) : dom_(dom), modes_(modes_per_dim) {
  if (modes_per_dim < 1) throw InvalidArgument("L_FFT must be positive");
  const double L = dom.length();
  const int d = dom.dim();
  tau_ = 12.0 * std::pow(L / (2.0 * kPi * modes_), 2);
  const double reach = std::sqrt(4.0 * tau_ * std::log(1.0 / kSpreadTolerance));
  m_sp_ = static_cast<int>(std::ceil(modes_ / L * reach));
  if (m_sp_ >= 0.5 * modes_)
    throw GridTooSmall("spreading half-width " + std::to_string(m_sp_) +
                       " does not fit a grid of " + std::to_string(modes_) + " points");
  grid_ = 2 * modes_;
  stencil_ = static_cast<int>(std::ceil(grid_ / L * reach));

  n_modes_ = 1;
  grid_size_ = 1;
  for (int a = 0; a < d; ++a) {
    n_modes_ *= static_cast<std::size_t>(modes_);
    grid_size_ *= static_cast<std::size_t>(grid_);
  }

  kappa_.resize(modes_);
  deconv_1d_.resize(modes_);
  grid_index_.resize(modes_);
  for (int q = 0; q < modes_; ++q) {
    const int k = frequency(q);
    kappa_[q] = 2.0 * kPi * k / L;
    deconv_1d_[q] = std::exp(kappa_[q] * kappa_[q] * tau_) / std::sqrt(4.0 * kPi * tau_);
    grid_index_[q] = k < 0 ? k + grid_ : k;
  }
  kappa_sq_.assign(n_modes_, 0.0);
  for (std::size_t m = 0; m < n_modes_; ++m) {
    std::size_t rest = m;
    double sq = 0.0;
    for (int a = d - 1; a >= 0; --a) {
      const int q = static_cast<int>(rest % modes_);
      rest /= modes_;
      sq += kappa_[q] * kappa_[q];
    }
    kappa_sq_[m] = sq;
  }

  auto handles = std::make_shared<FftHandles>();
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    FftwBuffer scratch(grid_size_);
    const std::vector<int> dims(d, grid_);
    handles->forward = fftw_plan_dft(d, dims.data(), scratch.data, scratch.data, FFTW_FORWARD,
                                     FFTW_ESTIMATE);
    handles->backward = fftw_plan_dft(d, dims.data(), scratch.data, scratch.data, FFTW_BACKWARD,
                                      FFTW_ESTIMATE);
  }
  if (!handles->forward || !handles->backward) throw Error("FFTW planning failed");
  fft_ = std::move(handles);
}

bool NufftPlan::unpaired(std::size_t mode) const {
  if (modes_ % 2 != 0) return false;
  for (int a = 0; a < dim(); ++a) {
    if (mode % modes_ == 0) return true;
    mode /= modes_;
  }
  return false;
}

NufftPlan make_plan(const TorusDomain& dom, int modes_per_dim) { return NufftPlan(dom, modes_per_dim); }

// ---------------------------------------------------------------------------

PointStencil::PointStencil(const NufftPlan& plan, const Matrix& positions)
    : n_(static_cast<std::size_t>(positions.rows())), d_(plan.dim()),
      width_(2 * plan.stencil_half_width() + 1) {
  if (positions.cols() != d_) throw InvalidArgument("positions must have d columns");
  const auto& dom = plan.domain();
  const int n = plan.grid_per_dim();
  const int w = plan.stencil_half_width();
  const double h = dom.length() / n;
  const double four_tau = 4.0 * plan.tau();

  std::vector<double> e3(width_);
  for (int j = -w; j <= w; ++j) e3[j + w] = std::exp(-(j * h) * (j * h) / four_tau);

  start_.resize(n_ * d_);
  weights_.resize(n_ * d_ * width_);
  for (std::size_t i = 0; i < n_; ++i) {
    for (int a = 0; a < d_; ++a) {
      const double x = dom.wrap(positions(static_cast<Eigen::Index>(i), a));
      const long c = std::lround(x / h);
      const double off = x - c * h;  // |off| <= h/2
      // exp(-(j h - off)^2 / 4 tau) = e3[j] * exp(-off^2 / 4 tau) * exp(j h off / 2 tau)^j
      const double e1 = std::exp(-off * off / four_tau);
      const double e2 = std::exp(2.0 * h * off / four_tau);
      double pow_e2 = std::pow(e2, -w);
      double* out = &weights_[(i * d_ + a) * width_];
      for (int j = 0; j < width_; ++j) {
        out[j] = e3[j] * e1 * pow_e2;
        pow_e2 *= e2;
      }
      long s = (c - w) % n;
      if (s < 0) s += n;
      start_[i * d_ + a] = static_cast<int>(s);
    }
  }
}

// ---------------------------------------------------------------------------

void NufftKernels::spread(const NufftPlan& plan, const PointStencil& pts, std::span<const double> f,
                          FftwBuffer& grid) {
  const int n = plan.grid_per_dim();
  const int W = pts.width();
  const int d = plan.dim();
  auto* g = reinterpret_cast<double*>(grid.data);  // interleaved re/im
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double fi = f[i];
    if (fi == 0.0) continue;
    if (d == 1) {
      const double* w0 = pts.weights(i, 0);
      int idx = pts.start(i, 0);
      for (int j = 0; j < W; ++j) {
        g[2 * idx] += fi * w0[j];
        if (++idx == n) idx = 0;
      }
    } else if (d == 2) {
      const double* w0 = pts.weights(i, 0);
      const double* w1 = pts.weights(i, 1);
      int i0 = pts.start(i, 0);
      for (int j0 = 0; j0 < W; ++j0) {
        const double v0 = fi * w0[j0];
        double* row = g + 2 * static_cast<std::size_t>(i0) * n;
        int i1 = pts.start(i, 1);
        for (int j1 = 0; j1 < W; ++j1) {
          row[2 * i1] += v0 * w1[j1];
          if (++i1 == n) i1 = 0;
        }
        if (++i0 == n) i0 = 0;
      }
    } else {
      const double* w0 = pts.weights(i, 0);
      const double* w1 = pts.weights(i, 1);
      const double* w2 = pts.weights(i, 2);
      int i0 = pts.start(i, 0);
      for (int j0 = 0; j0 < W; ++j0) {
        const double v0 = fi * w0[j0];
        int i1 = pts.start(i, 1);
        for (int j1 = 0; j1 < W; ++j1) {
          const double v1 = v0 * w1[j1];
          double* row = g + 2 * (static_cast<std::size_t>(i0) * n + i1) * n;
          int i2 = pts.start(i, 2);
          for (int j2 = 0; j2 < W; ++j2) {
            row[2 * i2] += v1 * w2[j2];
            if (++i2 == n) i2 = 0;
          }
          if (++i1 == n) i1 = 0;
        }
        if (++i0 == n) i0 = 0;
      }
    }
  }
}

void NufftKernels::interpolate(const NufftPlan& plan, const PointStencil& pts, FftwBuffer& grid,
                               std::vector<Complex>& out) {
  const int n = plan.grid_per_dim();
  const int W = pts.width();
  const int d = plan.dim();
  const double cell = std::pow(plan.domain().length() / n, d);
  const Complex* g = grid.begin();
  out.assign(pts.size(), Complex{});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Complex acc{};
    if (d == 1) {
      const double* w0 = pts.weights(i, 0);
      int idx = pts.start(i, 0);
      for (int j = 0; j < W; ++j) {
        acc += w0[j] * g[idx];
        if (++idx == n) idx = 0;
      }
    } else if (d == 2) {
      const double* w0 = pts.weights(i, 0);
      const double* w1 = pts.weights(i, 1);
      int i0 = pts.start(i, 0);
      for (int j0 = 0; j0 < W; ++j0) {
        const Complex* row = g + static_cast<std::size_t>(i0) * n;
        Complex inner{};
        int i1 = pts.start(i, 1);
        for (int j1 = 0; j1 < W; ++j1) {
          inner += w1[j1] * row[i1];
          if (++i1 == n) i1 = 0;
        }
        acc += w0[j0] * inner;
        if (++i0 == n) i0 = 0;
      }
    } else {
      const double* w0 = pts.weights(i, 0);
      const double* w1 = pts.weights(i, 1);
      const double* w2 = pts.weights(i, 2);
      int i0 = pts.start(i, 0);
      for (int j0 = 0; j0 < W; ++j0) {
        Complex mid{};
        int i1 = pts.start(i, 1);
        for (int j1 = 0; j1 < W; ++j1) {
          const Complex* row = g + (static_cast<std::size_t>(i0) * n + i1) * n;
          Complex inner{};
          int i2 = pts.start(i, 2);
          for (int j2 = 0; j2 < W; ++j2) {
            inner += w2[j2] * row[i2];
            if (++i2 == n) i2 = 0;
          }
          mid += w1[j1] * inner;
          if (++i1 == n) i1 = 0;
        }
        acc += w0[j0] * mid;
        if (++i0 == n) i0 = 0;
      }
    }
    out[i] = cell * acc;
  }
}

Spectrum NufftKernels::grid_to_band(const NufftPlan& plan, FftwBuffer& grid) {
  fftw_execute_dft(plan.fft_->forward, grid.data, grid.data);
  const int M = plan.modes_;
  const int n = plan.grid_;
  const int d = plan.dim();
  const double norm = 1.0 / static_cast<double>(plan.grid_size_);
  Spectrum out(plan.n_modes_);
  const auto& gi = plan.grid_index_;
  const auto& dc = plan.deconv_1d_;
  if (d == 1) {
    for (int q = 0; q < M; ++q) out[q] = grid[gi[q]] * (norm * dc[q]);
  } else if (d == 2) {
    for (int q0 = 0; q0 < M; ++q0)
      for (int q1 = 0; q1 < M; ++q1)
        out[q0 * M + q1] = grid[static_cast<std::size_t>(gi[q0]) * n + gi[q1]] * (norm * dc[q0] * dc[q1]);
  } else {
    for (int q0 = 0; q0 < M; ++q0)
      for (int q1 = 0; q1 < M; ++q1)
        for (int q2 = 0; q2 < M; ++q2)
          out[(static_cast<std::size_t>(q0) * M + q1) * M + q2] =
              grid[(static_cast<std::size_t>(gi[q0]) * n + gi[q1]) * n + gi[q2]] *
              (norm * dc[q0] * dc[q1] * dc[q2]);
  }
  return out;
}

void NufftKernels::band_to_grid(const NufftPlan& plan, const Spectrum& coeffs, FftwBuffer& grid) {
  const int M = plan.modes_;
  const int n = plan.grid_;
  const int d = plan.dim();
  const auto& gi = plan.grid_index_;
  const auto& dc = plan.deconv_1d_;
  if (d == 1) {
    for (int q = 0; q < M; ++q) grid[gi[q]] = coeffs[q] * dc[q];
  } else if (d == 2) {
    for (int q0 = 0; q0 < M; ++q0)
      for (int q1 = 0; q1 < M; ++q1)
        grid[static_cast<std::size_t>(gi[q0]) * n + gi[q1]] = coeffs[q0 * M + q1] * (dc[q0] * dc[q1]);
  } else {
    for (int q0 = 0; q0 < M; ++q0)
      for (int q1 = 0; q1 < M; ++q1)
        for (int q2 = 0; q2 < M; ++q2)
          grid[(static_cast<std::size_t>(gi[q0]) * n + gi[q1]) * n + gi[q2]] =
              coeffs[(static_cast<std::size_t>(q0) * M + q1) * M + q2] * (dc[q0] * dc[q1] * dc[q2]);
  }
  fftw_execute_dft(plan.fft_->backward, grid.data, grid.data);
}

Spectrum type1(const NufftPlan& plan, const PointStencil& points, std::span<const double> weights) {
  if (weights.size() != points.size()) throw InvalidArgument("one weight per point required");
  FftwBuffer grid(plan.grid_size());
  NufftKernels::spread(plan, points, weights, grid);
  return NufftKernels::grid_to_band(plan, grid);
}

Spectrum type1(const NufftPlan& plan, const Matrix& positions, std::span<const double> weights) {
  return type1(plan, PointStencil(plan, positions), weights);
}

std::vector<Complex> type2(const NufftPlan& plan, const PointStencil& points, const Spectrum& coeffs) {
  if (coeffs.size() != plan.n_modes()) throw InvalidArgument("spectrum size does not match plan");
  FftwBuffer grid(plan.grid_size());
  NufftKernels::band_to_grid(plan, coeffs, grid);
  std::vector<Complex> out;
  NufftKernels::interpolate(plan, points, grid, out);
  return out;
}

std::vector<Complex> type2(const NufftPlan& plan, const Matrix& positions, const Spectrum& coeffs) {
  return type2(plan, PointStencil(plan, positions), coeffs);
}

// ---------------------------------------------------------------------------

void MultiplierParams::validate() const {
  if (beta.size() != lambda.size()) throw InvalidArgument("beta and lambda must have equal length");
  for (std::size_t c = 0; c < beta.size(); ++c) {
    if (!std::isfinite(beta[c]) || !std::isfinite(lambda[c]))
      throw InvalidArgument("multiplier parameters must be finite");
  }
}

std::vector<std::vector<double>> multiplier_eval(const MultiplierParams& params, const NufftPlan& plan) {
  params.validate();
  const auto ksq = plan.kappa_sq();
  std::vector<std::vector<double>> out(params.channels(), std::vector<double>(plan.n_modes()));
  for (int c = 0; c < params.channels(); ++c) {
    const double lam2 = params.lambda[c] * params.lambda[c] + kMultiplierFloor;
    const double num = 4.0 * kPi * params.beta[c];
    for (std::size_t m = 0; m < plan.n_modes(); ++m)
      out[c][m] = plan.unpaired(m) ? 0.0 : num / (ksq[m] + lam2);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> column(const Matrix& m, Eigen::Index c) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[i] = m(i, c);
  return out;
}

// kappa_a of every retained mode.
std::vector<double> axis_wavenumbers(const NufftPlan& plan, int axis) {
  const int M = plan.modes_per_dim();
  std::size_t stride = 1;
  for (int a = plan.dim() - 1; a > axis; --a) stride *= M;
  std::vector<double> out(plan.n_modes());
  for (std::size_t m = 0; m < plan.n_modes(); ++m) out[m] = plan.kappa(static_cast<int>((m / stride) % M));
  return out;
}

}  // namespace

LrcLayer::LrcLayer(const NufftPlan& plan, const Matrix& positions, std::span<const double> weights,
                   const MultiplierParams& params)
    : plan_(&plan), positions_(positions), f_(weights.begin(), weights.end()), params_(params),
      stencil_(plan, positions) {
  if (f_.size() != static_cast<std::size_t>(positions.rows()))
    throw InvalidArgument("one LRC weight per point required");
  phi_hat_ = multiplier_eval(params_, plan);
  f_hat_ = type1(plan, stencil_, f_);
  const int K = params_.channels();
  u_.resize(positions.rows(), K);
  for (int c = 0; c < K; ++c) {
    const auto uc = apply(f_hat_, phi_hat_[c]);
    for (Eigen::Index i = 0; i < u_.rows(); ++i) u_(i, c) = uc[i];
  }
  p_.resize(static_cast<std::size_t>(plan.dim() * K));
}

std::vector<double> LrcLayer::finish(const std::vector<Complex>& values, const Spectrum& coeffs) const {
  double re = 0.0;
  double im = 0.0;
  for (const auto& v : values) {
    re += v.real() * v.real();
    im += v.imag() * v.imag();
  }
  re = std::sqrt(re);
  im = std::sqrt(im);
  // |u_i| <= sum_k |V(k)|; outputs that vanish by symmetry are judged against that bound.
  double l1 = 0.0;
  for (const auto& c : coeffs) l1 += std::abs(c);
  const double scale = std::max(re, 1e-4 * std::sqrt(static_cast<double>(values.size())) * l1);
  if (!(im <= kImagResidueTolerance * scale))
    throw ImagResidueTooLarge("imaginary residue " + std::to_string(im) +
                              " exceeds tolerance relative to " + std::to_string(re));
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i].real();
  return out;
}

std::vector<double> LrcLayer::apply(const Spectrum& q, std::span<const double> multiplier) const {
  Spectrum v(q.size());
  for (std::size_t m = 0; m < q.size(); ++m) v[m] = multiplier[m] * q[m];
  return finish(type2(*plan_, stencil_, v), v);
}

std::vector<double> LrcLayer::apply_gradient(const Spectrum& q, std::span<const double> multiplier,
                                             int axis) const {
  const auto ka = axis_wavenumbers(*plan_, axis);
  Spectrum v(q.size());
  for (std::size_t m = 0; m < q.size(); ++m) v[m] = Complex(0.0, ka[m] * multiplier[m]) * q[m];
  return finish(type2(*plan_, stencil_, v), v);
}

const std::vector<double>& LrcLayer::p(int axis, int channel) const {
  auto& slot = p_[static_cast<std::size_t>(axis * params_.channels() + channel)];
  if (slot.empty()) slot = apply_gradient(f_hat_, phi_hat_[channel], axis);
  return slot;
}

Matrix LrcLayer::jvp(const Matrix& v) const {
  const int d = plan_->dim();
  const int K = params_.channels();
  const auto N = positions_.rows();
  if (v.rows() != N || v.cols() != d) throw InvalidArgument("jvp direction must be N x d");
  Matrix out = Matrix::Zero(N, K);
  for (int a = 0; a < d; ++a) {
    std::vector<double> fv(N);
    for (Eigen::Index i = 0; i < N; ++i) fv[i] = f_[i] * v(i, a);
    const Spectrum fv_hat = type1(*plan_, stencil_, fv);
    for (int c = 0; c < K; ++c) {
      const auto& pac = p(a, c);
      const auto w = apply_gradient(fv_hat, phi_hat_[c], a);
      for (Eigen::Index i = 0; i < N; ++i) out(i, c) += v(i, a) * pac[i] - w[i];
    }
  }
  return out;
}

Matrix LrcLayer::vjp_positions(const Matrix& ubar) const {
  const int d = plan_->dim();
  const int K = params_.channels();
  const auto N = positions_.rows();
  if (ubar.rows() != N || ubar.cols() != K) throw InvalidArgument("upstream gradient must be N x K");
  Matrix grad = Matrix::Zero(N, d);
  for (int c = 0; c < K; ++c) {
    const auto uc = column(ubar, c);
    const Spectrum u_hat = type1(*plan_, stencil_, uc);
    for (int a = 0; a < d; ++a) {
      const auto& pac = p(a, c);
      const auto conv = apply_gradient(u_hat, phi_hat_[c], a);
      for (Eigen::Index j = 0; j < N; ++j) grad(j, a) += uc[j] * pac[j] + f_[j] * conv[j];
    }
  }
  return grad;
}

MultiplierGradients LrcLayer::contract(const std::vector<std::vector<double>>& mode_weights) const {
  const auto ksq = plan_->kappa_sq();
  const int K = params_.channels();
  MultiplierGradients g{std::vector<double>(K, 0.0), std::vector<double>(K, 0.0)};
  for (int c = 0; c < K; ++c) {
    const double beta = params_.beta[c];
    const double lambda = params_.lambda[c];
    const double lam2 = lambda * lambda + kMultiplierFloor;
    double gb = 0.0;
    double gl = 0.0;
    for (std::size_t m = 0; m < plan_->n_modes(); ++m) {
      if (plan_->unpaired(m)) continue;
      const double inv = 1.0 / (ksq[m] + lam2);
      gb += mode_weights[c][m] * 4.0 * kPi * inv;
      gl -= mode_weights[c][m] * 8.0 * kPi * beta * lambda * inv * inv;
    }
    g.beta[c] = gb;
    g.lambda[c] = gl;
  }
  return g;
}

MultiplierGradients LrcLayer::vjp_multiplier(const Matrix& ubar) const {
  const int K = params_.channels();
  const double vol = std::pow(plan_->domain().length(), plan_->dim());
  std::vector<std::vector<double>> weights(K, std::vector<double>(plan_->n_modes()));
  for (int c = 0; c < K; ++c) {
    const Spectrum u_hat = type1(*plan_, stencil_, column(ubar, c));
    for (std::size_t m = 0; m < plan_->n_modes(); ++m)
      weights[c][m] = vol * (f_hat_[m] * std::conj(u_hat[m])).real();
  }
  return contract(weights);
}

MultiplierGradients LrcLayer::jvp_vjp_multiplier(const Matrix& v, const Matrix& ubar) const {
  const int d = plan_->dim();
  const int K = params_.channels();
  const auto N = positions_.rows();
  const double vol = std::pow(plan_->domain().length(), d);
  std::vector<std::vector<double>> weights(K, std::vector<double>(plan_->n_modes(), 0.0));
  std::vector<Spectrum> ubar_hat(K);
  for (int c = 0; c < K; ++c) ubar_hat[c] = type1(*plan_, stencil_, column(ubar, c));
  for (int a = 0; a < d; ++a) {
    const auto ka = axis_wavenumbers(*plan_, a);
    std::vector<double> fv(N);
    for (Eigen::Index i = 0; i < N; ++i) fv[i] = f_[i] * v(i, a);
    const Spectrum fv_hat = type1(*plan_, stencil_, fv);
    for (int c = 0; c < K; ++c) {
      std::vector<double> uv(N);
      for (Eigen::Index i = 0; i < N; ++i) uv[i] = ubar(i, c) * v(i, a);
      const Spectrum uv_hat = type1(*plan_, stencil_, uv);
      for (std::size_t m = 0; m < plan_->n_modes(); ++m) {
        const Complex z = f_hat_[m] * std::conj(uv_hat[m]) - fv_hat[m] * std::conj(ubar_hat[c][m]);
        // Re(i kappa z) = -kappa Im(z)
        weights[c][m] -= vol * ka[m] * z.imag();
      }
    }
  }
  return contract(weights);
}

Matrix lrc_forward(const NufftPlan& plan, const Matrix& positions, std::span<const double> weights,
                   const MultiplierParams& params) {
  return LrcLayer(plan, positions, weights, params).output();
}

Matrix lrc_jvp(const NufftPlan& plan, const Matrix& positions, std::span<const double> weights,
               const MultiplierParams& params, const Matrix& v) {
  return LrcLayer(plan, positions, weights, params).jvp(v);
}

LrcGradients lrc_backward(const NufftPlan& plan, const Matrix& positions,
                          std::span<const double> weights, const MultiplierParams& params,
                          const Matrix& ubar) {
  const LrcLayer layer(plan, positions, weights, params);
  auto mult = layer.vjp_multiplier(ubar);
  return LrcGradients{layer.vjp_positions(ubar), std::move(mult.beta), std::move(mult.lambda)};
}

}  // namespace lrc
