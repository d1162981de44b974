// Independent reference implementations used only by the test suites.
#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include "lrc/domain.hpp"
#include "lrc/rng.hpp"

namespace lrc::oracle {

inline constexpr double kPi = std::numbers::pi;

/// Signed frequencies of the retained band for L_FFT modes per dimension,
/// enumerated in row-major order (same ordering as the library's Spectrum).
inline std::vector<std::vector<int>> band(int d, int modes) {
  std::vector<std::vector<int>> out;
  std::size_t total = 1;
  for (int a = 0; a < d; ++a) total *= modes;
  for (std::size_t m = 0; m < total; ++m) {
    std::vector<int> k(d);
    std::size_t rest = m;
    for (int a = d - 1; a >= 0; --a) {
      k[a] = static_cast<int>(rest % modes) - modes / 2;
      rest /= modes;
    }
    out.push_back(k);
  }
  return out;
}

/// Direct nonuniform DFT: (1/L^d) sum_j f_j exp(-i kappa.x_j), O(N * N_FFT).
inline std::vector<std::complex<double>> direct_type1(const Matrix& x, const std::vector<double>& f,
                                                      double L, int modes) {
  const int d = static_cast<int>(x.cols());
  const auto ks = band(d, modes);
  std::vector<std::complex<double>> out;
  const double vol = std::pow(L, d);
  for (const auto& k : ks) {
    std::complex<double> acc{};
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      double phase = 0.0;
      for (int a = 0; a < d; ++a) phase += 2.0 * kPi * k[a] / L * x(j, a);
      acc += f[j] * std::complex<double>(std::cos(phase), -std::sin(phase));
    }
    out.push_back(acc / vol);
  }
  return out;
}

/// Yukawa-type multiplier on the band, with the unpaired Nyquist modes removed.
inline double multiplier(const std::vector<int>& k, int modes, double L, double beta, double lambda) {
  if (modes % 2 == 0)
    for (int ka : k)
      if (ka == -modes / 2) return 0.0;
  double ksq = 0.0;
  for (int ka : k) ksq += std::pow(2.0 * kPi * ka / L, 2);
  return 4.0 * kPi * beta / (ksq + lambda * lambda + 1e-6);
}

/// Band-limited periodic kernel phi(r) = L^{-d} sum_k phi_hat(k) cos(kappa.r) and its gradient.
struct TrigKernel {
  int d;
  int modes;
  double L;
  double beta;
  double lambda;

  double value(const double* r) const {
    double acc = 0.0;
    for (const auto& k : band(d, modes)) {
      double phase = 0.0;
      for (int a = 0; a < d; ++a) phase += 2.0 * kPi * k[a] / L * r[a];
      acc += multiplier(k, modes, L, beta, lambda) * std::cos(phase);
    }
    return acc / std::pow(L, d);
  }
};

/// u_i = sum_j f_j phi(x_i - x_j) by an O(N^2 N_FFT) double loop.
inline std::vector<double> direct_convolution(const Matrix& x, const std::vector<double>& f,
                                              const TrigKernel& kernel) {
  const int d = static_cast<int>(x.cols());
  std::vector<double> u(x.rows(), 0.0);
  std::vector<double> r(d);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      for (int a = 0; a < d; ++a) r[a] = x(i, a) - x(j, a);
      u[i] += f[j] * kernel.value(r.data());
    }
  return u;
}

inline Matrix random_positions(Rng& rng, int N, int d, double L) {
  Matrix x(N, d);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = rng.uniform(0.0, L);
  return x;
}

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = scale * rng.uniform(-1.0, 1.0);
  return m;
}

template <typename Range>
double rel_l2(const Range& got, const Range& want) {
  double num = 0.0;
  double den = 0.0;
  auto g = std::begin(got);
  for (auto w = std::begin(want); w != std::end(want); ++w, ++g) {
    num += std::norm(*g - *w);
    den += std::norm(*w);
  }
  return std::sqrt(num / den);
}

inline double rel_l2(const Matrix& got, const Matrix& want) {
  return (got - want).norm() / want.norm();
}

/// Central finite difference of a scalar function along direction v.
inline double central_difference(const std::function<double(double)>& f, double h) {
  return (f(h) - f(-h)) / (2.0 * h);
}

/// Free-space Green's function of (mu^2 - Laplacian) in d dimensions.
inline double yukawa_free_space(int d, double mu, double r) {
  if (d == 1) return std::exp(-mu * r) / (2.0 * mu);
  if (d == 2) return std::cyl_bessel_k(0.0, mu * r) / (2.0 * kPi);
  return std::exp(-mu * r) / (4.0 * kPi * r);
}

/// Periodic screened-Coulomb kernel by summing images with |n_a| <= images.
inline double yukawa_image_sum(int d, double L, double mu, const std::vector<double>& r, int images) {
  double acc = 0.0;
  std::vector<int> n(d, -images);
  while (true) {
    double dist2 = 0.0;
    for (int a = 0; a < d; ++a) dist2 += std::pow(r[a] + n[a] * L, 2);
    acc += yukawa_free_space(d, mu, std::sqrt(dist2));
    int a = d - 1;
    while (a >= 0 && ++n[a] > images) n[a--] = -images;
    if (a < 0) break;
  }
  return acc;
}

/// Minimum-image exponential pair energy, O(N^2).
inline double exponential_pair_energy(const Matrix& x, double L, double mu) {
  double U = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
      double r2 = 0.0;
      for (Eigen::Index a = 0; a < x.cols(); ++a) {
        double t = std::fmod(x(i, a) - x(j, a), L);
        if (t >= L / 2) t -= L;
        if (t < -L / 2) t += L;
        r2 += t * t;
      }
      U += std::exp(-mu * std::sqrt(r2));
    }
  return U;
}

}  // namespace lrc::oracle
