#include "lrc/refdata.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <string>

#include "fftw_lock.hpp"
#include "lrc/errors.hpp"

namespace lrc {

namespace {

using Complex = std::complex<double>;
constexpr double kPi = std::numbers::pi;
constexpr double kTailTolerance = 1e-6;
constexpr double kForceSumTolerance = 1e-10;
constexpr std::size_t kMaxTableEntries = std::size_t{1} << 27;

int ipow(int b, int e) {
  int r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

/// e^{i kappa_q x} for every retained axis wavenumber, by recurrence with
/// periodic re-anchoring to keep round-off flat.
void axis_phases(double x, double L, int half, std::span<Complex> out) {
  const double w = 2.0 * kPi * x / L;
  const Complex step = std::polar(1.0, w);
  const int m = static_cast<int>(out.size());
  Complex cur;
  for (int q = 0; q < m; ++q) {
    if (q % 32 == 0) {
      cur = std::polar(1.0, w * static_cast<double>(q - half));
    } else {
      cur *= step;
    }
    out[q] = cur;
  }
}

/// Full band of e^{i kappa.x} (row-major) for one point.
void band_phases(std::span<const double> x, double L, int half, int m1,
                 std::vector<Complex>& axis, std::vector<Complex>& out) {
  const int d = static_cast<int>(x.size());
  axis.resize(static_cast<std::size_t>(d) * m1);
  for (int a = 0; a < d; ++a) axis_phases(x[a], L, half, std::span(axis).subspan(a * m1, m1));
  out.resize(static_cast<std::size_t>(ipow(m1, d)));
  if (d == 1) {
    std::copy(axis.begin(), axis.end(), out.begin());
  } else if (d == 2) {
    for (int i = 0; i < m1; ++i)
      for (int j = 0; j < m1; ++j) out[i * m1 + j] = axis[i] * axis[m1 + j];
  } else {
    for (int i = 0; i < m1; ++i)
      for (int j = 0; j < m1; ++j) {
        const Complex ij = axis[i] * axis[m1 + j];
        Complex* row = out.data() + (static_cast<std::size_t>(i) * m1 + j) * m1;
        for (int k = 0; k < m1; ++k) row[k] = ij * axis[2 * m1 + k];
      }
  }
}

/// sum_k w(k) kappa_a(k) for every axis, w row-major over the band.
void kappa_moments(std::span<const double> w, const std::vector<double>& kappa, int d,
                   std::span<double> out) {
  const int m1 = static_cast<int>(kappa.size());
  std::fill(out.begin(), out.end(), 0.0);
  std::size_t idx = 0;
  if (d == 1) {
    for (int i = 0; i < m1; ++i) out[0] += kappa[i] * w[i];
  } else if (d == 2) {
    for (int i = 0; i < m1; ++i) {
      double row = 0.0;
      for (int j = 0; j < m1; ++j, ++idx) {
        row += w[idx];
        out[1] += kappa[j] * w[idx];
      }
      out[0] += kappa[i] * row;
    }
  } else {
    for (int i = 0; i < m1; ++i) {
      double plane = 0.0;
      for (int j = 0; j < m1; ++j) {
        double row = 0.0;
        for (int k = 0; k < m1; ++k, ++idx) {
          row += w[idx];
          out[2] += kappa[k] * w[idx];
        }
        plane += row;
        out[1] += kappa[j] * row;
      }
      out[0] += kappa[i] * plane;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// KernelSpec

ComponentKind KernelSpec::component_kind(int c) const {
  switch (kind) {
    case KernelKind::kExponential: return ComponentKind::kExponential;
    case KernelKind::kScreenedCoulomb: return ComponentKind::kScreenedCoulomb;
    case KernelKind::kMixed:
      return c == 0 ? ComponentKind::kExponential : ComponentKind::kScreenedCoulomb;
  }
  throw InvalidArgument("unknown kernel kind");
}

void KernelSpec::validate() const {
  if (kind != KernelKind::kExponential && kind != KernelKind::kScreenedCoulomb &&
      kind != KernelKind::kMixed)
    throw InvalidArgument("unknown kernel kind");
  if (!(mu1 > 0.0) || !std::isfinite(mu1)) throw InvalidArgument("mu1 must be positive");
  if (!(alpha1 >= 0.0 && alpha2 >= 0.0)) throw InvalidArgument("mixing weights must be >= 0");
  if (std::abs(alpha1 + alpha2 - 1.0) > 1e-12) throw InvalidArgument("alpha1 + alpha2 must be 1");
  if (alpha2 > 0.0) {
    if (!(mu2 > 0.0) || !(mu1 > mu2)) throw InvalidArgument("two scales need mu1 > mu2 > 0");
    if (alpha2 > alpha1) throw InvalidArgument("alpha2 must not exceed alpha1");
  }
  if (kind == KernelKind::kMixed && alpha2 <= 0.0)
    throw InvalidArgument("mixed kernel needs alpha2 > 0");
}

KernelSpec KernelSpec::from_header(const DatasetHeader& h) {
  KernelSpec s{h.kind, h.mu1, h.mu2, h.alpha1, h.alpha2};
  s.validate();
  return s;
}

void KernelSpec::fill_header(DatasetHeader& h) const {
  h.kind = kind;
  h.mu1 = mu1;
  h.mu2 = mu2;
  h.alpha1 = alpha1;
  h.alpha2 = alpha2;
}

// ---------------------------------------------------------------------------
// Spectral kernel

void SpectralKernelConfig::validate() const {
  if (grid_size < 32 || grid_size % 2 != 0)
    throw InvalidArgument("spectral grid size must be even and >= 32");
  if (std::isnan(eps_smooth)) throw InvalidArgument("eps_smooth must be a number");
}

int default_spectral_grid(const TorusDomain& dom, double mu, double delta_min) {
  const double L = dom.length();
  const bool line = dom.dim() == 1;
  const double per_decay = line ? 20.0 : 4.0;
  const double per_gap = line ? 12.0 : 4.0;
  double n = std::max(32.0, std::ceil(per_decay * L * mu));
  if (delta_min > 0.0) n = std::max(n, std::ceil(per_gap * L / delta_min));
  int g = static_cast<int>(n);
  return g % 2 == 0 ? g : g + 1;
}

double exponential_kernel(double r, double mu) {
  if (r < 0.0) throw InvalidArgument("distance must be non-negative");
  return std::exp(-mu * r);
}

struct SpectralKernel::TableCache {
  std::once_flag once;
  std::vector<double> values;
};

SpectralKernel::SpectralKernel(const TorusDomain& dom, double mu, const SpectralKernelConfig& cfg)
    : dom_(dom), mu_(mu), n_(cfg.grid_size), table_(std::make_shared<TableCache>()) {
  cfg.validate();
  if (!(mu > 0.0)) throw InvalidArgument("mu must be positive");
  const double L = dom.length();
  const int d = dom.dim();
  eps_ = cfg.eps_smooth < 0.0 ? (L / n_) * (L / n_) : cfg.eps_smooth;

  const int half = n_ / 2 - 1;
  const int m1 = n_ - 1;
  kappa_.resize(m1);
  for (int q = 0; q < m1; ++q) kappa_[q] = 2.0 * kPi * (q - half) / L;

  const double kmax = kappa_.back();
  const double tail = std::exp(-eps_ * kmax * kmax) / (kmax * kmax + mu * mu) * (mu * mu);
  if (tail > kTailTolerance)
    throw GridTooCoarse("spectral grid " + std::to_string(n_) +
                        " leaves relative tail " + std::to_string(tail));

  const std::size_t total = static_cast<std::size_t>(ipow(m1, d));
  coeffs_.resize(total);
  std::vector<int> q(d, 0);
  double sum = 0.0;
  for (std::size_t idx = 0; idx < total; ++idx) {
    double k2 = 0.0;
    for (int a = 0; a < d; ++a) k2 += kappa_[q[a]] * kappa_[q[a]];
    coeffs_[idx] = std::exp(-eps_ * k2) / (k2 + mu * mu);
    sum += coeffs_[idx];
    for (int a = d - 1; a >= 0; --a) {
      if (++q[a] < m1) break;
      q[a] = 0;
    }
  }
  psi0_ = sum / std::pow(L, d);
}

double SpectralKernel::coefficient(std::span<const int> k) const {
  if (static_cast<int>(k.size()) != dom_.dim()) throw InvalidArgument("wrong index dimension");
  const int half = n_ / 2 - 1;
  std::size_t idx = 0;
  for (int a = 0; a < dom_.dim(); ++a) {
    if (std::abs(k[a]) > half) return 0.0;
    idx = idx * (n_ - 1) + static_cast<std::size_t>(k[a] + half);
  }
  return coeffs_[idx];
}

double SpectralKernel::value(std::span<const double> r) const {
  std::vector<double> g(r.size());
  return value_and_gradient(r, g);
}

double SpectralKernel::value_and_gradient(std::span<const double> r, std::span<double> grad) const {
  const int d = dom_.dim();
  if (static_cast<int>(r.size()) != d || static_cast<int>(grad.size()) != d)
    throw InvalidArgument("displacement has wrong dimension");
  std::vector<Complex> axis, phase;
  band_phases(r, dom_.length(), n_ / 2 - 1, n_ - 1, axis, phase);
  double v = 0.0;
  std::vector<double> w(phase.size());
  for (std::size_t k = 0; k < phase.size(); ++k) {
    v += coeffs_[k] * phase[k].real();
    w[k] = coeffs_[k] * phase[k].imag();
  }
  const double vol = std::pow(dom_.length(), d);
  kappa_moments(w, kappa_, d, grad);
  for (auto& g : grad) g = -g / vol;
  return v / vol;
}

const std::vector<double>& SpectralKernel::table() const {
  std::call_once(table_->once, [this] {
    const int d = dom_.dim();
    const std::size_t total = static_cast<std::size_t>(ipow(n_, d));
    if (total > kMaxTableEntries) throw InvalidArgument("kernel table too large");
    fftw_complex* buf = fftw_alloc_complex(total);
    if (buf == nullptr) throw std::bad_alloc();
    auto* c = reinterpret_cast<Complex*>(buf);
    std::fill_n(c, total, Complex(0.0));
    const int half = n_ / 2 - 1;
    const int m1 = n_ - 1;
    std::vector<int> q(d, 0);
    for (std::size_t idx = 0; idx < coeffs_.size(); ++idx) {
      std::size_t g = 0;
      for (int a = 0; a < d; ++a) g = g * n_ + static_cast<std::size_t>((q[a] - half + n_) % n_);
      c[g] = coeffs_[idx];
      for (int a = d - 1; a >= 0; --a) {
        if (++q[a] < m1) break;
        q[a] = 0;
      }
    }
    std::vector<int> dims(d, n_);
    fftw_plan plan;
    {
      std::lock_guard lock(detail::fftw_planner_mutex());
      plan = fftw_plan_dft(d, dims.data(), buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
      std::lock_guard lock(detail::fftw_planner_mutex());
      fftw_destroy_plan(plan);
    }
    const double vol = std::pow(dom_.length(), d);
    auto& t = table_->values;
    t.resize(total);
    for (std::size_t i = 0; i < total; ++i) t[i] = c[i].real() / vol;
    fftw_free(buf);

    // Exact evenness: average each entry with its mirror image.
    std::vector<double> mirrored(total);
    std::vector<int> m(d, 0);
    for (std::size_t i = 0; i < total; ++i) {
      std::size_t j = 0;
      for (int a = 0; a < d; ++a) j = j * n_ + static_cast<std::size_t>((n_ - m[a]) % n_);
      mirrored[i] = t[j];
      for (int a = d - 1; a >= 0; --a) {
        if (++m[a] < n_) break;
        m[a] = 0;
      }
    }
    for (std::size_t i = 0; i < total; ++i) t[i] = 0.5 * (t[i] + mirrored[i]);
  });
  return table_->values;
}

double SpectralKernel::energy_and_forces(const Matrix& x, Matrix* forces) const {
  const int d = dom_.dim();
  const Eigen::Index N = x.rows();
  if (x.cols() != d) throw InvalidArgument("positions have wrong dimension");
  const double L = dom_.length();
  const double vol = std::pow(L, d);
  const int half = n_ / 2 - 1;
  const int m1 = n_ - 1;
  if (forces) forces->setZero(N, d);
  if (N < 2) return 0.0;

  std::vector<Complex> axis, phase;
  std::vector<Complex> S(coeffs_.size(), Complex(0.0));
  for (Eigen::Index j = 0; j < N; ++j) {
    band_phases(std::span(x.row(j).data(), d), L, half, m1, axis, phase);
    for (std::size_t k = 0; k < S.size(); ++k) S[k] += phase[k];
  }
  double e = 0.0;
  for (std::size_t k = 0; k < S.size(); ++k) e += coeffs_[k] * std::norm(S[k]);
  const double energy = 0.5 * (e / vol - static_cast<double>(N) * psi0_);

  if (forces) {
    std::vector<double> w(S.size());
    std::vector<double> f(d);
    for (Eigen::Index j = 0; j < N; ++j) {
      band_phases(std::span(x.row(j).data(), d), L, half, m1, axis, phase);
      for (std::size_t k = 0; k < S.size(); ++k)
        w[k] = coeffs_[k] * (phase[k] * std::conj(S[k])).imag();
      kappa_moments(w, kappa_, d, f);
      for (int a = 0; a < d; ++a) (*forces)(j, a) = f[a] / vol;
    }
  }
  return energy;
}

SpectralKernel screened_coulomb_table(const TorusDomain& dom, double mu,
                                      const SpectralKernelConfig& cfg) {
  return SpectralKernel(dom, mu, cfg);
}

// ---------------------------------------------------------------------------
// Reference model

ReferenceModel::ReferenceModel(const KernelSpec& spec, const TorusDomain& dom, double delta_min,
                               std::optional<int> grid_size)
    : spec_(spec), dom_(dom), delta_min_(delta_min) {
  spec.validate();
  if (!(delta_min >= 0.0)) throw InvalidArgument("delta_min must be >= 0");
  spectral_.resize(spec.n_components());
  for (int c = 0; c < spec.n_components(); ++c) {
    if (spec.component_kind(c) != ComponentKind::kScreenedCoulomb) continue;
    SpectralKernelConfig cfg;
    cfg.grid_size = grid_size.value_or(default_spectral_grid(dom, spec.mu(c), delta_min));
    spectral_[c] = std::make_shared<const SpectralKernel>(dom, spec.mu(c), cfg);
  }
}

const SpectralKernel* ReferenceModel::spectral(int c) const { return spectral_.at(c).get(); }

EnergyForces ReferenceModel::evaluate(const Matrix& x) const {
  const int d = dom_.dim();
  if (x.cols() != d) throw InvalidArgument("positions have wrong dimension");
  const Eigen::Index N = x.rows();
  const double closest = min_pair_distance(x, dom_);
  if (N >= 2 && (closest <= 0.0 || closest < delta_min_))
    throw ParticlesTooClose("pair distance " + std::to_string(closest) + " below delta_min");

  EnergyForces out;
  out.forces.setZero(N, d);
  std::vector<double> r(d);
  for (int c = 0; c < spec_.n_components(); ++c) {
    const double alpha = spec_.alpha(c);
    if (spectral_[c]) {
      Matrix f;
      out.energy += alpha * spectral_[c]->energy_and_forces(x, &f);
      out.forces += alpha * f;
      continue;
    }
    const double mu = spec_.mu(c);
    for (Eigen::Index i = 0; i < N; ++i) {
      for (Eigen::Index j = i + 1; j < N; ++j) {
        double dist2 = 0.0;
        for (int a = 0; a < d; ++a) {
          r[a] = dom_.wrap_displacement(x(i, a) - x(j, a));
          dist2 += r[a] * r[a];
        }
        const double dist = std::sqrt(dist2);
        const double e = alpha * exponential_kernel(dist, mu);
        out.energy += e;
        for (int a = 0; a < d; ++a) {
          const double g = mu * e * r[a] / dist;
          out.forces(i, a) += g;
          out.forces(j, a) -= g;
        }
      }
    }
  }
  return out;
}

double ReferenceModel::pair_value_and_gradient(std::span<const double> r,
                                               std::span<double> grad) const {
  const int d = dom_.dim();
  if (static_cast<int>(r.size()) != d || static_cast<int>(grad.size()) != d)
    throw InvalidArgument("displacement has wrong dimension");
  std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<double> w(d), g(d);
  for (int a = 0; a < d; ++a) w[a] = dom_.wrap_displacement(r[a]);
  double v = 0.0;
  for (int c = 0; c < spec_.n_components(); ++c) {
    const double alpha = spec_.alpha(c);
    if (spectral_[c]) {
      v += alpha * spectral_[c]->value_and_gradient(w, g);
      for (int a = 0; a < d; ++a) grad[a] += alpha * g[a];
      continue;
    }
    double dist2 = 0.0;
    for (double t : w) dist2 += t * t;
    const double dist = std::sqrt(dist2);
    const double e = alpha * exponential_kernel(dist, spec_.mu(c));
    v += e;
    if (dist > 0.0)
      for (int a = 0; a < d; ++a) grad[a] -= spec_.mu(c) * e * w[a] / dist;
  }
  return v;
}

EnergyForces energy_and_forces(const Matrix& positions, const KernelSpec& spec,
                               const TorusDomain& dom, double delta_min) {
  return ReferenceModel(spec, dom, delta_min).evaluate(positions);
}

// ---------------------------------------------------------------------------
// Dataset generation

Dataset generate_dataset(const KernelSpec& spec, const TorusDomain& dom,
                         const SamplerConfig& sampler, int n_samples,
                         std::optional<int> grid_size) {
  sampler.validate();
  if (n_samples < 0) throw InvalidArgument("n_samples must be >= 0");
  const ReferenceModel model(spec, dom, sampler.delta_min, grid_size);

  Dataset out;
  out.header.d = static_cast<std::uint32_t>(dom.dim());
  out.header.N = static_cast<std::uint32_t>(sampler.N);
  out.header.n_samples = static_cast<std::uint32_t>(n_samples);
  out.header.L = dom.length();
  spec.fill_header(out.header);
  out.header.delta_min = sampler.delta_min;
  out.header.seed = sampler.seed;
  out.snapshots.resize(n_samples);

  std::exception_ptr failure;
  std::mutex failure_mutex;
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < n_samples; ++s) {
    try {
      Snapshot& snap = out.snapshots[s];
      snap.positions = sample_configuration(sampler, dom, static_cast<std::uint64_t>(s));
      auto ef = model.evaluate(snap.positions);
      const double total = ef.forces.colwise().sum().norm();
      if (total > kForceSumTolerance * ef.forces.norm())
        throw Error("snapshot " + std::to_string(s) + " violates the force zero-sum check");
      snap.energy = ef.energy;
      snap.forces = std::move(ef.forces);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

void generate_dataset(const std::filesystem::path& path, const KernelSpec& spec,
                      const TorusDomain& dom, const SamplerConfig& sampler, int n_samples,
                      std::optional<int> grid_size) {
  write_dataset(path, generate_dataset(spec, dom, sampler, n_samples, grid_size));
}

}  // namespace lrc
