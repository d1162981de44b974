#include "lrc/net.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <memory>
#include <mutex>
#include <string>

#include "lrc/autodiff.hpp"
#include "lrc/errors.hpp"
#include "lrc/rng.hpp"

namespace lrc {

using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Configuration and neighbor lists

void DescriptorConfig::validate(const TorusDomain& dom) const {
  if (!(R > 0.0)) throw InvalidArgument("R must be positive");
  if (!(R < dom.length() / 2)) throw InvalidArgument("R must be smaller than L/2");
  if (max_neighbors < 0) throw InvalidArgument("max_neighbors must be >= 0");
  if (sr_widths.empty() || lr_widths.empty()) throw InvalidArgument("layer widths must be nonempty");
  for (int w : sr_widths)
    if (w < 1) throw InvalidArgument("layer widths must be positive");
  for (int w : lr_widths)
    if (w < 1) throw InvalidArgument("layer widths must be positive");
  if (fit_width < 1 || fit_blocks < 0) throw InvalidArgument("invalid fitting network shape");
  if (channels < 1) throw InvalidArgument("channels must be positive");
}

namespace {

double pair_distance2(const Matrix& x, const TorusDomain& dom, Eigen::Index i, Eigen::Index j) {
  double r2 = 0.0;
  for (Eigen::Index a = 0; a < x.cols(); ++a) {
    const double t = dom.wrap_displacement(x(i, a) - x(j, a));
    r2 += t * t;
  }
  return r2;
}

std::vector<std::vector<int>> neighbor_sets(const Matrix& x, const TorusDomain& dom, double R) {
  const int N = static_cast<int>(x.rows());
  const int d = dom.dim();
  const double L = dom.length();
  const double R2 = R * R;
  std::vector<std::vector<int>> out(N);
  const int cells = static_cast<int>(std::floor(L / R));
  if (cells < 3 || N < 64) {
    for (int i = 0; i < N; ++i)
      for (int j = i + 1; j < N; ++j)
        if (pair_distance2(x, dom, i, j) < R2) {
          out[i].push_back(j);
          out[j].push_back(i);
        }
  } else {
    const double h = L / cells;
    int total = 1;
    for (int a = 0; a < d; ++a) total *= cells;
    std::vector<std::vector<int>> bins(total);
    std::vector<std::array<int, 3>> home(N);
    for (int i = 0; i < N; ++i) {
      int flat = 0;
      for (int a = 0; a < d; ++a) {
        int c = static_cast<int>(std::floor(dom.wrap(x(i, a)) / h));
        c = std::clamp(c, 0, cells - 1);
        home[i][a] = c;
        flat = flat * cells + c;
      }
      bins[flat].push_back(i);
    }
    int offsets = 1;
    for (int a = 0; a < d; ++a) offsets *= 3;
    for (int i = 0; i < N; ++i) {
      for (int o = 0; o < offsets; ++o) {
        int rest = o, flat = 0;
        for (int a = 0; a < d; ++a) {
          const int shift = rest % 3 - 1;
          rest /= 3;
          flat = flat * cells + (home[i][a] + shift + cells) % cells;
        }
        for (int j : bins[flat])
          if (j != i && pair_distance2(x, dom, i, j) < R2) out[i].push_back(j);
      }
    }
  }
  for (auto& s : out) std::sort(s.begin(), s.end());
  return out;
}

}  // namespace

InteractionLists build_interaction_lists(const Matrix& positions, const TorusDomain& dom,
                                         const DescriptorConfig& cfg) {
  cfg.validate(dom);
  if (positions.cols() != dom.dim()) throw InvalidArgument("positions have wrong dimension");
  const auto sets = neighbor_sets(positions, dom, cfg.R);
  int required = 0;
  for (const auto& s : sets) required = std::max(required, static_cast<int>(s.size()));
  if (cfg.max_neighbors > 0 && required > cfg.max_neighbors)
    throw NeighborOverflow("interaction list needs " + std::to_string(required) +
                               " entries but max_neighbors is " + std::to_string(cfg.max_neighbors),
                           required);
  InteractionLists out;
  out.N = static_cast<int>(positions.rows());
  out.width = cfg.max_neighbors > 0 ? cfg.max_neighbors : required;
  out.index.assign(static_cast<std::size_t>(out.N) * out.width, -1);
  out.mask.assign(out.index.size(), 0);
  out.count.resize(out.N);
  for (int i = 0; i < out.N; ++i) {
    out.count[i] = static_cast<int>(sets[i].size());
    for (std::size_t k = 0; k < sets[i].size(); ++k) {
      out.index[static_cast<std::size_t>(i) * out.width + k] = sets[i][k];
      out.mask[static_cast<std::size_t>(i) * out.width + k] = 1;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

void ModelParams::visit(const std::function<void(Matrix&)>& fn) {
  auto mlp = [&](MlpParams& m) {
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      fn(m.weights[l]);
      fn(m.biases[l]);
    }
  };
  mlp(sr1);
  mlp(sr2);
  if (full_range()) mlp(lr);
  fn(fit.proj_w);
  fn(fit.proj_b);
  for (std::size_t b = 0; b < fit.block_w.size(); ++b) {
    fn(fit.block_w[b]);
    fn(fit.block_b[b]);
  }
  fn(fit.out_w);
  fn(fit.out_b);
  if (full_range()) {
    const int K = multiplier.channels();
    Matrix m(2, K);
    for (int c = 0; c < K; ++c) {
      m(0, c) = multiplier.beta[c];
      m(1, c) = multiplier.lambda[c];
    }
    fn(m);
    for (int c = 0; c < K; ++c) {
      multiplier.beta[c] = m(0, c);
      multiplier.lambda[c] = m(1, c);
    }
  }
}

void ModelParams::visit(const std::function<void(const Matrix&)>& fn) const {
  const_cast<ModelParams*>(this)->visit([&](Matrix& m) { fn(m); });
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  visit([&](const Matrix& m) { out.insert(out.end(), m.data(), m.data() + m.size()); });
  return out;
}

void ModelParams::unflatten(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw InvalidArgument("parameter vector has wrong length");
  std::size_t pos = 0;
  visit([&](Matrix& m) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), m.size(), m.data());
    pos += static_cast<std::size_t>(m.size());
  });
}

namespace {

Matrix glorot(Rng& rng, int in, int out) {
  const double sd = std::sqrt(2.0 / (in + out));
  Matrix w(in, out);
  for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = sd * rng.normal();
  return w;
}

MlpParams init_mlp(Rng& rng, int in, const std::vector<int>& widths, Activation act) {
  MlpParams m;
  m.activation = act;
  for (int w : widths) {
    m.weights.push_back(glorot(rng, in, w));
    m.biases.push_back(Matrix::Zero(1, w));
    in = w;
  }
  return m;
}

}  // namespace

ModelParams init_model(int d, ModelMode mode, const DescriptorConfig& cfg, std::uint64_t seed) {
  if (d < 1 || d > 3) throw InvalidArgument("d must be 1, 2, or 3");
  ModelParams p;
  p.d = d;
  p.mode = mode;
  p.cfg = cfg;
  Rng rng(seed);
  p.sr1 = init_mlp(rng, d == 1 ? 1 : d, cfg.sr_widths, Activation::kTanh);
  p.sr2 = init_mlp(rng, 1, cfg.sr_widths, Activation::kTanh);
  int in = cfg.m_sr();
  if (p.full_range()) {
    p.lr = init_mlp(rng, cfg.channels, cfg.lr_widths, Activation::kRelu);
    in += cfg.m_lr();
    p.multiplier.beta.assign(cfg.channels, 1.0);
    p.multiplier.lambda.assign(cfg.channels, 1.0);
    p.norm.u_mean.assign(cfg.channels, 0.0);
    p.norm.u_std.assign(cfg.channels, 1.0);
  }
  p.fit.proj_w = glorot(rng, in, cfg.fit_width);
  p.fit.proj_b = Matrix::Zero(1, cfg.fit_width);
  for (int b = 0; b < cfg.fit_blocks; ++b) {
    p.fit.block_w.push_back(glorot(rng, cfg.fit_width, cfg.fit_width));
    p.fit.block_b.push_back(Matrix::Zero(1, cfg.fit_width));
  }
  p.fit.out_w = glorot(rng, cfg.fit_width, 1);
  p.fit.out_b = Matrix::Zero(1, 1);
  return p;
}

ModelParams embed_short_range(const ModelParams& sr, std::uint64_t seed) {
  if (sr.full_range()) throw InvalidArgument("embedding expects a short-range model");
  ModelParams full = init_model(sr.d, ModelMode::kFullRange, sr.cfg, seed);
  full.sr1 = sr.sr1;
  full.sr2 = sr.sr2;
  full.fit = sr.fit;
  const int m_sr = sr.cfg.m_sr();
  full.fit.proj_w = Matrix::Zero(m_sr + sr.cfg.m_lr(), sr.cfg.fit_width);
  full.fit.proj_w.topRows(m_sr) = sr.fit.proj_w;
  full.norm.s_mean = sr.norm.s_mean;
  full.norm.s_std = sr.norm.s_std;
  full.norm.r_mean = sr.norm.r_mean;
  full.norm.r_std = sr.norm.r_std;
  return full;
}

// ---------------------------------------------------------------------------
// Pair geometry

namespace {

/// Interacting pairs. In 1D each unordered pair appears once and feeds both
/// endpoints (its coordinates are symmetric); in 2D/3D pairs are directed.
struct Pairs {
  int N = 0;
  int d = 1;
  std::vector<int> i, j;
  std::vector<int> second;  // j in 1D, -1 otherwise
  Matrix disp;              // P x d, x_i - x_j (minimum image)
  std::vector<double> dist;

  int size() const { return static_cast<int>(i.size()); }
};

Pairs collect_pairs(const Matrix& x, const TorusDomain& dom, const InteractionLists& lists) {
  Pairs p;
  p.N = lists.N;
  p.d = dom.dim();
  for (int a = 0; a < lists.N; ++a)
    for (int k = 0; k < lists.width; ++k) {
      if (!lists.real(a, k)) continue;
      const int b = lists.neighbor(a, k);
      if (p.d == 1 && b < a) continue;
      p.i.push_back(a);
      p.j.push_back(b);
      p.second.push_back(p.d == 1 ? b : -1);
    }
  const int P = p.size();
  p.disp.resize(P, p.d);
  p.dist.resize(P);
  for (int q = 0; q < P; ++q) {
    double r2 = 0.0;
    for (int a = 0; a < p.d; ++a) {
      p.disp(q, a) = dom.wrap_displacement(x(p.i[q], a) - x(p.j[q], a));
      r2 += p.disp(q, a) * p.disp(q, a);
    }
    p.dist[q] = std::sqrt(r2);
    if (!(p.dist[q] > 0.0)) throw ParticlesTooClose("coincident particles in an interaction list");
  }
  return p;
}

struct Features {
  Matrix s_hat;  // P x (1 or d)
  Matrix r_hat;  // P x 1
};

Features pair_features(const Pairs& p, const NormStats& n) {
  const int P = p.size();
  Features f;
  f.r_hat.resize(P, 1);
  f.s_hat.resize(P, p.d);
  for (int q = 0; q < P; ++q) {
    f.r_hat(q, 0) = (1.0 / p.dist[q] - n.r_mean) / n.r_std;
    if (p.d == 1) {
      f.s_hat(q, 0) = (p.dist[q] - n.s_mean) / n.s_std;
    } else {
      for (int a = 0; a < p.d; ++a) f.s_hat(q, a) = (p.disp(q, a) / p.dist[q] - n.s_mean) / n.s_std;
    }
  }
  return f;
}

/// Directional derivatives of the features when positions move along v.
Features feature_tangents(const Pairs& p, const NormStats& n, const Matrix& v) {
  const int P = p.size();
  Features f;
  f.r_hat.resize(P, 1);
  f.s_hat.resize(P, p.d);
  for (int q = 0; q < P; ++q) {
    const double r = p.dist[q];
    if (p.d == 1) {
      const double sgn = p.disp(q, 0) >= 0.0 ? 1.0 : -1.0;
      const double ds = sgn * (v(p.i[q], 0) - v(p.j[q], 0));
      f.s_hat(q, 0) = ds / n.s_std;
      f.r_hat(q, 0) = -ds / (r * r * n.r_std);
    } else {
      double along = 0.0;
      for (int a = 0; a < p.d; ++a) along += p.disp(q, a) / r * (v(p.i[q], a) - v(p.j[q], a));
      for (int a = 0; a < p.d; ++a)
        f.s_hat(q, a) = ((v(p.i[q], a) - v(p.j[q], a)) - p.disp(q, a) / r * along) / (r * n.s_std);
      f.r_hat(q, 0) = -along / (r * r * n.r_std);
    }
  }
  return f;
}

/// Pulls feature adjoints back to particle positions (dU/dx).
void accumulate_position_gradient(const Pairs& p, const NormStats& n, const Matrix& s_bar,
                                  const Matrix& r_bar, Matrix& gx) {
  for (int q = 0; q < p.size(); ++q) {
    const double r = p.dist[q];
    const double rb = r_bar.size() ? r_bar(q, 0) : 0.0;
    if (p.d == 1) {
      const double sgn = p.disp(q, 0) >= 0.0 ? 1.0 : -1.0;
      const double sb = s_bar.size() ? s_bar(q, 0) : 0.0;
      const double g = sgn * (sb / n.s_std - rb / (r * r * n.r_std));
      gx(p.i[q], 0) += g;
      gx(p.j[q], 0) -= g;
    } else {
      double along = 0.0;
      if (s_bar.size())
        for (int a = 0; a < p.d; ++a) along += p.disp(q, a) / r * s_bar(q, a);
      for (int a = 0; a < p.d; ++a) {
        const double u = p.disp(q, a) / r;
        const double sb = s_bar.size() ? s_bar(q, a) : 0.0;
        const double g = (sb - u * along) / (r * n.s_std) - rb * u / (r * r * n.r_std);
        gx(p.i[q], a) += g;
        gx(p.j[q], a) -= g;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Graph construction

struct MlpVars {
  Activation act = Activation::kTanh;
  std::vector<Var> w, b;
};

struct ParamVars {
  MlpVars sr1, sr2, lr;
  Var proj_w, proj_b;
  std::vector<Var> block_w, block_b;
  Var out_w, out_b;
  Var mult;
  std::vector<Var> all;  // visit order
};

ParamVars make_param_vars(Tape& tape, const ModelParams& params) {
  ParamVars v;
  params.visit([&](const Matrix& m) { v.all.push_back(tape.leaf(m, false)); });
  std::size_t k = 0;
  auto mlp = [&](const MlpParams& m, MlpVars& out) {
    out.act = m.activation;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      out.w.push_back(v.all[k++]);
      out.b.push_back(v.all[k++]);
    }
  };
  mlp(params.sr1, v.sr1);
  mlp(params.sr2, v.sr2);
  if (params.full_range()) mlp(params.lr, v.lr);
  v.proj_w = v.all[k++];
  v.proj_b = v.all[k++];
  for (std::size_t b = 0; b < params.fit.block_w.size(); ++b) {
    v.block_w.push_back(v.all[k++]);
    v.block_b.push_back(v.all[k++]);
  }
  v.out_w = v.all[k++];
  v.out_b = v.all[k++];
  if (params.full_range()) v.mult = v.all[k++];
  return v;
}

Var activate(Var z, Activation act) {
  switch (act) {
    case Activation::kTanh: return ad::tanh(z);
    case Activation::kRelu: return ad::relu(z);
    case Activation::kLinear: return z;
  }
  return z;
}

/// Forward through an MLP, recording each layer output for the tangent pass.
Var mlp_forward(Var x, const MlpVars& m, std::vector<Var>& outputs) {
  for (std::size_t l = 0; l < m.w.size(); ++l) {
    x = activate(ad::add_row(ad::matmul(x, m.w[l]), m.b[l]), m.act);
    outputs.push_back(x);
  }
  return x;
}

/// Directional derivative of an MLP given the recorded layer outputs.
Var mlp_tangent(Var xt, const MlpVars& m, const std::vector<Var>& outputs) {
  for (std::size_t l = 0; l < m.w.size(); ++l) {
    Var zt = ad::matmul(xt, m.w[l]);
    const Var h = outputs[l];
    switch (m.act) {
      case Activation::kTanh: xt = ad::mul(ad::one_minus_sq(h), zt); break;
      case Activation::kRelu: {
        Matrix mask = (h.value().array() > 0.0).cast<double>().matrix();
        xt = ad::mul_const(zt, std::move(mask));
        break;
      }
      case Activation::kLinear: xt = zt; break;
    }
  }
  return xt;
}

/// Energy graph of one configuration. Features and the LRC output enter as
/// leaves so that sweep one can read their adjoints.
struct Graph {
  ParamVars p;
  Var s_hat, r_hat;
  std::vector<Var> f1_out, f2_out, g_out, block_h;
  Var f1, f2;
  Var u, u_probe;
  Var U;
  std::shared_ptr<const LrcLayer> layer;
};

Var short_range_block(Graph& g, const Pairs& pairs) {
  g.f1 = mlp_forward(g.s_hat, g.p.sr1, g.f1_out);
  g.f2 = mlp_forward(g.r_hat, g.p.sr2, g.f2_out);
  const Var y1 = ad::mul_col(g.f1, g.r_hat);
  const Var y2 = ad::mul_col(g.f2, g.r_hat);
  const Var d1 = ad::segment_sum(y1, pairs.i, pairs.second, pairs.N);
  const Var d2 = ad::segment_sum(y2, pairs.i, pairs.second, pairs.N);
  return ad::concat_cols(d1, d2);
}

std::vector<double> inverse(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = 1.0 / v[k];
  return out;
}

void build_energy(Tape& tape, Graph& g, const ModelParams& params, const Pairs& pairs,
                  const Features& feats, const Matrix& x, const NufftPlan* plan) {
  g.p = make_param_vars(tape, params);
  g.s_hat = tape.leaf(feats.s_hat, false);
  g.r_hat = tape.leaf(feats.r_hat, false);
  Var D = short_range_block(g, pairs);
  if (params.full_range()) {
    const std::vector<double> ones(static_cast<std::size_t>(x.rows()), 1.0);
    g.layer = std::make_shared<const LrcLayer>(*plan, x, ones, params.multiplier);
    g.u_probe = tape.leaf(Matrix::Zero(x.rows(), params.multiplier.channels()), false);
    g.u = tape.push(g.layer->output(), {g.p.mult.id, g.u_probe.id},
                    [layer = g.layer, m = g.p.mult.id, probe = g.u_probe.id](Tape& t, int self) {
                      const Matrix& ub = t.grad(self);
                      if (t.needs(probe)) t.accumulate(probe, ub);
                      if (t.needs(m)) {
                        const auto mg = layer->vjp_multiplier(ub);
                        Matrix out(2, static_cast<Eigen::Index>(mg.beta.size()));
                        for (std::size_t c = 0; c < mg.beta.size(); ++c) {
                          out(0, c) = mg.beta[c];
                          out(1, c) = mg.lambda[c];
                        }
                        t.accumulate(m, out);
                      }
                    });
    const Var u_hat = ad::affine_cols(g.u, params.norm.u_mean, inverse(params.norm.u_std));
    const Var lr = mlp_forward(u_hat, g.p.lr, g.g_out);
    D = ad::concat_cols(D, lr);
  }
  Var z = ad::add_row(ad::matmul(D, g.p.proj_w), g.p.proj_b);
  for (std::size_t b = 0; b < g.p.block_w.size(); ++b) {
    const Var h = ad::tanh(ad::add_row(ad::matmul(z, g.p.block_w[b]), g.p.block_b[b]));
    g.block_h.push_back(h);
    z = ad::add(z, h);
  }
  g.U = ad::sum(ad::add_row(ad::matmul(z, g.p.out_w), g.p.out_b));
}

/// Directional derivative of U along v, as a differentiable function of the parameters.
Var build_energy_tangent(Tape& tape, const Graph& g, const ModelParams& params, const Pairs& pairs,
                         const Features& tang, const Matrix& v) {
  const Var st = tape.constant(tang.s_hat);
  const Var rt = tape.constant(tang.r_hat);
  const Var f1t = mlp_tangent(st, g.p.sr1, g.f1_out);
  const Var f2t = mlp_tangent(rt, g.p.sr2, g.f2_out);
  const Var y1t = ad::add(ad::mul_col(f1t, g.r_hat), ad::mul_col(g.f1, rt));
  const Var y2t = ad::add(ad::mul_col(f2t, g.r_hat), ad::mul_col(g.f2, rt));
  Var Dt = ad::concat_cols(ad::segment_sum(y1t, pairs.i, pairs.second, pairs.N),
                           ad::segment_sum(y2t, pairs.i, pairs.second, pairs.N));
  if (params.full_range()) {
    const Var ut = tape.push(g.layer->jvp(v), {g.p.mult.id},
                             [layer = g.layer, v, m = g.p.mult.id](Tape& t, int self) {
                               const auto mg = layer->jvp_vjp_multiplier(v, t.grad(self));
                               Matrix out(2, static_cast<Eigen::Index>(mg.beta.size()));
                               for (std::size_t c = 0; c < mg.beta.size(); ++c) {
                                 out(0, c) = mg.beta[c];
                                 out(1, c) = mg.lambda[c];
                               }
                               t.accumulate(m, out);
                             });
    const std::vector<double> zero(params.norm.u_std.size(), 0.0);
    const Var uht = ad::affine_cols(ut, zero, inverse(params.norm.u_std));
    Dt = ad::concat_cols(Dt, mlp_tangent(uht, g.p.lr, g.g_out));
  }
  Var zt = ad::matmul(Dt, g.p.proj_w);
  for (std::size_t b = 0; b < g.p.block_w.size(); ++b) {
    const Var ht = ad::mul(ad::one_minus_sq(g.block_h[b]), ad::matmul(zt, g.p.block_w[b]));
    zt = ad::add(zt, ht);
  }
  return ad::sum(ad::matmul(zt, g.p.out_w));
}

void check_model(const Matrix& x, const TorusDomain& dom, const ModelParams& params,
                 const NufftPlan* plan) {
  if (params.d != dom.dim() || x.cols() != dom.dim())
    throw InvalidArgument("model, domain and positions disagree on d");
  if (params.full_range()) {
    if (plan == nullptr) throw InvalidArgument("full-range model needs a NUFFT plan");
    if (!(plan->domain() == dom)) throw InvalidArgument("NUFFT plan domain differs from the data domain");
    if (params.multiplier.channels() != params.cfg.channels ||
        static_cast<int>(params.norm.u_std.size()) != params.cfg.channels)
      throw InvalidArgument("multiplier channel count mismatch");
  }
}

/// Everything a single configuration needs for the energy graph.
struct Prepared {
  Pairs pairs;
  Features feats;
};

Prepared prepare(const Matrix& x, const TorusDomain& dom, const ModelParams& params,
                 const NufftPlan* plan) {
  check_model(x, dom, params, plan);
  Prepared out;
  const auto lists = build_interaction_lists(x, dom, params.cfg);
  out.pairs = collect_pairs(x, dom, lists);
  out.feats = pair_features(out.pairs, params.norm);
  return out;
}

/// Sweep one: energy and dU/dx with parameters held fixed.
EnergyForces energy_forces_on(Tape& tape, Graph& g, const ModelParams& params, const Prepared& prep,
                              const Matrix& x, const NufftPlan* plan) {
  build_energy(tape, g, params, prep.pairs, prep.feats, x, plan);
  tape.set_requires_grad(g.s_hat, true);
  tape.set_requires_grad(g.r_hat, true);
  if (params.full_range()) tape.set_requires_grad(g.u_probe, true);
  tape.backward(g.U);
  Matrix gx = Matrix::Zero(x.rows(), x.cols());
  accumulate_position_gradient(prep.pairs, params.norm, g.s_hat.grad(), g.r_hat.grad(), gx);
  if (params.full_range() && g.u_probe.grad().size()) gx += g.layer->vjp_positions(g.u_probe.grad());
  return {g.U.value()(0, 0), -gx};
}

}  // namespace

// ---------------------------------------------------------------------------
// Public evaluation

NormStats calibrate_norm(std::span<const Snapshot> snapshots, const TorusDomain& dom,
                         const ModelParams& params, const NufftPlan* plan) {
  const std::size_t count = std::min<std::size_t>(100, snapshots.size());
  double s1 = 0, s2 = 0, r1 = 0, r2 = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const auto& x = snapshots[k].positions;
    const auto lists = build_interaction_lists(x, dom, params.cfg);
    const auto pairs = collect_pairs(x, dom, lists);
    for (int q = 0; q < pairs.size(); ++q) {
      const double s = pairs.dist[q];
      s1 += s;
      s2 += s * s;
      r1 += 1.0 / s;
      r2 += 1.0 / (s * s);
      ++n;
    }
  }
  NormStats out = params.norm;
  auto finish = [&](double a, double b, double& mean, double& sd) {
    mean = n ? a / n : 0.0;
    const double var = n ? b / n - mean * mean : 0.0;
    sd = var > 0.0 ? std::sqrt(var) : 1.0;
  };
  finish(r1, r2, out.r_mean, out.r_std);
  if (dom.dim() == 1) {
    finish(s1, s2, out.s_mean, out.s_std);
  } else {
    out.s_mean = 0.0;
    out.s_std = 1.0;
  }
  if (params.full_range()) {
    if (plan == nullptr) throw InvalidArgument("full-range calibration needs a NUFFT plan");
    ModelParams tmp = params;
    tmp.norm = out;
    calibrate_lrc_norm(snapshots, tmp, *plan);
    out = tmp.norm;
  }
  return out;
}

void calibrate_lrc_norm(std::span<const Snapshot> snapshots, ModelParams& params, const NufftPlan& plan) {
  const std::size_t count = std::min<std::size_t>(100, snapshots.size());
  const int K = params.multiplier.channels();
  std::vector<double> m1(K, 0.0), m2(K, 0.0);
  std::size_t n = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const auto& x = snapshots[k].positions;
    const std::vector<double> ones(static_cast<std::size_t>(x.rows()), 1.0);
    const Matrix u = lrc_forward(plan, x, ones, params.multiplier);
    for (Eigen::Index i = 0; i < u.rows(); ++i)
      for (int c = 0; c < K; ++c) {
        m1[c] += u(i, c);
        m2[c] += u(i, c) * u(i, c);
      }
    n += static_cast<std::size_t>(u.rows());
  }
  params.norm.u_mean.assign(K, 0.0);
  params.norm.u_std.assign(K, 1.0);
  for (int c = 0; c < K && n > 0; ++c) {
    params.norm.u_mean[c] = m1[c] / n;
    const double var = m2[c] / n - params.norm.u_mean[c] * params.norm.u_mean[c];
    params.norm.u_std[c] = var > 1e-300 ? std::sqrt(var) : 1.0;
  }
}

Matrix short_range_descriptor(const Matrix& positions, const TorusDomain& dom,
                              const InteractionLists& lists, const ModelParams& params) {
  if (params.d != dom.dim() || positions.cols() != dom.dim())
    throw InvalidArgument("model, domain and positions disagree on d");
  const auto pairs = collect_pairs(positions, dom, lists);
  const auto feats = pair_features(pairs, params.norm);
  Tape tape;
  Graph g;
  g.p = make_param_vars(tape, params);
  g.s_hat = tape.leaf(feats.s_hat, false);
  g.r_hat = tape.leaf(feats.r_hat, false);
  return short_range_block(g, pairs).value();
}

double energy(const Matrix& positions, const TorusDomain& dom, const ModelParams& params,
              const NufftPlan* plan) {
  const auto prep = prepare(positions, dom, params, plan);
  Tape tape;
  Graph g;
  build_energy(tape, g, params, prep.pairs, prep.feats, positions, plan);
  return g.U.value()(0, 0);
}

EnergyForces forces(const Matrix& positions, const TorusDomain& dom, const ModelParams& params,
                    const NufftPlan* plan) {
  const auto prep = prepare(positions, dom, params, plan);
  Tape tape;
  Graph g;
  return energy_forces_on(tape, g, params, prep, positions, plan);
}

namespace {

struct SnapshotLoss {
  double loss = 0.0;
  std::vector<double> gradient;
};

SnapshotLoss snapshot_loss(const Snapshot& snap, const TorusDomain& dom, const ModelParams& params,
                           const NufftPlan* plan, double energy_weight, double seed_scale) {
  const Matrix& x = snap.positions;
  const auto prep = prepare(x, dom, params, plan);
  if (snap.forces.rows() != x.rows() || snap.forces.cols() != x.cols())
    throw InvalidArgument("snapshot forces have wrong shape");
  Tape tape;
  Graph g;
  const auto ef = energy_forces_on(tape, g, params, prep, x, plan);
  const Matrix residual = ef.forces - snap.forces;
  const double de = ef.energy - snap.energy;
  SnapshotLoss out;
  out.loss = residual.squaredNorm() + energy_weight * de * de;
  if (!std::isfinite(out.loss)) throw NonFiniteLoss("loss is not finite");

  tape.zero_grad();
  tape.set_requires_grad(g.s_hat, false);
  tape.set_requires_grad(g.r_hat, false);
  if (params.full_range()) tape.set_requires_grad(g.u_probe, false);
  for (const Var& v : g.p.all) tape.set_requires_grad(v, true);

  const auto tang = feature_tangents(prep.pairs, params.norm, residual);
  const Var Ut = build_energy_tangent(tape, g, params, prep.pairs, tang, residual);
  const std::pair<Var, Matrix> seeds[] = {
      {g.U, Matrix::Constant(1, 1, 2.0 * energy_weight * de * seed_scale)},
      {Ut, Matrix::Constant(1, 1, -2.0 * seed_scale)},
  };
  tape.backward(seeds);

  out.gradient.reserve(params.parameter_count());
  for (const Var& v : g.p.all) {
    const Matrix& gr = v.grad();
    if (gr.size() == 0) {
      out.gradient.insert(out.gradient.end(), static_cast<std::size_t>(v.value().size()), 0.0);
    } else {
      out.gradient.insert(out.gradient.end(), gr.data(), gr.data() + gr.size());
    }
  }
  for (double gv : out.gradient)
    if (!std::isfinite(gv)) throw NonFiniteLoss("gradient is not finite");
  return out;
}

}  // namespace

LossGradient loss_and_param_gradients(std::span<const Snapshot* const> batch, const TorusDomain& dom,
                                      const ModelParams& params, const NufftPlan* plan,
                                      double energy_weight) {
  if (batch.empty()) throw InvalidArgument("batch must be nonempty");
  const int B = static_cast<int>(batch.size());
  const double inv = 1.0 / B;
  std::vector<SnapshotLoss> parts(B);
  std::exception_ptr failure;
  std::mutex failure_mutex;
#pragma omp parallel for schedule(dynamic)
  for (int b = 0; b < B; ++b) {
    try {
      parts[b] = snapshot_loss(*batch[b], dom, params, plan, energy_weight, inv);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  LossGradient out;
  out.gradient.assign(params.parameter_count(), 0.0);
  for (int b = 0; b < B; ++b) {
    out.loss += inv * parts[b].loss;
    for (std::size_t k = 0; k < out.gradient.size(); ++k) out.gradient[k] += parts[b].gradient[k];
  }
  return out;
}

LossGradient loss_and_param_gradients(std::span<const Snapshot> batch, const TorusDomain& dom,
                                      const ModelParams& params, const NufftPlan* plan,
                                      double energy_weight) {
  std::vector<const Snapshot*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  return loss_and_param_gradients(std::span<const Snapshot* const>(ptrs), dom, params, plan,
                                  energy_weight);
}

double relative_l2_error(std::span<const Matrix> reference, std::span<const Matrix> predicted) {
  if (reference.size() != predicted.size()) throw InvalidArgument("force set sizes differ");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < reference.size(); ++k) {
    num += (reference[k] - predicted[k]).squaredNorm();
    den += reference[k].squaredNorm();
  }
  if (!(den > 0.0)) throw ZeroDenominator("reference forces vanish");
  return std::sqrt(num / den);
}

double relative_l2_error(std::span<const Snapshot> snapshots, const TorusDomain& dom,
                         const ModelParams& params, const NufftPlan* plan) {
  if (snapshots.empty()) throw InvalidArgument("test set must be nonempty");
  const int n = static_cast<int>(snapshots.size());
  std::vector<Matrix> ref(n), pred(n);
  std::exception_ptr failure;
  std::mutex failure_mutex;
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n; ++k) {
    try {
      ref[k] = snapshots[k].forces;
      pred[k] = forces(snapshots[k].positions, dom, params, plan).forces;
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return relative_l2_error(std::span<const Matrix>(ref), std::span<const Matrix>(pred));
}

}  // namespace lrc
