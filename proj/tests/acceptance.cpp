// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero if any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fixtures.hpp"
#include "lrc/checkpoint.hpp"
#include "lrc/errors.hpp"
#include "lrc/net.hpp"
#include "lrc/nufft.hpp"
#include "lrc/refdata.hpp"
#include "lrc/train.hpp"
#include "oracles.hpp"

using namespace lrc;
using namespace lrc::fixture;
namespace orc = lrc::oracle;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kType1Tol = 1e-6;
constexpr double kLrcForwardTol = 1e-4;
constexpr double kJvpTol = 1e-5;
constexpr double kForceTol = 1e-4;
constexpr double kLossGradTol = 1e-5;
constexpr double kDerivativeSeconds = 60.0;
constexpr double kLrcSlopeMax = 1.15;
constexpr double kDirectSlopeMin = 1.8;
constexpr double kGainAtSmallMu = 3.0;
constexpr double kShortRangeLo = 0.02, kShortRangeHi = 0.12;
constexpr double kParityLo = 0.5, kParityHi = 3.0;
constexpr double kImageSumTol = 0.01;
constexpr double kExpForceTol = 1e-6;
constexpr double kSpectralForceTol = 1e-4;
constexpr double kForceSumTol = 1e-10;
constexpr double kEpochScale = 0.25;

struct Context {
  fs::path workdir;
  std::uint64_t seed = 2024;
  bool verbose = false;
};

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [violated]");
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> random_weights(Rng& rng, int N) {
  std::vector<double> f(N);
  for (auto& v : f) v = rng.uniform(-1.0, 1.0);
  return f;
}

// ---------------------------------------------------------------------------

Outcome nufft_type1(const Context&) {
  Outcome out;
  const int modes[] = {501, 31, 25};
  for (int d = 1; d <= 3; ++d) {
    const double L = 3.0 + d;
    const auto plan = make_plan(TorusDomain(d, L), modes[d - 1]);
    Rng rng(100 + d);
    const Matrix x = orc::random_positions(rng, 256, d, L);
    const auto f = random_weights(rng, 256);
    const double err = orc::rel_l2(type1(plan, x, f), orc::direct_type1(x, f, L, modes[d - 1]));
    out.require(err <= kType1Tol, "d=" + std::to_string(d) + " err " + fmt(err));
  }
  return out;
}

Outcome lrc_forward_oracle(const Context&) {
  Outcome out;
  const int modes[] = {501, 31, 25};
  const MultiplierParams params{{1.0, 0.5}, {1.0, 2.0}};
  for (int d = 1; d <= 3; ++d) {
    const double L = d == 1 ? 5.0 : 3.0;
    const int N = d == 3 ? 32 : 64;
    const auto plan = make_plan(TorusDomain(d, L), modes[d - 1]);
    Rng rng(200 + d);
    const Matrix x = orc::random_positions(rng, N, d, L);
    const auto f = random_weights(rng, N);
    const Matrix u = lrc_forward(plan, x, f, params);
    for (int c = 0; c < 2; ++c) {
      const orc::TrigKernel kernel{d, modes[d - 1], L, params.beta[c], params.lambda[c]};
      const auto want = orc::direct_convolution(x, f, kernel);
      std::vector<double> got(u.rows());
      for (Eigen::Index i = 0; i < u.rows(); ++i) got[i] = u(i, c);
      const double err = orc::rel_l2(got, want);
      out.require(err <= kLrcForwardTol, "d=" + std::to_string(d) + " (beta,lambda)=(" +
                                             fmt(params.beta[c]) + "," + fmt(params.lambda[c]) +
                                             ") err " + fmt(err));
    }
  }
  return out;
}

Outcome derivatives(const Context&) {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();

  double jvp_worst = 0.0;
  for (int d = 1; d <= 3; ++d) {
    const double L = 3.0;
    const int N = 16;
    const auto plan = make_plan(TorusDomain(d, L), d == 3 ? 25 : 31);
    const MultiplierParams params{{1.0, 0.5}, {1.0, 2.0}};
    Rng rng(300 + d);
    const Matrix x = orc::random_positions(rng, N, d, L);
    const auto f = random_weights(rng, N);
    const Matrix v = orc::random_matrix(rng, N, d);
    const double h = 1e-6;
    const Matrix fd = (lrc_forward(plan, x + h * v, f, params) - lrc_forward(plan, x - h * v, f, params)) / (2 * h);
    jvp_worst = std::max(jvp_worst, orc::rel_l2(lrc_jvp(plan, x, f, params, v), fd));
  }
  out.require(jvp_worst <= kJvpTol, "jvp err " + fmt(jvp_worst));

  // Componentwise: |F - FD| <= tol |FD| up to an absolute floor far below the force scale.
  double force_worst = 0.0;
  for (int d = 1; d <= 3; ++d) {
    const double L = d == 1 ? 5.0 : 3.0, R = d == 1 ? 1.5 : 1.0;
    const TorusDomain dom(d, L);
    const auto plan = make_plan(dom, d == 3 ? 15 : 31);
    const Matrix x = clear_of_shells(10, dom, R, 0.1, 310 + d);
    for (auto mode : {ModelMode::kShortRange, ModelMode::kFullRange}) {
      ModelParams p = init_model(d, mode, tiny_config(R), 320 + d);
      jitter(p, 330 + d);
      const auto ef = forces(x, dom, p, &plan);
      const double floor = 1e-6 * ef.forces.cwiseAbs().maxCoeff();
      for (int j = 0; j < x.rows(); ++j)
        for (int a = 0; a < d; ++a) {
          const double fd = -orc::central_difference(
              [&](double h) {
                Matrix y = x;
                y(j, a) += h;
                return energy(y, dom, p, &plan);
              },
              1e-5);
          force_worst = std::max(force_worst, std::abs(ef.forces(j, a) - fd) / std::max(std::abs(fd), floor));
        }
    }
  }
  out.require(force_worst <= kForceTol, "force err " + fmt(force_worst));

  double grad_worst = 0.0;
  for (int d = 1; d <= 3; ++d) {
    const double L = 3.0, R = 1.0;
    const TorusDomain dom(d, L);
    const auto plan = make_plan(dom, d == 3 ? 15 : 31);
    const auto batch = labelled({clear_of_shells(6, dom, R, 0.1, 340 + d)}, 350 + d);
    for (auto mode : {ModelMode::kShortRange, ModelMode::kFullRange}) {
      ModelParams p = init_model(d, mode, tiny_config(R), 360 + d);
      jitter(p, 370 + d);
      if (p.full_range()) {
        p.norm.u_mean = {0.5, -0.3};
        p.norm.u_std = {1.7, 0.8};
      }
      const auto lg = loss_and_param_gradients(std::span<const Snapshot>(batch), dom, p, &plan, 0.3);
      const auto flat = p.flatten();
      for (std::size_t k = 0; k < flat.size(); ++k) {
        const double fd = orc::central_difference(
            [&](double h) {
              auto g = flat;
              g[k] += h;
              ModelParams q = p;
              q.unflatten(g);
              return loss_and_param_gradients(std::span<const Snapshot>(batch), dom, q, &plan, 0.3).loss;
            },
            1e-5);
        grad_worst = std::max(grad_worst, std::abs(lg.gradient[k] - fd) / std::max(std::abs(fd), 1e-3));
      }
    }
  }
  out.require(grad_worst <= kLossGradTol, "loss-gradient err " + fmt(grad_worst));

  const double elapsed = seconds_since(t0);
  out.require(elapsed <= kDerivativeSeconds, "runtime " + fmt(elapsed) + " s");
  return out;
}

Outcome complexity(const Context& ctx) {
  Outcome out;
  BenchmarkConfig cfg;
  cfg.seed = ctx.seed;
  const auto rows = benchmark_scaling(cfg);
  if (!ctx.workdir.empty()) write_benchmark_csv(ctx.workdir / "bench.csv", rows);
  std::vector<double> N, tl, td;
  bool increasing = true;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    N.push_back(rows[k].N);
    tl.push_back(rows[k].t_lrc);
    td.push_back(rows[k].t_direct);
    if (k > 0 && !(td[k] / tl[k] > td[k - 1] / tl[k - 1])) increasing = false;
  }
  const double sl = loglog_slope(N, tl), sd = loglog_slope(N, td);
  out.require(sl <= kLrcSlopeMax, "lrc slope " + fmt(sl));
  out.require(sd >= kDirectSlopeMin, "direct slope " + fmt(sd));
  std::string ratios;
  for (std::size_t k = 0; k < rows.size(); ++k) ratios += (k ? "," : "") + fmt(td[k] / tl[k]);
  out.require(increasing, "direct/lrc ratio " + ratios);
  return out;
}

// ---------------------------------------------------------------------------
// Training criteria

TrainConfig desk_schedule(std::uint64_t seed) {
  TrainConfig t;
  t.epoch_scale = kEpochScale;
  t.seed = seed;
  t.test_size = 100;
  t.eval_every = 1 << 30;  // stage ends only
  return t;
}

TrainOptions run_options(const Context& ctx, const std::string& name) {
  TrainOptions o;
  if (!ctx.workdir.empty()) {
    o.run_dir = ctx.workdir / name;
    fs::create_directories(o.run_dir);
  }
  if (ctx.verbose)
    o.on_epoch = [name](const MetricRow& r) {
      std::cerr << name << " stage " << r.stage << " epoch " << r.epoch << " loss " << r.train_loss;
      if (!std::isnan(r.test_eps_rel)) std::cerr << " test " << r.test_eps_rel;
      std::cerr << " t " << r.wall_seconds << "\n";
    };
  return o;
}

Dataset make_data(const KernelSpec& spec, double L, int N, int n_samples, std::uint64_t seed) {
  SamplerConfig s;
  s.N = N;
  s.delta_min = 0.05;
  s.seed = seed;
  return generate_dataset(spec, TorusDomain(1, L), s, n_samples);
}

Outcome table1(const Context& ctx) {
  Outcome out;
  DescriptorConfig dcfg;
  dcfg.R = 1.5;
  std::map<double, std::pair<double, double>> eps;
  for (double mu : {0.5, 10.0}) {
    const KernelSpec spec{KernelKind::kScreenedCoulomb, mu, 0.0, 1.0, 0.0};
    const Dataset data = make_data(spec, 5.0, 20, 1100, ctx.seed + 1);
    const auto t = desk_schedule(ctx.seed);
    const std::string tag = "table1_mu" + fmt(mu);
    const double sr = train_one_scale(data, ModelMode::kShortRange, dcfg, t, 501, run_options(ctx, tag + "_sr")).test_eps_rel;
    const double full = train_one_scale(data, ModelMode::kFullRange, dcfg, t, 501, run_options(ctx, tag + "_full")).test_eps_rel;
    eps[mu] = {sr, full};
  }
  const auto [sr_a, full_a] = eps[0.5];
  const auto [sr_b, full_b] = eps[10.0];
  out.require(full_a <= sr_a / kGainAtSmallMu, "mu=0.5 short " + fmt(sr_a) + " full " + fmt(full_a));
  out.require(sr_a >= kShortRangeLo && sr_a <= kShortRangeHi, "mu=0.5 short in [0.02,0.12]");
  const double ratio = full_b / sr_b;
  out.require(ratio >= kParityLo && ratio <= kParityHi,
              "mu=10 short " + fmt(sr_b) + " full " + fmt(full_b) + " ratio " + fmt(ratio));
  return out;
}

Outcome two_scale(const Context& ctx) {
  Outcome out;
  const KernelSpec spec{KernelKind::kScreenedCoulomb, 5.0, 0.5, 0.5, 0.5};
  const Dataset small = make_data(spec, 5.0, 20, 10100, ctx.seed + 2);
  const Dataset large = make_data(spec, 50.0, 200, 1100, ctx.seed + 3);
  DescriptorConfig dcfg;
  dcfg.R = 1.5;
  const auto t = desk_schedule(ctx.seed);

  // The same 100 held-out snapshots (the last ones) for both strategies.
  Dataset large100;
  large100.header = large.header;
  large100.snapshots.assign(large.snapshots.begin(), large.snapshots.begin() + 100);
  large100.snapshots.insert(large100.snapshots.end(), large.snapshots.end() - 100, large.snapshots.end());
  large100.header.n_samples = static_cast<std::uint32_t>(large100.snapshots.size());

  const double one = train_one_scale(large, ModelMode::kFullRange, dcfg, t, 501, run_options(ctx, "one_scale_1000")).test_eps_rel;
  const TwoScaleConfig ts{dcfg, t, t, 501};
  const auto two = train_two_scale(small, large100, ts, run_options(ctx, "two_scale_100"));
  const double eps_two = two.phase_b.test_eps_rel;
  out.require(eps_two <= one, "two-scale(100) " + fmt(eps_two) + " one-scale(1000) " + fmt(one) +
                                  " phase A " + fmt(two.phase_a.test_eps_rel));
  return out;
}

// ---------------------------------------------------------------------------

double reference_force_error(const ReferenceModel& model, const Matrix& x, double h) {
  const auto ef = model.evaluate(x);
  Matrix fd(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.rows(); ++j)
    for (Eigen::Index a = 0; a < x.cols(); ++a)
      fd(j, a) = -orc::central_difference(
          [&](double t) {
            Matrix y = x;
            y(j, a) += t;
            return model.evaluate(y).energy;
          },
          h);
  return orc::rel_l2(ef.forces, fd);
}

Outcome generator_fidelity(const Context& ctx) {
  Outcome out;
  struct Case {
    int d;
    double L, mu;
    std::vector<double> r;
    int grid, images;
  };
  const std::vector<Case> cases{{1, 50.0, 5.0, {1.0}, 0, 2},
                                {1, 5.0, 0.5, {0.3}, 0, 40},
                                {2, 3.0, 2.0, {0.4, 0.3}, 128, 4},
                                {3, 20.0, 2.0, {1.0, 0.0, 0.0}, 448, 1}};
  double worst = 0.0;
  for (const auto& c : cases) {
    const TorusDomain dom(c.d, c.L);
    const int grid = c.grid ? c.grid : default_spectral_grid(dom, c.mu, 0.05);
    const auto k = screened_coulomb_table(dom, c.mu, {grid, -1.0});
    const double want = orc::yukawa_image_sum(c.d, c.L, c.mu, c.r, c.images);
    worst = std::max(worst, std::abs(k.value(c.r) - want) / std::abs(want));
  }
  out.require(worst <= kImageSumTol, "image-sum err " + fmt(worst));

  double exp_worst = 0.0, sc_worst = 0.0;
  for (int d = 1; d <= 3; ++d) {
    const TorusDomain dom(d, 3.0);
    SamplerConfig s;
    s.N = 8;
    s.delta_min = 0.1;
    s.seed = ctx.seed + d;
    const Matrix x = sample_configuration(s, dom);
    exp_worst = std::max(exp_worst, reference_force_error(
        ReferenceModel(KernelSpec{KernelKind::kExponential, 2.0, 0.0, 1.0, 0.0}, dom, 0.1), x, 1e-6));
    const KernelSpec sc{KernelKind::kScreenedCoulomb, 2.0, 0.0, 1.0, 0.0};
    const auto model = d == 1 ? ReferenceModel(sc, dom, 0.1) : ReferenceModel(sc, dom, 0.1, d == 2 ? 64 : 32);
    sc_worst = std::max(sc_worst, reference_force_error(model, x, 1e-5));
  }
  out.require(exp_worst <= kExpForceTol, "exponential FD err " + fmt(exp_worst));
  out.require(sc_worst <= kSpectralForceTol, "spectral FD err " + fmt(sc_worst));

  double sum_worst = 0.0;
  SamplerConfig s;
  s.N = 20;
  s.delta_min = 0.05;
  s.seed = ctx.seed;
  for (const auto& spec : {KernelSpec{KernelKind::kMixed, 2.0, 0.5, 0.5, 0.5},
                           KernelSpec{KernelKind::kScreenedCoulomb, 5.0, 0.5, 0.5, 0.5}}) {
    const Dataset data = generate_dataset(spec, TorusDomain(1, 5.0), s, 100);
    for (const auto& snap : data.snapshots)
      sum_worst = std::max(sum_worst, snap.forces.colwise().sum().norm() / snap.forces.norm());
  }
  out.require(sum_worst <= kForceSumTol, "force-sum err " + fmt(sum_worst));
  return out;
}

// ---------------------------------------------------------------------------

Matrix permuted_rows(const Matrix& x, const std::vector<int>& perm) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) y.row(i) = x.row(perm[i]);
  return y;
}

Outcome invariants(const Context& ctx) {
  Outcome out;
  constexpr int kTrials = 30;
  int perm_fail = 0, trans_fail = 0, embed_fail = 0, ckpt_fail = 0, seed_fail = 0;

  for (int trial = 0; trial < kTrials; ++trial) {
    const int d = 1 + trial % 3;
    const double L = 3.0;
    const TorusDomain dom(d, L);
    const auto plan = make_plan(dom, d == 3 ? 15 : 31);
    Rng rng(ctx.seed + 1000 + trial);
    const int N = 8 + static_cast<int>(rng.below(10));
    const Matrix x = orc::random_positions(rng, N, d, L);
    std::vector<int> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = N - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    Matrix shift(1, d);
    for (int a = 0; a < d; ++a) shift(0, a) = rng.uniform(-L, L);

    for (auto mode : {ModelMode::kShortRange, ModelMode::kFullRange}) {
      ModelParams p = init_model(d, mode, tiny_config(1.0), ctx.seed + trial);
      jitter(p, ctx.seed + 50 + trial);
      const auto ef = forces(x, dom, p, &plan);
      const double scale = ef.forces.norm();

      const auto ep = forces(permuted_rows(x, perm), dom, p, &plan);
      if (std::abs(ep.energy - ef.energy) > 1e-12 * std::abs(ef.energy) ||
          (ep.forces - permuted_rows(ef.forces, perm)).norm() > 1e-12 * scale)
        ++perm_fail;

      Matrix y = x.rowwise() + shift.row(0);
      wrap_positions(y, dom);
      const auto et = forces(y, dom, p, &plan);
      if (std::abs(et.energy - ef.energy) > 1e-6 * std::abs(ef.energy) ||
          (et.forces - ef.forces).norm() > 1e-6 * scale)
        ++trans_fail;

      if (mode == ModelMode::kShortRange) {
        ModelParams full = embed_short_range(p, ctx.seed + 70 + trial);
        full.norm.u_mean.assign(full.multiplier.channels(), rng.uniform(-1.0, 1.0));
        full.norm.u_std.assign(full.multiplier.channels(), rng.uniform(0.5, 2.0));
        const auto eb = forces(x, dom, full, &plan);
        if (eb.energy != ef.energy || eb.forces != ef.forces) ++embed_fail;
      }

      Checkpoint ck;
      ck.L = L;
      ck.fft_modes = plan.modes_per_dim();
      ck.seed = ctx.seed;
      ck.params = p;
      const Checkpoint back = checkpoint_from_string(checkpoint_to_string(ck));
      const auto er = forces(x, dom, back.params, &plan);
      if (!(back == ck) || er.energy != ef.energy || er.forces != ef.forces) ++ckpt_fail;
    }
  }

  // Seed determinism: data generation and a short training run, repeated.
  {
    const KernelSpec spec{KernelKind::kMixed, 2.0, 0.5, 0.5, 0.5};
    SamplerConfig s;
    s.N = 8;
    s.delta_min = 0.1;
    s.seed = ctx.seed;
    const TorusDomain dom(1, 4.0);
    const Dataset a = generate_dataset(spec, dom, s, 24);
    const Dataset b = generate_dataset(spec, dom, s, 24);
    for (std::size_t k = 0; k < a.snapshots.size(); ++k)
      if (a.snapshots[k].positions != b.snapshots[k].positions || a.snapshots[k].forces != b.snapshots[k].forces ||
          a.snapshots[k].energy != b.snapshots[k].energy)
        ++seed_fail;

    TrainConfig t;
    t.stages = {{4, 3}, {8, 2}};
    t.test_size = 4;
    t.seed = ctx.seed;
    for (auto mode : {ModelMode::kShortRange, ModelMode::kFullRange}) {
      const auto r1 = train_one_scale(a, mode, tiny_config(1.0), t, 31);
      const auto r2 = train_one_scale(b, mode, tiny_config(1.0), t, 31);
      bool same = r1.checkpoint == r2.checkpoint && r1.trace.size() == r2.trace.size();
      for (std::size_t k = 0; same && k < r1.trace.size(); ++k)
        same = r1.trace[k].train_loss == r2.trace[k].train_loss && r1.trace[k].lr == r2.trace[k].lr &&
               (r1.trace[k].test_eps_rel == r2.trace[k].test_eps_rel ||
                (std::isnan(r1.trace[k].test_eps_rel) && std::isnan(r2.trace[k].test_eps_rel)));
      if (!same) ++seed_fail;
    }
  }

  out.require(perm_fail == 0, "permutation failures " + std::to_string(perm_fail));
  out.require(trans_fail == 0, "translation failures " + std::to_string(trans_fail));
  out.require(embed_fail == 0, "embedding failures " + std::to_string(embed_fail));
  out.require(ckpt_fail == 0, "checkpoint failures " + std::to_string(ckpt_fail));
  out.require(seed_fail == 0, "determinism failures " + std::to_string(seed_fail));
  return out;
}

Outcome smoke3d(const Context& ctx) {
  Outcome out;
  SamplerConfig s;
  s.N = 54;
  s.delta_min = 0.1;
  s.seed = ctx.seed;
  const Dataset data =
      generate_dataset(KernelSpec{KernelKind::kExponential, 5.0, 0.0, 1.0, 0.0}, TorusDomain(3, 3.0), s, 50);
  DescriptorConfig dcfg;
  dcfg.R = 1.0;
  TrainConfig t;
  t.stages = {{8, 200}};
  t.epoch_scale = kEpochScale;
  t.seed = ctx.seed;
  t.test_size = 10;
  t.eval_every = 1 << 30;
  const auto r = train_one_scale(data, ModelMode::kFullRange, dcfg, t, 25, run_options(ctx, "smoke3d"));
  bool finite = std::isfinite(r.test_eps_rel);
  std::vector<double> loss;
  for (const auto& row : r.trace) {
    finite = finite && std::isfinite(row.train_loss);
    loss.push_back(row.train_loss);
  }
  const std::size_t half = loss.size() / 2;
  const double first = std::accumulate(loss.begin(), loss.begin() + half, 0.0) / half;
  const double second = std::accumulate(loss.begin() + half, loss.end(), 0.0) / (loss.size() - half);
  out.require(finite, "finite losses, test eps " + fmt(r.test_eps_rel));
  out.require(second < first && loss.back() < loss.front(),
              "loss " + fmt(loss.front()) + " -> " + fmt(loss.back()) + ", half means " + fmt(first) + " -> " +
                  fmt(second));
  return out;
}

struct Entry {
  std::string id;
  std::string title;
  std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Entry> entries{
      {"1", "NUFFT type-1 vs direct DFT", nufft_type1},
      {"2", "LRC forward vs trigonometric pair sum", lrc_forward_oracle},
      {"3", "derivatives vs finite differences", derivatives},
      {"4", "LRC vs direct scaling", complexity},
      {"5", "short- vs full-range accuracy (1D)", table1},
      {"6", "two-scale vs one-scale training", two_scale},
      {"7", "reference data fidelity", generator_fidelity},
      {"8", "invariant suites", invariants},
      {"smoke3d", "3D pipeline smoke run", smoke3d},
  };

  CLI::App app{"Acceptance checks"};
  std::vector<std::string> selected{"all"};
  Context ctx;
  std::string workdir;
  app.add_option("--criterion,-c", selected, "criterion ids (1-8, smoke3d) or all");
  app.add_option("--workdir", workdir, "directory for run traces and benchmark output");
  app.add_option("--seed", ctx.seed, "base seed");
  app.add_flag("--verbose,-v", ctx.verbose, "print per-epoch training progress");
  CLI11_PARSE(app, argc, argv);
  if (!workdir.empty()) {
    ctx.workdir = workdir;
    fs::create_directories(ctx.workdir);
  }

  auto wanted = [&](const std::string& id) {
    return std::find(selected.begin(), selected.end(), "all") != selected.end() ||
           std::find(selected.begin(), selected.end(), id) != selected.end();
  };
  for (const auto& s : selected)
    if (s != "all" && std::none_of(entries.begin(), entries.end(), [&](const Entry& e) { return e.id == s; })) {
      std::cerr << "unknown criterion " << s << "\n";
      return 2;
    }

  int failures = 0;
  for (const auto& e : entries) {
    if (!wanted(e.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = e.run(ctx);
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("exception: ") + ex.what();
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << e.id << " (" << e.title << "): " << o.detail
              << " [" << fmt(seconds_since(t0)) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
