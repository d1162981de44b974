#include "lrc/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>

#include "lrc/errors.hpp"
#include "lrc/rng.hpp"

namespace lrc {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw InvalidArgument("lr0 must be positive");
  if (!(decay > 0.0) || decay > 1.0) throw InvalidArgument("decay must be in (0, 1]");
  if (decay_every < 1) throw InvalidArgument("decay_every must be positive");
  for (const auto& s : stages)
    if (s.batch_size < 1 || s.epochs < 1) throw InvalidArgument("batches and epochs must be positive");
  if (!(epoch_scale > 0.0) || !std::isfinite(epoch_scale))
    throw InvalidArgument("epoch_scale must be positive");
  if (!(energy_weight >= 0.0) || !std::isfinite(energy_weight))
    throw InvalidArgument("energy_weight must be >= 0");
  if (test_size < 1) throw InvalidArgument("test_size must be positive");
  if (eval_every < 1) throw InvalidArgument("eval_every must be positive");
}

std::vector<Stage> TrainConfig::scaled_stages() const {
  std::vector<Stage> out = stages;
  for (auto& s : out) s.epochs = std::max(1, static_cast<int>(std::lround(s.epochs * epoch_scale)));
  return out;
}

double lr_schedule(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw InvalidArgument("epoch must be >= 0");
  return cfg.lr0 * std::pow(cfg.decay, epoch / cfg.decay_every);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw InvalidArgument("gradient length does not match parameters");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw InvalidArgument("Adam state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * grads[k];
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * grads[k] * grads[k];
    const double mh = state.m[k] / c1;
    const double vh = state.v[k] / c2;
    params[k] -= lr * mh / (std::sqrt(vh) + cfg.eps);
  }
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  out << "stage,epoch,lr,train_loss,test_eps_rel,wall_seconds\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.stage << ',' << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.test_eps_rel << ','
        << r.wall_seconds << '\n';
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

DataSplit split_dataset(const Dataset& data, int test_size) {
  const auto n = static_cast<int>(data.snapshots.size());
  if (test_size < 1 || n <= test_size)
    throw InvalidArgument("dataset has " + std::to_string(n) + " snapshots; need more than the " +
                          std::to_string(test_size) + " held out for testing");
  const std::span<const Snapshot> all(data.snapshots);
  return {all.first(n - test_size), all.last(test_size)};
}

ModelParams initial_model(std::span<const Snapshot> train, const TorusDomain& dom, ModelMode mode,
                          const DescriptorConfig& cfg, std::uint64_t seed, const NufftPlan* plan) {
  ModelParams p = init_model(dom.dim(), mode, cfg, seed);
  p.norm = calibrate_norm(train, dom, p, plan);
  return p;
}

namespace {

std::filesystem::path run_file(const TrainOptions& opts, const std::string& name) {
  return opts.run_dir / (opts.prefix + name);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

TrainResult train_model(const Dataset& data, ModelParams params, const TrainConfig& cfg, int fft_modes,
                        const TrainOptions& opts) {
  cfg.validate();
  const TorusDomain dom = data.header.domain();
  if (params.d != dom.dim()) throw InvalidArgument("model and dataset disagree on d");
  std::optional<NufftPlan> plan;
  if (params.full_range()) plan.emplace(make_plan(dom, fft_modes));
  const NufftPlan* plan_ptr = plan ? &*plan : nullptr;
  const auto split = split_dataset(data, cfg.test_size);
  if (!opts.run_dir.empty()) std::filesystem::create_directories(opts.run_dir);

  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt.L = dom.length();
  ckpt.fft_modes = params.full_range() ? fft_modes : 0;
  ckpt.seed = cfg.seed;

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  auto evaluate = [&](const ModelParams& p) {
    const double e = relative_l2_error(split.test, dom, p, plan_ptr);
    if (!std::isfinite(e)) throw NonFiniteLoss("held-out error is not finite");
    return e;
  };
  auto save = [&](const std::string& name, const ModelParams& p, int epoch, double eps) {
    if (opts.run_dir.empty()) return;
    Checkpoint c = ckpt;
    c.params = p;
    c.epoch = epoch;
    c.test_eps_rel = eps;
    save_checkpoint(run_file(opts, name), c);
  };

  const auto stages = cfg.scaled_stages();
  const int n_train = static_cast<int>(split.train.size());
  std::vector<int> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::stream(cfg.seed, 1);
  AdamState adam;
  std::vector<const Snapshot*> batch;
  int epoch = 0;
  double last_eps = std::numeric_limits<double>::quiet_NaN();

  try {
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (int e = 0; e < stages[s].epochs; ++e, ++epoch) {
        for (int k = n_train - 1; k > 0; --k)
          std::swap(order[k], order[rng.below(static_cast<std::uint64_t>(k) + 1)]);
        const double lr = lr_schedule(cfg, epoch);
        double loss_sum = 0.0;
        for (int start = 0; start < n_train; start += stages[s].batch_size) {
          const int stop = std::min(n_train, start + stages[s].batch_size);
          batch.clear();
          for (int k = start; k < stop; ++k) batch.push_back(&split.train[order[k]]);
          const auto lg = loss_and_param_gradients(std::span<const Snapshot* const>(batch), dom, params,
                                                   plan_ptr, cfg.energy_weight);
          std::vector<double> flat = params.flatten();
          adam_step(flat, lg.gradient, adam, lr);
          if (!all_finite(flat)) throw NonFiniteLoss("parameter update is not finite");
          params.unflatten(flat);
          loss_sum += lg.loss * (stop - start);
        }
        MetricRow row;
        row.stage = static_cast<int>(s) + 1;
        row.epoch = epoch;
        row.lr = lr;
        row.train_loss = loss_sum / n_train;
        if (!std::isfinite(row.train_loss)) throw NonFiniteLoss("epoch loss is not finite");
        const bool stage_end = e + 1 == stages[s].epochs;
        row.test_eps_rel = std::numeric_limits<double>::quiet_NaN();
        if (stage_end || (epoch + 1) % cfg.eval_every == 0) {
          last_eps = evaluate(params);
          row.test_eps_rel = last_eps;
        }
        row.wall_seconds = elapsed();
        result.trace.push_back(row);
        if (opts.on_epoch) opts.on_epoch(row);
        if (stage_end) {
          save("checkpoint_stage" + std::to_string(s + 1) + ".json", params, epoch + 1, last_eps);
          if (!opts.run_dir.empty()) write_metrics_csv(run_file(opts, "metrics.csv"), result.trace);
        }
      }
    }
  } catch (const NonFiniteLoss&) {
    save("checkpoint_last_good.json", params, epoch, last_eps);
    if (!opts.run_dir.empty()) write_metrics_csv(run_file(opts, "metrics.csv"), result.trace);
    throw;
  }

  if (stages.empty()) last_eps = evaluate(params);
  result.test_eps_rel = last_eps;
  ckpt.params = std::move(params);
  ckpt.epoch = epoch;
  ckpt.test_eps_rel = last_eps;
  if (!opts.run_dir.empty()) {
    save_checkpoint(run_file(opts, "checkpoint.json"), ckpt);
    write_metrics_csv(run_file(opts, "metrics.csv"), result.trace);
  }
  return result;
}

TrainResult train_one_scale(const Dataset& data, ModelMode mode, const DescriptorConfig& dcfg,
                            const TrainConfig& cfg, int fft_modes, const TrainOptions& opts) {
  cfg.validate();
  const TorusDomain dom = data.header.domain();
  const auto split = split_dataset(data, cfg.test_size);
  std::optional<NufftPlan> plan;
  if (mode == ModelMode::kFullRange) plan.emplace(make_plan(dom, fft_modes));
  ModelParams init = initial_model(split.train, dom, mode, dcfg, cfg.seed, plan ? &*plan : nullptr);
  return train_model(data, std::move(init), cfg, fft_modes, opts);
}

ModelParams warm_start(const ModelParams& short_range, std::span<const Snapshot> large_train,
                       const NufftPlan& plan, std::uint64_t seed) {
  ModelParams p = embed_short_range(short_range, seed);
  calibrate_lrc_norm(large_train, p, plan);
  return p;
}

TwoScaleResult train_two_scale(const Dataset& small, const Dataset& large, const TwoScaleConfig& cfg,
                               const TrainOptions& opts) {
  const auto& hs = small.header;
  const auto& hl = large.header;
  if (hs.d != hl.d) throw InvalidArgument("small and large datasets disagree on d");
  if (hs.kind != hl.kind || hs.mu1 != hl.mu1 || hs.mu2 != hl.mu2 || hs.alpha1 != hl.alpha1 ||
      hs.alpha2 != hl.alpha2)
    throw InvalidArgument("small and large datasets were generated with different kernels");
  cfg.phase_a.validate();
  cfg.phase_b.validate();

  TwoScaleResult out;
  TrainOptions a = opts;
  a.prefix = opts.prefix + "phase_a_";
  out.phase_a = train_one_scale(small, ModelMode::kShortRange, cfg.descriptor, cfg.phase_a, 0, a);

  const TorusDomain dom = hl.domain();
  const NufftPlan plan = make_plan(dom, cfg.fft_modes);
  const auto split = split_dataset(large, cfg.phase_b.test_size);
  ModelParams init = warm_start(out.phase_a.checkpoint.params, split.train, plan, cfg.phase_b.seed);
  TrainOptions b = opts;
  b.prefix = opts.prefix + "phase_b_";
  out.phase_b = train_model(large, std::move(init), cfg.phase_b, cfg.fft_modes, b);
  return out;
}

// ---------------------------------------------------------------------------
// Scaling benchmark

KernelTable::KernelTable(const NufftPlan& plan, const MultiplierParams& params, int points_per_dim)
    : d_(plan.dim()), K_(params.channels()), n_(points_per_dim) {
  params.validate();
  if (n_ < 2) throw InvalidArgument("kernel table needs at least 2 points per dimension");
  const double L = plan.domain().length();
  h_ = L / n_;
  std::size_t total = 1;
  for (int a = 0; a < d_; ++a) total *= static_cast<std::size_t>(n_);
  Matrix grid(static_cast<Eigen::Index>(total), d_);
  for (std::size_t p = 0; p < total; ++p) {
    std::size_t rest = p;
    for (int a = d_ - 1; a >= 0; --a) {
      grid(static_cast<Eigen::Index>(p), a) = h_ * static_cast<double>(rest % n_);
      rest /= n_;
    }
  }
  const auto phi_hat = multiplier_eval(params, plan);
  const double inv_volume = std::pow(L, -d_);
  table_.resize(total * K_);
  for (int c = 0; c < K_; ++c) {
    const Spectrum coeffs(phi_hat[c].begin(), phi_hat[c].end());
    const auto values = type2(plan, grid, coeffs);
    for (std::size_t p = 0; p < total; ++p) table_[c * total + p] = inv_volume * values[p].real();
  }
}

double KernelTable::value(int channel, const double* r) const {
  std::size_t base[3], next[3];
  double frac[3];
  for (int a = 0; a < d_; ++a) {
    const double t = r[a] / h_;
    const double f = std::floor(t);
    long i = static_cast<long>(f) % n_;
    if (i < 0) i += n_;
    base[a] = static_cast<std::size_t>(i);
    next[a] = base[a] + 1 == static_cast<std::size_t>(n_) ? 0 : base[a] + 1;
    frac[a] = t - f;
  }
  std::size_t total = 1;
  for (int a = 0; a < d_; ++a) total *= static_cast<std::size_t>(n_);
  const double* tab = table_.data() + static_cast<std::size_t>(channel) * total;
  double sum = 0.0;
  for (int corner = 0; corner < (1 << d_); ++corner) {
    std::size_t flat = 0;
    double w = 1.0;
    for (int a = 0; a < d_; ++a) {
      const bool hi = (corner >> a) & 1;
      flat = flat * n_ + (hi ? next[a] : base[a]);
      w *= hi ? frac[a] : 1.0 - frac[a];
    }
    sum += w * tab[flat];
  }
  return sum;
}

Matrix direct_convolution(const KernelTable& table, const TorusDomain& dom, const Matrix& positions,
                          std::span<const double> weights) {
  const int d = dom.dim();
  if (positions.cols() != d) throw InvalidArgument("positions have wrong dimension");
  if (static_cast<Eigen::Index>(weights.size()) != positions.rows())
    throw InvalidArgument("one weight per particle required");
  const Eigen::Index N = positions.rows();
  const int K = table.channels();
  Matrix u = Matrix::Zero(N, K);
  double r[3];
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = 0; j < N; ++j) {
      for (int a = 0; a < d; ++a) r[a] = positions(i, a) - positions(j, a);
      for (int c = 0; c < K; ++c) u(i, c) += weights[j] * table.value(c, r);
    }
  }
  return u;
}

void BenchmarkConfig::validate() const {
  TorusDomain(d, L);
  if (fft_modes < 1) throw InvalidArgument("fft_modes must be positive");
  if (N.empty()) throw InvalidArgument("N list must be nonempty");
  for (std::size_t k = 0; k < N.size(); ++k) {
    if (N[k] < 1) throw InvalidArgument("N values must be positive");
    if (k > 0 && N[k] <= N[k - 1]) throw InvalidArgument("N values must be ascending");
  }
  if (repeats < 1) throw InvalidArgument("repeats must be positive");
  if (table_points < 0) throw InvalidArgument("table_points must be >= 0");
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
double seconds(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<BenchmarkRow> benchmark_scaling(const BenchmarkConfig& cfg) {
  cfg.validate();
  const TorusDomain dom(cfg.d, cfg.L);
  const NufftPlan plan = make_plan(dom, cfg.fft_modes);
  const MultiplierParams params{{1.0, 0.5}, {1.0, 2.0}};
  const int points = cfg.table_points > 0 ? cfg.table_points : (cfg.d == 1 ? 8 : 4) * cfg.fft_modes;
  const KernelTable table(plan, params, points);

  std::vector<BenchmarkRow> rows;
  for (int N : cfg.N) {
    Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(N));
    Matrix x(N, cfg.d);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = dom.wrap(rng.uniform(0.0, cfg.L));
    const std::vector<double> ones(static_cast<std::size_t>(N), 1.0);
    std::vector<double> t_lrc, t_direct;
    double sink = 0.0;
    for (int r = 0; r < cfg.repeats; ++r) {
      t_lrc.push_back(seconds([&] { sink += lrc_forward(plan, x, ones, params)(0, 0); }));
      t_direct.push_back(seconds([&] { sink += direct_convolution(table, dom, x, ones)(0, 0); }));
    }
    if (!std::isfinite(sink)) throw Error("benchmark produced non-finite output");
    BenchmarkRow row;
    row.N = N;
    row.t_lrc = median(t_lrc);
    row.t_direct = median(t_direct);
    rows.push_back(row);
  }
  for (auto& row : rows) {
    row.lrc_normalized = row.t_lrc / rows.front().t_lrc;
    row.direct_normalized = row.t_direct / rows.front().t_direct;
  }
  return rows;
}

void write_benchmark_csv(const std::filesystem::path& path, std::span<const BenchmarkRow> rows) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  out << "N,t_lrc_median,t_direct_median,lrc_normalized,direct_normalized\n";
  out.precision(10);
  for (const auto& r : rows)
    out << r.N << ',' << r.t_lrc << ',' << r.t_direct << ',' << r.lrc_normalized << ','
        << r.direct_normalized << '\n';
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

double loglog_slope(std::span<const double> N, std::span<const double> t) {
  if (N.size() != t.size() || N.size() < 2) throw InvalidArgument("slope needs at least two points");
  double mx = 0, my = 0;
  const auto n = static_cast<double>(N.size());
  for (std::size_t k = 0; k < N.size(); ++k) {
    if (!(N[k] > 0.0) || !(t[k] > 0.0)) throw InvalidArgument("slope needs positive values");
    mx += std::log(N[k]) / n;
    my += std::log(t[k]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < N.size(); ++k) {
    const double dx = std::log(N[k]) - mx;
    sxy += dx * (std::log(t[k]) - my);
    sxx += dx * dx;
  }
  if (!(sxx > 0.0)) throw InvalidArgument("slope needs distinct N values");
  return sxy / sxx;
}

}  // namespace lrc
