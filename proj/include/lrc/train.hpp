#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lrc/checkpoint.hpp"
#include "lrc/domain.hpp"
#include "lrc/net.hpp"
#include "lrc/nufft.hpp"

namespace lrc {

struct Stage {
  int batch_size = 8;
  int epochs = 200;
  bool operator==(const Stage&) const = default;
};

struct TrainConfig {
  double lr0 = 1e-3;
  double decay = 0.95;
  int decay_every = 10;
  std::vector<Stage> stages{{8, 200}, {16, 400}, {32, 800}, {64, 1600}};
  /// Multiplies every stage's epoch count (rounded, at least 1).
  double epoch_scale = 1.0;
  std::uint64_t seed = 0;
  /// w_E; 0 trains on forces only.
  double energy_weight = 0.0;
  /// The last `test_size` snapshots of a dataset are held out.
  int test_size = 100;
  /// Held-out error is evaluated every `eval_every` epochs and at stage ends.
  int eval_every = 1;

  void validate() const;
  std::vector<Stage> scaled_stages() const;
  bool operator==(const TrainConfig&) const = default;
};

/// lr0 * decay^floor(epoch / decay_every) for the global epoch counter.
double lr_schedule(const TrainConfig& cfg, int epoch);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update in place. The moment vectors are sized on
/// first use.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

struct MetricRow {
  int stage = 0;  // 1-based
  int epoch = 0;  // global, 0-based
  double lr = 0.0;
  double train_loss = 0.0;
  double test_eps_rel = 0.0;  // NaN on epochs without evaluation
  double wall_seconds = 0.0;
};

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);

struct TrainOptions {
  /// If nonempty: stage checkpoints, the final checkpoint and metrics.csv are
  /// written here, and a last-good checkpoint on NonFiniteLoss.
  std::filesystem::path run_dir;
  /// Prefix for file names inside run_dir (used to keep two-scale phases apart).
  std::string prefix;
  std::function<void(const MetricRow&)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricRow> trace;
  double test_eps_rel = 0.0;
};

struct DataSplit {
  std::span<const Snapshot> train;
  std::span<const Snapshot> test;
};

/// Holds out the last `test_size` snapshots; both parts must be nonempty.
DataSplit split_dataset(const Dataset& data, int test_size);

/// Fresh model with normalization statistics calibrated on `train`.
ModelParams initial_model(std::span<const Snapshot> train, const TorusDomain& dom, ModelMode mode,
                          const DescriptorConfig& cfg, std::uint64_t seed, const NufftPlan* plan);

/// Runs the staged Adam schedule from `init`. `fft_modes` is L_FFT (ignored
/// for short-range models).
TrainResult train_model(const Dataset& data, ModelParams init, const TrainConfig& cfg, int fft_modes,
                        const TrainOptions& opts = {});

/// initial_model followed by train_model.
TrainResult train_one_scale(const Dataset& data, ModelMode mode, const DescriptorConfig& dcfg,
                            const TrainConfig& cfg, int fft_modes, const TrainOptions& opts = {});

struct TwoScaleConfig {
  DescriptorConfig descriptor;
  TrainConfig phase_a;
  TrainConfig phase_b;
  int fft_modes = 0;
};

struct TwoScaleResult {
  TrainResult phase_a;
  TrainResult phase_b;
};

/// Phase A trains a short-range model on `small`. Phase B embeds it into a
/// full-range model, recalibrates the LRC channel statistics on the training
/// part of `large`, and trains on `large`.
TwoScaleResult train_two_scale(const Dataset& small, const Dataset& large, const TwoScaleConfig& cfg,
                               const TrainOptions& opts = {});

/// Short-range model evaluated as a full-range model with untrained long-range
/// blocks (the starting point of phase B).
ModelParams warm_start(const ModelParams& short_range, std::span<const Snapshot> large_train,
                       const NufftPlan& plan, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Scaling benchmark

/// Periodic kernel of the LRC layer sampled on a regular grid, evaluated by
/// multilinear interpolation. Used by the direct all-to-all reference path.
class KernelTable {
 public:
  KernelTable(const NufftPlan& plan, const MultiplierParams& params, int points_per_dim);

  int channels() const { return K_; }
  /// phi_c at displacement r (d components).
  double value(int channel, const double* r) const;

 private:
  int d_, K_, n_;
  double h_;
  std::vector<double> table_;  // channel-major, row-major over the grid
};

/// u_{i,c} = sum_j f_j phi_c(x_i - x_j) by explicit double loop over pairs.
Matrix direct_convolution(const KernelTable& table, const TorusDomain& dom, const Matrix& positions,
                          std::span<const double> weights);

struct BenchmarkRow {
  int N = 0;
  double t_lrc = 0.0;     // median seconds
  double t_direct = 0.0;  // median seconds
  double lrc_normalized = 0.0;
  double direct_normalized = 0.0;
};

struct BenchmarkConfig {
  int d = 1;
  double L = 50.0;
  int fft_modes = 501;
  std::vector<int> N{1024, 2048, 4096, 8192, 16384};
  int repeats = 5;
  std::uint64_t seed = 0;
  /// Table resolution of the direct path per dimension; 0 picks 8 * L_FFT in
  /// 1D, 4 * L_FFT otherwise.
  int table_points = 0;

  void validate() const;
};

/// Medians of lrc_forward and direct_convolution per N on uniform random
/// clouds, normalized to the smallest N.
std::vector<BenchmarkRow> benchmark_scaling(const BenchmarkConfig& cfg);
void write_benchmark_csv(const std::filesystem::path& path, std::span<const BenchmarkRow> rows);

/// Least-squares slope of log(t) against log(N).
double loglog_slope(std::span<const double> N, std::span<const double> t);

}  // namespace lrc
