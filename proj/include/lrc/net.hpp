#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lrc/domain.hpp"
#include "lrc/nufft.hpp"

namespace lrc {

struct DescriptorConfig {
  double R = 1.5;
  /// Width of the padded neighbor tensor; 0 pads to the largest list present.
  int max_neighbors = 0;
  /// Layer widths of the two short-range embedding nets; m_sr = 2 * last.
  std::vector<int> sr_widths{2, 4, 8, 16, 32};
  /// Layer widths of the long-range descriptor net; m_lr = last.
  std::vector<int> lr_widths{2, 4, 8, 16, 32};
  int fit_width = 32;
  int fit_blocks = 6;
  /// LRC channels K.
  int channels = 2;

  int m_sr() const { return 2 * sr_widths.back(); }
  int m_lr() const { return lr_widths.back(); }
  void validate(const TorusDomain& dom) const;
  bool operator==(const DescriptorConfig&) const = default;
};

/// Padded neighbor tensor: row i lists the j != i with torus distance < R in
/// ascending order, then sentinel -1 entries (mask 0).
struct InteractionLists {
  int N = 0;
  int width = 0;
  std::vector<int> index;
  std::vector<unsigned char> mask;
  std::vector<int> count;

  int neighbor(int i, int k) const { return index[static_cast<std::size_t>(i) * width + k]; }
  bool real(int i, int k) const { return mask[static_cast<std::size_t>(i) * width + k] != 0; }
};

InteractionLists build_interaction_lists(const Matrix& positions, const TorusDomain& dom,
                                         const DescriptorConfig& cfg);

enum class Activation { kTanh, kRelu, kLinear };

struct MlpParams {
  Activation activation = Activation::kTanh;
  std::vector<Matrix> weights;  // in x out
  std::vector<Matrix> biases;   // 1 x out
  bool operator==(const MlpParams&) const = default;
};

/// Linear projection to fit_width, residual blocks y = x + tanh(x W + b),
/// then a linear map to one energy per particle.
struct FittingParams {
  Matrix proj_w, proj_b;
  std::vector<Matrix> block_w, block_b;
  Matrix out_w, out_b;
  bool operator==(const FittingParams&) const = default;
};

/// Standardization constants of the generalized coordinates and of the LRC
/// output channels. In 2D/3D the unit vector s is used as is (s_mean = 0,
/// s_std = 1).
struct NormStats {
  double s_mean = 0.0, s_std = 1.0;
  double r_mean = 0.0, r_std = 1.0;
  std::vector<double> u_mean, u_std;
  bool operator==(const NormStats&) const = default;
};

enum class ModelMode { kShortRange, kFullRange };

struct ModelParams {
  int d = 1;
  ModelMode mode = ModelMode::kShortRange;
  DescriptorConfig cfg;
  MlpParams sr1, sr2;
  MlpParams lr;  // empty in short-range mode
  FittingParams fit;
  MultiplierParams multiplier;  // empty in short-range mode
  NormStats norm;

  bool full_range() const { return mode == ModelMode::kFullRange; }
  /// Visits every trainable tensor in a fixed order. The multiplier is
  /// presented as a 2 x K matrix (beta row, lambda row).
  void visit(const std::function<void(Matrix&)>& fn);
  void visit(const std::function<void(const Matrix&)>& fn) const;
  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  bool operator==(const ModelParams&) const = default;
};

/// Glorot-normal weights, zero biases, multiplier beta = lambda = 1, identity norm stats.
ModelParams init_model(int d, ModelMode mode, const DescriptorConfig& cfg, std::uint64_t seed);

/// Short-range part copied from `sr`, fresh long-range blocks, fitting rows
/// for the long-range columns set to zero.
ModelParams embed_short_range(const ModelParams& sr, std::uint64_t seed);

/// Pair statistics (dummies excluded) and, in full-range mode, LRC channel
/// statistics under the current multiplier.
NormStats calibrate_norm(std::span<const Snapshot> snapshots, const TorusDomain& dom,
                         const ModelParams& params, const NufftPlan* plan);
/// Replaces only the LRC channel statistics.
void calibrate_lrc_norm(std::span<const Snapshot> snapshots, ModelParams& params,
                        const NufftPlan& plan);

/// N x m_sr descriptor [D1, D2].
Matrix short_range_descriptor(const Matrix& positions, const TorusDomain& dom,
                              const InteractionLists& lists, const ModelParams& params);

/// `plan` is required in full-range mode and must share the domain.
double energy(const Matrix& positions, const TorusDomain& dom, const ModelParams& params,
              const NufftPlan* plan);
EnergyForces forces(const Matrix& positions, const TorusDomain& dom, const ModelParams& params,
                    const NufftPlan* plan);

struct LossGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // flatten() order
};

/// (1/B) sum_l [ sum_i |F_NN - F|^2 + w_E (U_NN - U)^2 ] and its gradient
/// over every trainable parameter.
LossGradient loss_and_param_gradients(std::span<const Snapshot* const> batch, const TorusDomain& dom,
                                      const ModelParams& params, const NufftPlan* plan,
                                      double energy_weight);
LossGradient loss_and_param_gradients(std::span<const Snapshot> batch, const TorusDomain& dom,
                                      const ModelParams& params, const NufftPlan* plan,
                                      double energy_weight);

/// sqrt(sum |F - F_NN|^2 / sum |F|^2) over the set.
double relative_l2_error(std::span<const Snapshot> snapshots, const TorusDomain& dom,
                         const ModelParams& params, const NufftPlan* plan);
double relative_l2_error(std::span<const Matrix> reference, std::span<const Matrix> predicted);

}  // namespace lrc
