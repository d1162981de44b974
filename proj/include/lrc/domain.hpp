#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace lrc {

/// Row-major dense matrix used for particle arrays (N x d) and network tensors.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Cubic periodic box [0, L)^d.
class TorusDomain {
 public:
  TorusDomain(int d, double L);

  int dim() const { return d_; }
  double length() const { return L_; }

  /// Maps a coordinate into [0, L).
  double wrap(double x) const;
  /// Maps a displacement component into [-L/2, L/2).
  double wrap_displacement(double r) const;

  bool operator==(const TorusDomain&) const = default;

 private:
  int d_;
  double L_;
};

/// Minimum-image Euclidean distance between two points on the torus.
double torus_distance(std::span<const double> x, std::span<const double> y,
                      const TorusDomain& dom);

/// Displacement r = x - y (mod L) with each component in [-L/2, L/2).
std::vector<double> min_image_displacement(std::span<const double> x,
                                           std::span<const double> y,
                                           const TorusDomain& dom);

/// One configuration with its reference energy and per-particle forces.
struct Snapshot {
  Matrix positions;  // N x d, wrapped into [0, L)
  double energy = 0.0;
  Matrix forces;     // N x d
};

/// Total energy and per-particle forces (N x d).
struct EnergyForces {
  double energy = 0.0;
  Matrix forces;
};

struct SamplerConfig {
  int N = 0;
  double delta_min = 0.0;
  std::uint64_t seed = 0;
  int max_point_retries = 1000;
  int max_snapshot_restarts = 100;

  void validate() const;
};

/// Uniform i.i.d. points conditioned on pairwise torus distance >= delta_min.
///
/// Points are placed one at a time; a violating point is re-drawn up to
/// `max_point_retries` times, after which the whole configuration restarts
/// (at most `max_snapshot_restarts` times). Deterministic for a given
/// `(cfg.seed, stream)`; `stream` selects the per-snapshot random stream.
Matrix sample_configuration(const SamplerConfig& cfg, const TorusDomain& dom,
                            std::uint64_t stream = 0);

/// Smallest pairwise torus distance, O(N^2). Infinity for N < 2.
double min_pair_distance(const Matrix& positions, const TorusDomain& dom);

/// Wraps every coordinate into [0, L) in place.
void wrap_positions(Matrix& positions, const TorusDomain& dom);

// ---------------------------------------------------------------------------
// Dataset file

enum class KernelKind : std::uint32_t {
  kExponential = 0,
  kScreenedCoulomb = 1,
  kMixed = 2,  // component 1 exponential, component 2 screened-Coulomb
};

struct DatasetHeader {
  std::uint32_t version = 1;
  std::uint32_t d = 1;
  std::uint32_t N = 0;
  std::uint32_t n_samples = 0;
  double L = 1.0;
  KernelKind kind = KernelKind::kExponential;
  double mu1 = 0.0;
  double mu2 = 0.0;
  double alpha1 = 1.0;
  double alpha2 = 0.0;
  double delta_min = 0.0;
  std::uint64_t seed = 0;

  TorusDomain domain() const { return TorusDomain(static_cast<int>(d), L); }
};

struct Dataset {
  DatasetHeader header;
  std::vector<Snapshot> snapshots;
};

/// Little-endian binary layout: "LRCD" magic, header fields, then
/// n_samples records of [positions N*d f64][energy f64][forces N*d f64].
void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

/// Reads only the header (validates magic, version and file size).
DatasetHeader read_dataset_header(const std::filesystem::path& path);

}  // namespace lrc
