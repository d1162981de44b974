#include "lrc/domain.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "lrc/errors.hpp"
#include "lrc/rng.hpp"

namespace lrc {

TorusDomain::TorusDomain(int d, double L) : d_(d), L_(L) {
  if (d < 1 || d > 3) throw InvalidArgument("d must be 1, 2, or 3");
  if (!(L > 0.0) || !std::isfinite(L)) throw InvalidArgument("L must be positive");
}

double TorusDomain::wrap(double x) const {
  double y = x - L_ * std::floor(x / L_);
  if (y >= L_) y -= L_;
  if (y < 0.0) y = 0.0;
  return y;
}

double TorusDomain::wrap_displacement(double r) const {
  double y = r - L_ * std::floor(r / L_ + 0.5);
  if (y >= 0.5 * L_) y -= L_;
  if (y < -0.5 * L_) y += L_;
  return y;
}

double torus_distance(std::span<const double> x, std::span<const double> y,
                      const TorusDomain& dom) {
  double sq = 0.0;
  for (int a = 0; a < dom.dim(); ++a) {
    const double r = dom.wrap_displacement(x[a] - y[a]);
    sq += r * r;
  }
  return std::sqrt(sq);
}

std::vector<double> min_image_displacement(std::span<const double> x,
                                           std::span<const double> y,
                                           const TorusDomain& dom) {
  std::vector<double> r(dom.dim());
  for (int a = 0; a < dom.dim(); ++a) r[a] = dom.wrap_displacement(x[a] - y[a]);
  return r;
}

void SamplerConfig::validate() const {
  if (N < 1) throw InvalidArgument("sampler N must be positive");
  if (!(delta_min > 0.0)) throw InvalidArgument("delta_min must be positive");
  if (max_point_retries < 1 || max_snapshot_restarts < 1)
    throw InvalidArgument("sampler retry budgets must be positive");
}

namespace {

double sq_distance(const double* x, const double* y, const TorusDomain& dom) {
  double sq = 0.0;
  for (int a = 0; a < dom.dim(); ++a) {
    const double r = dom.wrap_displacement(x[a] - y[a]);
    sq += r * r;
  }
  return sq;
}

}  // namespace

Matrix sample_configuration(const SamplerConfig& cfg, const TorusDomain& dom,
                            std::uint64_t stream) {
  cfg.validate();
  const int d = dom.dim();
  Rng rng = Rng::stream(cfg.seed, stream);
  Matrix pos(cfg.N, d);
  const double min_sq = cfg.delta_min * cfg.delta_min;

  for (int restart = 0; restart <= cfg.max_snapshot_restarts; ++restart) {
    bool complete = true;
    for (int i = 0; i < cfg.N && complete; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt <= cfg.max_point_retries && !placed; ++attempt) {
        for (int a = 0; a < d; ++a) pos(i, a) = dom.wrap(rng.uniform(0.0, dom.length()));
        placed = true;
        for (int j = 0; j < i; ++j) {
          if (sq_distance(&pos(i, 0), &pos(j, 0), dom) < min_sq) {
            placed = false;
            break;
          }
        }
      }
      complete = placed;
    }
    if (complete) return pos;
  }
  throw InfeasiblePacking("could not place " + std::to_string(cfg.N) +
                          " particles with delta_min=" + std::to_string(cfg.delta_min) +
                          " in box of length " + std::to_string(dom.length()));
}

double min_pair_distance(const Matrix& positions, const TorusDomain& dom) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < positions.rows(); ++i)
    for (Eigen::Index j = i + 1; j < positions.rows(); ++j)
      best = std::min(best, sq_distance(&positions(i, 0), &positions(j, 0), dom));
  return std::sqrt(best);
}

void wrap_positions(Matrix& positions, const TorusDomain& dom) {
  for (Eigen::Index i = 0; i < positions.size(); ++i)
    positions.data()[i] = dom.wrap(positions.data()[i]);
}

// ---------------------------------------------------------------------------
// Binary I/O

namespace {

constexpr std::array<char, 4> kMagic = {'L', 'R', 'C', 'D'};
constexpr std::size_t kHeaderBytes = 4 + 4 * 4 + 8 + 4 + 5 * 8 + 8;

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  }
  template <typename T>
  void put(T v) {
    v = to_little(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_raw(const char* data, std::size_t n) { out_.write(data, static_cast<std::streamsize>(n)); }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw std::ios_base::failure("write failed for " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw FormatError("cannot open dataset " + path.string());
  }
  template <typename T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw FormatError("truncated dataset " + path_.string());
    return to_little(v);
  }
  void get_raw(char* data, std::size_t n) {
    in_.read(data, static_cast<std::streamsize>(n));
    if (!in_) throw FormatError("truncated dataset " + path_.string());
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

void put_f64(Writer& w, double v) { w.put(std::bit_cast<std::uint64_t>(v)); }
double get_f64(Reader& r) { return std::bit_cast<double>(r.get<std::uint64_t>()); }

void put_matrix(Writer& w, const Matrix& m) {
  for (Eigen::Index k = 0; k < m.size(); ++k) put_f64(w, m.data()[k]);
}

void get_finite(Reader& r, double* out, std::size_t n, const std::filesystem::path& path) {
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = get_f64(r);
    if (!std::isfinite(out[k])) throw FormatError("non-finite value in dataset " + path.string());
  }
}

DatasetHeader parse_header(Reader& r, const std::filesystem::path& path) {
  std::array<char, 4> magic{};
  r.get_raw(magic.data(), 4);
  if (magic != kMagic) throw FormatError("bad magic in " + path.string());
  DatasetHeader h;
  h.version = r.get<std::uint32_t>();
  if (h.version != 1) throw FormatError("unsupported dataset version " + std::to_string(h.version));
  h.d = r.get<std::uint32_t>();
  h.N = r.get<std::uint32_t>();
  h.n_samples = r.get<std::uint32_t>();
  h.L = get_f64(r);
  const auto kind = r.get<std::uint32_t>();
  if (kind > 2) throw FormatError("unknown kernel kind " + std::to_string(kind));
  h.kind = static_cast<KernelKind>(kind);
  h.mu1 = get_f64(r);
  h.mu2 = get_f64(r);
  h.alpha1 = get_f64(r);
  h.alpha2 = get_f64(r);
  h.delta_min = get_f64(r);
  h.seed = r.get<std::uint64_t>();
  if (h.d < 1 || h.d > 3) throw FormatError("dataset d must be 1, 2, or 3");
  if (!(h.L > 0.0) || !std::isfinite(h.L)) throw FormatError("dataset L must be positive");
  for (double v : {h.mu1, h.mu2, h.alpha1, h.alpha2, h.delta_min})
    if (!std::isfinite(v)) throw FormatError("non-finite header value in " + path.string());
  return h;
}

std::uintmax_t expected_size(const DatasetHeader& h) {
  const std::uintmax_t nd = std::uintmax_t{h.N} * h.d;
  return kHeaderBytes + std::uintmax_t{h.n_samples} * (2 * nd + 1) * 8;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  const auto& h = data.header;
  if (data.snapshots.size() != h.n_samples)
    throw InvalidArgument("dataset header n_samples does not match record count");
  Writer w(path);
  w.put_raw(kMagic.data(), 4);
  w.put<std::uint32_t>(h.version);
  w.put<std::uint32_t>(h.d);
  w.put<std::uint32_t>(h.N);
  w.put<std::uint32_t>(h.n_samples);
  put_f64(w, h.L);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(h.kind));
  put_f64(w, h.mu1);
  put_f64(w, h.mu2);
  put_f64(w, h.alpha1);
  put_f64(w, h.alpha2);
  put_f64(w, h.delta_min);
  w.put<std::uint64_t>(h.seed);
  for (const auto& s : data.snapshots) {
    if (s.positions.rows() != h.N || s.positions.cols() != h.d || s.forces.rows() != h.N ||
        s.forces.cols() != h.d)
      throw InvalidArgument("snapshot shape does not match dataset header");
    put_matrix(w, s.positions);
    put_f64(w, s.energy);
    put_matrix(w, s.forces);
  }
  w.finish(path);
}

DatasetHeader read_dataset_header(const std::filesystem::path& path) {
  Reader r(path);
  DatasetHeader h = parse_header(r, path);
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec || size != expected_size(h))
    throw FormatError("dataset " + path.string() + " size does not match its header");
  return h;
}

Dataset read_dataset(const std::filesystem::path& path) {
  Dataset data;
  data.header = read_dataset_header(path);
  Reader r(path);
  parse_header(r, path);
  const auto& h = data.header;
  data.snapshots.resize(h.n_samples);
  for (auto& s : data.snapshots) {
    s.positions.resize(h.N, h.d);
    s.forces.resize(h.N, h.d);
    get_finite(r, s.positions.data(), std::size_t{h.N} * h.d, path);
    get_finite(r, &s.energy, 1, path);
    get_finite(r, s.forces.data(), std::size_t{h.N} * h.d, path);
  }
  return data;
}

}  // namespace lrc
