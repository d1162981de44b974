// Shared model and data builders for the test suites.
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "lrc/domain.hpp"
#include "lrc/net.hpp"
#include "lrc/rng.hpp"
#include "oracles.hpp"

namespace lrc::fixture {

inline DescriptorConfig tiny_config(double R) {
  DescriptorConfig cfg;
  cfg.R = R;
  cfg.sr_widths = {2, 3};
  cfg.lr_widths = {2, 3};
  cfg.fit_width = 4;
  cfg.fit_blocks = 2;
  cfg.channels = 2;
  return cfg;
}

/// Random configuration whose pair distances all keep `margin` away from R.
inline Matrix clear_of_shells(int N, const TorusDomain& dom, double R, double margin, std::uint64_t seed) {
  for (std::uint64_t s = seed;; ++s) {
    SamplerConfig cfg;
    cfg.N = N;
    cfg.delta_min = 0.1;
    cfg.seed = s;
    const Matrix x = sample_configuration(cfg, dom);
    bool ok = true;
    for (int i = 0; i < N && ok; ++i)
      for (int j = i + 1; j < N && ok; ++j) {
        const auto xi = std::span(x.row(i).data(), dom.dim());
        const auto xj = std::span(x.row(j).data(), dom.dim());
        ok = std::abs(torus_distance(xi, xj, dom) - R) > margin;
      }
    if (ok) return x;
  }
}

/// Perturbs every parameter so that no structural zero hides a bug.
inline void jitter(ModelParams& p, std::uint64_t seed, double amount = 0.3) {
  Rng rng(seed);
  auto flat = p.flatten();
  for (auto& v : flat) v += amount * rng.uniform(-1.0, 1.0);
  p.unflatten(flat);
}

inline std::vector<Snapshot> labelled(const std::vector<Matrix>& xs, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Snapshot> out;
  for (const auto& x : xs) {
    Snapshot s;
    s.positions = x;
    s.forces = oracle::random_matrix(rng, x.rows(), x.cols());
    s.energy = rng.uniform(-1.0, 1.0);
    out.push_back(s);
  }
  return out;
}

}  // namespace lrc::fixture
