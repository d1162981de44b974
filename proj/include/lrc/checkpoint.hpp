#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "lrc/net.hpp"

namespace lrc {

/// A trained (or freshly initialized) model together with what is needed to
/// evaluate it: the box length and the NUFFT band size.
struct Checkpoint {
  int version = 1;
  double L = 1.0;
  /// L_FFT; 0 for short-range models.
  int fft_modes = 0;
  std::uint64_t seed = 0;
  /// Global epoch counter at the time of saving.
  int epoch = 0;
  /// Held-out relative force error recorded at save time; negative if unknown.
  double test_eps_rel = -1.0;
  ModelParams params;

  TorusDomain domain() const { return TorusDomain(params.d, L); }
  bool operator==(const Checkpoint&) const = default;
};

/// JSON document with named arrays; doubles are written in shortest
/// round-trip form, so load(save(c)) == c bit for bit.
std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws FormatError on malformed or inconsistent files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lrc
