#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "lrc/domain.hpp"
#include "lrc/net.hpp"
#include "lrc/refdata.hpp"
#include "lrc/train.hpp"

namespace lrc {

/// Parsed run configuration. Sections are optional at parse time; each
/// command asks for the ones it needs through the require_* accessors, which
/// throw ConfigError naming the missing key.
struct RunConfig {
  std::uint64_t seed = 0;

  std::optional<int> d;
  std::optional<double> L;
  std::optional<KernelSpec> kernel;
  /// Spectral grid of screened-Coulomb components; unset picks the default.
  std::optional<int> kernel_grid;
  std::optional<SamplerConfig> sampler;
  std::optional<int> n_samples;
  std::optional<DescriptorConfig> descriptor;
  std::optional<int> fft_modes;
  TrainConfig train;
  std::optional<TrainConfig> train_phase_b;
  std::optional<BenchmarkConfig> bench;

  std::optional<std::filesystem::path> dataset;
  std::optional<std::filesystem::path> small_dataset;
  std::optional<std::filesystem::path> large_dataset;

  /// The original document, echoed into manifests.
  std::string source;

  TorusDomain require_domain() const;
  const KernelSpec& require_kernel() const;
  const SamplerConfig& require_sampler() const;
  int require_n_samples() const;
  const DescriptorConfig& require_descriptor() const;
  int require_fft_modes() const;
  const std::filesystem::path& require_path(const std::optional<std::filesystem::path>& p,
                                            const char* key) const;
};

/// Parses and validates a JSON document. Unknown keys and invalid values
/// raise ConfigError; relative paths are resolved against `base_dir`.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace lrc
