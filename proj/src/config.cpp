#include "lrc/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lrc/errors.hpp"

namespace lrc {

using nlohmann::json;

namespace {

/// Object view that records which keys were read, so leftovers can be
/// reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  bool has(const std::string& k) const { return j_.contains(k); }

  template <typename T>
  std::optional<T> optional(const std::string& k) {
    seen_.insert(k);
    if (!j_.contains(k)) return std::nullopt;
    try {
      return j_.at(k).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(key(k), "wrong type for " + key(k));
    }
  }

  template <typename T>
  T required(const std::string& k) {
    auto v = optional<T>(k);
    if (!v) throw ConfigError(key(k), "missing required key " + key(k));
    return *v;
  }

  template <typename T>
  void maybe(const std::string& k, T& out) {
    if (auto v = optional<T>(k)) out = *v;
  }

  std::optional<Section> child(const std::string& k) {
    seen_.insert(k);
    if (!j_.contains(k)) return std::nullopt;
    return Section(j_.at(k), key(k));
  }

  const json& raw(const std::string& k) {
    seen_.insert(k);
    return j_.at(k);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(key(it.key()), "unknown key " + key(it.key()));
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void checked(const std::string& key, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key, key + ": " + e.what());
  }
}

KernelKind parse_kind(const std::string& s, const std::string& key) {
  if (s == "exponential") return KernelKind::kExponential;
  if (s == "screened_coulomb") return KernelKind::kScreenedCoulomb;
  if (s == "mixed") return KernelKind::kMixed;
  throw ConfigError(key, key + " must be exponential, screened_coulomb or mixed");
}

TrainConfig parse_train(Section s, TrainConfig t) {
  s.maybe("lr0", t.lr0);
  s.maybe("decay", t.decay);
  s.maybe("decay_every", t.decay_every);
  if (s.has("stages")) {
    const json& st = s.raw("stages");
    if (!st.is_array()) throw ConfigError(s.key("stages"), s.key("stages") + " must be an array");
    t.stages.clear();
    for (std::size_t k = 0; k < st.size(); ++k) {
      Section e(st[k], s.key("stages") + "[" + std::to_string(k) + "]");
      Stage stage;
      stage.batch_size = e.required<int>("batch_size");
      stage.epochs = e.required<int>("epochs");
      e.finish();
      t.stages.push_back(stage);
    }
  }
  s.maybe("epoch_scale", t.epoch_scale);
  s.maybe("seed", t.seed);
  s.maybe("energy_weight", t.energy_weight);
  s.maybe("test_size", t.test_size);
  s.maybe("eval_every", t.eval_every);
  s.finish();
  return t;
}

}  // namespace

TorusDomain RunConfig::require_domain() const {
  if (!d) throw ConfigError("domain.d", "missing required key domain.d");
  if (!L) throw ConfigError("domain.L", "missing required key domain.L");
  return TorusDomain(*d, *L);
}

const KernelSpec& RunConfig::require_kernel() const {
  if (!kernel) throw ConfigError("kernel", "missing required section kernel");
  return *kernel;
}

const SamplerConfig& RunConfig::require_sampler() const {
  if (!sampler) throw ConfigError("sampler", "missing required section sampler");
  return *sampler;
}

int RunConfig::require_n_samples() const {
  if (!n_samples) throw ConfigError("sampler.n_samples", "missing required key sampler.n_samples");
  return *n_samples;
}

const DescriptorConfig& RunConfig::require_descriptor() const {
  if (!descriptor) throw ConfigError("descriptor", "missing required section descriptor");
  return *descriptor;
}

int RunConfig::require_fft_modes() const {
  if (!fft_modes) throw ConfigError("nufft.fft_modes", "missing required key nufft.fft_modes");
  return *fft_modes;
}

const std::filesystem::path& RunConfig::require_path(const std::optional<std::filesystem::path>& p,
                                                     const char* key) const {
  if (!p) throw ConfigError(key, std::string("missing required key ") + key);
  return *p;
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("<root>", std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  cfg.source = std::string(text);
  Section root(doc, "");
  root.maybe("seed", cfg.seed);

  if (auto s = root.child("domain")) {
    cfg.d = s->required<int>("d");
    cfg.L = s->required<double>("L");
    s->finish();
    checked("domain.d", [&] { TorusDomain(*cfg.d, 1.0); });
    checked("domain.L", [&] { TorusDomain(1, *cfg.L); });
  }

  if (auto s = root.child("kernel")) {
    KernelSpec k;
    k.kind = parse_kind(s->required<std::string>("kind"), "kernel.kind");
    k.mu1 = s->required<double>("mu1");
    s->maybe("mu2", k.mu2);
    s->maybe("alpha1", k.alpha1);
    s->maybe("alpha2", k.alpha2);
    cfg.kernel_grid = s->optional<int>("grid_size");
    s->finish();
    checked("kernel", [&] { k.validate(); });
    if (cfg.kernel_grid) checked("kernel.grid_size", [&] { SpectralKernelConfig{*cfg.kernel_grid}.validate(); });
    cfg.kernel = k;
  }

  if (auto s = root.child("sampler")) {
    SamplerConfig sc;
    sc.N = s->required<int>("N");
    sc.delta_min = s->required<double>("delta_min");
    cfg.n_samples = s->optional<int>("n_samples");
    s->maybe("max_point_retries", sc.max_point_retries);
    s->maybe("max_snapshot_restarts", sc.max_snapshot_restarts);
    sc.seed = cfg.seed;
    s->maybe("seed", sc.seed);
    s->finish();
    checked("sampler", [&] { sc.validate(); });
    if (cfg.n_samples && *cfg.n_samples < 0)
      throw ConfigError("sampler.n_samples", "sampler.n_samples must be >= 0");
    cfg.sampler = sc;
  }

  if (auto s = root.child("descriptor")) {
    DescriptorConfig dc;
    dc.R = s->required<double>("R");
    s->maybe("max_neighbors", dc.max_neighbors);
    s->maybe("sr_widths", dc.sr_widths);
    s->maybe("lr_widths", dc.lr_widths);
    s->maybe("fit_width", dc.fit_width);
    s->maybe("fit_blocks", dc.fit_blocks);
    s->maybe("channels", dc.channels);
    s->finish();
    if (cfg.d && cfg.L) checked("descriptor", [&] { dc.validate(TorusDomain(*cfg.d, *cfg.L)); });
    cfg.descriptor = dc;
  }

  if (auto s = root.child("nufft")) {
    cfg.fft_modes = s->required<int>("fft_modes");
    s->finish();
    if (*cfg.fft_modes < 1) throw ConfigError("nufft.fft_modes", "nufft.fft_modes must be positive");
  }

  cfg.train.seed = cfg.seed;
  if (auto s = root.child("train")) cfg.train = parse_train(*s, cfg.train);
  checked("train", [&] { cfg.train.validate(); });
  if (auto s = root.child("train_phase_b")) {
    cfg.train_phase_b = parse_train(*s, cfg.train);
    checked("train_phase_b", [&] { cfg.train_phase_b->validate(); });
  }

  if (auto s = root.child("bench")) {
    BenchmarkConfig b;
    if (cfg.d) b.d = *cfg.d;
    if (cfg.L) b.L = *cfg.L;
    if (cfg.fft_modes) b.fft_modes = *cfg.fft_modes;
    b.seed = cfg.seed;
    s->maybe("N", b.N);
    s->maybe("repeats", b.repeats);
    s->maybe("table_points", b.table_points);
    s->finish();
    checked("bench", [&] { b.validate(); });
    cfg.bench = b;
  }

  if (auto s = root.child("paths")) {
    auto resolve = [&](const std::string& k, std::optional<std::filesystem::path>& out) {
      if (auto v = s->optional<std::string>(k)) {
        std::filesystem::path p(*v);
        out = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      }
    };
    resolve("dataset", cfg.dataset);
    resolve("small_dataset", cfg.small_dataset);
    resolve("large_dataset", cfg.large_dataset);
    s->finish();
  }

  root.finish();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path());
}

}  // namespace lrc
