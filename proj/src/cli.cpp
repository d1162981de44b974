#include "lrc/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "lrc/checkpoint.hpp"
#include "lrc/config.hpp"
#include "lrc/errors.hpp"
#include "lrc/refdata.hpp"
#include "lrc/train.hpp"

#ifndef LRC_GIT_DESCRIBE
#define LRC_GIT_DESCRIBE "unknown"
#endif

namespace lrc {

using nlohmann::json;

namespace {

/// Error carrying the exit code it should map to.
struct Exit {
  int code;
  std::string message;
};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

json manifest(const std::string& command, const RunConfig* cfg) {
  json m;
  m["command"] = command;
  m["git_describe"] = LRC_GIT_DESCRIBE;
  m["timestamp"] = utc_timestamp();
  m["threads"] = omp_get_max_threads();
  if (cfg) m["config"] = json::parse(cfg->source);
  return m;
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
}

void apply_threads(int threads) {
  if (threads <= 0) {
    if (const char* env = std::getenv("LRC_THREADS")) {
      const std::string_view s(env);
      int v = 0;
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size() || v < 1)
        throw Exit{kExitConfig, "LRC_THREADS must be a positive integer"};
      threads = v;
    }
  }
  if (threads > 0) omp_set_num_threads(threads);
}

RunConfig read_config(const std::string& path) {
  try {
    return load_run_config(path);
  } catch (const ConfigError& e) {
    throw Exit{kExitConfig, e.what()};
  }
}

Dataset read_data(const std::filesystem::path& path) {
  try {
    return read_dataset(path);
  } catch (const FormatError& e) {
    throw Exit{kExitDataMismatch, e.what()};
  }
}

void check_matches(const DatasetHeader& h, const TorusDomain& dom, const std::string& what,
                   bool check_L = true) {
  if (static_cast<int>(h.d) != dom.dim())
    throw Exit{kExitDataMismatch, what + " has d=" + std::to_string(h.d) + " but the config has d=" +
                                      std::to_string(dom.dim())};
  if (check_L && h.L != dom.length()) {
    std::ostringstream s;
    s << what << " has L=" << h.L << " but the config has L=" << dom.length();
    throw Exit{kExitDataMismatch, s.str()};
  }
}

std::vector<int> parse_n_list(const std::string& text) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string_view item(text.data() + pos, comma - pos);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size() || v < 1)
      throw Exit{kExitConfig, "malformed N list '" + text + "'"};
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

int cmd_generate(const std::string& config_path, const std::string& out_path, std::ostream& out) {
  const RunConfig cfg = read_config(config_path);
  TorusDomain dom(1, 1.0);
  KernelSpec spec;
  SamplerConfig sampler;
  int n = 0;
  try {
    dom = cfg.require_domain();
    spec = cfg.require_kernel();
    sampler = cfg.require_sampler();
    n = cfg.require_n_samples();
  } catch (const ConfigError& e) {
    throw Exit{kExitConfig, e.what()};
  }
  try {
    generate_dataset(out_path, spec, dom, sampler, n, cfg.kernel_grid);
    json m = manifest("generate", &cfg);
    m["output"] = out_path;
    m["n_samples"] = n;
    write_json(out_path + ".manifest.json", m);
  } catch (const ConfigError& e) {
    throw Exit{kExitConfig, e.what()};
  } catch (const std::exception& e) {
    throw Exit{kExitGeneration, e.what()};
  }
  out << "wrote " << n << " snapshots to " << out_path << '\n';
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& mode, const std::string& out_dir,
              bool verbose, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = read_config(config_path);
  TrainOptions opts;
  opts.run_dir = out_dir;
  if (verbose)
    opts.on_epoch = [&err](const MetricRow& r) {
      err << "stage " << r.stage << " epoch " << r.epoch << " lr " << r.lr << " loss " << r.train_loss
          << " test_eps_rel " << r.test_eps_rel << '\n';
    };
  double eps = 0.0;
  json m = manifest("train", &cfg);
  m["mode"] = mode;
  try {
    const TorusDomain dom = cfg.require_domain();
    const DescriptorConfig& dcfg = cfg.require_descriptor();
    if (mode == "two-scale") {
      const auto small_path = cfg.require_path(cfg.small_dataset, "paths.small_dataset");
      const auto large_path = cfg.require_path(cfg.large_dataset, "paths.large_dataset");
      TwoScaleConfig ts;
      ts.descriptor = dcfg;
      ts.phase_a = cfg.train;
      ts.phase_b = cfg.train_phase_b.value_or(cfg.train);
      ts.fft_modes = cfg.require_fft_modes();
      const Dataset small = read_data(small_path);
      const Dataset large = read_data(large_path);
      check_matches(small.header, dom, "small dataset", false);
      check_matches(large.header, dom, "large dataset");
      const auto res = train_two_scale(small, large, ts, opts);
      m["phase_a_test_eps_rel"] = res.phase_a.test_eps_rel;
      eps = res.phase_b.test_eps_rel;
    } else {
      const ModelMode mm = mode == "sr" ? ModelMode::kShortRange : ModelMode::kFullRange;
      const int fft = mm == ModelMode::kFullRange ? cfg.require_fft_modes() : 0;
      const Dataset data = read_data(cfg.require_path(cfg.dataset, "paths.dataset"));
      check_matches(data.header, dom, "dataset");
      eps = train_one_scale(data, mm, dcfg, cfg.train, fft, opts).test_eps_rel;
    }
  } catch (const ConfigError& e) {
    throw Exit{kExitConfig, e.what()};
  } catch (const NonFiniteLoss& e) {
    throw Exit{kExitDiverged, std::string("training diverged: ") + e.what()};
  } catch (const Error& e) {
    throw Exit{kExitDataMismatch, e.what()};
  }
  m["test_eps_rel"] = eps;
  try {
    write_json(std::filesystem::path(out_dir) / "manifest.json", m);
  } catch (const std::exception& e) {
    err << "warning: " << e.what() << '\n';
  }
  out << std::setprecision(10) << "test_eps_rel " << eps << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, std::string csv_path,
             std::ostream& out) {
  Checkpoint ckpt;
  try {
    ckpt = load_checkpoint(ckpt_path);
  } catch (const FormatError& e) {
    throw Exit{kExitDataMismatch, e.what()};
  }
  const Dataset data = read_data(data_path);
  check_matches(data.header, ckpt.domain(), "dataset");
  if (data.snapshots.empty()) throw Exit{kExitDataMismatch, "dataset " + data_path + " is empty"};
  if (csv_path.empty())
    csv_path = (std::filesystem::path(ckpt_path).parent_path() /
                ("eval_" + std::filesystem::path(data_path).stem().string() + ".csv"))
                   .string();
  double eps = 0.0;
  try {
    const TorusDomain dom = ckpt.domain();
    std::optional<NufftPlan> plan;
    if (ckpt.params.full_range()) plan.emplace(make_plan(dom, ckpt.fft_modes));
    const int n = static_cast<int>(data.snapshots.size());
    std::vector<Matrix> ref(n), pred(n);
    for (int k = 0; k < n; ++k) {
      ref[k] = data.snapshots[k].forces;
      pred[k] = forces(data.snapshots[k].positions, dom, ckpt.params, plan ? &*plan : nullptr).forces;
    }
    std::ofstream csv(csv_path);
    if (!csv) throw std::ios_base::failure("cannot open " + csv_path + " for writing");
    csv << "snapshot,sq_error,sq_reference,eps_rel\n";
    csv.precision(17);
    for (int k = 0; k < n; ++k) {
      const double e2 = (ref[k] - pred[k]).squaredNorm();
      const double r2 = ref[k].squaredNorm();
      csv << k << ',' << e2 << ',' << r2 << ',' << (r2 > 0.0 ? std::sqrt(e2 / r2) : NAN) << '\n';
    }
    eps = relative_l2_error(std::span<const Matrix>(ref), std::span<const Matrix>(pred));
  } catch (const Error& e) {
    throw Exit{kExitDataMismatch, e.what()};
  } catch (const std::ios_base::failure& e) {
    throw Exit{kExitDataMismatch, e.what()};
  }
  out << std::setprecision(17) << "eps_rel " << eps << '\n';
  return kExitOk;
}

int cmd_bench(const std::string& config_path, const std::string& n_list, int repeats,
              const std::string& out_path, std::ostream& out) {
  BenchmarkConfig b;
  if (!config_path.empty()) {
    const RunConfig cfg = read_config(config_path);
    if (cfg.bench) {
      b = *cfg.bench;
    } else {
      if (cfg.d) b.d = *cfg.d;
      if (cfg.L) b.L = *cfg.L;
      if (cfg.fft_modes) b.fft_modes = *cfg.fft_modes;
      b.seed = cfg.seed;
    }
  }
  if (!n_list.empty()) b.N = parse_n_list(n_list);
  if (repeats > 0) b.repeats = repeats;
  std::vector<BenchmarkRow> rows;
  try {
    rows = benchmark_scaling(b);
  } catch (const Error& e) {
    throw Exit{kExitConfig, e.what()};
  }
  write_benchmark_csv(out_path, rows);
  std::filesystem::path dat(out_path);
  dat.replace_extension(".dat");
  std::ofstream g(dat);
  g << "# N t_lrc_median t_direct_median lrc_normalized direct_normalized\n";
  for (const auto& r : rows)
    g << r.N << ' ' << r.t_lrc << ' ' << r.t_direct << ' ' << r.lrc_normalized << ' '
      << r.direct_normalized << '\n';
  out << "N,t_lrc_median,t_direct_median,lrc_normalized,direct_normalized\n";
  for (const auto& r : rows)
    out << r.N << ',' << r.t_lrc << ',' << r.t_direct << ',' << r.lrc_normalized << ','
        << r.direct_normalized << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Long-range convolutional potentials: data, training, evaluation, benchmarks", "lrc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(LRC_GIT_DESCRIBE));
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (falls back to LRC_THREADS)");

  std::string config, out_path, mode, ckpt, data, n_list;
  std::string bench_out = "bench.csv";
  int repeats = 0;
  bool verbose = false;

  auto* gen = app.add_subcommand("generate", "Sample configurations and label them");
  gen->add_option("config", config, "Run config (JSON)")->required();
  gen->add_option("--out", out_path, "Dataset file")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("config", config, "Run config (JSON)")->required();
  train->add_option("--mode", mode, "sr, full or two-scale")
      ->required()
      ->check(CLI::IsMember({"sr", "full", "two-scale"}));
  train->add_option("--out", out_path, "Run directory")->required();
  train->add_flag("--verbose", verbose, "Print one line per epoch");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("checkpoint", ckpt, "Checkpoint file")->required();
  eval->add_option("dataset", data, "Dataset file")->required();
  eval->add_option("--out", out_path, "Per-snapshot error CSV");

  auto* bench = app.add_subcommand("bench", "Time the LRC layer against the direct sum");
  bench->add_option("config", config, "Run config (JSON)");
  bench->add_option("--N", n_list, "Comma-separated particle counts");
  bench->add_option("--repeats", repeats, "Timed runs per N");
  bench->add_option("--out", bench_out, "Benchmark CSV")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    apply_threads(threads);
    if (gen->parsed()) return cmd_generate(config, out_path, out);
    if (train->parsed()) return cmd_train(config, mode, out_path, verbose, out, err);
    if (eval->parsed()) return cmd_eval(ckpt, data, out_path, out);
    if (bench->parsed()) return cmd_bench(config, n_list, repeats, bench_out, out);
  } catch (const Exit& e) {
    err << "error: " << e.message << '\n';
    return e.code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitConfig;
}

}  // namespace lrc
