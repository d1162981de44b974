#include "lrc/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lrc/errors.hpp"

namespace lrc {

using nlohmann::json;

namespace {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kLinear: return "linear";
  }
  return "linear";
}

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "linear") return Activation::kLinear;
  throw FormatError("unknown activation '" + s + "'");
}

json tensor(const Matrix& m) {
  for (Eigen::Index k = 0; k < m.size(); ++k)
    if (!std::isfinite(m.data()[k])) throw InvalidArgument("cannot save non-finite parameters");
  return {{"shape", {m.rows(), m.cols()}},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix read_tensor(const json& j) {
  const auto shape = j.at("shape").get<std::vector<long>>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0 ||
      static_cast<std::size_t>(shape[0] * shape[1]) != data.size())
    throw FormatError("tensor shape does not match its data");
  Matrix m(shape[0], shape[1]);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

json mlp(const MlpParams& m) {
  json layers = json::array();
  for (std::size_t l = 0; l < m.weights.size(); ++l)
    layers.push_back({{"w", tensor(m.weights[l])}, {"b", tensor(m.biases[l])}});
  return {{"activation", activation_name(m.activation)}, {"layers", layers}};
}

MlpParams read_mlp(const json& j) {
  MlpParams m;
  m.activation = parse_activation(j.at("activation").get<std::string>());
  for (const auto& layer : j.at("layers")) {
    m.weights.push_back(read_tensor(layer.at("w")));
    m.biases.push_back(read_tensor(layer.at("b")));
  }
  return m;
}

void expect_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols)
    throw FormatError(std::string("tensor ") + what + " has shape " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                      std::to_string(cols));
}

void check_mlp(const MlpParams& m, int in, const std::vector<int>& widths, const char* what) {
  if (m.weights.size() != widths.size())
    throw FormatError(std::string("network ") + what + " has the wrong number of layers");
  for (std::size_t l = 0; l < widths.size(); ++l) {
    expect_shape(m.weights[l], in, widths[l], what);
    expect_shape(m.biases[l], 1, widths[l], what);
    in = widths[l];
  }
}

void check_shapes(const ModelParams& p) {
  const auto& c = p.cfg;
  check_mlp(p.sr1, p.d == 1 ? 1 : p.d, c.sr_widths, "sr1");
  check_mlp(p.sr2, 1, c.sr_widths, "sr2");
  const int in = c.m_sr() + (p.full_range() ? c.m_lr() : 0);
  if (p.full_range()) {
    check_mlp(p.lr, c.channels, c.lr_widths, "lr");
    if (p.multiplier.channels() != c.channels ||
        static_cast<int>(p.multiplier.lambda.size()) != c.channels)
      throw FormatError("multiplier channel count does not match the config");
    if (static_cast<int>(p.norm.u_mean.size()) != c.channels ||
        static_cast<int>(p.norm.u_std.size()) != c.channels)
      throw FormatError("LRC normalization does not match the channel count");
  } else if (!p.lr.weights.empty() || p.multiplier.channels() != 0) {
    throw FormatError("short-range checkpoint carries long-range parameters");
  }
  expect_shape(p.fit.proj_w, in, c.fit_width, "proj_w");
  expect_shape(p.fit.proj_b, 1, c.fit_width, "proj_b");
  if (p.fit.block_w.size() != static_cast<std::size_t>(c.fit_blocks) ||
      p.fit.block_b.size() != p.fit.block_w.size())
    throw FormatError("fitting network has the wrong number of blocks");
  for (std::size_t b = 0; b < p.fit.block_w.size(); ++b) {
    expect_shape(p.fit.block_w[b], c.fit_width, c.fit_width, "block_w");
    expect_shape(p.fit.block_b[b], 1, c.fit_width, "block_b");
  }
  expect_shape(p.fit.out_w, c.fit_width, 1, "out_w");
  expect_shape(p.fit.out_b, 1, 1, "out_b");
}

}  // namespace

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  const auto& c = p.cfg;
  auto finite = [](double v) { return std::isfinite(v); };
  const auto flat = p.flatten();
  const auto& n = p.norm;
  if (!std::all_of(flat.begin(), flat.end(), finite) ||
      !std::all_of(n.u_mean.begin(), n.u_mean.end(), finite) ||
      !std::all_of(n.u_std.begin(), n.u_std.end(), finite) ||
      !finite(n.s_mean) || !finite(n.s_std) || !finite(n.r_mean) || !finite(n.r_std))
    throw InvalidArgument("cannot save non-finite parameters");
  json j;
  j["format"] = "lrc-checkpoint";
  j["version"] = ckpt.version;
  j["d"] = p.d;
  j["L"] = ckpt.L;
  j["fft_modes"] = ckpt.fft_modes;
  j["seed"] = ckpt.seed;
  j["epoch"] = ckpt.epoch;
  j["test_eps_rel"] = ckpt.test_eps_rel;
  j["mode"] = p.full_range() ? "full" : "sr";
  j["descriptor"] = {{"R", c.R},
                     {"max_neighbors", c.max_neighbors},
                     {"sr_widths", c.sr_widths},
                     {"lr_widths", c.lr_widths},
                     {"fit_width", c.fit_width},
                     {"fit_blocks", c.fit_blocks},
                     {"channels", c.channels}};
  j["norm"] = {{"s_mean", p.norm.s_mean}, {"s_std", p.norm.s_std},
               {"r_mean", p.norm.r_mean}, {"r_std", p.norm.r_std},
               {"u_mean", p.norm.u_mean}, {"u_std", p.norm.u_std}};
  j["sr1"] = mlp(p.sr1);
  j["sr2"] = mlp(p.sr2);
  if (p.full_range()) {
    j["lr"] = mlp(p.lr);
    j["multiplier"] = {{"beta", p.multiplier.beta}, {"lambda", p.multiplier.lambda}};
  }
  json blocks = json::array();
  for (std::size_t b = 0; b < p.fit.block_w.size(); ++b)
    blocks.push_back({{"w", tensor(p.fit.block_w[b])}, {"b", tensor(p.fit.block_b[b])}});
  j["fit"] = {{"proj_w", tensor(p.fit.proj_w)}, {"proj_b", tensor(p.fit.proj_b)},
              {"blocks", blocks},
              {"out_w", tensor(p.fit.out_w)}, {"out_b", tensor(p.fit.out_b)}};
  return j.dump(1);
}

Checkpoint checkpoint_from_string(std::string_view text) {
  Checkpoint ckpt;
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "lrc-checkpoint") throw FormatError("not an lrc checkpoint");
    ckpt.version = j.at("version").get<int>();
    if (ckpt.version != 1) throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version));
    auto& p = ckpt.params;
    p.d = j.at("d").get<int>();
    if (p.d < 1 || p.d > 3) throw FormatError("checkpoint d must be 1, 2, or 3");
    ckpt.L = j.at("L").get<double>();
    if (!(ckpt.L > 0.0) || !std::isfinite(ckpt.L)) throw FormatError("checkpoint L must be positive");
    ckpt.fft_modes = j.at("fft_modes").get<int>();
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    ckpt.epoch = j.at("epoch").get<int>();
    ckpt.test_eps_rel = j.at("test_eps_rel").get<double>();
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "sr") {
      p.mode = ModelMode::kShortRange;
    } else if (mode == "full") {
      p.mode = ModelMode::kFullRange;
    } else {
      throw FormatError("unknown model mode '" + mode + "'");
    }
    const auto& dc = j.at("descriptor");
    p.cfg.R = dc.at("R").get<double>();
    p.cfg.max_neighbors = dc.at("max_neighbors").get<int>();
    p.cfg.sr_widths = dc.at("sr_widths").get<std::vector<int>>();
    p.cfg.lr_widths = dc.at("lr_widths").get<std::vector<int>>();
    p.cfg.fit_width = dc.at("fit_width").get<int>();
    p.cfg.fit_blocks = dc.at("fit_blocks").get<int>();
    p.cfg.channels = dc.at("channels").get<int>();
    try {
      p.cfg.validate(ckpt.domain());
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string("invalid descriptor config: ") + e.what());
    }
    const auto& n = j.at("norm");
    p.norm.s_mean = n.at("s_mean").get<double>();
    p.norm.s_std = n.at("s_std").get<double>();
    p.norm.r_mean = n.at("r_mean").get<double>();
    p.norm.r_std = n.at("r_std").get<double>();
    p.norm.u_mean = n.at("u_mean").get<std::vector<double>>();
    p.norm.u_std = n.at("u_std").get<std::vector<double>>();
    p.sr1 = read_mlp(j.at("sr1"));
    p.sr2 = read_mlp(j.at("sr2"));
    if (p.full_range()) {
      if (ckpt.fft_modes < 1) throw FormatError("full-range checkpoint needs fft_modes");
      p.lr = read_mlp(j.at("lr"));
      p.multiplier.beta = j.at("multiplier").at("beta").get<std::vector<double>>();
      p.multiplier.lambda = j.at("multiplier").at("lambda").get<std::vector<double>>();
    }
    const auto& f = j.at("fit");
    p.fit.proj_w = read_tensor(f.at("proj_w"));
    p.fit.proj_b = read_tensor(f.at("proj_b"));
    for (const auto& b : f.at("blocks")) {
      p.fit.block_w.push_back(read_tensor(b.at("w")));
      p.fit.block_b.push_back(read_tensor(b.at("b")));
    }
    p.fit.out_w = read_tensor(f.at("out_w"));
    p.fit.out_b = read_tensor(f.at("out_b"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
  check_shapes(ckpt.params);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string text = checkpoint_to_string(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::ios_base::failure("cannot open " + tmp.string() + " for writing");
    out << text << '\n';
    out.flush();
    if (!out) throw std::ios_base::failure("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

}  // namespace lrc
