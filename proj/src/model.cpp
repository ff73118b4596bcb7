#include "rte/model.hpp"

#include <cmath>
#include <stdexcept>

namespace rte {

namespace {

bool poolable(const FeatureShape& s) { return s.height >= 2 && s.width >= 2 && s.height % 2 == 0 && s.width % 2 == 0; }

}  // namespace

void ArchSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("architecture needs at least 2 classes");
  if (input.channels < 1 || input.height < 1 || input.width < 1) throw std::invalid_argument("input shape must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (kind == ArchKind::mlp) {
    for (int h : hidden)
      if (h < 1) throw std::invalid_argument("hidden widths must be positive");
  } else {
    if (conv_channels.size() != 4) throw std::invalid_argument("convnet needs exactly 4 conv block widths");
    for (int c : conv_channels)
      if (c < 1) throw std::invalid_argument("conv channels must be positive");
  }
}

ArchKind parse_arch_kind(const std::string& name) {
  if (name == "mlp") return ArchKind::mlp;
  if (name == "convnet") return ArchKind::convnet;
  throw std::invalid_argument("unknown architecture '" + name + "' (mlp|convnet)");
}

nlohmann::json to_json(const ArchSpec& a) {
  return {{"kind", a.kind == ArchKind::mlp ? "mlp" : "convnet"},
          {"input", {a.input.channels, a.input.height, a.input.width}},
          {"hidden", a.hidden},
          {"conv_channels", a.conv_channels},
          {"classes", a.classes},
          {"dropout", a.dropout}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec a;
  a.kind = parse_arch_kind(j.at("kind").get<std::string>());
  const auto in = j.at("input").get<std::vector<int>>();
  if (in.size() != 3) throw std::invalid_argument("architecture input must be [channels, height, width]");
  a.input = {in[0], in[1], in[2]};
  a.hidden = j.at("hidden").get<std::vector<int>>();
  a.conv_channels = j.at("conv_channels").get<std::vector<int>>();
  a.classes = j.at("classes").get<int>();
  a.dropout = j.at("dropout").get<double>();
  a.validate();
  return a;
}

std::vector<ParamInfo> param_layout(const ArchSpec& arch) {
  arch.validate();
  std::vector<ParamInfo> out;
  auto dense = [&](const std::string& name, Eigen::Index in, Eigen::Index width) {
    out.push_back({name + ".weight", in, width, in, false});
    out.push_back({name + ".bias", 1, width, in, true});
  };
  if (arch.kind == ArchKind::mlp) {
    Eigen::Index in = arch.input.size();
    for (std::size_t i = 0; i < arch.hidden.size(); ++i) {
      dense("dense" + std::to_string(i), in, arch.hidden[i]);
      in = arch.hidden[i];
    }
    dense("classifier", in, arch.classes);
  } else {
    FeatureShape s = arch.input;
    for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
      const Eigen::Index patch = s.channels * 9;
      out.push_back({"conv" + std::to_string(i) + ".weight", patch, arch.conv_channels[i], patch, false});
      out.push_back({"conv" + std::to_string(i) + ".bias", 1, arch.conv_channels[i], patch, true});
      s = Conv2dGeometry{s, arch.conv_channels[i], 3, 1}.out();
      if (poolable(s)) s = {s.channels, s.height / 2, s.width / 2};
    }
    dense("classifier", s.size(), arch.classes);
  }
  return out;
}

std::size_t parameter_count(const ParamSet& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += static_cast<std::size_t>(p.size());
  return n;
}

ModelState init_model(const ArchSpec& arch, std::uint64_t seed, double ema_decay) {
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw std::invalid_argument("EMA decay must be in [0, 1]");
  ModelState state;
  state.arch = arch;
  state.ema_decay = ema_decay;
  const auto layout = param_layout(arch);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& info = layout[i];
    MatrixR p = MatrixR::Zero(info.rows, info.cols);
    if (!info.is_bias) {
      auto rng = Rng::stream(seed, 0x1A17, i);
      const double stddev = std::sqrt(2.0 / static_cast<double>(info.fan_in));
      for (Eigen::Index k = 0; k < p.size(); ++k) p.data()[k] = static_cast<Real>(stddev * rng.normal());
    }
    state.student.push_back(std::move(p));
  }
  state.teacher = state.student;
  return state;
}

void ema_update(ModelState& state) {
  const auto a = static_cast<Real>(state.ema_decay);
  for (std::size_t i = 0; i < state.teacher.size(); ++i)
    state.teacher[i] = a * state.teacher[i] + (Real(1) - a) * state.student[i];
  ++state.step;
}

std::vector<Var<Real>> add_parameters(Graph<Real>& g, const ParamSet& params, bool trainable, const std::string& prefix) {
  std::vector<Var<Real>> vars;
  vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = prefix + "[" + std::to_string(i) + "]";
    vars.push_back(trainable ? g.parameter(params[i], name) : g.input(params[i], name));
  }
  return vars;
}

Var<Real> build_logits(Graph<Real>&, const ArchSpec& arch, std::span<const Var<Real>> params, Var<Real> x, Mode mode,
                       Rng& rng) {
  const auto expected = param_layout(arch).size();
  if (params.size() != expected)
    throw std::invalid_argument("architecture expects " + std::to_string(expected) + " parameter tensors, got " +
                                std::to_string(params.size()));
  if (x.cols() != arch.input.size())
    throw ShapeError("model input: batch has " + std::to_string(x.cols()) + " features, architecture expects " +
                     std::to_string(arch.input.size()));
  const auto rate = static_cast<Real>(arch.dropout);
  std::size_t p = 0;
  Var<Real> h = x;
  if (arch.kind == ArchKind::mlp) {
    for (std::size_t i = 0; i < arch.hidden.size(); ++i) {
      h = relu(add_bias(matmul(h, params[p]), params[p + 1]));
      h = dropout(h, rate, mode, rng);
      p += 2;
    }
  } else {
    FeatureShape s = arch.input;
    for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
      const Conv2dGeometry geo{s, arch.conv_channels[i], 3, 1};
      h = relu(conv2d(h, params[p], params[p + 1], geo));
      s = geo.out();
      if (poolable(s)) {
        h = max_pool2d(h, s, 2);
        s = {s.channels, s.height / 2, s.width / 2};
      }
      p += 2;
    }
    h = dropout(h, rate, mode, rng);
  }
  return add_bias(matmul(h, params[p]), params[p + 1]);
}

MatrixR predict(const ArchSpec& arch, const ParamSet& params, const MatrixR& batch, Mode mode, std::uint64_t dropout_seed) {
  Graph<Real> g;
  auto vars = add_parameters(g, params, false, "param");
  auto x = g.input(batch, "batch");
  auto rng = Rng::stream(dropout_seed, 0xD80F);
  return softmax(build_logits(g, arch, vars, x, mode, rng)).value();
}

}  // namespace rte
