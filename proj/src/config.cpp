#include "rte/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

namespace rte {

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error([&] {
        std::string msg = "invalid configuration:";
        for (const auto& p : problems) msg += "\n  " + p;
        return msg;
      }()),
      problems_(std::move(problems)) {}

namespace {

// ---------------------------------------------------------------------------
// Scalar codecs

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& s) {
  const std::string t = trim(s);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || *end != '\0') throw std::invalid_argument("expected a number, got '" + s + "'");
  return v;
}

long long to_integer(const std::string& s) {
  const std::string t = trim(s);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw std::invalid_argument("expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t to_unsigned(const std::string& s) {
  const std::string t = trim(s);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw std::invalid_argument("expected a nonnegative integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  std::string t = trim(s);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
  if (t == "false" || t == "no" || t == "off" || t == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string boolean(bool b) { return b ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_same_v<T, std::string>)
      out += v[i];
    else if constexpr (std::is_floating_point_v<T>)
      out += num(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

std::vector<double> to_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(to_double(item));
  return out;
}

std::vector<int> to_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) out.push_back(static_cast<int>(to_integer(item)));
  return out;
}

std::pair<double, double> to_pair(const std::string& s) {
  const auto v = to_doubles(s);
  if (v.size() != 2) throw std::invalid_argument("expected 'lo, hi', got '" + s + "'");
  return {v[0], v[1]};
}

// "32" (flat) or "3x8x8" (channels x height x width).
FeatureShape to_shape(const std::string& s) {
  std::vector<int> dims;
  std::stringstream ss(trim(s));
  std::string item;
  while (std::getline(ss, item, 'x')) dims.push_back(static_cast<int>(to_integer(item)));
  if (trim(s).ends_with('x') || std::any_of(dims.begin(), dims.end(), [](int d) { return d <= 0; }))
    throw std::invalid_argument("expected 'd' or 'CxHxW' with positive sizes, got '" + s + "'");
  if (dims.size() == 1) return flat_shape(dims[0]);
  if (dims.size() == 3) return {dims[0], dims[1], dims[2]};
  throw std::invalid_argument("expected 'd' or 'CxHxW', got '" + s + "'");
}

std::string shape_string(const FeatureShape& s) {
  if (s.channels == 1 && s.height == 1) return std::to_string(s.width);
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

LrScheduleKind to_lr_kind(const std::string& s) {
  const auto t = trim(s);
  if (t == "cosine") return LrScheduleKind::cosine;
  if (t == "step") return LrScheduleKind::step;
  if (t == "constant") return LrScheduleKind::constant;
  if (t == "exp_decay") return LrScheduleKind::exp_decay;
  throw std::invalid_argument("expected cosine|step|constant|exp_decay, got '" + s + "'");
}

std::string lr_kind_string(LrScheduleKind k) {
  switch (k) {
    case LrScheduleKind::cosine: return "cosine";
    case LrScheduleKind::step: return "step";
    case LrScheduleKind::constant: return "constant";
    case LrScheduleKind::exp_decay: return "exp_decay";
  }
  return "?";
}

std::string one_of(const std::string& s, std::initializer_list<const char*> options) {
  const auto t = trim(s);
  std::string all;
  for (const char* o : options) {
    if (t == o) return t;
    all += all.empty() ? o : std::string("|") + o;
  }
  throw std::invalid_argument("expected " + all + ", got '" + s + "'");
}

// ---------------------------------------------------------------------------
// Schema

struct Field {
  ConfigField info;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

using C = ExperimentConfig;

#define RTE_FIELD(section, key, type, doc, setter, getter)                                  \
  fields.push_back({{section, key, type, doc}, [](C & c, const std::string& v) { setter; }, \
                    [](const C& c) -> std::string { return getter; }})

const std::vector<Field>& schema() {
  static const std::vector<Field> fields_ = [] {
    std::vector<Field> fields;
    RTE_FIELD("experiment", "name", "string", "label used in reports", c.name = trim(v), c.name);
    RTE_FIELD("experiment", "stages", "list", "ordered subset of generate, corrupt, train|pbt, eval",
              c.stages = split_list(v), join(c.stages));

    RTE_FIELD("data", "source", "synthetic|file", "where samples come from",
              c.data.source = one_of(v, {"synthetic", "file"}), c.data.source);
    RTE_FIELD("data", "path", "path", "file source: training dataset container", c.data.path = trim(v),
              c.data.path.string());
    RTE_FIELD("data", "test_path", "path", "file source: clean test dataset container", c.data.test_path = trim(v),
              c.data.test_path.string());
    RTE_FIELD("data", "classes", "int", "class count", c.data.synthetic.classes = static_cast<int>(to_integer(v)),
              std::to_string(c.data.synthetic.classes));
    RTE_FIELD("data", "samples", "int", "training samples", c.data.synthetic.samples = to_unsigned(v),
              std::to_string(c.data.synthetic.samples));
    RTE_FIELD("data", "test_samples", "int", "clean test samples", c.data.test_samples = to_unsigned(v),
              std::to_string(c.data.test_samples));
    RTE_FIELD("data", "shape", "d|CxHxW", "feature shape", c.data.synthetic.shape = to_shape(v),
              shape_string(c.data.synthetic.shape));
    RTE_FIELD("data", "margin", "float", "half distance between class means, in standard deviations",
              c.data.synthetic.margin = to_double(v), num(c.data.synthetic.margin));
    RTE_FIELD("data", "seed", "int", "generator seed", c.data.synthetic.seed = to_unsigned(v),
              std::to_string(c.data.synthetic.seed));

    RTE_FIELD("noise", "structure", "symmetric|pairflip|resnet-confusion", "confusion structure C",
              c.noise.structure = parse_noise_structure(trim(v)), to_string(c.noise.structure));
    RTE_FIELD("noise", "ratio", "float", "uniform intensity p", c.noise.ratio = to_double(v), num(c.noise.ratio));
    RTE_FIELD("noise", "class_ratios", "list", "per-class intensities, overrides ratio",
              c.noise.class_ratios = to_doubles(v), join(c.noise.class_ratios));
    RTE_FIELD("noise", "legacy_inclusive", "bool", "draw corrupted labels from all classes",
              c.noise.legacy_inclusive = to_bool(v), boolean(c.noise.legacy_inclusive));
    RTE_FIELD("noise", "seed", "int", "corruption seed", c.noise.seed = to_unsigned(v), std::to_string(c.noise.seed));

    RTE_FIELD("model", "arch", "mlp|convnet", "classifier family", c.train.arch.kind = parse_arch_kind(trim(v)),
              c.train.arch.kind == ArchKind::mlp ? "mlp" : "convnet");
    RTE_FIELD("model", "hidden", "list", "mlp hidden widths", c.train.arch.hidden = to_ints(v),
              join(c.train.arch.hidden));
    RTE_FIELD("model", "conv_channels", "list", "convnet channels per block", c.train.arch.conv_channels = to_ints(v),
              join(c.train.arch.conv_channels));
    RTE_FIELD("model", "dropout", "float", "dropout rate", c.train.arch.dropout = to_double(v),
              num(c.train.arch.dropout));
    RTE_FIELD("model", "ema_decay", "float", "teacher decay alpha", c.train.ema_decay = to_double(v),
              num(c.train.ema_decay));

    RTE_FIELD("train", "batch_size", "int", "task batch size", c.train.batch_size = static_cast<int>(to_integer(v)),
              std::to_string(c.train.batch_size));
    RTE_FIELD("train", "epochs", "int", "training epochs", c.train.epochs = static_cast<int>(to_integer(v)),
              std::to_string(c.train.epochs));
    RTE_FIELD("train", "base_lr", "float", "initial learning rate", c.train.base_lr = to_double(v),
              num(c.train.base_lr));
    RTE_FIELD("train", "lr_schedule", "cosine|step|constant|exp_decay", "learning-rate schedule",
              c.train.lr_schedule.kind = to_lr_kind(v), lr_kind_string(c.train.lr_schedule.kind));
    RTE_FIELD("train", "lr_fraction", "float", "cosine: lr0 cos(fraction pi k / K)",
              c.train.lr_schedule.fraction = to_double(v), num(c.train.lr_schedule.fraction));
    RTE_FIELD("train", "lr_milestones", "list", "step: epochs where lr is multiplied by lr_gamma",
              c.train.lr_schedule.milestones = to_doubles(v), join(c.train.lr_schedule.milestones));
    RTE_FIELD("train", "lr_gamma", "float", "step: decay factor", c.train.lr_schedule.gamma = to_double(v),
              num(c.train.lr_schedule.gamma));
    RTE_FIELD("train", "lr_decay_base", "float", "exp_decay: lr0 base^k (0: 10^(-3/K))",
              c.train.lr_schedule.decay_base = to_double(v), num(c.train.lr_schedule.decay_base));
    RTE_FIELD("train", "momentum", "float", "Nesterov momentum beta", c.train.momentum = to_double(v),
              num(c.train.momentum));
    RTE_FIELD("train", "nesterov", "bool", "Nesterov (true) or heavy-ball momentum", c.train.nesterov = to_bool(v),
              boolean(c.train.nesterov));
    RTE_FIELD("train", "weight_decay", "float", "L2 coefficient", c.train.weight_decay = to_double(v),
              num(c.train.weight_decay));
    RTE_FIELD("train", "decay_biases", "bool", "apply weight decay to biases", c.train.decay_biases = to_bool(v),
              boolean(c.train.decay_biases));
    RTE_FIELD("train", "ecr_batch_size", "int", "unsynchronized ECR batch (0: batch_size)",
              c.train.ecr_batch_size = static_cast<int>(to_integer(v)), std::to_string(c.train.ecr_batch_size));
    RTE_FIELD("train", "checkpoint_interval", "int", "steps between checkpoints (0: final only)",
              c.train.checkpoint_interval = to_unsigned(v), std::to_string(c.train.checkpoint_interval));
    RTE_FIELD("train", "seed", "int", "initialization, batch order and augmentation seed",
              c.train.seed = to_unsigned(v), std::to_string(c.train.seed));

    RTE_FIELD("loss", "q_schedule", "constant|sine", "q schedule",
              c.train.q_schedule.kind = one_of(v, {"constant", "sine"}) == "constant" ? QScheduleKind::constant
                                                                                      : QScheduleKind::sine,
              c.train.q_schedule.kind == QScheduleKind::constant ? "constant" : "sine");
    RTE_FIELD("loss", "q", "float", "constant: GCE exponent (0 selects cross-entropy)",
              (c.train.q_schedule.q = to_double(v), c.train.loss.q = c.train.q_schedule.q), num(c.train.q_schedule.q));
    RTE_FIELD("loss", "q_peak", "float", "sine: peak q", c.train.q_schedule.peak = to_double(v),
              num(c.train.q_schedule.peak));
    RTE_FIELD("loss", "q_fraction", "float", "sine: peak sin(fraction pi k / K)",
              c.train.q_schedule.fraction = to_double(v), num(c.train.q_schedule.fraction));
    RTE_FIELD("loss", "lambda_jsd", "float", "JSD weight", c.train.loss.lambda_jsd = to_double(v),
              num(c.train.loss.lambda_jsd));
    RTE_FIELD("loss", "lambda_ecr", "float", "ECR weight", c.train.loss.lambda_ecr = to_double(v),
              num(c.train.loss.lambda_ecr));
    RTE_FIELD("loss", "n_star", "int", "ECR terms N*", c.train.loss.n_star = static_cast<int>(to_integer(v)),
              std::to_string(c.train.loss.n_star));
    RTE_FIELD("loss", "strategy", "ema_teacher|label_guessing|augmentation_anchoring", "pseudo-label targets",
              c.train.loss.strategy = parse_strategy(trim(v)), to_string(c.train.loss.strategy));
    RTE_FIELD("loss", "k", "int", "views for label guessing or anchoring",
              c.train.loss.k = static_cast<int>(to_integer(v)), std::to_string(c.train.loss.k));
    RTE_FIELD("loss", "sharpen", "bool", "sharpen EMA-teacher targets", c.train.loss.sharpen = to_bool(v),
              boolean(c.train.loss.sharpen));
    RTE_FIELD("loss", "temperature", "float", "sharpening temperature", c.train.loss.temperature = to_double(v),
              num(c.train.loss.temperature));
    RTE_FIELD("loss", "use_ema", "bool", "targets from the teacher (false: student)", c.train.loss.use_ema = to_bool(v),
              boolean(c.train.loss.use_ema));
    RTE_FIELD("loss", "batch_sync", "bool", "ECR and JSD reuse the task batch", c.train.loss.batch_sync = to_bool(v),
              boolean(c.train.loss.batch_sync));
    RTE_FIELD("loss", "ecr_norm", "squared|l2", "per-term ECR distance",
              c.train.loss.ecr_norm = one_of(v, {"squared", "l2"}) == "l2" ? EcrNorm::l2 : EcrNorm::squared,
              c.train.loss.ecr_norm == EcrNorm::l2 ? "l2" : "squared");
    RTE_FIELD("loss", "teacher_preprocess", "raw|weak", "target-model input",
              c.train.loss.teacher_preprocess =
                  one_of(v, {"raw", "weak"}) == "raw" ? TeacherPreprocess::raw : TeacherPreprocess::weak,
              c.train.loss.teacher_preprocess == TeacherPreprocess::raw ? "raw" : "weak");

    RTE_FIELD("augment", "mixture_width", "int", "chains per strong augmentation",
              c.train.augment.mixture_width = static_cast<int>(to_integer(v)),
              std::to_string(c.train.augment.mixture_width));
    RTE_FIELD("augment", "severity", "int", "primitive severity 1..5",
              c.train.augment.severity = static_cast<int>(to_integer(v)), std::to_string(c.train.augment.severity));
    RTE_FIELD("augment", "chain_depth", "list", "min, max primitives per chain",
              ([&] {
                const auto d = to_ints(v);
                if (d.size() != 2) throw std::invalid_argument("expected 'min, max'");
                c.train.augment.chain_depth_min = d[0];
                c.train.augment.chain_depth_max = d[1];
              }()),
              join(std::vector<int>{c.train.augment.chain_depth_min, c.train.augment.chain_depth_max}));
    RTE_FIELD("augment", "dirichlet_alpha", "float", "chain weight concentration",
              c.train.augment.dirichlet_alpha = to_double(v), num(c.train.augment.dirichlet_alpha));
    RTE_FIELD("augment", "beta_alpha", "float", "blend coefficient Beta(a, a)", c.train.augment.beta_alpha = to_double(v),
              num(c.train.augment.beta_alpha));
    RTE_FIELD("augment", "weak_flip_probability", "float", "images: horizontal flip probability",
              c.train.augment.weak_flip_probability = to_double(v), num(c.train.augment.weak_flip_probability));
    RTE_FIELD("augment", "weak_shift", "int", "images: maximum shift in pixels",
              c.train.augment.weak_shift = static_cast<int>(to_integer(v)), std::to_string(c.train.augment.weak_shift));
    RTE_FIELD("augment", "weak_jitter", "float", "flat: weak jitter standard deviation",
              c.train.augment.weak_jitter = to_double(v), num(c.train.augment.weak_jitter));
    RTE_FIELD("augment", "jitter_scale", "float", "flat: strong jitter standard deviation at severity 5",
              c.train.augment.jitter_scale = to_double(v), num(c.train.augment.jitter_scale));
    RTE_FIELD("augment", "mask_scale", "float", "flat: masking probability at severity 5",
              c.train.augment.mask_scale = to_double(v), num(c.train.augment.mask_scale));

    RTE_FIELD("eval", "mce", "bool", "corruption suite", c.eval.mce = to_bool(v), boolean(c.eval.mce));
    RTE_FIELD("eval", "calibration", "bool", "reliability bins and ECE", c.eval.calibration = to_bool(v),
              boolean(c.eval.calibration));
    RTE_FIELD("eval", "loss_split", "bool", "clean/corrupt loss histograms", c.eval.loss_split = to_bool(v),
              boolean(c.eval.loss_split));
    RTE_FIELD("eval", "calibration_bins", "int", "equal-width confidence bins",
              c.eval.calibration_bins = static_cast<int>(to_integer(v)), std::to_string(c.eval.calibration_bins));
    RTE_FIELD("eval", "histogram_bins", "int", "loss histogram bins",
              c.eval.histogram_bins = static_cast<int>(to_integer(v)), std::to_string(c.eval.histogram_bins));
    RTE_FIELD("eval", "corruption_seed", "int", "corruption suite seed", c.eval.corruption_seed = to_unsigned(v),
              std::to_string(c.eval.corruption_seed));

    RTE_FIELD("pbt", "population", "int", "members", c.pbt.population = static_cast<int>(to_integer(v)),
              std::to_string(c.pbt.population));
    RTE_FIELD("pbt", "interval_epochs", "int", "epochs between exploit/explore",
              c.pbt.interval_epochs = static_cast<int>(to_integer(v)), std::to_string(c.pbt.interval_epochs));
    RTE_FIELD("pbt", "resample_probability", "float", "explore: resample instead of perturb",
              c.pbt.resample_probability = to_double(v), num(c.pbt.resample_probability));
    RTE_FIELD("pbt", "perturb", "list", "explore: multiplier range lo, hi",
              std::tie(c.pbt.perturb_lo, c.pbt.perturb_hi) = to_pair(v),
              join(std::vector<double>{c.pbt.perturb_lo, c.pbt.perturb_hi}));
    RTE_FIELD("pbt", "exploit_quantile", "float", "truncation fraction (bottom and top)",
              c.pbt.exploit_quantile = to_double(v), num(c.pbt.exploit_quantile));
    RTE_FIELD("pbt", "lr", "list", "learning-rate range", std::tie(c.pbt.lr.lo, c.pbt.lr.hi) = to_pair(v),
              join(std::vector<double>{c.pbt.lr.lo, c.pbt.lr.hi}));
    RTE_FIELD("pbt", "weight_decay", "list", "weight-decay range",
              std::tie(c.pbt.weight_decay.lo, c.pbt.weight_decay.hi) = to_pair(v),
              join(std::vector<double>{c.pbt.weight_decay.lo, c.pbt.weight_decay.hi}));
    RTE_FIELD("pbt", "q", "list", "q range", std::tie(c.pbt.q.lo, c.pbt.q.hi) = to_pair(v),
              join(std::vector<double>{c.pbt.q.lo, c.pbt.q.hi}));
    RTE_FIELD("pbt", "lambda_jsd", "list", "JSD weight range",
              std::tie(c.pbt.lambda_jsd.lo, c.pbt.lambda_jsd.hi) = to_pair(v),
              join(std::vector<double>{c.pbt.lambda_jsd.lo, c.pbt.lambda_jsd.hi}));
    RTE_FIELD("pbt", "lambda_ecr", "list", "ECR weight range",
              std::tie(c.pbt.lambda_ecr.lo, c.pbt.lambda_ecr.hi) = to_pair(v),
              join(std::vector<double>{c.pbt.lambda_ecr.lo, c.pbt.lambda_ecr.hi}));
    RTE_FIELD("pbt", "n_star", "list", "N* range (integers)",
              ([&] {
                const auto d = to_ints(v);
                if (d.size() != 2) throw std::invalid_argument("expected 'min, max'");
                c.pbt.n_star_min = d[0];
                c.pbt.n_star_max = d[1];
              }()),
              join(std::vector<int>{c.pbt.n_star_min, c.pbt.n_star_max}));
    RTE_FIELD("pbt", "validation_fraction", "float", "held-out noisy split for fitness",
              c.pbt.validation_fraction = to_double(v), num(c.pbt.validation_fraction));
    RTE_FIELD("pbt", "threads", "int", "worker threads (0: hardware)", c.pbt.threads = static_cast<int>(to_integer(v)),
              std::to_string(c.pbt.threads));
    RTE_FIELD("pbt", "mode", "barrier|asynchronous", "synchronization",
              c.pbt.mode = one_of(v, {"barrier", "asynchronous"}) == "barrier" ? PbtMode::barrier : PbtMode::asynchronous,
              c.pbt.mode == PbtMode::barrier ? "barrier" : "asynchronous");
    RTE_FIELD("pbt", "seed", "int", "population seed", c.pbt.seed = to_unsigned(v), std::to_string(c.pbt.seed));
    return fields;
  }();
  return fields_;
}

#undef RTE_FIELD

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : schema())
    if (f.info.section == section && f.info.key == key) return &f;
  return nullptr;
}

bool known_section(const std::string& section) {
  for (const auto& f : schema())
    if (f.info.section == section) return true;
  return false;
}

ExperimentConfig from_entries(const std::vector<std::tuple<std::string, std::string, std::string>>& entries) {
  ExperimentConfig cfg;
  std::vector<std::string> problems;
  for (const auto& [section, key, value] : entries) {
    const std::string path = section + "." + key;
    if (!known_section(section)) {
      problems.push_back(path + ": unknown section '" + section + "'");
      continue;
    }
    const Field* f = find_field(section, key);
    if (!f) {
      problems.push_back(path + ": unknown key '" + key + "'");
      continue;
    }
    try {
      f->set(cfg, value);
    } catch (const std::exception& e) {
      problems.push_back(path + ": " + e.what());
    }
  }
  if (!problems.empty()) throw ConfigError(problems);
  cfg.sync_shapes();
  cfg.validate();
  return cfg;
}

}  // namespace

void ExperimentConfig::sync_shapes() {
  train.arch.input = data.synthetic.shape;
  train.arch.classes = data.synthetic.classes;
}

void ExperimentConfig::validate() const {
  std::vector<std::string> problems;
  auto check = [&](const std::string& where, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.push_back(where + ": " + e.what());
    }
  };
  static const std::vector<std::string> order{"generate", "corrupt", "train", "pbt", "eval"};
  int last = -1;
  bool trains = false;
  for (const auto& s : stages) {
    const auto it = std::find(order.begin(), order.end(), s);
    if (it == order.end()) {
      problems.push_back("experiment.stages: unknown stage '" + s + "'");
      continue;
    }
    const int pos = static_cast<int>(it - order.begin());
    if (pos <= last) problems.push_back("experiment.stages: '" + s + "' is out of order or repeated");
    last = std::max(last, pos);
    trains = trains || s == "train" || s == "pbt";
  }
  if (std::count(stages.begin(), stages.end(), "train") && std::count(stages.begin(), stages.end(), "pbt"))
    problems.push_back("experiment.stages: train and pbt are alternatives");
  if (std::count(stages.begin(), stages.end(), "eval") && !trains)
    problems.push_back("experiment.stages: eval needs a train or pbt stage");
  if (data.source == "synthetic")
    check("data", [&] { data.synthetic.validate(); });
  else if (data.path.empty())
    problems.push_back("data.path: required when data.source = file");
  if (data.source == "synthetic" && data.test_samples < 1) problems.push_back("data.test_samples: must be positive");
  check("noise", [&] {
    if (data.source == "synthetic") (void)noise.transition(data.synthetic.classes);
  });
  check("train", [&] { train.validate(); });
  if (std::count(stages.begin(), stages.end(), "pbt")) check("pbt", [&] { pbt.validate(); });
  if (eval.calibration_bins < 2) problems.push_back("eval.calibration_bins: must be >= 2");
  if (eval.histogram_bins < 1) problems.push_back("eval.histogram_bins: must be >= 1");
  if (!problems.empty()) throw ConfigError(problems);
}

std::vector<ConfigField> config_schema() {
  std::vector<ConfigField> out;
  for (const auto& f : schema()) out.push_back(f.info);
  return out;
}

ExperimentConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError({"line " + std::to_string(e.line()) + ": " + e.message()});
  }
  std::vector<std::tuple<std::string, std::string, std::string>> entries;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      entries.emplace_back("", section, body.data());
      continue;
    }
    for (const auto& [key, value] : body) entries.emplace_back(section, key, value.data());
  }
  return from_entries(entries);
}

ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path.string() + ": cannot open"});
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError({path.string() + ": " + e.what()});
    }
    return experiment_config_from_json(j.contains("config") ? j.at("config") : j);
  }
  return parse_config(in);
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::string out, section;
  for (const auto& f : schema()) {
    if (f.info.section != section) {
      if (!section.empty()) out += "\n";
      section = f.info.section;
      out += "[" + section + "]\n";
    }
    out += f.info.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : schema()) j[f.info.section][f.info.key] = f.get(cfg);
  return j;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  std::vector<std::tuple<std::string, std::string, std::string>> entries;
  if (!j.is_object()) throw ConfigError({"config: expected an object of sections"});
  for (const auto& [section, body] : j.items()) {
    if (!body.is_object()) {
      entries.emplace_back(section, "", "");
      continue;
    }
    for (const auto& [key, value] : body.items())
      entries.emplace_back(section, key, value.is_string() ? value.get<std::string>() : value.dump());
  }
  return from_entries(entries);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(to_ini(cfg)); }

FeatureShape parse_shape(const std::string& text) { return to_shape(text); }

std::string format_shape(const FeatureShape& shape) { return shape_string(shape); }

}  // namespace rte
