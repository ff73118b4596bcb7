#include "rte/trainer.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace rte {

double cosine_lr(std::uint64_t k, std::uint64_t total, double lr0, double fraction) {
  if (k > total) throw std::out_of_range("cosine_lr: step " + std::to_string(k) + " beyond total " + std::to_string(total));
  if (total == 0) return lr0;
  return lr0 * std::cos(fraction * std::numbers::pi * static_cast<double>(k) / static_cast<double>(total));
}

double q_schedule(std::uint64_t k, std::uint64_t total, double peak, double fraction) {
  if (k > total) throw std::out_of_range("q_schedule: step beyond total");
  if (total == 0) return std::max(kMinScheduledQ, peak);
  const double q = peak * std::sin(fraction * std::numbers::pi * static_cast<double>(k) / static_cast<double>(total));
  return std::max(kMinScheduledQ, q);
}

double LrSchedule::value(std::uint64_t k, std::uint64_t total, double lr0, std::uint64_t steps_per_epoch) const {
  switch (kind) {
    case LrScheduleKind::cosine: return cosine_lr(std::min(k, total), total, lr0, fraction);
    case LrScheduleKind::constant: return lr0;
    case LrScheduleKind::step: {
      const double epoch = steps_per_epoch ? static_cast<double>(k) / static_cast<double>(steps_per_epoch) : 0.0;
      double lr = lr0;
      for (double m : milestones)
        if (epoch >= m) lr *= gamma;
      return lr;
    }
    case LrScheduleKind::exp_decay: {
      const double base = decay_base > 0.0 ? decay_base : std::pow(10.0, -3.0 / static_cast<double>(std::max<std::uint64_t>(total, 1)));
      return lr0 * std::pow(base, static_cast<double>(k));
    }
  }
  return lr0;
}

double QSchedule::value(std::uint64_t k, std::uint64_t total) const {
  if (kind == QScheduleKind::constant) return q;
  return q_schedule(std::min(k, total), total, peak, fraction);
}

void TrainConfig::validate() const {
  arch.validate();
  loss.validate();
  augment.validate();
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(base_lr > 0.0)) throw std::invalid_argument("base_lr must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be nonnegative");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw std::invalid_argument("ema_decay must be in [0, 1]");
  if (ecr_batch_size < 0) throw std::invalid_argument("ecr_batch_size must be nonnegative");
  if (q_schedule.kind == QScheduleKind::constant) validate_q(q_schedule.q);
  else if (!(q_schedule.peak > 0.0 && q_schedule.peak <= 1.0)) throw std::invalid_argument("q peak must be in (0, 1]");
}

namespace {

std::string lr_kind_name(LrScheduleKind k) {
  switch (k) {
    case LrScheduleKind::cosine: return "cosine";
    case LrScheduleKind::step: return "step";
    case LrScheduleKind::constant: return "constant";
    case LrScheduleKind::exp_decay: return "exp_decay";
  }
  return "?";
}

LrScheduleKind parse_lr_kind(const std::string& s) {
  if (s == "cosine") return LrScheduleKind::cosine;
  if (s == "step") return LrScheduleKind::step;
  if (s == "constant") return LrScheduleKind::constant;
  if (s == "exp_decay") return LrScheduleKind::exp_decay;
  throw std::invalid_argument("unknown lr schedule '" + s + "' (cosine|step|constant|exp_decay)");
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
  return {{"arch", to_json(c.arch)},
          {"ema_decay", c.ema_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"base_lr", c.base_lr},
          {"lr_schedule",
           {{"kind", lr_kind_name(c.lr_schedule.kind)},
            {"fraction", c.lr_schedule.fraction},
            {"milestones", c.lr_schedule.milestones},
            {"gamma", c.lr_schedule.gamma},
            {"decay_base", c.lr_schedule.decay_base}}},
          {"momentum", c.momentum},
          {"nesterov", c.nesterov},
          {"weight_decay", c.weight_decay},
          {"decay_biases", c.decay_biases},
          {"q_schedule",
           {{"kind", c.q_schedule.kind == QScheduleKind::constant ? "constant" : "sine"},
            {"q", c.q_schedule.q},
            {"peak", c.q_schedule.peak},
            {"fraction", c.q_schedule.fraction}}},
          {"loss", to_json(c.loss)},
          {"augment", to_json(c.augment)},
          {"ecr_batch_size", c.ecr_batch_size},
          {"checkpoint_interval", c.checkpoint_interval},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.arch = arch_from_json(j.at("arch"));
  c.ema_decay = j.at("ema_decay");
  c.batch_size = j.at("batch_size");
  c.epochs = j.at("epochs");
  c.base_lr = j.at("base_lr");
  const auto& lr = j.at("lr_schedule");
  c.lr_schedule.kind = parse_lr_kind(lr.at("kind"));
  c.lr_schedule.fraction = lr.at("fraction");
  c.lr_schedule.milestones = lr.at("milestones").get<std::vector<double>>();
  c.lr_schedule.gamma = lr.at("gamma");
  c.lr_schedule.decay_base = lr.at("decay_base");
  c.momentum = j.at("momentum");
  c.nesterov = j.at("nesterov");
  c.weight_decay = j.at("weight_decay");
  c.decay_biases = j.at("decay_biases");
  const auto& q = j.at("q_schedule");
  c.q_schedule.kind = q.at("kind") == "constant" ? QScheduleKind::constant : QScheduleKind::sine;
  c.q_schedule.q = q.at("q");
  c.q_schedule.peak = q.at("peak");
  c.q_schedule.fraction = q.at("fraction");
  c.loss = loss_config_from_json(j.at("loss"));
  c.augment = augment_spec_from_json(j.at("augment"));
  c.ecr_batch_size = j.at("ecr_batch_size");
  c.checkpoint_interval = j.at("checkpoint_interval");
  c.seed = j.at("seed");
  c.validate();
  return c;
}

OptimizerState init_optimizer(const ModelState& model, std::uint64_t total_steps) {
  OptimizerState opt;
  for (const auto& p : model.student) opt.velocity.push_back(MatrixR::Zero(p.rows(), p.cols()));
  opt.total_steps = total_steps;
  return opt;
}

void sgd_step(ModelState& model, OptimizerState& opt, const ParamSet& grads, const SgdParams& p) {
  if (grads.size() != model.student.size() || opt.velocity.size() != model.student.size())
    throw std::invalid_argument("sgd_step: gradient/parameter count mismatch");
  const auto layout = param_layout(model.arch);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].rows() != model.student[i].rows() || grads[i].cols() != model.student[i].cols())
      throw std::invalid_argument("sgd_step: gradient shape mismatch for " + layout[i].name);
    if (!grads[i].allFinite())
      throw std::runtime_error("sgd_step: non-finite gradient in " + layout[i].name + " at step " + std::to_string(opt.step));
  }
  const auto lr = static_cast<Real>(p.lr);
  const auto beta = static_cast<Real>(p.momentum);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    MatrixR g = grads[i];
    if (p.weight_decay > 0.0 && (p.decay_biases || !layout[i].is_bias))
      g += static_cast<Real>(p.weight_decay) * model.student[i];
    MatrixR& v = opt.velocity[i];
    v = beta * v - lr * g;
    if (p.nesterov)
      model.student[i] += beta * v - lr * g;
    else
      model.student[i] += v;
  }
  ++opt.step;
  ema_update(model);
}

nlohmann::json to_json(const Hyperparams& h) {
  return {{"lr", h.lr}, {"weight_decay", h.weight_decay}, {"q", h.q},
          {"lambda_jsd", h.lambda_jsd}, {"lambda_ecr", h.lambda_ecr}, {"n_star", h.n_star}};
}

Hyperparams hyperparams_from_json(const nlohmann::json& j) {
  return {j.at("lr"), j.at("weight_decay"), j.at("q"), j.at("lambda_jsd"), j.at("lambda_ecr"), j.at("n_star")};
}

void apply_hyperparams(TrainConfig& cfg, const Hyperparams& h) {
  cfg.base_lr = h.lr;
  cfg.lr_schedule.kind = LrScheduleKind::constant;
  cfg.weight_decay = h.weight_decay;
  cfg.q_schedule.kind = QScheduleKind::constant;
  cfg.q_schedule.q = h.q;
  cfg.loss.q = h.q;
  cfg.loss.lambda_jsd = h.lambda_jsd;
  cfg.loss.lambda_ecr = h.lambda_ecr;
  cfg.loss.n_star = h.n_star;
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr std::array<char, 8> kCheckpointMagic{'R', 'T', 'E', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint truncated");
  return v;
}

void put_params(std::ostream& os, const ParamSet& ps) {
  put(os, static_cast<std::uint64_t>(ps.size()));
  for (const auto& p : ps) {
    put(os, static_cast<std::uint64_t>(p.rows()));
    put(os, static_cast<std::uint64_t>(p.cols()));
    for (Eigen::Index i = 0; i < p.size(); ++i) put(os, static_cast<double>(p.data()[i]));
  }
}

ParamSet get_params(std::istream& is) {
  ParamSet ps(get<std::uint64_t>(is));
  for (auto& p : ps) {
    const auto r = get<std::uint64_t>(is);
    const auto c = get<std::uint64_t>(is);
    p.resize(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<Real>(get<double>(is));
  }
  return ps;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  const nlohmann::json meta{{"arch", to_json(c.model.arch)},
                            {"ema_decay", c.model.ema_decay},
                            {"model_step", c.model.step},
                            {"optimizer_step", c.optimizer.step},
                            {"total_steps", c.optimizer.total_steps},
                            {"record", c.record}};
  const std::string text = meta.dump();
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  put(os, kCheckpointVersion);
  put(os, static_cast<std::uint64_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_params(os, c.model.student);
  put_params(os, c.model.teacher);
  put_params(os, c.optimizer.velocity);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kCheckpointMagic) throw std::runtime_error(path.string() + " is not a checkpoint");
  if (const auto v = get<std::uint32_t>(is); v != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(v));
  std::string text(get<std::uint64_t>(is), '\0');
  is.read(text.data(), static_cast<std::streamsize>(text.size()));
  const auto meta = nlohmann::json::parse(text);
  Checkpoint c;
  c.model.arch = arch_from_json(meta.at("arch"));
  c.model.ema_decay = meta.at("ema_decay");
  c.model.step = meta.at("model_step");
  c.optimizer.step = meta.at("optimizer_step");
  c.optimizer.total_steps = meta.at("total_steps");
  c.record = meta.at("record");
  c.model.student = get_params(is);
  c.model.teacher = get_params(is);
  c.optimizer.velocity = get_params(is);
  const auto layout = param_layout(c.model.arch);
  if (c.model.student.size() != layout.size() || c.model.teacher.size() != layout.size() ||
      c.optimizer.velocity.size() != layout.size())
    throw std::runtime_error("checkpoint tensors do not match its architecture");
  return c;
}

void write_metrics_csv(std::ostream& os, const std::vector<StepMetrics>& rows) {
  os << "step,L_q,JSD,ECR,total\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(r.step), r.loss.gce,
                  r.loss.jsd, r.loss.ecr, r.loss.total);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const LabeledDataset& data, TrainConfig cfg)
    : data_(data), cfg_(std::move(cfg)), augmenter_(cfg_.augment, data.shape) {
  cfg_.validate();
  data_.validate();
  if (cfg_.arch.input.size() != data_.shape.size())
    throw std::invalid_argument("architecture input size " + std::to_string(cfg_.arch.input.size()) +
                                " does not match dataset features " + std::to_string(data_.shape.size()));
  if (cfg_.arch.classes != data_.classes) throw std::invalid_argument("architecture class count differs from dataset");
  if (static_cast<std::size_t>(cfg_.batch_size) > data_.size())
    throw std::invalid_argument("batch_size exceeds dataset size");
  steps_per_epoch_ = data_.size() / static_cast<std::size_t>(cfg_.batch_size);
  model_ = init_model(cfg_.arch, cfg_.seed, cfg_.ema_decay);
  opt_ = init_optimizer(model_, steps_per_epoch_ * static_cast<std::uint64_t>(cfg_.epochs));
  layout_ = param_layout(cfg_.arch);
}

Trainer::Trainer(const LabeledDataset& data, TrainConfig cfg, Checkpoint resume) : Trainer(data, std::move(cfg)) {
  if (resume.model.student.size() != model_.student.size())
    throw std::invalid_argument("checkpoint architecture does not match the configuration");
  for (std::size_t i = 0; i < model_.student.size(); ++i)
    if (resume.model.student[i].rows() != model_.student[i].rows() || resume.model.student[i].cols() != model_.student[i].cols())
      throw std::invalid_argument("checkpoint tensor " + layout_[i].name + " has the wrong shape");
  model_ = std::move(resume.model);
  opt_ = std::move(resume.optimizer);
}

void Trainer::set_config(TrainConfig cfg) {
  cfg.validate();
  if (cfg.batch_size != cfg_.batch_size || cfg.arch.input.size() != cfg_.arch.input.size())
    throw std::invalid_argument("set_config cannot change batch size or architecture");
  model_.ema_decay = cfg.ema_decay;
  cfg_ = std::move(cfg);
  augmenter_ = Augmenter(cfg_.augment, data_.shape);
}

std::vector<std::size_t> Trainer::task_batch(std::uint64_t k) const {
  const std::uint64_t epoch = k / steps_per_epoch_;
  if (epoch != cached_epoch_) {
    cached_order_.resize(data_.size());
    std::iota(cached_order_.begin(), cached_order_.end(), 0);
    auto rng = Rng::stream(cfg_.seed, 0x5A0FF1E, epoch);
    rng.shuffle(std::span<std::size_t>(cached_order_));
    cached_epoch_ = epoch;
  }
  const std::size_t b = static_cast<std::size_t>(cfg_.batch_size);
  const std::size_t offset = static_cast<std::size_t>(k % steps_per_epoch_) * b;
  return {cached_order_.begin() + static_cast<std::ptrdiff_t>(offset),
          cached_order_.begin() + static_cast<std::ptrdiff_t>(offset + b)};
}

std::vector<std::size_t> Trainer::ecr_batch(std::uint64_t k) const {
  const std::size_t size = static_cast<std::size_t>(cfg_.ecr_batch_size > 0 ? cfg_.ecr_batch_size : cfg_.batch_size);
  std::vector<std::size_t> idx;
  auto rng = Rng::stream(cfg_.seed, 0xECB, k);
  if (size <= data_.size()) {
    // Partial Fisher-Yates: a uniform subset without replacement.
    std::vector<std::size_t> all(data_.size());
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < size; ++i) std::swap(all[i], all[i + rng.below(all.size() - i)]);
    idx.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(size));
  } else {
    for (std::size_t i = 0; i < size; ++i) idx.push_back(rng.below(data_.size()));
  }
  return idx;
}

StepMetrics Trainer::step() {
  if (done()) throw std::logic_error("training already finished");
  const std::uint64_t k = opt_.step;
  const std::uint64_t total = opt_.total_steps;
  LossConfig loss = cfg_.loss;
  loss.q = cfg_.q_schedule.value(k, total);
  const double lr = cfg_.lr_schedule.value(k, total, cfg_.base_lr, steps_per_epoch_);

  auto task = task_batch(k);
  std::vector<std::size_t> ecr = loss.batch_sync ? task : ecr_batch(k);
  RteInputs in = make_rte_inputs(data_, std::move(task), std::move(ecr), loss, augmenter_, cfg_.seed, k);
  if (hook_) hook_({k, &in.task_indices, &in.ecr_indices});

  Graph<Real> g;
  RteTerms terms = rte_total(g, in, model_, loss, splitmix64(cfg_.seed ^ (k * 0x9E37ULL)));
  g.backward(terms.total);
  ParamSet grads;
  grads.reserve(terms.student.size());
  for (const auto& v : terms.student) grads.push_back(v.grad());

  sgd_step(model_, opt_, grads, {lr, cfg_.momentum, cfg_.weight_decay, cfg_.nesterov, cfg_.decay_biases});

  StepMetrics m{k, lr, loss.q, breakdown(terms)};
  metrics_.push_back(m);
  if (checkpoint_dir_ && cfg_.checkpoint_interval > 0 && opt_.step % cfg_.checkpoint_interval == 0)
    save_checkpoint(*checkpoint_dir_ / ("step_" + std::to_string(opt_.step) + ".ckpt"), checkpoint());
  return m;
}

void Trainer::run_steps(std::uint64_t n) {
  for (std::uint64_t i = 0; i < n && !done(); ++i) step();
}

void Trainer::run_epochs(int n) { run_steps(static_cast<std::uint64_t>(n) * steps_per_epoch_); }

void Trainer::run() {
  while (!done()) step();
}

Checkpoint Trainer::checkpoint() const { return {model_, opt_, {{"train_config", to_json(cfg_)}}}; }

TrainResult train(const LabeledDataset& data, const TrainConfig& cfg) {
  Trainer t(data, cfg);
  t.run();
  return {t.model(), t.optimizer(), t.metrics()};
}

}  // namespace rte
