#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rte/augment.hpp"
#include "rte/dataset.hpp"
#include "rte/model.hpp"
#include "rte/objective.hpp"

namespace rte {

/// lr0 * cos(fraction * pi * k / K).
double cosine_lr(std::uint64_t k, std::uint64_t total, double lr0, double fraction = 7.0 / 16.0);

/// Floor applied to the sinusoidal q schedule so that q stays in (0, 1].
inline constexpr double kMinScheduledQ = 1e-3;

/// max(kMinScheduledQ, peak * sin(fraction * pi * k / K)).
double q_schedule(std::uint64_t k, std::uint64_t total, double peak = 0.6, double fraction = 13.0 / 16.0);

enum class LrScheduleKind { cosine, step, constant, exp_decay };

struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::cosine;
  double fraction = 7.0 / 16.0;       // cosine
  std::vector<double> milestones;     // step: epochs at which lr is multiplied by gamma
  double gamma = 0.1;                 // step
  double decay_base = 0.0;            // exp_decay: lr0 * base^k; 0 picks 10^(-3/K)

  double value(std::uint64_t k, std::uint64_t total, double lr0, std::uint64_t steps_per_epoch) const;
};

enum class QScheduleKind { constant, sine };

struct QSchedule {
  QScheduleKind kind = QScheduleKind::sine;
  double q = 0.7;  // constant
  double peak = 0.6;
  double fraction = 13.0 / 16.0;

  double value(std::uint64_t k, std::uint64_t total) const;
};

struct TrainConfig {
  ArchSpec arch;
  double ema_decay = 0.99;
  int batch_size = 128;
  int epochs = 10;
  double base_lr = 0.03;
  LrSchedule lr_schedule;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-3;
  bool decay_biases = false;
  QSchedule q_schedule;
  LossConfig loss;
  AugmentSpec augment;
  int ecr_batch_size = 0;  // non-synchronized ECR batch; 0 means batch_size
  std::uint64_t checkpoint_interval = 0;  // steps; 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct OptimizerState {
  ParamSet velocity;
  std::uint64_t step = 0;
  std::uint64_t total_steps = 0;
};

OptimizerState init_optimizer(const ModelState& model, std::uint64_t total_steps);

struct SgdParams {
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool nesterov = true;
  bool decay_biases = false;
};

/// Nesterov SGD with weight decay (biases excluded unless decay_biases):
///   g' = g + wd * theta;  v <- beta v - lr g';  theta <- theta + beta v - lr g'
/// followed by the EMA teacher update. Non-finite gradients abort the step
/// with std::runtime_error before anything is modified.
void sgd_step(ModelState& model, OptimizerState& opt, const ParamSet& grads, const SgdParams& p);

/// PBT-searchable hyperparameters.
struct Hyperparams {
  double lr = 0.03;
  double weight_decay = 1e-3;
  double q = 0.7;
  double lambda_jsd = 12.0;
  double lambda_ecr = 1.0;
  int n_star = 10;

  bool operator==(const Hyperparams&) const = default;
};

nlohmann::json to_json(const Hyperparams& h);
Hyperparams hyperparams_from_json(const nlohmann::json& j);

/// Replaces lr, weight decay, q and the loss weights with constants.
void apply_hyperparams(TrainConfig& cfg, const Hyperparams& h);

/// Model, optimizer and hyperparameter record; everything needed to resume.
struct Checkpoint {
  ModelState model;
  OptimizerState optimizer;
  nlohmann::json record;
};

/// Binary container: magic "RTECKPT\0", u32 version, u64 JSON length, JSON
/// metadata (architecture, steps, EMA decay, record), then the student,
/// teacher and velocity tensors as (u64 rows, u64 cols, f64 data).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct StepMetrics {
  std::uint64_t step = 0;
  double lr = 0.0;
  double q = 0.0;
  RteBreakdown loss;
};

/// CSV with header "step,L_q,JSD,ECR,total" and round-trip precision.
void write_metrics_csv(std::ostream& os, const std::vector<StepMetrics>& rows);

/// Sample indices consumed by one step; exposed for instrumentation.
struct StepTrace {
  std::uint64_t step = 0;
  const std::vector<std::size_t>* task_indices = nullptr;
  const std::vector<std::size_t>* ecr_indices = nullptr;
};

class Trainer {
 public:
  Trainer(const LabeledDataset& data, TrainConfig cfg);
  Trainer(const LabeledDataset& data, TrainConfig cfg, Checkpoint resume);

  std::uint64_t steps_per_epoch() const { return steps_per_epoch_; }
  std::uint64_t total_steps() const { return opt_.total_steps; }
  std::uint64_t step_index() const { return opt_.step; }
  bool done() const { return opt_.step >= opt_.total_steps; }

  StepMetrics step();
  void run_steps(std::uint64_t n);
  void run_epochs(int n);
  void run();

  const ModelState& model() const { return model_; }
  ModelState& model() { return model_; }
  const OptimizerState& optimizer() const { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<StepMetrics>& metrics() const { return metrics_; }

  /// Changes hyperparameters between steps (PBT); shapes must not change.
  void set_config(TrainConfig cfg);
  void set_step_hook(std::function<void(const StepTrace&)> hook) { hook_ = std::move(hook); }
  void set_checkpoint_dir(std::filesystem::path dir) { checkpoint_dir_ = std::move(dir); }

  Checkpoint checkpoint() const;

 private:
  std::vector<std::size_t> task_batch(std::uint64_t k) const;
  std::vector<std::size_t> ecr_batch(std::uint64_t k) const;

  const LabeledDataset& data_;
  TrainConfig cfg_;
  Augmenter augmenter_;
  ModelState model_;
  OptimizerState opt_;
  std::vector<ParamInfo> layout_;
  std::uint64_t steps_per_epoch_ = 0;
  std::vector<StepMetrics> metrics_;
  std::function<void(const StepTrace&)> hook_;
  std::optional<std::filesystem::path> checkpoint_dir_;
  mutable std::uint64_t cached_epoch_ = ~0ULL;
  mutable std::vector<std::size_t> cached_order_;
};

struct TrainResult {
  ModelState model;
  OptimizerState optimizer;
  std::vector<StepMetrics> metrics;
};

TrainResult train(const LabeledDataset& data, const TrainConfig& cfg);

}  // namespace rte
