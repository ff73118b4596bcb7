#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rte/dataset.hpp"
#include "rte/rng.hpp"
#include "rte/trainer.hpp"

namespace rte {

struct Range {
  double lo = 0.0;
  double hi = 1.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  double clamp(double v) const { return std::min(hi, std::max(lo, v)); }
};

enum class PbtMode { barrier, asynchronous };

struct PbtConfig {
  int population = 35;
  int interval_epochs = 2;
  double resample_probability = 0.25;
  double perturb_lo = 0.8;
  double perturb_hi = 1.2;
  double exploit_quantile = 0.25;  // bottom and top fraction for truncation selection

  Range lr{1e-5, 0.1};
  Range weight_decay{5e-5, 0.002};
  Range q{0.0, 1.0};
  Range lambda_jsd{0.0, 20.0};
  Range lambda_ecr{0.0, 5.0};
  int n_star_min = 3;
  int n_star_max = 10;

  double validation_fraction = 0.1;  // held-out noisy split used as fitness
  int threads = 0;                   // 0: hardware concurrency
  PbtMode mode = PbtMode::barrier;
  std::uint64_t seed = 0;

  void validate() const;
  bool in_range(const Hyperparams& h) const;
};

nlohmann::json to_json(const PbtConfig& c);
PbtConfig pbt_config_from_json(const nlohmann::json& j);

inline constexpr std::array<const char*, 6> kHyperparamNames{"lr", "weight_decay", "q", "lambda_jsd", "lambda_ecr",
                                                             "n_star"};

Hyperparams sample_hyperparams(const PbtConfig& cfg, Rng& rng);

/// Which hyperparameters were resampled (index order as kHyperparamNames).
struct ExploreTrace {
  std::array<bool, 6> resampled{};
};

/// Per hyperparameter: resample with the configured probability, otherwise
/// multiply by w ~ U(perturb_lo, perturb_hi) and clamp to the range. N*
/// steps to a neighbouring value instead of being multiplied.
Hyperparams explore(const Hyperparams& h, const PbtConfig& cfg, Rng& rng, ExploreTrace* trace = nullptr);

/// Truncation selection. `fitness[i]` is empty for dead members, which are
/// never donors and never inherit. Returns the donor for each member, or
/// nothing. A member inherits only when its fitness is strictly below every
/// member of the top quantile.
std::vector<std::optional<std::size_t>> exploit(std::span<const std::optional<double>> fitness, double quantile, Rng& rng);

struct ScheduleEntry {
  int epoch = 0;
  Hyperparams hyperparams;
};

struct PbtMember {
  int id = 0;
  Hyperparams hyperparams;
  std::shared_ptr<const Checkpoint> checkpoint;
  std::vector<double> fitness;
  std::vector<ScheduleEntry> schedule;
  std::vector<int> inherited_from;  // donor id per round, -1 when none
  bool dead = false;
  std::string error;
};

std::vector<PbtMember> sample_initial_population(const PbtConfig& cfg, std::uint64_t seed);

struct PbtResult {
  std::vector<PbtMember> members;
  int best = -1;
  double best_fitness = 0.0;
  ModelState best_model;
  /// Median fitness across the population after the first interval.
  double initial_median_fitness = 0.0;
};

/// Trains the population in interval slices on a training split; fitness is
/// teacher accuracy against the noisy labels of the validation split. The
/// template's epochs set the total length; its lr and q schedules are
/// replaced by the member constants.
PbtResult run_pbt(const TrainConfig& base, const PbtConfig& cfg, const LabeledDataset& data);

/// CSV "epoch,member,lr,wd,q,lambda_jsd,lambda_ecr,n_star".
void write_schedule_csv(std::ostream& os, const std::vector<PbtMember>& members);
/// CSV "round,member,fitness,donor".
void write_fitness_csv(std::ostream& os, const std::vector<PbtMember>& members);

}  // namespace rte
