#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rte/augment.hpp"
#include "rte/dataset.hpp"
#include "rte/loss.hpp"
#include "rte/model.hpp"

namespace rte {

enum class PseudoLabelStrategy { ema_teacher, label_guessing, augmentation_anchoring };
enum class TeacherPreprocess { raw, weak };

PseudoLabelStrategy parse_strategy(const std::string& name);
std::string to_string(PseudoLabelStrategy s);

/// Weights and switches of the combined objective
///   L = mean GCE + lambda_jsd * JSD + lambda_ecr * ECR.
struct LossConfig {
  double q = 0.7;
  double lambda_jsd = 12.0;
  double lambda_ecr = 1.0;
  int n_star = 10;
  PseudoLabelStrategy strategy = PseudoLabelStrategy::ema_teacher;
  int k = 2;                  // views for label guessing / augmentation anchoring
  bool sharpen = false;       // sharpen EMA-teacher targets (ablation)
  double temperature = 0.5;   // sharpening temperature
  bool use_ema = true;        // false: targets come from the student, stop-gradient
  bool batch_sync = true;     // ECR/JSD reuse the task batch
  EcrNorm ecr_norm = EcrNorm::squared;
  TeacherPreprocess teacher_preprocess = TeacherPreprocess::weak;

  void validate() const;
  /// Number of augmented student predictions in the ECR term.
  int ecr_terms() const { return strategy == PseudoLabelStrategy::augmentation_anchoring ? k : n_star; }
};

nlohmann::json to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j);

/// Materialized inputs for one optimization step.
struct RteInputs {
  std::vector<std::size_t> task_indices;
  std::vector<int> labels;  // training (noisy) labels of the task batch
  MatrixR task;             // weakly augmented task batch

  std::vector<std::size_t> ecr_indices;
  MatrixR target_input;             // raw or weak view fed to the target model
  std::vector<MatrixR> guess_views;  // label guessing: k weak views
  std::vector<MatrixR> ecr_views;    // strong views for the ECR term
  std::array<MatrixR, 2> jsd_views;  // strong views for the JSD term
};

/// Draws every augmentation for a step. Streams are keyed by
/// (seed, step, sample index, term), so the result does not depend on
/// batch composition order elsewhere.
RteInputs make_rte_inputs(const LabeledDataset& data, std::vector<std::size_t> task_indices,
                          std::vector<std::size_t> ecr_indices, const LossConfig& cfg, const Augmenter& augmenter,
                          std::uint64_t seed, std::uint64_t step);

struct RteTerms {
  Var<Real> total;
  Var<Real> gce;
  Var<Real> jsd;
  Var<Real> ecr;
  std::vector<Var<Real>> student;
  std::vector<Var<Real>> teacher;
};

struct RteBreakdown {
  double gce = 0.0;
  double jsd = 0.0;
  double ecr = 0.0;
  double total = 0.0;
};

/// Builds the combined objective into `g`. Student parameters are graph
/// parameters, and so are teacher parameters, whose gradient is exactly
/// zero (targets pass through stop_gradient). Target models always run in eval mode. Terms whose
/// weight is zero are not built and read as 0.
RteTerms rte_total(Graph<Real>& g, const RteInputs& in, const ModelState& model, const LossConfig& cfg,
                   std::uint64_t dropout_seed);

RteBreakdown breakdown(const RteTerms& t);

/// Pseudo-label targets for a batch under the configured strategy
/// (ema_teacher: teacher prediction; label_guessing: sharpened mean of k
/// student predictions on weak views; augmentation_anchoring: sharpened
/// prediction on one weak view).
MatrixR pseudo_label_target(const LossConfig& cfg, const MatrixR& x, const ModelState& model, const Augmenter& augmenter,
                            Rng& rng);

}  // namespace rte
