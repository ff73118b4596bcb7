#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rte/dataset.hpp"

namespace rte {

/// Relative corruption probabilities c_jk: zero diagonal, entries in [0, 1],
/// each row summing to 1 or, for classes that are never corrupted, to 0.
struct ConfusionMatrix {
  Eigen::MatrixXd c;

  int classes() const { return static_cast<int>(c.rows()); }
  void validate(double tolerance = 1e-9) const;
};

/// Per-class corruption intensity p_j in [0, 1].
struct IntensityVector {
  Eigen::VectorXd p;

  static IntensityVector uniform(int classes, double ratio);
  void validate() const;
};

/// Row-stochastic f_jk = P(noisy label k | true label j).
struct TransitionMatrix {
  Eigen::MatrixXd f;

  int classes() const { return static_cast<int>(f.rows()); }
  void validate(double tolerance = 1e-9) const;
};

enum class NoiseStructure { symmetric, pairflip, resnet_confusion };

NoiseStructure parse_noise_structure(const std::string& name);
std::string to_string(NoiseStructure s);

inline const std::vector<std::string>& cifar10_class_names() {
  static const std::vector<std::string> names{"AIRPLANE", "AUTOMOBILE", "BIRD",  "CAT",  "DEER",
                                              "DOG",      "FROG",       "HORSE", "SHIP", "TRUCK"};
  return names;
}

/// Off-diagonals 1/(m-1).
ConfusionMatrix build_symmetric_confusion(int classes);

/// Fixed 10-class pair flips: BIRD->AIRPLANE, CAT->DOG, DEER->HORSE,
/// DOG->CAT, TRUCK->AUTOMOBILE; all other rows zero.
ConfusionMatrix build_pairflip_confusion();

/// The published 10-class confusion of a shallow CIFAR-10 classifier, as
/// printed (4 decimals, rows sum to 1 only within rounding).
ConfusionMatrix resnet_confusion_published();

/// resnet_confusion_published() with each row renormalized to sum to 1.
ConfusionMatrix build_resnet_confusion();

ConfusionMatrix build_confusion(NoiseStructure s, int classes);

/// F = diag(P) C + diag(1 - P) I.
TransitionMatrix build_transition(const IntensityVector& p, const ConfusionMatrix& c);

/// The flawed scheme that draws corrupted labels from all m classes,
/// including the true one: F = diag(P) J/m + diag(1 - P) I.
TransitionMatrix build_legacy_inclusive_transition(const IntensityVector& p);

/// Samples every noisy label independently from row F[true label]. The
/// draw for sample i depends only on (seed, i), so the result is a pure
/// function of (dataset, F, seed).
LabeledDataset corrupt_labels(const LabeledDataset& ds, const TransitionMatrix& f, std::uint64_t seed);

struct ClassStatisticsRow {
  int label = 0;
  std::size_t samples = 0;  // samples carrying this noisy label
  double share = 0.0;       // samples / n
  std::size_t correct = 0;  // of those, how many are truly this class
  double correct_fraction = 0.0;
};

struct ClassStatistics {
  std::vector<ClassStatisticsRow> rows;
  ClassStatisticsRow total;
};

ClassStatistics class_statistics(const LabeledDataset& ds);

/// Expected number of samples of true class j labelled k: n_j * f_jk.
Eigen::MatrixXd expected_label_counts(const TransitionMatrix& f, const std::vector<std::size_t>& class_counts);

double effective_noise_ratio(const LabeledDataset& ds);

/// Everything needed to regenerate a noisy label set; stored as a JSON
/// sidecar next to the binary dataset.
struct NoiseSpec {
  NoiseStructure structure = NoiseStructure::symmetric;
  double ratio = 0.0;
  std::vector<double> class_ratios;  // overrides `ratio` when non-empty
  bool legacy_inclusive = false;
  std::uint64_t seed = 0;

  IntensityVector intensity(int classes) const;
  TransitionMatrix transition(int classes) const;
};

nlohmann::json to_json(const NoiseSpec& spec, int classes);
NoiseSpec noise_spec_from_json(const nlohmann::json& j);

LabeledDataset apply_noise(const LabeledDataset& ds, const NoiseSpec& spec);

}  // namespace rte
