#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>

#include "rte/dataset.hpp"

namespace rte {

/// Balanced Gaussian mixture with unit-variance isotropic components.
/// Class means are orthonormal directions scaled so that neighbouring means
/// sit 2 * margin apart; the nearest-mean error rate against any one other
/// class is Phi(-margin). Requires shape.size() >= classes.
struct SyntheticSpec {
  int classes = 10;
  std::size_t samples = 5000;
  FeatureShape shape = flat_shape(32);
  double margin = 4.0;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

/// Class means, one row per class.
MatrixR synthetic_means(const SyntheticSpec& spec);

/// Clean dataset; sample i has class i mod classes.
LabeledDataset generate_synthetic(const SyntheticSpec& spec);

/// Accuracy of the nearest-mean rule on `data` (the Bayes rule for this mixture).
double nearest_mean_accuracy(const MatrixR& means, const LabeledDataset& data);

}  // namespace rte
