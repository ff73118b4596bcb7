#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rte/types.hpp"

namespace rte {

/// Features plus parallel true/noisy label arrays.
/// corrupted[i] holds exactly when noisy_labels[i] != true_labels[i].
struct LabeledDataset {
  FeatureShape shape;
  int classes = 0;
  MatrixR features;  // n x shape.size()
  std::vector<int> true_labels;
  std::vector<int> noisy_labels;
  std::vector<std::uint8_t> corrupted;
  std::uint64_t seed = 0;

  std::size_t size() const { return true_labels.size(); }
  bool empty() const { return true_labels.empty(); }

  /// Throws std::invalid_argument describing the first broken invariant.
  void validate() const;

  /// Dataset whose noisy labels equal its true labels.
  static LabeledDataset clean(FeatureShape shape, int classes, MatrixR features, std::vector<int> labels);

  LabeledDataset subset(std::span<const std::size_t> indices) const;

  /// Gathers feature rows in the given order.
  MatrixR rows(std::span<const std::size_t> indices) const;
};

/// Binary container: magic "RTEDSET\0", u32 version, u64 n, u32 classes,
/// u32 channels/height/width, u64 seed, then n*d little-endian f64 features,
/// n i32 true labels, n i32 noisy labels, n u8 corrupted flags.
void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::filesystem::path& path);

struct TrainTestSplit {
  LabeledDataset train;
  LabeledDataset test;
};

/// Deterministic split; the first `fraction` of a seeded permutation goes to `test`.
TrainTestSplit split_dataset(const LabeledDataset& ds, double fraction, std::uint64_t seed);

}  // namespace rte
