#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "rte/rng.hpp"
#include "rte/types.hpp"

namespace rte::testing {

inline MatrixR random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  auto rng = Rng::stream(seed, 0x7E57);
  MatrixR m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(scale * rng.normal());
  return m;
}

/// Rows are strictly positive and sum to one.
inline MatrixR random_distribution(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  auto rng = Rng::stream(seed, 0xD157);
  MatrixR m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<Real>(0.05 + rng.uniform());
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("rtelab_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace rte::testing
