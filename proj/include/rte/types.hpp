#pragma once

#include <Eigen/Dense>

namespace rte {

#ifdef RTE_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

// Row-major so that each row is one sample and image samples stay contiguous.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixR = Matrix<Real>;
using VectorR = Vector<Real>;

// Geometry of one sample. Flat feature vectors use {1, 1, d}.
struct FeatureShape {
  int channels = 1;
  int height = 1;
  int width = 1;

  int size() const { return channels * height * width; }
  bool is_image() const { return height > 1 && width > 1; }
  bool operator==(const FeatureShape&) const = default;
};

inline FeatureShape flat_shape(int d) { return {1, 1, d}; }

}  // namespace rte
