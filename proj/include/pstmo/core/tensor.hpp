#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "pstmo/core/error.hpp"

namespace pstmo {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

/// Dense row-major array with an explicit shape.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), values(shape_size(shape), fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }

  /// Leading dimension as rows, the product of the rest as columns. Rank-1 arrays are one row.
  Eigen::Index rows() const { return shape.size() <= 1 ? 1 : static_cast<Eigen::Index>(shape[0]); }
  Eigen::Index cols() const {
    if (shape.empty()) return 1;
    if (shape.size() == 1) return static_cast<Eigen::Index>(shape[0]);
    return static_cast<Eigen::Index>(values.size() / shape[0]);
  }

  Eigen::Map<Mat<T>> mat() { return {values.data(), rows(), cols()}; }
  Eigen::Map<const Mat<T>> mat() const { return {values.data(), rows(), cols()}; }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape == b.shape && a.values == b.values; }
};

}  // namespace pstmo
