#pragma once

#include <cmath>
#include <map>
#include <string>

#include "pstmo/core/error.hpp"
#include "pstmo/core/tensor.hpp"

namespace pstmo {

struct LossValue {
  double value = 0.0;
  std::map<std::string, double> breakdown;
};

/// A loss value with its gradient with respect to the prediction.
template <typename T>
struct LossGrad {
  T value = T(0);
  Mat<T> grad;
};

namespace detail {

template <typename T>
void check_same_shape(const Mat<T>& a, const Mat<T>& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::shape_mismatch,
          std::string(what) + ": shape (" + std::to_string(a.rows()) + "," + std::to_string(a.cols()) + ") vs (" +
              std::to_string(b.rows()) + "," + std::to_string(b.cols()) + ")");
}

}  // namespace detail

/// Mean squared error over every coordinate of an (N, 2J) reconstruction.
template <typename T>
LossGrad<T> pretrain_loss(const Mat<T>& recon, const Mat<T>& clean) {
  detail::check_same_shape(recon, clean, "pretrain_loss");
  require(recon.size() > 0, ErrorCode::shape_mismatch, "pretrain_loss: empty input");
  const T n = static_cast<T>(recon.size());
  const Mat<T> diff = recon - clean;
  return {diff.squaredNorm() / n, diff * (T(2) / n)};
}

/// Mean over all (row, joint) pairs of the Euclidean distance between 3D joints. Rows hold J*3 values.
/// The gradient at a coincident joint is taken as zero.
template <typename T>
LossGrad<T> mean_joint_distance(const Mat<T>& pred, const Mat<T>& gt) {
  detail::check_same_shape(pred, gt, "joint distance loss");
  require(pred.cols() % 3 == 0 && pred.size() > 0, ErrorCode::shape_mismatch, "joint distance loss expects rows of J*3 values");
  const Eigen::Index joints = pred.cols() / 3;
  const T count = static_cast<T>(pred.rows() * joints);
  LossGrad<T> out;
  out.grad = Mat<T>::Zero(pred.rows(), pred.cols());
  for (Eigen::Index r = 0; r < pred.rows(); ++r)
    for (Eigen::Index j = 0; j < joints; ++j) {
      const auto diff = (pred.row(r).segment(3 * j, 3) - gt.row(r).segment(3 * j, 3)).eval();
      const T norm = diff.norm();
      out.value += norm;
      if (norm > T(0)) out.grad.row(r).segment(3 * j, 3) = diff / (norm * count);
    }
  out.value /= count;
  return out;
}

/// Single-frame loss on the center prediction, (1, 3J).
template <typename T>
LossGrad<T> loss_single(const Mat<T>& pred, const Mat<T>& gt) {
  require(pred.rows() == 1, ErrorCode::shape_mismatch, "loss_single expects one frame");
  return mean_joint_distance(pred, gt);
}

/// Multi-frame loss over all N predicted frames, (N, 3J).
template <typename T>
LossGrad<T> loss_multiple(const Mat<T>& pred, const Mat<T>& gt) {
  return mean_joint_distance(pred, gt);
}

inline LossValue total_loss(double single, double multiple, double lambda) {
  require(lambda >= 0.0, ErrorCode::invalid_argument, "loss balance factor must be >= 0");
  return {single + lambda * multiple, {{"single", single}, {"multiple", multiple}}};
}

}  // namespace pstmo
