#pragma once

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pstmo/core/error.hpp"
#include "pstmo/core/tensor.hpp"

namespace pstmo {

using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// (J, 3) view of one frame stored as J*3 consecutive values.
inline Points3 frame_points(const double* values, std::size_t joints) {
  Points3 p(static_cast<Eigen::Index>(joints), 3);
  for (std::size_t j = 0; j < joints; ++j)
    for (int c = 0; c < 3; ++c) p(static_cast<Eigen::Index>(j), c) = values[3 * j + static_cast<std::size_t>(c)];
  return p;
}

inline std::vector<double> joint_errors(const Points3& pred, const Points3& gt) {
  require(pred.rows() == gt.rows(), ErrorCode::shape_mismatch, "joint counts differ");
  std::vector<double> e(static_cast<std::size_t>(pred.rows()));
  for (Eigen::Index j = 0; j < pred.rows(); ++j) e[static_cast<std::size_t>(j)] = (pred.row(j) - gt.row(j)).norm();
  return e;
}

/// Mean per-joint Euclidean distance over all K*J joints of (K, 3J) arrays.
inline double mpjpe(const Mat<double>& pred, const Mat<double>& gt) {
  require(pred.rows() == gt.rows() && pred.cols() == gt.cols(), ErrorCode::shape_mismatch, "mpjpe: shapes differ");
  require(pred.cols() % 3 == 0 && pred.size() > 0, ErrorCode::shape_mismatch, "mpjpe expects rows of J*3 values");
  const Eigen::Index joints = pred.cols() / 3;
  double sum = 0.0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r)
    for (Eigen::Index j = 0; j < joints; ++j) sum += (pred.row(r).segment(3 * j, 3) - gt.row(r).segment(3 * j, 3)).norm();
  return sum / static_cast<double>(pred.rows() * joints);
}

struct Similarity {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::RowVector3d translation = Eigen::RowVector3d::Zero();

  Points3 apply(const Points3& p) const {
    return ((scale * (p * rotation.transpose())).rowwise() + translation).eval();
  }
};

/// Closed-form similarity transform minimizing sum ||gt - (s R pred + t)||^2 with det(R) = +1.
inline Similarity procrustes_fit(const Points3& pred, const Points3& gt) {
  require(pred.rows() == gt.rows(), ErrorCode::shape_mismatch, "procrustes: joint counts differ");
  require(pred.rows() >= 3, ErrorCode::invalid_argument, "procrustes needs at least 3 joints");
  const Eigen::RowVector3d mu_p = pred.colwise().mean();
  const Eigen::RowVector3d mu_g = gt.colwise().mean();
  const Points3 x = pred.rowwise() - mu_p;
  const Points3 y = gt.rowwise() - mu_g;

  Eigen::JacobiSVD<Points3> shape_svd(x);
  const auto sv = shape_svd.singularValues();
  require(sv(0) > 0.0 && sv(1) > 1e-9 * sv(0), ErrorCode::invalid_argument, "procrustes: joints are collinear or coincident");

  const Eigen::Matrix3d h = x.transpose() * y;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  Similarity s;
  s.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  s.scale = (svd.singularValues().asDiagonal() * d).trace() / x.squaredNorm();
  s.translation = mu_g - s.scale * (mu_p * s.rotation.transpose());
  return s;
}

inline Points3 procrustes_align(const Points3& pred, const Points3& gt) { return procrustes_fit(pred, gt).apply(pred); }

/// MPJPE after per-frame similarity alignment.
inline double p_mpjpe(const Mat<double>& pred, const Mat<double>& gt) {
  require(pred.rows() == gt.rows() && pred.cols() == gt.cols(), ErrorCode::shape_mismatch, "p_mpjpe: shapes differ");
  require(pred.cols() % 3 == 0 && pred.size() > 0, ErrorCode::shape_mismatch, "p_mpjpe expects rows of J*3 values");
  const std::size_t joints = static_cast<std::size_t>(pred.cols() / 3);
  double sum = 0.0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    const Mat<double> pr = pred.row(r), gr = gt.row(r);
    const Points3 p = frame_points(pr.data(), joints), g = frame_points(gr.data(), joints);
    for (double e : joint_errors(procrustes_align(p, g), g)) sum += e;
  }
  return sum / static_cast<double>(pred.rows() * static_cast<Eigen::Index>(joints));
}

inline constexpr double kPckThreshold = 150.0;
inline constexpr std::size_t kAucSteps = 31;  // 0, 5, ..., 150 mm

inline double auc_threshold(std::size_t k) { return 5.0 * static_cast<double>(k); }

struct PckAuc {
  double pck150 = 0.0;
  double auc = 0.0;
};

/// Counts of joints within each AUC threshold; the last entry is the 150 mm count.
struct PckCounts {
  std::array<std::size_t, kAucSteps> within{};
  std::size_t total = 0;

  void add(double error) {
    for (std::size_t k = 0; k < kAucSteps; ++k)
      if (error <= auc_threshold(k)) ++within[k];
    ++total;
  }
  PckCounts& operator+=(const PckCounts& o) {
    for (std::size_t k = 0; k < kAucSteps; ++k) within[k] += o.within[k];
    total += o.total;
    return *this;
  }
  PckAuc result() const {
    if (total == 0) return {};
    const double n = static_cast<double>(total);
    double sum = 0.0;
    for (auto c : within) sum += 100.0 * static_cast<double>(c) / n;
    return {100.0 * static_cast<double>(within[kAucSteps - 1]) / n, sum / static_cast<double>(kAucSteps)};
  }
};

inline PckAuc pck_auc(const Mat<double>& pred, const Mat<double>& gt) {
  require(pred.rows() == gt.rows() && pred.cols() == gt.cols(), ErrorCode::shape_mismatch, "pck_auc: shapes differ");
  require(pred.cols() % 3 == 0, ErrorCode::shape_mismatch, "pck_auc expects rows of J*3 values");
  PckCounts counts;
  for (Eigen::Index r = 0; r < pred.rows(); ++r)
    for (Eigen::Index j = 0; j < pred.cols() / 3; ++j) counts.add((pred.row(r).segment(3 * j, 3) - gt.row(r).segment(3 * j, 3)).norm());
  return counts.result();
}

struct ActionMetrics {
  double mpjpe = 0.0;
  double p_mpjpe = 0.0;
  double pck150 = 0.0;
  double auc = 0.0;
  std::size_t frames = 0;
};

struct MetricReport {
  ActionMetrics pooled;       // every evaluated frame weighted equally (primary number)
  ActionMetrics action_mean;  // unweighted mean over actions
  std::map<std::string, ActionMetrics> per_action;
};

/// Collects per-frame errors; the report does not depend on the order frames were added.
class MetricAccumulator {
 public:
  /// With `include_root` false, joint 0 is left out of every average.
  explicit MetricAccumulator(bool include_root = true) : include_root_(include_root) {}

  /// One predicted frame, J*3 values each, in millimeters.
  void add(const std::string& action, const double* pred, const double* gt, std::size_t joints) {
    const std::size_t skip = include_root_ ? 0 : 1;
    require(joints > skip, ErrorCode::shape_mismatch, "metric accumulator: no joints left to score");
    joints -= skip;
    const Points3 p = frame_points(pred + 3 * skip, joints), g = frame_points(gt + 3 * skip, joints);
    auto& a = actions_[action];
    const auto err = joint_errors(p, g);
    a.mpjpe.push_back(std::accumulate(err.begin(), err.end(), 0.0) / static_cast<double>(joints));
    for (double e : err) a.pck.add(e);
    const auto aligned = joint_errors(procrustes_align(p, g), g);
    a.p_mpjpe.push_back(std::accumulate(aligned.begin(), aligned.end(), 0.0) / static_cast<double>(joints));
  }

  void add(const std::string& action, const Mat<double>& pred, const Mat<double>& gt) {
    require(pred.rows() == gt.rows() && pred.cols() == gt.cols() && pred.cols() % 3 == 0, ErrorCode::shape_mismatch,
            "metric accumulator: shapes differ");
    for (Eigen::Index r = 0; r < pred.rows(); ++r) {
      const Mat<double> pr = pred.row(r), gr = gt.row(r);
      add(action, pr.data(), gr.data(), static_cast<std::size_t>(pred.cols() / 3));
    }
  }

  std::size_t frames() const {
    std::size_t n = 0;
    for (const auto& [name, a] : actions_) n += a.mpjpe.size();
    return n;
  }

  MetricReport report() const {
    MetricReport rep;
    std::vector<double> all_m, all_p;
    PckCounts all_pck;
    for (const auto& [name, a] : actions_) {
      ActionMetrics m;
      m.frames = a.mpjpe.size();
      m.mpjpe = sorted_mean(a.mpjpe);
      m.p_mpjpe = sorted_mean(a.p_mpjpe);
      const auto pa = a.pck.result();
      m.pck150 = pa.pck150;
      m.auc = pa.auc;
      rep.per_action[name] = m;
      all_m.insert(all_m.end(), a.mpjpe.begin(), a.mpjpe.end());
      all_p.insert(all_p.end(), a.p_mpjpe.begin(), a.p_mpjpe.end());
      all_pck += a.pck;
    }
    rep.pooled.frames = all_m.size();
    rep.pooled.mpjpe = sorted_mean(all_m);
    rep.pooled.p_mpjpe = sorted_mean(all_p);
    const auto pa = all_pck.result();
    rep.pooled.pck150 = pa.pck150;
    rep.pooled.auc = pa.auc;
    if (!rep.per_action.empty()) {
      const double n = static_cast<double>(rep.per_action.size());
      for (const auto& [name, m] : rep.per_action) {
        rep.action_mean.mpjpe += m.mpjpe / n;
        rep.action_mean.p_mpjpe += m.p_mpjpe / n;
        rep.action_mean.pck150 += m.pck150 / n;
        rep.action_mean.auc += m.auc / n;
        rep.action_mean.frames += m.frames;
      }
    }
    return rep;
  }

 private:
  struct PerAction {
    std::vector<double> mpjpe, p_mpjpe;
    PckCounts pck;
  };

  static double sorted_mean(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }

  bool include_root_ = true;
  std::map<std::string, PerAction> actions_;
};

inline nlohmann::json to_json(const ActionMetrics& m) {
  return {{"mpjpe", m.mpjpe}, {"p_mpjpe", m.p_mpjpe}, {"pck150", m.pck150}, {"auc", m.auc}, {"frames", m.frames}};
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, m] : r.per_action) per[name] = to_json(m);
  return {{"pooled", to_json(r.pooled)}, {"action_mean", to_json(r.action_mean)}, {"per_action", per}};
}

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// Per-action CSV followed by the pooled and action-mean rows.
inline std::string to_csv(const MetricReport& r) {
  std::ostringstream out;
  out << "action,mpjpe,p_mpjpe,pck150,auc\n";
  auto row = [&](const std::string& name, const ActionMetrics& m) {
    out << name << ',' << format_metric(m.mpjpe) << ',' << format_metric(m.p_mpjpe) << ',' << format_metric(m.pck150) << ','
        << format_metric(m.auc) << '\n';
  };
  for (const auto& [name, m] : r.per_action) row(name, m);
  row("pooled", r.pooled);
  row("action_mean", r.action_mean);
  return out.str();
}

}  // namespace pstmo
