#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "test_util.hpp"

namespace pstmo::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTolerance = 1e-4;

struct Probe {
  std::string name;
  std::size_t index;
};

/// Two coordinates of every array plus random extras, at least `total` probes.
inline std::vector<Probe> choose_probes(const ParameterStore<double>& p, std::size_t total, std::uint64_t seed) {
  std::vector<Probe> out;
  std::vector<Probe> all;
  Rng rng(seed);
  for (const auto& [name, t] : p.entries()) {
    std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
    out.push_back({name, pick(rng)});
    out.push_back({name, pick(rng)});
    for (std::size_t i = 0; i < t.size(); ++i) all.push_back({name, i});
  }
  std::uniform_int_distribution<std::size_t> any(0, all.size() - 1);
  while (out.size() < total) out.push_back(all[any(rng)]);
  return out;
}

inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double largest_entry(const ParameterStore<double>& g) {
  double m = 0.0;
  for (const auto& [name, t] : g.entries()) m = std::max(m, t.mat().cwiseAbs().maxCoeff());
  return m;
}

struct CheckResult {
  std::size_t probes = 0;
  double worst = 0.0;
  std::string worst_name;
};

/// Central differences at the chosen probes against `grad`.
inline CheckResult finite_difference_check(ParameterStore<double> p, const ParameterStore<double>& grad,
                                           const std::function<double(const ParameterStore<double>&)>& loss, std::size_t total,
                                           std::uint64_t seed) {
  CheckResult r;
  // Entries far below the largest one are compared on the scale of the largest.
  const double floor = 1e-6 * largest_entry(grad);
  for (const auto& probe : choose_probes(p, total, seed)) {
    double& v = p.at(probe.name).values[probe.index];
    const double saved = v;
    v = saved + kFdStep;
    const double up = loss(p);
    v = saved - kFdStep;
    const double down = loss(p);
    v = saved;
    const double numeric = (up - down) / (2 * kFdStep);
    const double err = relative_error(grad.at(probe.name).values[probe.index], numeric, floor);
    if (err > r.worst) {
      r.worst = err;
      r.worst_name = probe.name + "[" + std::to_string(probe.index) + "]";
    }
    ++r.probes;
  }
  return r;
}

/// Stage-II combined loss against random 3D targets on a random tiny model.
struct FinetuneCase {
  ModelConfig cfg = tiny_config();
  ParameterStore<double> params;
  Mat<double> input, center, frames;
  double lambda = 1.0;

  explicit FinetuneCase(std::uint64_t seed) { reset(seed); }

  void reset(std::uint64_t seed) {
    params = random_store<double>(cfg, Stage::finetune, seed, 0.2);
    input = random_matrix<double>(static_cast<Eigen::Index>(cfg.frames), static_cast<Eigen::Index>(2 * cfg.joints), seed + 1, 0.5);
    center = random_matrix<double>(1, static_cast<Eigen::Index>(3 * cfg.joints), seed + 2, 300.0);
    frames = random_matrix<double>(static_cast<Eigen::Index>(cfg.frames), static_cast<Eigen::Index>(3 * cfg.joints), seed + 3, 300.0);
  }

  double loss(const ParameterStore<double>& p) const {
    ForwardContext ctx;
    const auto out = StmoNetwork(cfg).forward(p, input, ctx);
    return total_loss(loss_single(out.center, center).value, loss_multiple(out.frames, frames).value, lambda).value;
  }

  ParameterStore<double> gradient(double upstream = 1.0) const {
    StmoNetwork net(cfg);
    ForwardContext ctx;
    StmoNetwork::Cache<double> c;
    const auto out = net.forward(params, input, ctx, c);
    const auto s = loss_single(out.center, center);
    const auto m = loss_multiple(out.frames, frames);
    auto g = params.zeros_like();
    net.backward(params, g, c, Mat<double>(s.grad * upstream), Mat<double>(m.grad * (lambda * upstream)));
    return g;
  }

  CheckResult check(std::size_t probes, std::uint64_t seed) const {
    return finite_difference_check(params, gradient(), [&](const ParameterStore<double>& p) { return loss(p); }, probes, seed);
  }
};

/// Stage-I reconstruction loss under a sampled masking plan.
struct PretrainCase {
  ModelConfig cfg = tiny_config();
  ParameterStore<double> params;
  Mat<double> input;
  MaskPlan plan;

  PretrainCase(std::uint64_t seed, const MaskConfig& mask) {
    params = random_store<double>(cfg, Stage::pretrain, seed, 0.2);
    input = random_matrix<double>(static_cast<Eigen::Index>(cfg.frames), static_cast<Eigen::Index>(2 * cfg.joints), seed + 1, 0.5);
    Rng rng(seed + 2);
    plan = build_plan(mask, cfg.frames, cfg.joints, rng);
  }

  double loss(const ParameterStore<double>& p) const {
    ForwardContext ctx;
    return pretrain_loss(PretrainNetwork(cfg).forward(p, input, plan, ctx), input).value;
  }

  ParameterStore<double> gradient(double upstream = 1.0) const {
    PretrainNetwork net(cfg);
    ForwardContext ctx;
    PretrainNetwork::Cache<double> c;
    const auto l = pretrain_loss(net.forward(params, input, plan, ctx, c), input);
    auto g = params.zeros_like();
    net.backward(params, g, c, Mat<double>(l.grad * upstream));
    return g;
  }

  CheckResult check(std::size_t probes, std::uint64_t seed) const {
    return finite_difference_check(params, gradient(), [&](const ParameterStore<double>& p) { return loss(p); }, probes, seed);
  }
};

}  // namespace pstmo::testing
