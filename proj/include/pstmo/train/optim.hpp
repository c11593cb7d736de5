#pragma once

#include <cmath>
#include <cstdint>

#include "pstmo/model/checkpoint.hpp"
#include "pstmo/model/params.hpp"

namespace pstmo {

struct OptimConfig {
  double lr_stage1 = 1e-4;
  double lr_stage2 = 7e-4;
  double decay = 0.97;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs_stage1 = 80;
  std::size_t epochs_stage2 = 80;
  std::size_t batch_size = 160;
  double clip_norm = 0.0;  // 0 disables global-norm clipping

  void validate() const {
    require(lr_stage1 > 0.0 && lr_stage2 > 0.0, ErrorCode::invalid_argument, "learning rates must be positive");
    require(decay > 0.0 && decay <= 1.0, ErrorCode::invalid_argument, "lr decay must lie in (0, 1]");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::invalid_argument, "Adam betas must lie in [0, 1)");
    require(eps > 0.0, ErrorCode::invalid_argument, "Adam epsilon must be positive");
    require(batch_size >= 1, ErrorCode::invalid_argument, "batch size must be >= 1");
    require(clip_norm >= 0.0, ErrorCode::invalid_argument, "clip_norm must be >= 0");
  }
};

inline double lr_schedule(std::size_t epoch, double lr0, double decay) { return lr0 * std::pow(decay, static_cast<double>(epoch)); }

/// Adam without weight decay. Moments live in stores keyed like the parameters.
class Adam {
 public:
  Adam(const OptimConfig& config, const ParameterStore<float>& params)
      : beta1_(config.beta1), beta2_(config.beta2), eps_(config.eps) {
    state_.m = params.zeros_like();
    state_.v = params.zeros_like();
  }

  Adam(const OptimConfig& config, OptimizerState state) : beta1_(config.beta1), beta2_(config.beta2), eps_(config.eps), state_(std::move(state)) {}

  void update(ParameterStore<float>& params, const ParameterStore<float>& grads, double lr) {
    ++state_.step;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
    for (auto& [name, p] : params.entries()) {
      const auto& g = grads.at(name).values;
      auto& m = state_.m.at(name).values;
      auto& v = state_.v.at(name).values;
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        const double gi = g[i];
        m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * gi);
        v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * gi * gi);
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p.values[i] = static_cast<float>(p.values[i] - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  const OptimizerState& state() const { return state_; }

 private:
  double beta1_, beta2_, eps_;
  OptimizerState state_;
};

/// Rescales `grads` so their global L2 norm is at most max_norm. Returns the norm before clipping.
inline double clip_global_norm(ParameterStore<float>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : grads.entries())
    for (float v : t.values) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) grads.scale(static_cast<float>(max_norm / norm));
  return norm;
}

}  // namespace pstmo
