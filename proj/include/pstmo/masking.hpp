#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pstmo/core/error.hpp"
#include "pstmo/core/random.hpp"

namespace pstmo {

enum class MaskStrategy { temporal, spatial, spatio_temporal };

inline std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::temporal: return "temporal";
    case MaskStrategy::spatial: return "spatial";
    case MaskStrategy::spatio_temporal: return "spatio-temporal";
  }
  return "?";
}

inline MaskStrategy parse_mask_strategy(const std::string& s) {
  if (s == "temporal") return MaskStrategy::temporal;
  if (s == "spatial") return MaskStrategy::spatial;
  if (s == "spatio-temporal" || s == "spatio_temporal") return MaskStrategy::spatio_temporal;
  throw Error(ErrorCode::invalid_argument, "unknown masking strategy '" + s + "'");
}

struct MaskConfig {
  double temporal_ratio = 0.8;       // q_T in [0, 1)
  std::size_t masked_joints = 2;     // m_S in [0, J]
  MaskStrategy strategy = MaskStrategy::spatio_temporal;

  double spatial_ratio(std::size_t joints) const { return static_cast<double>(masked_joints) / static_cast<double>(joints); }

  void validate(std::size_t joints) const {
    require(temporal_ratio >= 0.0 && temporal_ratio < 1.0, ErrorCode::invalid_argument,
            "temporal masking ratio must lie in [0, 1), got " + std::to_string(temporal_ratio));
    require(masked_joints <= joints, ErrorCode::invalid_argument,
            "cannot mask " + std::to_string(masked_joints) + " of " + std::to_string(joints) + " joints");
    if (strategy == MaskStrategy::temporal)
      require(masked_joints == 0, ErrorCode::invalid_argument, "temporal masking requires masked_joints = 0");
    if (strategy == MaskStrategy::spatial)
      require(temporal_ratio == 0.0, ErrorCode::invalid_argument, "spatial masking requires temporal_ratio = 0");
  }
};

/// Indices are window-relative (0..N-1). spatial_masks[k] belongs to frame unmasked_order[k].
struct MaskPlan {
  std::size_t window_length = 0;
  std::vector<std::size_t> masked_frames;    // sorted ascending
  std::vector<std::size_t> unmasked_order;   // sorted ascending
  std::vector<std::vector<std::size_t>> spatial_masks;

  bool empty() const {
    return masked_frames.empty() &&
           std::all_of(spatial_masks.begin(), spatial_masks.end(), [](const auto& m) { return m.empty(); });
  }

  /// Decoder slot order: surviving frames first, then masked frames; each entry is an original position.
  std::vector<std::size_t> slot_positions() const {
    std::vector<std::size_t> pos = unmasked_order;
    pos.insert(pos.end(), masked_frames.begin(), masked_frames.end());
    return pos;
  }

  /// The empty plan used for fine-tuning: every frame survives, nothing masked.
  static MaskPlan identity(std::size_t n) {
    MaskPlan p;
    p.window_length = n;
    p.unmasked_order.resize(n);
    std::iota(p.unmasked_order.begin(), p.unmasked_order.end(), std::size_t{0});
    p.spatial_masks.assign(n, {});
    return p;
  }
};

/// Unmasked frame count floor((1 - q_T) * N). The epsilon absorbs representation error,
/// e.g. (1 - 0.8) * 10 evaluates to 1.9999999999999996.
inline std::size_t unmasked_count(std::size_t n, double temporal_ratio) {
  return static_cast<std::size_t>(std::floor((1.0 - temporal_ratio) * static_cast<double>(n) + 1e-9));
}

inline std::vector<std::size_t> sample_temporal_mask(std::size_t n, double temporal_ratio, Rng& rng) {
  require(n >= 1, ErrorCode::invalid_argument, "window length must be >= 1");
  require(temporal_ratio >= 0.0 && temporal_ratio < 1.0, ErrorCode::invalid_argument,
          "temporal masking ratio must lie in [0, 1), got " + std::to_string(temporal_ratio));
  const std::size_t keep = unmasked_count(n, temporal_ratio);
  require(keep >= 1, ErrorCode::invalid_argument, "temporal masking would leave no frame for the encoder");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n - keep slots become the masked set.
  const std::size_t masked = n - keep;
  for (std::size_t i = 0; i < masked; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(masked);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::vector<std::vector<std::size_t>> sample_spatial_masks(std::size_t frames, std::size_t joints, std::size_t masked_joints,
                                                                  Rng& rng) {
  require(masked_joints <= joints, ErrorCode::invalid_argument,
          "cannot mask " + std::to_string(masked_joints) + " of " + std::to_string(joints) + " joints");
  std::vector<std::vector<std::size_t>> masks(frames);
  std::vector<std::size_t> idx(joints);
  for (auto& m : masks) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < masked_joints; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, joints - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    m.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(masked_joints));
    std::sort(m.begin(), m.end());
  }
  return masks;
}

/// q_ST = q_T + (1 - q_T) * q_S
inline double combined_ratio(double temporal_ratio, double spatial_ratio) {
  return temporal_ratio + (1.0 - temporal_ratio) * spatial_ratio;
}

/// Temporal masking first, then spatial masking on the surviving frames only.
inline MaskPlan build_plan(const MaskConfig& config, std::size_t n, std::size_t joints, Rng& rng) {
  config.validate(joints);
  MaskPlan plan;
  plan.window_length = n;
  const double qt = config.strategy == MaskStrategy::spatial ? 0.0 : config.temporal_ratio;
  const std::size_t ms = config.strategy == MaskStrategy::temporal ? 0 : config.masked_joints;
  plan.masked_frames = sample_temporal_mask(n, qt, rng);
  std::vector<bool> masked(n, false);
  for (auto i : plan.masked_frames) masked[i] = true;
  for (std::size_t i = 0; i < n; ++i)
    if (!masked[i]) plan.unmasked_order.push_back(i);
  plan.spatial_masks = sample_spatial_masks(plan.unmasked_order.size(), joints, ms, rng);
  return plan;
}

inline void validate_plan(const MaskPlan& plan, std::size_t n, std::size_t joints) {
  require(plan.window_length == n, ErrorCode::shape_mismatch, "mask plan window length does not match the window");
  require(plan.masked_frames.size() + plan.unmasked_order.size() == n, ErrorCode::shape_mismatch,
          "mask plan does not partition the window");
  require(!plan.unmasked_order.empty(), ErrorCode::invalid_argument, "mask plan leaves no frame for the encoder");
  require(plan.spatial_masks.size() == plan.unmasked_order.size(), ErrorCode::shape_mismatch,
          "mask plan needs one spatial mask per surviving frame");
  std::vector<bool> seen(n, false);
  for (auto i : plan.masked_frames) {
    require(i < n && !seen[i], ErrorCode::invalid_argument, "mask plan frame index repeated or out of range");
    seen[i] = true;
  }
  for (auto i : plan.unmasked_order) {
    require(i < n && !seen[i], ErrorCode::invalid_argument, "mask plan frame index repeated or out of range");
    seen[i] = true;
  }
  for (const auto& m : plan.spatial_masks)
    for (auto j : m) require(j < joints, ErrorCode::invalid_argument, "mask plan joint index out of range");
}

inline nlohmann::json to_json(const MaskPlan& plan) {
  return {{"masked_frames", plan.masked_frames}, {"spatial_masks", plan.spatial_masks}};
}

inline MaskPlan plan_from_json(const nlohmann::json& j, std::size_t n) {
  MaskPlan plan;
  plan.window_length = n;
  plan.masked_frames = j.at("masked_frames").get<std::vector<std::size_t>>();
  std::sort(plan.masked_frames.begin(), plan.masked_frames.end());
  std::vector<bool> masked(n, false);
  for (auto i : plan.masked_frames) {
    require(i < n, ErrorCode::invalid_argument, "masked frame index out of range");
    masked[i] = true;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!masked[i]) plan.unmasked_order.push_back(i);
  plan.spatial_masks = j.at("spatial_masks").get<std::vector<std::vector<std::size_t>>>();
  return plan;
}

}  // namespace pstmo
