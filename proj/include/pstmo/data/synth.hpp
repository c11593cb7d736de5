#pragma once

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pstmo/core/random.hpp"
#include "pstmo/data/sequence.hpp"
#include "pstmo/data/skeleton.hpp"

namespace pstmo {

/// Fixed pinhole camera at the origin looking down +z (x right, y down), millimeters.
struct SynthCamera {
  double focal = 1150.0;
  std::size_t width = 1000;
  std::size_t height = 1000;

  /// Camera-space point to normalized screen coordinates (same convention as normalize_screen).
  std::array<double, 2> project(const Eigen::Vector3d& p) const {
    const double w = static_cast<double>(width);
    const double h = static_cast<double>(height);
    const double u = focal * p.x() / p.z() + 0.5 * w;
    const double v = focal * p.y() / p.z() + 0.5 * h;
    return {2.0 * u / w - 1.0, 2.0 * v / w - h / w};
  }
};

struct SyntheticMotion {
  PoseSequence sequence;
  std::vector<Eigen::Vector3d> root_positions;  // camera space, per frame
  SynthCamera camera;
};

namespace detail {

// Bone vectors (child minus parent) in a y-up body frame, millimeters.
inline std::vector<Eigen::Vector3d> rest_offsets(const Skeleton& skeleton, std::uint64_t seed) {
  const std::size_t j = skeleton.num_joints();
  std::vector<Eigen::Vector3d> off(j, Eigen::Vector3d::Zero());
  if (skeleton.name == "h36m17" && j == 17) {
    off = {{0, 0, 0},      {-130, 0, 0},   {0, -450, 0}, {0, -440, 0},  {130, 0, 0},    {0, -450, 0},
           {0, -440, 0},   {0, 230, 0},    {0, 250, 0},  {0, 110, 0},   {0, 115, 0},    {150, -20, 0},
           {0, -280, 0},   {0, -250, 0},   {-150, -20, 0}, {0, -280, 0}, {0, -250, 0}};
    return off;
  }
  if (skeleton.name == "toy5" && j == 5) {
    off = {{0, 0, 0}, {110, 0, 0}, {-110, 0, 0}, {0, -420, 0}, {0, -420, 0}};
    return off;
  }
  Rng rng(derive_seed(seed, 0x0ff5e7));
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t i = 0; i < j; ++i) {
    if (i == skeleton.root_index) continue;
    Eigen::Vector3d v(n01(rng), n01(rng), n01(rng));
    off[i] = 200.0 * v.normalized();
  }
  return off;
}

struct AngleTrack {
  std::array<double, 3> amplitude{};
  std::array<double, 3> frequency{};
  std::array<double, 3> phase{};
};

}  // namespace detail

inline const std::vector<std::string>& synth_actions() {
  static const std::vector<std::string> actions = {"walk", "wave", "squat", "turn"};
  return actions;
}

/**
 * Seeded synthetic motion: fixed bone lengths, joint angles that follow low-frequency
 * sinusoids, a smoothly drifting root, projected through a fixed pinhole camera.
 * Targets are root-relative camera-space millimeters; frames are normalized screen coordinates.
 */
inline SyntheticMotion synth_motion(const Skeleton& skeleton, std::size_t length, std::uint64_t seed, double fps = 50.0) {
  require(length >= 1, ErrorCode::invalid_argument, "synthetic sequence needs at least one frame");
  skeleton.validate();
  const std::size_t j = skeleton.num_joints();
  const auto offsets = detail::rest_offsets(skeleton, seed);
  const std::size_t action_id = static_cast<std::size_t>(mix64(seed) % synth_actions().size());

  Rng rng(derive_seed(seed, 0x5e9));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  // Per-joint amplitude emphasis for each action: legs, arms, torso.
  const std::array<std::array<double, 3>, 4> emphasis = {{{0.7, 0.35, 0.12}, {0.15, 0.9, 0.15}, {0.8, 0.3, 0.3}, {0.3, 0.4, 0.25}}};
  auto group_of = [&](std::size_t joint) {
    const auto& nm = skeleton.joint_names.empty() ? std::string() : skeleton.joint_names[joint];
    if (nm.find("hip") != std::string::npos || nm.find("knee") != std::string::npos || nm.find("ankle") != std::string::npos ||
        nm.find("foot") != std::string::npos)
      return 0;
    if (nm.find("shoulder") != std::string::npos || nm.find("elbow") != std::string::npos || nm.find("wrist") != std::string::npos)
      return 1;
    return 2;
  };

  std::vector<detail::AngleTrack> tracks(j);
  const double base_freq = uniform(0.3, 0.9);
  for (std::size_t i = 0; i < j; ++i) {
    const double amp = emphasis[action_id][static_cast<std::size_t>(group_of(i))];
    for (std::size_t c = 0; c < 3; ++c) {
      // The bend axis (x) dominates; twist and side bend stay small.
      const double axis_scale = c == 0 ? 1.0 : 0.35;
      tracks[i].amplitude[c] = amp * axis_scale * uniform(0.5, 1.0);
      tracks[i].frequency[c] = base_freq * uniform(0.8, 1.25);
      tracks[i].phase[c] = uniform(0.0, 2.0 * std::numbers::pi);
    }
  }
  const double yaw0 = uniform(-std::numbers::pi, std::numbers::pi);
  const double yaw_amp = action_id == 3 ? uniform(1.0, 2.0) : uniform(0.1, 0.5);
  const double yaw_freq = uniform(0.05, 0.2);
  const double yaw_phase = uniform(0.0, 2.0 * std::numbers::pi);
  const Eigen::Vector3d root0(uniform(-600, 600), uniform(-100, 100), uniform(4500, 6000));
  const Eigen::Vector3d root_amp(uniform(200, 600), uniform(10, 60), uniform(200, 800));
  const Eigen::Vector3d root_freq(uniform(0.03, 0.12), uniform(0.5, 1.5), uniform(0.03, 0.12));
  const Eigen::Vector3d root_phase(uniform(0, 6.28), uniform(0, 6.28), uniform(0, 6.28));

  // Children after parents, so one pass of forward kinematics suffices.
  std::vector<std::size_t> order;
  {
    std::vector<bool> placed(j, false);
    order.push_back(skeleton.root_index);
    placed[skeleton.root_index] = true;
    while (order.size() < j) {
      for (std::size_t i = 0; i < j; ++i)
        if (!placed[i] && placed[skeleton.parent[i]]) {
          order.push_back(i);
          placed[i] = true;
        }
    }
  }

  SyntheticMotion out;
  out.sequence.frames = PoseArray(length, j, 2);
  out.sequence.targets = PoseArray(length, j, 3);
  out.sequence.fps = fps;
  out.sequence.subject = "S" + std::to_string(seed);
  out.sequence.action = synth_actions()[action_id];
  out.sequence.camera = "cam0";
  out.root_positions.resize(length);

  const Eigen::Matrix3d body_to_camera = Eigen::Vector3d(1.0, -1.0, 1.0).asDiagonal();
  std::vector<Eigen::Matrix3d> global(j);
  std::vector<Eigen::Vector3d> pos(j);
  for (std::size_t t = 0; t < length; ++t) {
    const double time = static_cast<double>(t) / fps;
    const double yaw = yaw0 + yaw_amp * std::sin(2.0 * std::numbers::pi * yaw_freq * time + yaw_phase);
    for (std::size_t i : order) {
      const auto& tr = tracks[i];
      std::array<double, 3> ang{};
      for (std::size_t c = 0; c < 3; ++c)
        ang[c] = tr.amplitude[c] * std::sin(2.0 * std::numbers::pi * tr.frequency[c] * time + tr.phase[c]);
      const Eigen::Matrix3d local = (Eigen::AngleAxisd(ang[0], Eigen::Vector3d::UnitX()) *
                                     Eigen::AngleAxisd(ang[1], Eigen::Vector3d::UnitY()) *
                                     Eigen::AngleAxisd(ang[2], Eigen::Vector3d::UnitZ()))
                                        .toRotationMatrix();
      if (i == skeleton.root_index) {
        global[i] = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()).toRotationMatrix() *
                    Eigen::AngleAxisd(0.25 * ang[0], Eigen::Vector3d::UnitX()).toRotationMatrix();
        pos[i].setZero();
      } else {
        const std::size_t p = skeleton.parent[i];
        global[i] = global[p] * local;
        pos[i] = pos[p] + global[i] * offsets[i];
      }
    }
    Eigen::Vector3d root;
    for (int c = 0; c < 3; ++c)
      root[c] = root0[c] + root_amp[c] * std::sin(2.0 * std::numbers::pi * root_freq[c] * time + root_phase[c]);
    out.root_positions[t] = root;
    for (std::size_t i = 0; i < j; ++i) {
      const Eigen::Vector3d rel = body_to_camera * pos[i];
      for (std::size_t c = 0; c < 3; ++c) out.sequence.targets->at(t, i, c) = static_cast<float>(rel[static_cast<Eigen::Index>(c)]);
    }
    // Project the stored (float) targets so the 2D frames agree with them exactly up to rounding.
    for (std::size_t i = 0; i < j; ++i) {
      const Eigen::Vector3d rel(out.sequence.targets->at(t, i, 0), out.sequence.targets->at(t, i, 1), out.sequence.targets->at(t, i, 2));
      const auto uv = out.camera.project(rel + root);
      out.sequence.frames.at(t, i, 0) = static_cast<float>(uv[0]);
      out.sequence.frames.at(t, i, 1) = static_cast<float>(uv[1]);
    }
  }
  return out;
}

inline PoseSequence synth_generate(const Skeleton& skeleton, std::size_t length, std::uint64_t seed) {
  return synth_motion(skeleton, length, seed).sequence;
}

/// K sequences of T frames; sequence k uses seed derive_seed(seed, k).
inline std::vector<PoseSequence> synth_sequences(const Skeleton& skeleton, std::size_t count, std::size_t length, std::uint64_t seed) {
  std::vector<PoseSequence> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(synth_generate(skeleton, length, derive_seed(seed, k)));
  return out;
}

}  // namespace pstmo
