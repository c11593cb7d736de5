#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pstmo/core/error.hpp"
#include "pstmo/core/random.hpp"
#include "pstmo/data/skeleton.hpp"

namespace pstmo {

/// T frames of J joints with C coordinates each, stored row-major (frame, joint, coordinate).
struct PoseArray {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t channels = 0;
  std::vector<float> values;

  PoseArray() = default;
  PoseArray(std::size_t t, std::size_t j, std::size_t c) : frames(t), joints(j), channels(c), values(t * j * c, 0.0f) {}

  float& at(std::size_t t, std::size_t j, std::size_t c) { return values[(t * joints + j) * channels + c]; }
  float at(std::size_t t, std::size_t j, std::size_t c) const { return values[(t * joints + j) * channels + c]; }
  const float* frame(std::size_t t) const { return values.data() + t * joints * channels; }
  float* frame(std::size_t t) { return values.data() + t * joints * channels; }
  std::size_t frame_size() const { return joints * channels; }

  friend bool operator==(const PoseArray&, const PoseArray&) = default;
};

struct PoseSequence {
  PoseArray frames;                  // T x J x 2, normalized screen coordinates
  std::optional<PoseArray> targets;  // T x J x 3, root-relative millimeters
  double fps = 50.0;
  std::string subject;
  std::string action;
  std::string camera;

  std::size_t length() const { return frames.frames; }
  std::size_t num_joints() const { return frames.joints; }

  void validate() const {
    require(frames.channels == 2, ErrorCode::shape_mismatch, "2D frames must have 2 channels");
    require(frames.values.size() == frames.frames * frames.joints * 2, ErrorCode::shape_mismatch, "2D frame buffer size mismatch");
    if (targets) {
      require(targets->channels == 3, ErrorCode::shape_mismatch, "3D targets must have 3 channels");
      require(targets->frames == frames.frames && targets->joints == frames.joints, ErrorCode::shape_mismatch,
              "3D targets do not match 2D frames in T or J");
    }
  }
};

/// An N-frame clip around one center frame, subsampled with stride s.
struct WindowSample {
  PoseArray inputs;       // N x J x 2
  PoseArray target_center;  // 1 x J x 3 (empty when the sequence has no targets)
  PoseArray targets_all;  // N x J x 3 (empty when the sequence has no targets)
  std::size_t center_index = 0;
  std::size_t stride = 1;
  std::vector<std::size_t> source_indices;

  std::size_t length() const { return inputs.frames; }
  bool has_targets() const { return targets_all.frames > 0; }
};

/// Maps pixel coordinates to [-1, 1] along x, dividing both axes by the image width.
inline PoseArray normalize_screen(const PoseArray& pixels, std::size_t width, std::size_t height) {
  require(width > 0 && height > 0, ErrorCode::invalid_argument, "image width and height must be positive");
  require(pixels.channels == 2, ErrorCode::shape_mismatch, "normalize_screen expects 2 channels");
  PoseArray out = pixels;
  const double w = static_cast<double>(width);
  const double h = static_cast<double>(height);
  for (std::size_t i = 0; i < pixels.values.size(); i += 2) {
    const double px = pixels.values[i];
    const double py = pixels.values[i + 1];
    require(std::isfinite(px) && std::isfinite(py), ErrorCode::non_finite,
            "non-finite pixel coordinate at flat index " + std::to_string(i));
    out.values[i] = static_cast<float>(2.0 * px / w - 1.0);
    out.values[i + 1] = static_cast<float>(2.0 * py / w - h / w);
  }
  return out;
}

/// Source frame indices for a window; out-of-range positions are clamped to the sequence ends.
inline std::vector<std::size_t> window_indices(std::size_t length, std::size_t center, std::size_t n, std::size_t stride) {
  require(n % 2 == 1, ErrorCode::invalid_argument, "window length N must be odd, got " + std::to_string(n));
  require(stride >= 1, ErrorCode::invalid_argument, "window stride must be >= 1");
  require(length > 0, ErrorCode::invalid_argument, "cannot window an empty sequence");
  require(center < length, ErrorCode::invalid_argument, "window center out of range");
  const long half = static_cast<long>(n / 2);
  const long last = static_cast<long>(length) - 1;
  std::vector<std::size_t> idx(n);
  for (long k = -half; k <= half; ++k) {
    const long src = static_cast<long>(center) + k * static_cast<long>(stride);
    idx[static_cast<std::size_t>(k + half)] = static_cast<std::size_t>(std::clamp(src, 0L, last));
  }
  return idx;
}

inline WindowSample extract_window(const PoseSequence& seq, std::size_t center, std::size_t n, std::size_t stride) {
  require(seq.length() > 0, ErrorCode::invalid_argument, "cannot window an empty sequence");
  WindowSample w;
  w.center_index = center;
  w.stride = stride;
  w.source_indices = window_indices(seq.length(), center, n, stride);
  const std::size_t j = seq.num_joints();
  w.inputs = PoseArray(n, j, 2);
  for (std::size_t k = 0; k < n; ++k)
    std::copy_n(seq.frames.frame(w.source_indices[k]), j * 2, w.inputs.frame(k));
  if (seq.targets) {
    w.targets_all = PoseArray(n, j, 3);
    for (std::size_t k = 0; k < n; ++k)
      std::copy_n(seq.targets->frame(w.source_indices[k]), j * 3, w.targets_all.frame(k));
    w.target_center = PoseArray(1, j, 3);
    std::copy_n(seq.targets->frame(center), j * 3, w.target_center.frame(0));
  }
  return w;
}

/// Negates x and swaps left/right rows, frame by frame. Works for any channel count >= 1.
inline PoseArray horizontal_flip(const PoseArray& poses, const Skeleton& skeleton) {
  require(poses.joints == skeleton.num_joints(), ErrorCode::shape_mismatch, "pose joint count does not match skeleton");
  const auto perm = skeleton.flip_permutation();
  PoseArray out(poses.frames, poses.joints, poses.channels);
  for (std::size_t t = 0; t < poses.frames; ++t)
    for (std::size_t j = 0; j < poses.joints; ++j)
      for (std::size_t c = 0; c < poses.channels; ++c) {
        const float v = poses.at(t, perm[j], c);
        out.at(t, j, c) = c == 0 ? -v : v;
      }
  return out;
}

inline WindowSample horizontal_flip(const WindowSample& w, const Skeleton& skeleton) {
  WindowSample out = w;
  out.inputs = horizontal_flip(w.inputs, skeleton);
  if (w.has_targets()) {
    out.targets_all = horizontal_flip(w.targets_all, skeleton);
    out.target_center = horizontal_flip(w.target_center, skeleton);
  }
  return out;
}

/// I.i.d. N(0, sigma^2) on every 2D coordinate; targets untouched.
inline PoseSequence add_gaussian_noise(const PoseSequence& seq, double sigma, Rng& rng) {
  require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::invalid_argument, "noise sigma must be a finite non-negative number");
  PoseSequence out = seq;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (float& v : out.frames.values) v = static_cast<float>(v + noise(rng));
  return out;
}

/// Permutes input frames; targets stay in their original order.
inline WindowSample shuffle_frames(const WindowSample& w, Rng& rng) {
  WindowSample out = w;
  const std::size_t n = w.inputs.frames;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t fs = w.inputs.frame_size();
  for (std::size_t k = 0; k < n; ++k) {
    std::copy_n(w.inputs.frame(perm[k]), fs, out.inputs.frame(k));
    out.source_indices[k] = w.source_indices[perm[k]];
  }
  return out;
}

}  // namespace pstmo
