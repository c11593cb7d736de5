#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pstmo/core/error.hpp"

namespace pstmo {

/// Joint topology. parent[root_index] == root_index.
struct Skeleton {
  std::string name;
  std::vector<std::string> joint_names;
  std::vector<std::size_t> parent;
  std::size_t root_index = 0;
  std::vector<std::pair<std::size_t, std::size_t>> lr_pairs;  // (left, right)

  std::size_t num_joints() const { return parent.size(); }

  /// Throws on any broken invariant (size, tree shape, pairing).
  void validate() const {
    const std::size_t j = parent.size();
    require(j >= 2, ErrorCode::invalid_argument, "skeleton needs at least two joints");
    require(joint_names.empty() || joint_names.size() == j, ErrorCode::invalid_argument,
            "skeleton joint_names size does not match parent table");
    require(root_index < j, ErrorCode::invalid_argument, "skeleton root index out of range");
    require(parent[root_index] == root_index, ErrorCode::invalid_argument, "skeleton root must be its own parent");
    for (std::size_t i = 0; i < j; ++i) {
      require(parent[i] < j, ErrorCode::invalid_argument, "skeleton parent index out of range at joint " + std::to_string(i));
      if (i == root_index) continue;
      require(parent[i] != i, ErrorCode::invalid_argument, "skeleton has a second root at joint " + std::to_string(i));
      // Walking up must reach the root within j steps, otherwise there is a cycle.
      std::size_t cur = i;
      std::size_t steps = 0;
      while (cur != root_index && steps <= j) {
        cur = parent[cur];
        ++steps;
      }
      require(cur == root_index, ErrorCode::invalid_argument, "skeleton parent graph has a cycle through joint " + std::to_string(i));
    }
    std::vector<bool> seen(j, false);
    for (auto [l, r] : lr_pairs) {
      require(l < j && r < j && l != r, ErrorCode::invalid_argument, "skeleton lr pair out of range");
      require(l != root_index && r != root_index, ErrorCode::invalid_argument, "skeleton lr pair contains the root");
      require(!seen[l] && !seen[r], ErrorCode::invalid_argument, "skeleton joint appears in two lr pairs");
      seen[l] = seen[r] = true;
    }
  }

  /// Permutation that swaps every left/right pair.
  std::vector<std::size_t> flip_permutation() const {
    std::vector<std::size_t> perm(num_joints());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (auto [l, r] : lr_pairs) std::swap(perm[l], perm[r]);
    return perm;
  }
};

/// The 17-joint Human3.6M layout used by most 2D-to-3D lifting work.
inline Skeleton h36m17() {
  Skeleton s;
  s.name = "h36m17";
  s.joint_names = {"hip",       "r_hip",   "r_knee",  "r_ankle",    "l_hip",   "l_knee",  "l_ankle",    "spine", "thorax",
                   "neck",      "head",    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist"};
  s.parent = {0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
  s.root_index = 0;
  s.lr_pairs = {{4, 1}, {5, 2}, {6, 3}, {11, 14}, {12, 15}, {13, 16}};
  return s;
}

/// A five-joint stick figure (root, two hips, two feet) for small tests.
inline Skeleton toy5() {
  Skeleton s;
  s.name = "toy5";
  s.joint_names = {"root", "l_hip", "r_hip", "l_foot", "r_foot"};
  s.parent = {0, 0, 0, 1, 2};
  s.root_index = 0;
  s.lr_pairs = {{1, 2}, {3, 4}};
  return s;
}

inline Skeleton skeleton_by_name(const std::string& name) {
  if (name == "h36m17") return h36m17();
  if (name == "toy5") return toy5();
  throw Error(ErrorCode::invalid_argument, "unknown skeleton '" + name + "'");
}

}  // namespace pstmo
