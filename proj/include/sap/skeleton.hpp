#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sap/tensor.hpp"

namespace sap {

struct NonOrthonormalRotation : std::runtime_error {
  NonOrthonormalRotation() : std::runtime_error("NonOrthonormalRotation: R^T R deviates from I by more than 1e-9") {}
};

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

// T x V x 3 joint coordinate series plus label and capture metadata.
struct SkeletonSequence {
  int frames = 0;  // T
  int joints = 0;  // V
  Tensor coords;   // (T, V, 3)
  int label = -1;  // < 0 means unlabeled
  std::string source_id;
  std::string subject_id;
  std::string camera_id;

  SkeletonSequence() = default;
  SkeletonSequence(int t, int v) : frames(t), joints(v), coords(Tensor({t, v, 3})) {}

  double& at(int t, int v, int c) { return coords.at(t, v, c); }
  double at(int t, int v, int c) const { return coords.at(t, v, c); }

  Vec3 joint(int t, int v) const { return {coords.at(t, v, 0), coords.at(t, v, 1), coords.at(t, v, 2)}; }

  void set_joint(int t, int v, const Vec3& p) {
    coords.at(t, v, 0) = p[0];
    coords.at(t, v, 1) = p[1];
    coords.at(t, v, 2) = p[2];
  }

  bool valid() const {
    return frames >= 1 && joints >= 2 && coords.rank() == 3 && coords.dim(0) == frames &&
           coords.dim(1) == joints && coords.dim(2) == 3 && coords.all_finite();
  }
};

// Named joints plus the bone tree (parent, child) used by the bone stream
// and by fixed-anchor lookup.
struct SkeletonLayout {
  std::vector<std::string> joint_names;
  std::vector<std::pair<int, int>> bone_edges;  // (parent, child)
  int root = 0;

  int size() const { return static_cast<int>(joint_names.size()); }

  int index_of(const std::string& name) const {
    for (int i = 0; i < size(); ++i) {
      if (joint_names[static_cast<std::size_t>(i)] == name) return i;
    }
    return -1;
  }

  // Edges must reference valid joints and form a connected acyclic graph.
  bool well_formed() const {
    const int v = size();
    if (v < 2 || root < 0 || root >= v) return false;
    if (static_cast<int>(bone_edges.size()) != v - 1) return false;  // tree edge count
    std::vector<int> seen(static_cast<std::size_t>(v), 0);
    seen[static_cast<std::size_t>(root)] = 1;
    // Repeated sweeps; fine at skeleton sizes.
    bool grew = true;
    int reached = 1;
    while (grew) {
      grew = false;
      for (auto [p, c] : bone_edges) {
        if (p < 0 || p >= v || c < 0 || c >= v) return false;
        if (seen[static_cast<std::size_t>(p)] && !seen[static_cast<std::size_t>(c)]) {
          seen[static_cast<std::size_t>(c)] = 1;
          ++reached;
          grew = true;
        }
      }
    }
    return reached == v;
  }
};

// The 25-joint Kinect v2 skeleton used by the NTU recordings.
inline SkeletonLayout ntu25_layout() {
  SkeletonLayout l;
  l.joint_names = {
      "spine_base", "spine", "neck", "head", "left_shoulder", "left_elbow", "left_wrist",
      "left_hand", "right_shoulder", "right_elbow", "right_wrist", "right_hand", "left_hip",
      "left_knee", "left_ankle", "left_foot", "right_hip", "right_knee", "right_ankle",
      "right_foot", "spine_shoulder", "left_hand_tip", "left_thumb", "right_hand_tip",
      "right_thumb"};
  l.bone_edges = {{0, 1},  {1, 20}, {20, 2}, {2, 3},   {20, 4},  {4, 5},   {5, 6},   {6, 7},
                  {20, 8}, {8, 9},  {9, 10}, {10, 11}, {0, 12},  {12, 13}, {13, 14}, {14, 15},
                  {0, 16}, {16, 17}, {17, 18}, {18, 19}, {7, 21}, {7, 22},  {11, 23}, {11, 24}};
  l.root = 0;
  return l;
}

// Compact 11-joint body used by the synthetic benchmark tasks.
inline SkeletonLayout synthetic11_layout() {
  SkeletonLayout l;
  l.joint_names = {"hip_root",   "spine",      "head",      "left_elbow", "left_hand", "right_elbow",
                   "right_hand", "left_knee",  "left_foot", "right_knee", "right_foot"};
  l.bone_edges = {{0, 1}, {1, 2}, {1, 3}, {3, 4}, {1, 5}, {5, 6}, {0, 7}, {7, 8}, {0, 9}, {9, 10}};
  l.root = 0;
  return l;
}

inline bool is_orthonormal(const Mat3& r, double tol = 1e-9) {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += r[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] * r[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
      const double expect = i == j ? 1.0 : 0.0;
      if (std::abs(acc - expect) > tol) return false;
    }
  }
  return true;
}

inline Mat3 rotation_about_y(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {{{c, 0.0, s}, {0.0, 1.0, 0.0}, {-s, 0.0, c}}};
}

inline Vec3 mat3_apply(const Mat3& r, const Vec3& x) {
  Vec3 out{};
  for (int i = 0; i < 3; ++i) {
    out[static_cast<std::size_t>(i)] = r[static_cast<std::size_t>(i)][0] * x[0] +
                                       r[static_cast<std::size_t>(i)][1] * x[1] +
                                       r[static_cast<std::size_t>(i)][2] * x[2];
  }
  return out;
}

// x -> scale * R x + t on every joint; metadata preserved.
inline SkeletonSequence apply_similarity_transform(const SkeletonSequence& seq, const Mat3& rotation,
                                                   const Vec3& translation, double scale) {
  if (!is_orthonormal(rotation)) throw NonOrthonormalRotation();
  if (!(scale > 0.0)) throw std::invalid_argument("apply_similarity_transform: scale must be positive");
  SkeletonSequence out = seq;
  for (int t = 0; t < seq.frames; ++t) {
    for (int v = 0; v < seq.joints; ++v) {
      const Vec3 p = mat3_apply(rotation, seq.joint(t, v));
      out.set_joint(t, v, {scale * p[0] + translation[0], scale * p[1] + translation[1],
                           scale * p[2] + translation[2]});
    }
  }
  return out;
}

// Subtracts the frame-0 root joint position from every coordinate.
inline SkeletonSequence normalize_sequence(const SkeletonSequence& seq, const SkeletonLayout& layout) {
  if (layout.root < 0 || layout.root >= seq.joints) {
    throw std::out_of_range("normalize_sequence: root joint index out of range");
  }
  const Vec3 origin = seq.joint(0, layout.root);
  SkeletonSequence out = seq;
  for (int t = 0; t < seq.frames; ++t) {
    for (int v = 0; v < seq.joints; ++v) {
      out.at(t, v, 0) -= origin[0];
      out.at(t, v, 1) -= origin[1];
      out.at(t, v, 2) -= origin[2];
    }
  }
  return out;
}

}  // namespace sap
