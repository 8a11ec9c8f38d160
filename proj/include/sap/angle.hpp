#pragma once

// Triplet angle features (the cosine of the angle at a joint subtended by a
// pair of anchor points), the fixed-joint anchor baseline, and the
// bone-vector baseline stream. Angle values are similarity-invariant; bone
// vectors deliberately are not.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sap/skeleton.hpp"
#include "sap/tensor.hpp"

namespace sap {

struct FrameCountMismatch : std::runtime_error {
  explicit FrameCountMismatch(const std::string& m) : std::runtime_error("FrameCountMismatch: " + m) {}
};
struct UnknownJointName : std::runtime_error {
  explicit UnknownJointName(const std::string& name)
      : std::runtime_error("UnknownJointName: '" + name + "' does not resolve in the layout") {}
};

enum class AnchorProvenance { FixedJoint, SapProposed };

// H anchor pairs, either one per frame (coords T×H×2×3) or shared across the
// sequence (coords H×2×3). The two storage modes are mutually exclusive.
struct AnchorPairSet {
  int heads = 0;
  int frames = 0;  // 0 when shared across frames
  Tensor coords;
  AnchorProvenance provenance = AnchorProvenance::FixedJoint;

  bool per_frame() const { return frames > 0; }

  static AnchorPairSet shared(int heads, Tensor coords, AnchorProvenance prov) {
    if (coords.rank() != 3 || coords.dim(0) != heads || coords.dim(1) != 2 || coords.dim(2) != 3) {
      throw std::invalid_argument("AnchorPairSet::shared: coords must be H x 2 x 3");
    }
    AnchorPairSet s;
    s.heads = heads;
    s.frames = 0;
    s.coords = std::move(coords);
    s.provenance = prov;
    return s;
  }

  static AnchorPairSet per_frame(int frames, int heads, Tensor coords, AnchorProvenance prov) {
    const std::vector<int> want{frames, heads, 2, 3};
    if (coords.shape() != want) {
      throw std::invalid_argument("AnchorPairSet::per_frame: coords must be T x H x 2 x 3");
    }
    AnchorPairSet s;
    s.heads = heads;
    s.frames = frames;
    s.coords = std::move(coords);
    s.provenance = prov;
    return s;
  }

  Vec3 anchor(int t, int h, int which) const {
    const std::size_t base = per_frame()
        ? static_cast<std::size_t>(((t * heads + h) * 2 + which) * 3)
        : static_cast<std::size_t>((h * 2 + which) * 3);
    return {coords[base], coords[base + 1], coords[base + 2]};
  }

  // Heads whose two anchors coincide carry no angle information anywhere;
  // surfaced so callers can warn rather than silently emit a dead channel.
  int degenerate_head_count() const {
    int n = 0;
    const int t_count = per_frame() ? frames : 1;
    for (int h = 0; h < heads; ++h) {
      bool all_degenerate = true;
      for (int t = 0; t < t_count && all_degenerate; ++t) {
        const Vec3 a = anchor(t, h, 0), b = anchor(t, h, 1);
        const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
        all_degenerate = std::sqrt(dx * dx + dy * dy + dz * dz) < kDegenerateEps;
      }
      if (all_degenerate) ++n;
    }
    return n;
  }
};

struct FeatureTensor {
  Tensor values;                       // T x V x C
  std::vector<std::string> channels;   // descriptor per channel

  int frames() const { return values.dim(0); }
  int joints() const { return values.dim(1); }
  int channel_count() const { return values.dim(2); }
};

// cos of the angle at u subtended by w1 and w2. Returns exactly 0 when u
// coincides with either anchor or the anchors coincide with each other
// (within kDegenerateEps): a degenerate triplet carries no angle.
inline double angle_feature(const Vec3& u, const Vec3& w1, const Vec3& w2) {
  const double b1x = w1[0] - u[0], b1y = w1[1] - u[1], b1z = w1[2] - u[2];
  const double b2x = w2[0] - u[0], b2y = w2[1] - u[1], b2z = w2[2] - u[2];
  const double ax = w1[0] - w2[0], ay = w1[1] - w2[1], az = w1[2] - w2[2];
  const double n1 = std::sqrt(b1x * b1x + b1y * b1y + b1z * b1z);
  const double n2 = std::sqrt(b2x * b2x + b2y * b2y + b2z * b2z);
  const double sep = std::sqrt(ax * ax + ay * ay + az * az);
  if (n1 < kDegenerateEps || n2 < kDegenerateEps || sep < kDegenerateEps) return 0.0;
  const double c = (b1x * b2x + b1y * b2y + b1z * b2z) / (n1 * n2);
  return c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);  // rounding can push |c| past 1
}

inline FeatureTensor featurize_sequence(const SkeletonSequence& seq, const AnchorPairSet& anchors) {
  if (anchors.per_frame() && anchors.frames != seq.frames) {
    throw FrameCountMismatch("anchors carry " + std::to_string(anchors.frames) + " frames, sequence has " +
                             std::to_string(seq.frames));
  }
  FeatureTensor out;
  out.values = Tensor({seq.frames, seq.joints, anchors.heads});
  for (int h = 0; h < anchors.heads; ++h) out.channels.push_back("angle-head-" + std::to_string(h));
  for (int t = 0; t < seq.frames; ++t) {
    for (int v = 0; v < seq.joints; ++v) {
      const Vec3 u = seq.joint(t, v);
      for (int h = 0; h < anchors.heads; ++h) {
        out.values.at(t, v, h) = angle_feature(u, anchors.anchor(t, h, 0), anchors.anchor(t, h, 1));
      }
    }
  }
  return out;
}

inline std::vector<std::string> default_fixed_anchor_names(const SkeletonLayout& layout) {
  const std::string root = layout.joint_names[static_cast<std::size_t>(layout.root)];
  std::vector<std::string> names;
  for (const char* a : {"head", "left_hand", "right_hand", "left_foot", "right_foot"}) {
    names.push_back(a);
    names.push_back(root);
  }
  names.push_back(root);  // (root, root): deliberately degenerate, stays a dead channel
  names.push_back(root);
  names.push_back("spine");
  names.push_back(root);
  return names;
}

// Consecutive name pairs become anchor pairs that track the named joints
// frame by frame.
inline AnchorPairSet fixed_anchor_pairs(const SkeletonLayout& layout, const SkeletonSequence& seq,
                                        const std::vector<std::string>& names) {
  if (names.empty() || names.size() % 2 != 0) {
    throw std::invalid_argument("fixed_anchor_pairs: need a non-empty, even-length name list");
  }
  std::vector<int> idx;
  for (const auto& n : names) {
    const int i = layout.index_of(n);
    if (i < 0) throw UnknownJointName(n);
    idx.push_back(i);
  }
  const int heads = static_cast<int>(names.size() / 2);
  Tensor coords({seq.frames, heads, 2, 3});
  for (int t = 0; t < seq.frames; ++t) {
    for (int h = 0; h < heads; ++h) {
      for (int which = 0; which < 2; ++which) {
        const Vec3 p = seq.joint(t, idx[static_cast<std::size_t>(2 * h + which)]);
        coords[static_cast<std::size_t>(((t * heads + h) * 2 + which) * 3 + 0)] = p[0];
        coords[static_cast<std::size_t>(((t * heads + h) * 2 + which) * 3 + 1)] = p[1];
        coords[static_cast<std::size_t>(((t * heads + h) * 2 + which) * 3 + 2)] = p[2];
      }
    }
  }
  return AnchorPairSet::per_frame(seq.frames, heads, std::move(coords), AnchorProvenance::FixedJoint);
}

// child - parent along each incoming edge; the root has no incoming edge and
// keeps zeros. Channels: bone-dx, bone-dy, bone-dz.
inline FeatureTensor bone_features(const SkeletonSequence& seq, const SkeletonLayout& layout) {
  FeatureTensor out;
  out.values = Tensor({seq.frames, seq.joints, 3});
  out.channels = {"bone-dx", "bone-dy", "bone-dz"};
  for (int t = 0; t < seq.frames; ++t) {
    for (auto [parent, child] : layout.bone_edges) {
      const Vec3 p = seq.joint(t, parent), c = seq.joint(t, child);
      out.values.at(t, child, 0) = c[0] - p[0];
      out.values.at(t, child, 1) = c[1] - p[1];
      out.values.at(t, child, 2) = c[2] - p[2];
    }
  }
  return out;
}

}  // namespace sap
