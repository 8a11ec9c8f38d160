#pragma once

// Skeleton-anchor proposal: a small self-attention block scores every joint
// against every other joint's temporal mean, softmaxes the scores into a
// simplex over joints, and emits the weighted combination as an anchor
// point. Two independent parameter banks propose the two anchors of a pair;
// H heads give H pairs. Three placement regimes:
//   V1 combines each frame's raw joints (anchors stay inside the body hull,
//      one pair per frame),
//   V2 combines frame-0 joints (one pair shared by all frames),
//   V3 combines linearly transformed temporal means (anchors may leave the
//      body; the transform w_g is learned).
// This is the eager reference path; the differentiable graph construction in
// pipeline.hpp must agree with it exactly.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sap/angle.hpp"
#include "sap/rng.hpp"
#include "sap/skeleton.hpp"
#include "sap/tensor.hpp"

namespace sap {

struct VariantParamMissing : std::runtime_error {
  explicit VariantParamMissing(const std::string& m) : std::runtime_error("VariantParamMissing: " + m) {}
};

enum class SapVariant { V1PerFrame, V2FirstFrame, V3AroundBody };

inline const char* variant_name(SapVariant v) {
  switch (v) {
    case SapVariant::V1PerFrame: return "V1";
    case SapVariant::V2FirstFrame: return "V2";
    case SapVariant::V3AroundBody: return "V3";
  }
  return "?";
}

inline SapVariant parse_variant(const std::string& s) {
  if (s == "V1" || s == "v1") return SapVariant::V1PerFrame;
  if (s == "V2" || s == "v2") return SapVariant::V2FirstFrame;
  if (s == "V3" || s == "v3") return SapVariant::V3AroundBody;
  throw std::invalid_argument("unknown SAP variant '" + s + "' (expected V1, V2 or V3)");
}

// One attention bank: score transform pair plus the anchor transform used by
// the around-body variant.
struct SapBank {
  Tensor w_theta;  // d x 3
  Tensor w_phi;    // d x 3
  Tensor w_g;      // 3 x 3, read only under V3
};

struct SapParams {
  int heads = 5;
  int hidden = 8;
  double alpha = 1.0;
  SapVariant variant = SapVariant::V3AroundBody;
  std::vector<SapBank> banks;  // heads * 2, bank b of head h at index h*2+b

  SapBank& bank(int head, int b) { return banks[static_cast<std::size_t>(head * 2 + b)]; }
  const SapBank& bank(int head, int b) const { return banks[static_cast<std::size_t>(head * 2 + b)]; }

  void validate() const {
    if (heads < 1) throw std::invalid_argument("SapParams: heads must be >= 1");
    if (hidden < 1) throw std::invalid_argument("SapParams: hidden dim must be >= 1");
    if (!(alpha > 0.0)) throw std::invalid_argument("SapParams: alpha must be positive");
    if (static_cast<int>(banks.size()) != heads * 2) {
      throw std::invalid_argument("SapParams: expected heads*2 banks");
    }
    for (const auto& bk : banks) {
      if (bk.w_theta.shape() != std::vector<int>{hidden, 3} || bk.w_phi.shape() != std::vector<int>{hidden, 3}) {
        throw ShapeMismatch("SapParams: w_theta/w_phi must be d x 3");
      }
      if (bk.w_g.shape() != std::vector<int>{3, 3}) throw ShapeMismatch("SapParams: w_g must be 3 x 3");
      if (!bk.w_theta.all_finite() || !bk.w_phi.all_finite() || !bk.w_g.all_finite()) {
        throw std::invalid_argument("SapParams: non-finite parameter entry");
      }
    }
  }
};

// Uniform [-r, r] with r = 1/sqrt(3d) keeps initial logits O(1) so the
// softmax starts near-uniform; w_g starts at identity plus small noise so V3
// anchors begin near the body.
inline SapParams init_sap_params(int heads, int hidden, SapVariant variant, double alpha,
                                 std::uint64_t seed, bool share_banks = false) {
  SapParams p;
  p.heads = heads;
  p.hidden = hidden;
  p.alpha = alpha;
  p.variant = variant;
  const double r = 1.0 / std::sqrt(3.0 * hidden);
  Rng rng(mix_seed(seed, 0x5a50'0001ULL));
  auto draw = [&](int rows, int cols) {
    Tensor t({rows, cols});
    for (long long i = 0; i < t.size(); ++i) t[static_cast<std::size_t>(i)] = rng.uniform(-r, r);
    return t;
  };
  auto near_identity = [&]() {
    Tensor t({3, 3});
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) t.at(i, j) = (i == j ? 1.0 : 0.0) + rng.uniform(-0.01, 0.01);
    }
    return t;
  };
  for (int h = 0; h < heads; ++h) {
    SapBank first{draw(hidden, 3), draw(hidden, 3), near_identity()};
    SapBank second = share_banks ? first : SapBank{draw(hidden, 3), draw(hidden, 3), near_identity()};
    p.banks.push_back(first);
    p.banks.push_back(second);
  }
  return p;
}

struct AnchorWeights {
  Tensor weights;  // V entries

  bool valid_simplex(double tol = 1e-9) const {
    double sum = 0.0;
    for (double w : weights.values()) {
      if (w < 0.0) return false;
      sum += w;
    }
    return std::abs(sum - 1.0) <= tol;
  }
};

// Per-joint average over frames (the attention operates on these means, not
// on individual frames).
inline Tensor temporal_mean(const SkeletonSequence& seq) {
  Tensor mean({seq.joints, 3});
  for (int v = 0; v < seq.joints; ++v) {
    for (int k = 0; k < 3; ++k) {
      double acc = 0.0;
      for (int t = 0; t < seq.frames; ++t) acc += seq.coords.at(t, v, k);
      mean.at(v, k) = acc / seq.frames;
    }
  }
  return mean;
}

// s_i = alpha * sum_j theta(mean_i) . phi(mean_j), written as the literal
// double sum. The factorized form alpha * theta_i . (sum_j phi_j) is kept
// out of production code and used as the algebraic test oracle.
inline Tensor similarity_logits(const Tensor& means, const Tensor& w_theta, const Tensor& w_phi,
                                double alpha) {
  if (means.rank() != 2 || means.dim(1) != 3) throw ShapeMismatch("similarity_logits: means must be V x 3");
  if (w_theta.rank() != 2 || w_phi.rank() != 2 || w_theta.dim(1) != 3 || w_phi.dim(1) != 3 ||
      w_theta.dim(0) != w_phi.dim(0)) {
    throw ShapeMismatch("similarity_logits: transforms must be d x 3 with matching d");
  }
  const int v_count = means.dim(0);
  const int d = w_theta.dim(0);
  auto project = [&](const Tensor& w, int v, int row) {
    return w.at(row, 0) * means.at(v, 0) + w.at(row, 1) * means.at(v, 1) + w.at(row, 2) * means.at(v, 2);
  };
  Tensor logits({v_count});
  for (int i = 0; i < v_count; ++i) {
    double s = 0.0;
    for (int j = 0; j < v_count; ++j) {
      double dotp = 0.0;
      for (int row = 0; row < d; ++row) dotp += project(w_theta, i, row) * project(w_phi, j, row);
      s += dotp;
    }
    logits.at(i) = alpha * s;
  }
  return logits;
}

// Softmax with max-subtraction (value-identical in exact arithmetic,
// overflow-safe in floating point).
inline AnchorWeights anchor_weights(const Tensor& logits) {
  if (logits.rank() != 1) throw ShapeMismatch("anchor_weights: logits must be a vector");
  double m = logits[0];
  for (double v : logits.values()) m = std::max(m, v);
  Tensor w({logits.dim(0)});
  double z = 0.0;
  for (int i = 0; i < logits.dim(0); ++i) {
    w.at(i) = std::exp(logits.at(i) - m);
    z += w.at(i);
  }
  for (int i = 0; i < logits.dim(0); ++i) w.at(i) /= z;
  return AnchorWeights{std::move(w)};
}

// Weighted combination of g(x): V1 -> T x 3 (per-frame joints), V2 -> 3
// (frame-0 joints), V3 -> 3 (w_g-transformed temporal means).
inline Tensor propose_anchor(const SkeletonSequence& seq, const Tensor& means, const AnchorWeights& weights,
                             SapVariant variant, const Tensor* w_g) {
  if (weights.weights.rank() != 1 || weights.weights.dim(0) != seq.joints) {
    throw ShapeMismatch("propose_anchor: weights must have one entry per joint");
  }
  const Tensor& w = weights.weights;
  switch (variant) {
    case SapVariant::V1PerFrame: {
      Tensor anchor({seq.frames, 3});
      for (int t = 0; t < seq.frames; ++t) {
        for (int k = 0; k < 3; ++k) {
          double acc = 0.0;
          for (int v = 0; v < seq.joints; ++v) acc += w.at(v) * seq.coords.at(t, v, k);
          anchor.at(t, k) = acc;
        }
      }
      return anchor;
    }
    case SapVariant::V2FirstFrame: {
      Tensor anchor({3});
      for (int k = 0; k < 3; ++k) {
        double acc = 0.0;
        for (int v = 0; v < seq.joints; ++v) acc += w.at(v) * seq.coords.at(0, v, k);
        anchor.at(k) = acc;
      }
      return anchor;
    }
    case SapVariant::V3AroundBody: {
      if (w_g == nullptr) throw VariantParamMissing("around-body variant requires w_g");
      Tensor anchor({3});
      for (int k = 0; k < 3; ++k) {
        double acc = 0.0;
        for (int v = 0; v < seq.joints; ++v) {
          const double gx = w_g->at(k, 0) * means.at(v, 0) + w_g->at(k, 1) * means.at(v, 1) +
                            w_g->at(k, 2) * means.at(v, 2);
          acc += w.at(v) * gx;
        }
        anchor.at(k) = acc;
      }
      return anchor;
    }
  }
  throw std::logic_error("propose_anchor: unreachable");
}

// Full proposal: each bank of each head runs mean -> logits -> softmax ->
// anchor; bank 0 and bank 1 of head h form pair h.
inline AnchorPairSet propose_anchor_pairs(const SkeletonSequence& seq, const SapParams& params) {
  params.validate();
  const Tensor means = temporal_mean(seq);
  const bool frame_mode = params.variant == SapVariant::V1PerFrame;
  Tensor coords(frame_mode ? std::vector<int>{seq.frames, params.heads, 2, 3}
                           : std::vector<int>{params.heads, 2, 3});
  for (int h = 0; h < params.heads; ++h) {
    for (int b = 0; b < 2; ++b) {
      const SapBank& bk = params.bank(h, b);
      const Tensor logits = similarity_logits(means, bk.w_theta, bk.w_phi, params.alpha);
      const AnchorWeights w = anchor_weights(logits);
      const Tensor anchor = propose_anchor(seq, means, w, params.variant, &bk.w_g);
      if (frame_mode) {
        for (int t = 0; t < seq.frames; ++t) {
          for (int k = 0; k < 3; ++k) {
            coords[static_cast<std::size_t>(((t * params.heads + h) * 2 + b) * 3 + k)] = anchor.at(t, k);
          }
        }
      } else {
        for (int k = 0; k < 3; ++k) {
          coords[static_cast<std::size_t>((h * 2 + b) * 3 + k)] = anchor.at(k);
        }
      }
    }
  }
  return frame_mode
      ? AnchorPairSet::per_frame(seq.frames, params.heads, std::move(coords), AnchorProvenance::SapProposed)
      : AnchorPairSet::shared(params.heads, std::move(coords), AnchorProvenance::SapProposed);
}

inline FeatureTensor sap_forward(const SkeletonSequence& seq, const SapParams& params) {
  return featurize_sequence(seq, propose_anchor_pairs(seq, params));
}

}  // namespace sap
