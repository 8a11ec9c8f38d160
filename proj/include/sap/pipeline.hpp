#pragma once

// Differentiable model construction. The graph is built once per
// configuration (shapes fixed) and rebound per sample; only the anchor
// proposal and classifier parameters are trainable, coordinates enter as
// constants. Feature streams that carry no parameters (coords, bones,
// fixed-joint angles) are computed eagerly and bound as one constant block;
// the proposed-anchor angle stream is built in-graph so gradients reach the
// attention parameters.
//
// The in-graph softmax subtracts the logit mean instead of the max: the max
// index would freeze into the graph structure while the mean keeps the same
// value and, because the softmax Jacobian annihilates constant shifts, the
// same gradient. Eager and graph paths therefore agree to rounding, not bit
// for bit; consistency tests pin the difference below 1e-12.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sap/angle.hpp"
#include "sap/autodiff.hpp"
#include "sap/backbone.hpp"
#include "sap/sap_module.hpp"
#include "sap/skeleton.hpp"
#include "sap/tensor.hpp"

namespace sap {

struct StreamSet {
  bool coords = false;
  bool bones = false;
  bool angles_fixed = false;
  bool angles_sap = true;

  bool any_fixed() const { return coords || bones || angles_fixed; }
  bool any() const { return any_fixed() || angles_sap; }

  std::string str() const {
    std::string s;
    auto app = [&](bool on, const char* name) {
      if (!on) return;
      if (!s.empty()) s += '+';
      s += name;
    };
    app(coords, "coords");
    app(bones, "bones");
    app(angles_fixed, "angles-fixed");
    app(angles_sap, "angles-sap");
    return s.empty() ? "none" : s;
  }
};

// Everything needed to turn a skeleton sequence into the model's input
// features, minus the trainable SAP parameters.
struct FeaturePlan {
  SkeletonLayout layout;
  StreamSet streams;
  std::vector<std::string> fixed_names;  // consecutive pairs; for angles_fixed
  bool normalize = true;                 // subtract the frame-0 root before featurizing

  int fixed_head_count() const { return static_cast<int>(fixed_names.size() / 2); }

  int fixed_channel_count() const {
    return (streams.coords ? 3 : 0) + (streams.bones ? 3 : 0) +
           (streams.angles_fixed ? fixed_head_count() : 0);
  }

  std::vector<std::string> channel_descriptors(int sap_heads) const {
    std::vector<std::string> out;
    if (streams.coords) {
      out.insert(out.end(), {"coord-x", "coord-y", "coord-z"});
    }
    if (streams.bones) {
      out.insert(out.end(), {"bone-dx", "bone-dy", "bone-dz"});
    }
    if (streams.angles_fixed) {
      for (int h = 0; h < fixed_head_count(); ++h) out.push_back("angle-fixed-" + std::to_string(h));
    }
    if (streams.angles_sap) {
      for (int h = 0; h < sap_heads; ++h) out.push_back("angle-head-" + std::to_string(h));
    }
    return out;
  }

  SkeletonSequence prepare(const SkeletonSequence& seq) const {
    return normalize ? normalize_sequence(seq, layout) : seq;
  }

  // The parameter-free channels as one T x V x C_fixed block. Operates on an
  // already-prepared sequence.
  Tensor fixed_features(const SkeletonSequence& seq) const {
    const int c_fixed = fixed_channel_count();
    Tensor out({seq.frames, seq.joints, c_fixed});
    int base = 0;
    if (streams.coords) {
      for (int t = 0; t < seq.frames; ++t) {
        for (int v = 0; v < seq.joints; ++v) {
          for (int k = 0; k < 3; ++k) out.at(t, v, base + k) = seq.coords.at(t, v, k);
        }
      }
      base += 3;
    }
    if (streams.bones) {
      const FeatureTensor bones = bone_features(seq, layout);
      for (int t = 0; t < seq.frames; ++t) {
        for (int v = 0; v < seq.joints; ++v) {
          for (int k = 0; k < 3; ++k) out.at(t, v, base + k) = bones.values.at(t, v, k);
        }
      }
      base += 3;
    }
    if (streams.angles_fixed) {
      const FeatureTensor ang = featurize_sequence(seq, fixed_anchor_pairs(layout, seq, fixed_names));
      for (int t = 0; t < seq.frames; ++t) {
        for (int v = 0; v < seq.joints; ++v) {
          for (int h = 0; h < ang.channel_count(); ++h) out.at(t, v, base + h) = ang.values.at(t, v, h);
        }
      }
    }
    return out;
  }
};

// Eager end-to-end featurization (the CLI featurize path and the reference
// the graph is tested against).
inline FeatureTensor assemble_features(const SkeletonSequence& raw, const FeaturePlan& plan,
                                       const SapParams* sap) {
  if (plan.streams.angles_sap && sap == nullptr) {
    throw std::invalid_argument("assemble_features: angles-sap stream enabled but no SAP parameters given");
  }
  const SkeletonSequence seq = plan.prepare(raw);
  const int c_fixed = plan.fixed_channel_count();
  const int c_sap = plan.streams.angles_sap ? sap->heads : 0;
  FeatureTensor out;
  out.values = Tensor({seq.frames, seq.joints, c_fixed + c_sap});
  out.channels = plan.channel_descriptors(c_sap);
  if (c_fixed > 0) {
    const Tensor fixed = plan.fixed_features(seq);
    for (int t = 0; t < seq.frames; ++t) {
      for (int v = 0; v < seq.joints; ++v) {
        for (int c = 0; c < c_fixed; ++c) out.values.at(t, v, c) = fixed.at(t, v, c);
      }
    }
  }
  if (c_sap > 0) {
    const FeatureTensor ang = sap_forward(seq, *sap);
    for (int t = 0; t < seq.frames; ++t) {
      for (int v = 0; v < seq.joints; ++v) {
        for (int h = 0; h < c_sap; ++h) out.values.at(t, v, c_fixed + h) = ang.values.at(t, v, h);
      }
    }
  }
  return out;
}

// Built graph plus the node ids needed to rebind inputs, read outputs, and
// enumerate trainables.
struct ModelGraph {
  ad::Graph g;
  int frames = 0, joints = 0, classes = 0;
  StreamSet streams;
  int sap_heads = 0, sap_hidden = 0;
  SapVariant variant = SapVariant::V3AroundBody;
  double alpha = 1.0;
  int fixed_channels = 0;

  ad::NodeId coords_in = -1;  // (T,V,3), bound iff angles_sap
  ad::NodeId means_in = -1;   // (V,3), bound iff angles_sap
  ad::NodeId frame0_in = -1;  // (V,3), bound iff angles_sap && V2
  ad::NodeId fixed_in = -1;   // (T,V,C_fixed), bound iff any fixed stream
  ad::NodeId features = -1;   // (T, V*C)
  ad::NodeId logits = -1;     // (K)
  ad::NodeId loss = -1;       // scalar

  // Trainables in a fixed, name-aligned order (checkpoint layout).
  std::vector<std::pair<std::string, ad::NodeId>> named_params;

  std::vector<ad::NodeId> param_ids() const {
    std::vector<ad::NodeId> out;
    for (const auto& [name, id] : named_params) out.push_back(id);
    return out;
  }

  ad::NodeId param_by_name(const std::string& name) const {
    for (const auto& [n, id] : named_params) {
      if (n == name) return id;
    }
    return -1;
  }
};

namespace detail {

// Literal Eq.-3 double sum: s_i = alpha * sum_j theta_i . phi_j, then the
// mean-shifted softmax. Returns the simplex node (V entries).
inline ad::NodeId build_bank_weights(ad::Graph& g, ad::NodeId means, ad::NodeId w_theta, ad::NodeId w_phi,
                                     double alpha, int joints) {
  const ad::NodeId theta = g.matmul(means, w_theta, false, true);  // (V,d)
  const ad::NodeId phi = g.matmul(means, w_phi, false, true);      // (V,d)
  std::vector<ad::NodeId> theta_rows, phi_rows;
  for (int v = 0; v < joints; ++v) {
    theta_rows.push_back(g.select(theta, {v}));
    phi_rows.push_back(g.select(phi, {v}));
  }
  std::vector<ad::NodeId> logit_entries;
  for (int i = 0; i < joints; ++i) {
    ad::NodeId acc = g.dot(theta_rows[static_cast<std::size_t>(i)], phi_rows[0]);
    for (int j = 1; j < joints; ++j) {
      acc = g.add(acc, g.dot(theta_rows[static_cast<std::size_t>(i)], phi_rows[static_cast<std::size_t>(j)]));
    }
    logit_entries.push_back(g.scale(acc, alpha));
  }
  const ad::NodeId s = g.concat(logit_entries, {joints});
  const ad::NodeId shifted = g.sub(s, g.mean_axis(s, 0));
  const ad::NodeId e = g.exp(shifted);
  return g.div(e, g.sum_axis(e, 0));
}

}  // namespace detail

inline ModelGraph build_model_graph(const FeaturePlan& plan, int frames, int classes, int hidden1,
                                    int hidden2, const SapParams* sap, const BackboneParams& backbone) {
  if (!plan.streams.any()) throw std::invalid_argument("build_model_graph: no feature streams enabled");
  if (plan.streams.angles_sap) {
    if (sap == nullptr) throw std::invalid_argument("build_model_graph: angles-sap enabled but no parameters");
    sap->validate();
  }
  ModelGraph m;
  m.frames = frames;
  m.joints = plan.layout.size();
  m.classes = classes;
  m.streams = plan.streams;
  m.fixed_channels = plan.fixed_channel_count();
  const int v_count = m.joints;
  const int c_sap = plan.streams.angles_sap ? sap->heads : 0;
  const int c_total = m.fixed_channels + c_sap;
  ad::Graph& g = m.g;

  if (m.fixed_channels > 0) m.fixed_in = g.constant(std::vector<int>{frames, v_count, m.fixed_channels});

  std::vector<std::vector<ad::NodeId>> sap_cells;  // [t*v] -> H angle scalars
  if (plan.streams.angles_sap) {
    m.sap_heads = sap->heads;
    m.sap_hidden = sap->hidden;
    m.variant = sap->variant;
    m.alpha = sap->alpha;
    m.coords_in = g.constant(std::vector<int>{frames, v_count, 3});
    m.means_in = g.constant(std::vector<int>{v_count, 3});
    if (sap->variant == SapVariant::V2FirstFrame) m.frame0_in = g.constant(std::vector<int>{v_count, 3});

    std::vector<ad::NodeId> frame_slices;  // (V,3) per frame, for V1
    if (sap->variant == SapVariant::V1PerFrame) {
      for (int t = 0; t < frames; ++t) frame_slices.push_back(g.select(m.coords_in, {t}));
    }

    // anchors[h*2+b]: one node (3) for shared variants, T nodes for V1.
    std::vector<std::vector<ad::NodeId>> anchors(static_cast<std::size_t>(sap->heads) * 2);
    for (int h = 0; h < sap->heads; ++h) {
      for (int b = 0; b < 2; ++b) {
        const std::string prefix = "sap/h" + std::to_string(h) + "/b" + std::to_string(b) + "/";
        const SapBank& bk = sap->bank(h, b);
        const ad::NodeId w_theta = g.parameter(bk.w_theta);
        const ad::NodeId w_phi = g.parameter(bk.w_phi);
        m.named_params.emplace_back(prefix + "w_theta", w_theta);
        m.named_params.emplace_back(prefix + "w_phi", w_phi);
        const ad::NodeId weights =
            detail::build_bank_weights(g, m.means_in, w_theta, w_phi, sap->alpha, v_count);
        auto& slot = anchors[static_cast<std::size_t>(h * 2 + b)];
        switch (sap->variant) {
          case SapVariant::V1PerFrame:
            for (int t = 0; t < frames; ++t) slot.push_back(g.matmul(weights, frame_slices[static_cast<std::size_t>(t)]));
            break;
          case SapVariant::V2FirstFrame:
            slot.push_back(g.matmul(weights, m.frame0_in));
            break;
          case SapVariant::V3AroundBody: {
            const ad::NodeId w_g = g.parameter(bk.w_g);
            m.named_params.emplace_back(prefix + "w_g", w_g);
            const ad::NodeId transformed = g.matmul(m.means_in, w_g, false, true);  // (V,3)
            slot.push_back(g.matmul(weights, transformed));
            break;
          }
        }
      }
    }

    // Anchor-pair separation norms; shared variants reuse one per head.
    std::vector<std::vector<ad::NodeId>> pair_sep(static_cast<std::size_t>(sap->heads));
    for (int h = 0; h < sap->heads; ++h) {
      const auto& a0 = anchors[static_cast<std::size_t>(h * 2)];
      const auto& a1 = anchors[static_cast<std::size_t>(h * 2 + 1)];
      for (std::size_t t = 0; t < a0.size(); ++t) {
        pair_sep[static_cast<std::size_t>(h)].push_back(g.norm(g.sub(a0[t], a1[t])));
      }
    }

    sap_cells.resize(static_cast<std::size_t>(frames) * v_count);
    for (int t = 0; t < frames; ++t) {
      for (int v = 0; v < v_count; ++v) {
        const ad::NodeId u = g.select(m.coords_in, {t, v});
        auto& cell = sap_cells[static_cast<std::size_t>(t) * v_count + v];
        for (int h = 0; h < sap->heads; ++h) {
          const auto& a0 = anchors[static_cast<std::size_t>(h * 2)];
          const auto& a1 = anchors[static_cast<std::size_t>(h * 2 + 1)];
          const std::size_t ti = a0.size() == 1 ? 0 : static_cast<std::size_t>(t);
          const ad::NodeId b1 = g.sub(a0[ti], u);
          const ad::NodeId b2 = g.sub(a1[ti], u);
          const ad::NodeId n1 = g.norm(b1);
          const ad::NodeId n2 = g.norm(b2);
          const ad::NodeId n3 = pair_sep[static_cast<std::size_t>(h)][ti];
          cell.push_back(g.div(g.dot(b1, b2), g.mul(n1, n2), {n1, n2, n3}, true));
        }
      }
    }
  }

  // Feature block (T, V*C) in channel order fixed-then-sap per joint.
  if (plan.streams.angles_sap && m.fixed_channels > 0) {
    std::vector<ad::NodeId> parts;
    for (int t = 0; t < frames; ++t) {
      for (int v = 0; v < v_count; ++v) {
        parts.push_back(g.select(m.fixed_in, {t, v}));
        const auto& cell = sap_cells[static_cast<std::size_t>(t) * v_count + v];
        parts.insert(parts.end(), cell.begin(), cell.end());
      }
    }
    m.features = g.concat(std::move(parts), {frames, v_count * c_total});
  } else if (plan.streams.angles_sap) {
    std::vector<ad::NodeId> parts;
    for (const auto& cell : sap_cells) parts.insert(parts.end(), cell.begin(), cell.end());
    m.features = g.concat(std::move(parts), {frames, v_count * c_total});
  } else {
    m.features = g.concat({m.fixed_in}, {frames, v_count * c_total});
  }

  backbone.validate();
  if (backbone.input() != v_count * c_total || backbone.classes() != classes ||
      backbone.hidden1() != hidden1 || backbone.hidden2() != hidden2) {
    throw ShapeMismatch("build_model_graph: backbone does not match feature width or class count");
  }
  const ad::NodeId w1 = g.parameter(backbone.w1), b1 = g.parameter(backbone.b1);
  const ad::NodeId w2 = g.parameter(backbone.w2), b2 = g.parameter(backbone.b2);
  const ad::NodeId w3 = g.parameter(backbone.w3), b3 = g.parameter(backbone.b3);
  m.named_params.emplace_back("backbone/w1", w1);
  m.named_params.emplace_back("backbone/b1", b1);
  m.named_params.emplace_back("backbone/w2", w2);
  m.named_params.emplace_back("backbone/b2", b2);
  m.named_params.emplace_back("backbone/w3", w3);
  m.named_params.emplace_back("backbone/b3", b3);

  const ad::NodeId act1 = g.relu(g.add(g.matmul(m.features, w1, false, true), b1));  // (T,h1)
  const ad::NodeId pooled = g.mean_axis(act1, 0);                                    // (h1)
  const ad::NodeId act2 = g.relu(g.add(g.matmul(pooled, w2, false, true), b2));      // (h2)
  m.logits = g.add(g.matmul(act2, w3, false, true), b3);                             // (K)
  m.loss = g.softmax_cross_entropy(m.logits, 0);
  return m;
}

// Rebinds the per-sample leaves. The sequence is prepared (normalized) here,
// exactly as the eager path does.
inline void bind_sample(ModelGraph& m, const FeaturePlan& plan, const SkeletonSequence& raw,
                        int label) {
  if (raw.frames != m.frames || raw.joints != m.joints) {
    throw ShapeMismatch("bind_sample: sequence is " + std::to_string(raw.frames) + "x" +
                        std::to_string(raw.joints) + ", graph expects " + std::to_string(m.frames) + "x" +
                        std::to_string(m.joints));
  }
  const SkeletonSequence seq = plan.prepare(raw);
  if (m.fixed_in >= 0) m.g.set_value(m.fixed_in, plan.fixed_features(seq));
  if (m.coords_in >= 0) {
    m.g.set_value(m.coords_in, seq.coords);
    m.g.set_value(m.means_in, temporal_mean(seq));
    if (m.frame0_in >= 0) {
      Tensor f0({m.joints, 3});
      for (int v = 0; v < m.joints; ++v) {
        for (int k = 0; k < 3; ++k) f0.at(v, k) = seq.coords.at(0, v, k);
      }
      m.g.set_value(m.frame0_in, f0);
    }
  }
  if (label >= 0) m.g.set_label(m.loss, label);
}

}  // namespace sap
