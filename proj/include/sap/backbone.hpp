#pragma once

// Temporal-pooling MLP classifier head: per-frame flatten -> linear ->
// rectifier -> mean over frames -> linear -> rectifier -> linear. A
// deliberately small stand-in for the heavy video backbones; it keeps full
// training runs at desk scale. The graph construction in pipeline.hpp must
// reproduce this computation bit for bit, so loop orders here are pinned to
// the autodiff gemm (accumulate over the inner dimension, ascending).

#include <stdexcept>
#include <string>

#include "sap/angle.hpp"
#include "sap/rng.hpp"
#include "sap/tensor.hpp"

namespace sap {

struct BackboneParams {
  Tensor w1, b1;  // hidden1 x input, hidden1
  Tensor w2, b2;  // hidden2 x hidden1, hidden2
  Tensor w3, b3;  // classes x hidden2, classes

  int input() const { return w1.dim(1); }
  int hidden1() const { return w1.dim(0); }
  int hidden2() const { return w2.dim(0); }
  int classes() const { return w3.dim(0); }

  void validate() const {
    if (w1.rank() != 2 || w2.rank() != 2 || w3.rank() != 2) throw ShapeMismatch("backbone: weights must be matrices");
    if (w2.dim(1) != hidden1() || w3.dim(1) != hidden2()) throw ShapeMismatch("backbone: layer sizes do not chain");
    if (b1.shape() != std::vector<int>{hidden1()} || b2.shape() != std::vector<int>{hidden2()} ||
        b3.shape() != std::vector<int>{classes()}) {
      throw ShapeMismatch("backbone: bias sizes do not match weights");
    }
    if (!w1.all_finite() || !b1.all_finite() || !w2.all_finite() || !b2.all_finite() || !w3.all_finite() ||
        !b3.all_finite()) {
      throw std::invalid_argument("backbone: non-finite parameter entry");
    }
  }
};

inline BackboneParams init_backbone_params(int input, int hidden1, int hidden2, int classes,
                                           std::uint64_t seed) {
  if (input < 1 || hidden1 < 1 || hidden2 < 1 || classes < 2) {
    throw std::invalid_argument("init_backbone_params: bad layer sizes");
  }
  Rng rng(mix_seed(seed, 0xbac0'0001ULL));
  auto draw = [&](int rows, int cols) {
    Tensor t({rows, cols});
    const double r = 1.0 / std::sqrt(static_cast<double>(cols));
    for (long long i = 0; i < t.size(); ++i) t[static_cast<std::size_t>(i)] = rng.uniform(-r, r);
    return t;
  };
  BackboneParams p;
  p.w1 = draw(hidden1, input);
  p.b1 = Tensor({hidden1});
  p.w2 = draw(hidden2, hidden1);
  p.b2 = Tensor({hidden2});
  p.w3 = draw(classes, hidden2);
  p.b3 = Tensor({classes});
  return p;
}

// features.values is T x V x C; each frame flattens row-major to V*C, which
// must equal the backbone input width.
inline Tensor backbone_forward(const FeatureTensor& features, const BackboneParams& params) {
  params.validate();
  const int t_count = features.frames();
  const int width = features.joints() * features.channel_count();
  if (width != params.input()) {
    throw ShapeMismatch("backbone_forward: feature width " + std::to_string(width) + " vs input " +
                        std::to_string(params.input()));
  }
  const double* x = features.values.data();
  const int h1 = params.hidden1(), h2 = params.hidden2(), k = params.classes();
  // Frame-wise first layer, then temporal mean pooling.
  Tensor pooled({h1});
  {
    Tensor act({t_count, h1});
    for (int t = 0; t < t_count; ++t) {
      for (int r = 0; r < h1; ++r) {
        double acc = 0.0;
        for (int c = 0; c < width; ++c) acc += x[static_cast<std::size_t>(t) * width + c] * params.w1.at(r, c);
        acc += params.b1.at(r);
        act.at(t, r) = acc > 0.0 ? acc : 0.0;
      }
    }
    for (int r = 0; r < h1; ++r) {
      double acc = 0.0;
      for (int t = 0; t < t_count; ++t) acc += act.at(t, r);
      pooled.at(r) = acc / static_cast<double>(t_count);
    }
  }
  Tensor mid({h2});
  for (int r = 0; r < h2; ++r) {
    double acc = 0.0;
    for (int c = 0; c < h1; ++c) acc += pooled.at(c) * params.w2.at(r, c);
    acc += params.b2.at(r);
    mid.at(r) = acc > 0.0 ? acc : 0.0;
  }
  Tensor logits({k});
  for (int r = 0; r < k; ++r) {
    double acc = 0.0;
    for (int c = 0; c < h2; ++c) acc += mid.at(c) * params.w3.at(r, c);
    logits.at(r) = acc + params.b3.at(r);
  }
  return logits;
}

}  // namespace sap
