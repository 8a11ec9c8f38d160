#pragma once

// Training and evaluation harness: SGD with classical momentum, stepwise lr
// decay, seeded shuffling, checkpoint save/resume, and the two ablation
// sweeps (head count, anchor placement). Single-threaded and bit
// deterministic for a given seed; per-epoch shuffle seeds are derived from
// (run seed, epoch), so resuming from a checkpoint needs no RNG state.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sap/checkpoint.hpp"
#include "sap/pipeline.hpp"
#include "sap/synthetic.hpp"

namespace sap {

struct EmptyDataset : std::runtime_error {
  EmptyDataset() : std::runtime_error("EmptyDataset: training requires at least one sample") {}
};
struct DivergenceDetected : std::runtime_error {
  explicit DivergenceDetected(const std::string& m) : std::runtime_error("DivergenceDetected: " + m) {}
};

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  std::vector<int> decay_epochs = {30, 40};
  double decay_factor = 0.1;
  int epochs = 50;
  int batch_size = 32;
  std::uint64_t seed = 42;

  StreamSet streams;  // default: angles-sap only
  SapVariant variant = SapVariant::V3AroundBody;
  int heads = 5;
  int hidden_dim = 8;  // d of the theta/phi projections
  double alpha = 1.0;
  bool share_banks = false;

  int hidden1 = 128;
  int hidden2 = 64;
  bool normalize = true;
  std::vector<std::string> fixed_names;  // empty -> layout default when angles-fixed is on

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
    if (!std::is_sorted(decay_epochs.begin(), decay_epochs.end())) {
      throw std::invalid_argument("TrainConfig: decay epochs must be sorted");
    }
    if (!(decay_factor > 0.0) || decay_factor >= 1.0) {
      throw std::invalid_argument("TrainConfig: decay factor must be in (0,1)");
    }
    if (epochs < 0 || batch_size < 1) throw std::invalid_argument("TrainConfig: bad epochs or batch size");
    if (heads < 1 || hidden_dim < 1 || !(alpha > 0.0)) throw std::invalid_argument("TrainConfig: bad SAP settings");
    if (hidden1 < 1 || hidden2 < 1) throw std::invalid_argument("TrainConfig: bad hidden sizes");
    if (!streams.any()) throw std::invalid_argument("TrainConfig: no feature streams enabled");
  }
};

// Stepwise decay. When 1/factor is integral (the default 0.1 gives 10) the
// update divides by the integer so the scheduled values are the exact
// decimal literals (0.05 -> 0.005 -> 0.0005), which the acceptance check
// compares with ==.
inline double lr_schedule(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw std::invalid_argument("lr_schedule: epoch must be >= 0");
  const double inv = 1.0 / config.decay_factor;
  const long long divisor = std::llround(inv);
  const bool integral = std::abs(inv - static_cast<double>(divisor)) < 1e-9;
  double lr = config.lr;
  for (int e : config.decay_epochs) {
    if (epoch >= e) lr = integral ? lr / static_cast<double>(divisor) : lr * config.decay_factor;
  }
  return lr;
}

// Classical momentum: velocity accumulates the raw gradient, lr applies at
// the parameter update.
inline void sgd_momentum_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
                              double momentum) {
  if (!param.same_shape(grad) || !param.same_shape(velocity)) {
    throw ShapeMismatch("sgd_momentum_step: param/grad/velocity shapes differ");
  }
  for (long long i = 0; i < param.size(); ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    velocity[k] = momentum * velocity[k] + grad[k];
    param[k] -= lr * velocity[k];
  }
}

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double lr = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<int>> confusion;  // [true][predicted]
};

struct RunReport {
  std::vector<EpochStats> epochs;
  std::vector<std::vector<int>> confusion;
  double wall_clock_seconds = 0.0;

  double final_test_accuracy() const { return epochs.empty() ? 0.0 : epochs.back().test_accuracy; }
  double final_train_loss() const { return epochs.empty() ? 0.0 : epochs.back().train_loss; }
};

struct TrainedModel {
  FeaturePlan plan;
  TrainConfig config;
  int classes = 0;
  ModelGraph graph;
  RunReport report;
};

struct TrainOptions {
  std::string checkpoint_path;  // save here (after save_at_epoch, or after the final epoch)
  int save_at_epoch = -1;       // checkpoint once this many epochs have completed
  int stop_after_epoch = -1;    // halt early with this many epochs completed
  std::string resume_path;      // load parameters/velocities/epoch before training
};

namespace detail {

inline int infer_classes(const std::vector<SkeletonSequence>& train_set,
                         const std::vector<SkeletonSequence>& test_set) {
  int k = 0;
  for (const auto* set : {&train_set, &test_set}) {
    for (const auto& s : *set) {
      if (s.label < 0) throw std::invalid_argument("dataset sample is unlabeled");
      k = std::max(k, s.label + 1);
    }
  }
  return std::max(k, 2);
}

inline int argmax(const Tensor& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v.at(i) > v.at(best)) best = i;
  }
  return best;
}

inline std::vector<std::pair<std::string, Tensor>> snapshot_named(const ModelGraph& m) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, id] : m.named_params) out.emplace_back(name, m.g.value(id));
  return out;
}

}  // namespace detail

// Loads checkpoint tensors into a built graph (and optimizer velocities, if
// a slot vector is supplied). Names, order, and shapes must match exactly.
// Returns the epoch count stored in the checkpoint.
inline int apply_checkpoint(ModelGraph& m, std::vector<Tensor>* velocity, const Checkpoint& ckpt) {
  if (ckpt.params.size() != m.named_params.size() || ckpt.velocities.size() != m.named_params.size()) {
    throw CorruptCheckpoint("checkpoint tensor count does not match this model");
  }
  for (std::size_t i = 0; i < m.named_params.size(); ++i) {
    const auto& [name, id] = m.named_params[i];
    if (ckpt.params[i].first != name || ckpt.velocities[i].first != name) {
      throw CorruptCheckpoint("checkpoint name mismatch: '" + ckpt.params[i].first + "' vs '" + name + "'");
    }
    if (ckpt.params[i].second.shape() != m.g.node(id).shape) {
      throw CorruptCheckpoint("checkpoint shape mismatch for '" + name + "'");
    }
    m.g.set_value(id, ckpt.params[i].second);
    if (velocity != nullptr) (*velocity)[i] = ckpt.velocities[i].second;
  }
  return ckpt.epoch;
}

inline FeaturePlan make_feature_plan(const SkeletonLayout& layout, const TrainConfig& config) {
  FeaturePlan plan;
  plan.layout = layout;
  plan.streams = config.streams;
  plan.normalize = config.normalize;
  if (config.streams.angles_fixed) {
    plan.fixed_names = config.fixed_names.empty() ? default_fixed_anchor_names(layout) : config.fixed_names;
  }
  return plan;
}

// Seeded model construction shared by the trainer and the checkpoint-loading
// CLI paths (eval, export-anchors): parameters are initialized from
// config.seed and can then be overwritten via apply_checkpoint.
inline TrainedModel initialize_model(int frames, int classes, const SkeletonLayout& layout,
                                     const TrainConfig& config) {
  config.validate();
  TrainedModel model;
  model.plan = make_feature_plan(layout, config);
  model.config = config;
  model.classes = classes;
  SapParams sap;
  const SapParams* sap_ptr = nullptr;
  if (config.streams.angles_sap) {
    sap = init_sap_params(config.heads, config.hidden_dim, config.variant, config.alpha, config.seed,
                          config.share_banks);
    sap_ptr = &sap;
  }
  const int width =
      layout.size() * (model.plan.fixed_channel_count() + (config.streams.angles_sap ? config.heads : 0));
  const BackboneParams backbone =
      init_backbone_params(width, config.hidden1, config.hidden2, classes, config.seed);
  model.graph = build_model_graph(model.plan, frames, classes, config.hidden1, config.hidden2, sap_ptr,
                                  backbone);
  return model;
}

inline EvalResult evaluate(ModelGraph& m, const FeaturePlan& plan,
                           const std::vector<SkeletonSequence>& samples, int classes) {
  EvalResult r;
  r.confusion.assign(static_cast<std::size_t>(classes), std::vector<int>(static_cast<std::size_t>(classes), 0));
  if (samples.empty()) return r;
  int hits = 0;
  for (const auto& s : samples) {
    bind_sample(m, plan, s, s.label);
    m.g.forward();
    const int pred = detail::argmax(m.g.value(m.logits));
    r.confusion[static_cast<std::size_t>(s.label)][static_cast<std::size_t>(pred)]++;
    if (pred == s.label) ++hits;
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(samples.size());
  return r;
}

inline TrainedModel train(const std::vector<SkeletonSequence>& train_set,
                          const std::vector<SkeletonSequence>& test_set, const SkeletonLayout& layout,
                          const TrainConfig& config, const TrainOptions& opts = {}) {
  config.validate();
  if (train_set.empty()) throw EmptyDataset();
  const auto t_start = std::chrono::steady_clock::now();

  const int frames = train_set.front().frames;
  const int joints = train_set.front().joints;
  for (const auto* set : {&train_set, &test_set}) {
    for (const auto& s : *set) {
      if (s.frames != frames || s.joints != joints) {
        throw ShapeMismatch("train: all sequences must share T and V (graph shapes are fixed)");
      }
    }
  }
  if (joints != layout.size()) throw ShapeMismatch("train: layout size does not match sequences");

  TrainedModel model = initialize_model(frames, detail::infer_classes(train_set, test_set), layout, config);
  ModelGraph& m = model.graph;
  const std::vector<ad::NodeId> param_ids = m.param_ids();

  std::vector<Tensor> velocity;
  for (ad::NodeId id : param_ids) velocity.emplace_back(m.g.node(id).shape);

  int start_epoch = 0;
  if (!opts.resume_path.empty()) {
    start_epoch = apply_checkpoint(m, &velocity, load_checkpoint(opts.resume_path));
  }

  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Tensor> grad_acc;
  for (ad::NodeId id : param_ids) grad_acc.emplace_back(m.g.node(id).shape);

  auto maybe_save = [&](int completed_epochs) {
    if (opts.checkpoint_path.empty()) return;
    const bool at_mark = opts.save_at_epoch >= 0 && completed_epochs == opts.save_at_epoch;
    const bool at_end = opts.save_at_epoch < 0 && completed_epochs == config.epochs;
    if (!at_mark && !at_end) return;
    Checkpoint ckpt;
    ckpt.epoch = completed_epochs;
    ckpt.params = detail::snapshot_named(m);
    for (std::size_t i = 0; i < m.named_params.size(); ++i) {
      ckpt.velocities.emplace_back(m.named_params[i].first, velocity[i]);
    }
    save_checkpoint(ckpt, opts.checkpoint_path);
  };

  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config);
    Rng shuffle_rng(mix_seed(config.seed, 0x5f5fULL, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int hits = 0;
    const int n = static_cast<int>(order.size());
    for (int begin = 0; begin < n; begin += config.batch_size) {
      const int end = std::min(begin + config.batch_size, n);
      for (auto& t : grad_acc) t.fill(0.0);
      for (int pos = begin; pos < end; ++pos) {
        const SkeletonSequence& sample = train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])];
        bind_sample(m, model.plan, sample, sample.label);
        try {
          m.g.forward();
          loss_sum += m.g.value(m.loss)[0];
          if (detail::argmax(m.g.value(m.logits)) == sample.label) ++hits;
          const ad::Gradients grads = m.g.backward(m.loss, param_ids);
          for (std::size_t i = 0; i < param_ids.size(); ++i) {
            const Tensor& gt = grads.at(param_ids[i]);
            for (long long j = 0; j < gt.size(); ++j) {
              grad_acc[i][static_cast<std::size_t>(j)] += gt[static_cast<std::size_t>(j)];
            }
          }
        } catch (const ad::NonFiniteIntermediate& e) {
          throw DivergenceDetected("epoch " + std::to_string(epoch) + ", batch at " + std::to_string(begin) +
                                   ", sample " + sample.source_id + ": " + e.what());
        }
      }
      const double batch_n = static_cast<double>(end - begin);
      for (std::size_t i = 0; i < param_ids.size(); ++i) {
        for (long long j = 0; j < grad_acc[i].size(); ++j) {
          grad_acc[i][static_cast<std::size_t>(j)] /= batch_n;
        }
        sgd_momentum_step(m.g.node_mut(param_ids[i]).value, grad_acc[i], velocity[i], lr,
                          config.momentum);
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(n);
    stats.train_accuracy = static_cast<double>(hits) / static_cast<double>(n);
    stats.test_accuracy = test_set.empty() ? 0.0 : evaluate(m, model.plan, test_set, model.classes).accuracy;
    model.report.epochs.push_back(stats);

    maybe_save(epoch + 1);
    if (opts.stop_after_epoch >= 0 && epoch + 1 >= opts.stop_after_epoch) break;
  }

  const auto& final_set = test_set.empty() ? train_set : test_set;
  model.report.confusion = evaluate(m, model.plan, final_set, model.classes).confusion;
  model.report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return model;
}

// Reads trained SAP parameters back out of the graph for eager-path use
// (anchor export, featurization with a trained model).
inline SapParams sap_params_from_graph(const ModelGraph& m) {
  if (!m.streams.angles_sap) throw std::invalid_argument("model has no SAP stream");
  SapParams p;
  p.heads = m.sap_heads;
  p.hidden = m.sap_hidden;
  p.alpha = m.alpha;
  p.variant = m.variant;
  for (int h = 0; h < p.heads; ++h) {
    for (int b = 0; b < 2; ++b) {
      const std::string prefix = "sap/h" + std::to_string(h) + "/b" + std::to_string(b) + "/";
      SapBank bank;
      bank.w_theta = m.g.value(m.param_by_name(prefix + "w_theta"));
      bank.w_phi = m.g.value(m.param_by_name(prefix + "w_phi"));
      const ad::NodeId wg = m.param_by_name(prefix + "w_g");
      bank.w_g = wg >= 0 ? m.g.value(wg) : Tensor({3, 3});
      if (wg < 0) {
        for (int i = 0; i < 3; ++i) bank.w_g.at(i, i) = 1.0;
      }
      p.banks.push_back(std::move(bank));
    }
  }
  return p;
}

struct AblationRow {
  std::string arm;
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double final_train_loss = 0.0;
};

struct AblationTable {
  std::string axis;
  std::vector<AblationRow> rows;
};

// Head-count sweep mirrors the one/three/five/seven-head comparison; the
// anchor-location sweep compares the fixed-joint baseline against the three
// placement regimes plus the on-joints (high temperature) arm.
inline AblationTable run_ablation(const std::string& axis, const TrainConfig& base,
                                  const SyntheticTaskSpec& data_spec,
                                  const std::vector<std::uint64_t>& seeds) {
  struct Arm {
    std::string name;
    TrainConfig config;
  };
  std::vector<Arm> arms;
  if (axis == "head-count") {
    for (int h : {1, 3, 5, 7}) {
      TrainConfig c = base;
      c.streams = StreamSet{};  // angle stream only
      c.heads = h;
      arms.push_back({"H" + std::to_string(h), c});
    }
  } else if (axis == "anchor-location") {
    TrainConfig fixed = base;
    fixed.streams = StreamSet{false, false, true, false};
    arms.push_back({"fixed-7", fixed});
    for (auto [name, variant, alpha] :
         {std::tuple<const char*, SapVariant, double>{"V1", SapVariant::V1PerFrame, 1.0},
          {"V2-alpha20", SapVariant::V2FirstFrame, 20.0},
          {"V2", SapVariant::V2FirstFrame, 1.0},
          {"V3", SapVariant::V3AroundBody, 1.0}}) {
      TrainConfig c = base;
      c.streams = StreamSet{};
      c.variant = variant;
      c.alpha = alpha;
      arms.push_back({name, c});
    }
  } else {
    throw std::invalid_argument("run_ablation: axis must be head-count or anchor-location");
  }

  AblationTable table;
  table.axis = axis;
  for (std::uint64_t seed : seeds) {
    SyntheticTaskSpec spec = data_spec;
    spec.seed = seed;
    const SyntheticDataset data = generate_synthetic_dataset(spec);
    for (const Arm& arm : arms) {
      TrainConfig c = arm.config;
      c.seed = seed;
      const TrainedModel model = train(data.train, data.test, data.layout, c);
      table.rows.push_back({arm.name, seed, model.report.final_test_accuracy(),
                            model.report.final_train_loss()});
    }
  }
  return table;
}

}  // namespace sap
