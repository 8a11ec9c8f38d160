#pragma once

// Command-line surface. Eight subcommands (gen-data, parse, featurize,
// train, eval, ablate, gradcheck, export-anchors), each reading an optional
// INI config overridable by flags and writing its artifacts plus a manifest
// under a run directory. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numeric failure.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sap/config.hpp"
#include "sap/export.hpp"
#include "sap/gradcheck.hpp"
#include "sap/model.hpp"
#include "sap/ntu.hpp"

namespace sap {

struct UnknownSubcommand : std::runtime_error {
  explicit UnknownSubcommand(const std::string& name)
      : std::runtime_error("UnknownSubcommand: '" + name + "'") {}
};

namespace cli_detail {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

inline RunConfig load_config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

inline SkeletonLayout layout_by_name(const std::string& name) {
  if (name == "ntu25") return ntu25_layout();
  if (name == "synthetic11") return synthetic11_layout();
  throw std::invalid_argument("unknown layout '" + name + "' (expected ntu25 or synthetic11)");
}

inline SkeletonLayout layout_for_joint_count(int joints) {
  if (joints == 25) return ntu25_layout();
  if (joints == 11) return synthetic11_layout();
  throw DatasetFormatError("no known layout with " + std::to_string(joints) + " joints; pass --layout");
}

inline std::vector<SkeletonSequence> read_dataset_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetFormatError("cannot open " + path);
  return read_dataset(in);
}

inline void write_dataset_file(const std::vector<SkeletonSequence>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  write_dataset(samples, out);
  if (!out) throw std::runtime_error("write failed on " + path);
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  for (const std::string& part : detail::split_list(csv)) {
    seeds.push_back(static_cast<std::uint64_t>(std::stoull(part)));
  }
  if (seeds.empty()) throw std::invalid_argument("empty seed list");
  return seeds;
}

// Rebuilds eager SAP parameters from checkpoint tensors (featurize and
// export-anchors run outside any graph).
inline SapParams sap_params_from_checkpoint(const Checkpoint& ckpt, const TrainConfig& config) {
  SapParams p;
  p.heads = config.heads;
  p.hidden = config.hidden_dim;
  p.alpha = config.alpha;
  p.variant = config.variant;
  auto find = [&](const std::string& name) -> const Tensor* {
    for (const auto& [n, t] : ckpt.params) {
      if (n == name) return &t;
    }
    return nullptr;
  };
  for (int h = 0; h < p.heads; ++h) {
    for (int b = 0; b < 2; ++b) {
      const std::string prefix = "sap/h" + std::to_string(h) + "/b" + std::to_string(b) + "/";
      const Tensor* theta = find(prefix + "w_theta");
      const Tensor* phi = find(prefix + "w_phi");
      if (theta == nullptr || phi == nullptr) {
        throw CorruptCheckpoint("checkpoint lacks SAP tensors for head " + std::to_string(h) +
                                " (check [sap] heads/variant against the training config)");
      }
      SapBank bank;
      bank.w_theta = *theta;
      bank.w_phi = *phi;
      const Tensor* wg = find(prefix + "w_g");
      if (wg != nullptr) {
        bank.w_g = *wg;
      } else {
        bank.w_g = Tensor({3, 3});
        for (int i = 0; i < 3; ++i) bank.w_g.at(i, i) = 1.0;
      }
      p.banks.push_back(std::move(bank));
    }
  }
  p.validate();
  return p;
}

struct ManifestScope {
  RunManifest manifest;
  std::string dir;

  ManifestScope(const std::string& command, std::uint64_t seed, const nlohmann::json& config,
                const std::string& run_dir)
      : dir(run_dir) {
    std::filesystem::create_directories(run_dir);
    manifest.command = command;
    manifest.seed = seed;
    manifest.config = config;
    manifest.started_at = utc_timestamp();
  }

  void add(const std::string& path) { manifest.artifacts.push_back(path); }

  void finish() {
    manifest.finished_at = utc_timestamp();
    write_manifest(manifest, dir);
  }
};

// ---- subcommand bodies ------------------------------------------------------

struct GenDataArgs {
  std::string config_path, out_dir = "runs/gen-data";
  std::int64_t seed = -1;
  int frames = 0, train_per_class = 0, test_per_class = 0;
};

inline int run_gen_data(const GenDataArgs& a) {
  RunConfig cfg = load_config_or_default(a.config_path);
  if (a.seed >= 0) cfg.data.seed = static_cast<std::uint64_t>(a.seed);
  if (a.frames > 0) cfg.data.frames = a.frames;
  if (a.train_per_class > 0) cfg.data.train_per_class = a.train_per_class;
  if (a.test_per_class > 0) cfg.data.test_per_class = a.test_per_class;
  ManifestScope scope("gen-data", cfg.data.seed, config_to_json(cfg), a.out_dir);
  const SyntheticDataset data = generate_synthetic_dataset(cfg.data);
  const std::string train_path = (std::filesystem::path(a.out_dir) / "train.sapds").string();
  const std::string test_path = (std::filesystem::path(a.out_dir) / "test.sapds").string();
  write_dataset_file(data.train, train_path);
  write_dataset_file(data.test, test_path);
  scope.add(train_path);
  scope.add(test_path);
  scope.finish();
  std::cout << "gen-data: " << data.train.size() << " train / " << data.test.size() << " test samples ("
            << data.class_names.size() << " classes, " << cfg.data.frames << " frames) -> " << a.out_dir
            << "\n";
  return kExitOk;
}

struct ParseArgs {
  std::string input, layout = "ntu25", out_dir;
  int min_frames = 1;
};

inline int run_parse(const ParseArgs& a) {
  const SkeletonLayout layout = layout_by_name(a.layout);
  std::ifstream in(a.input);
  if (!in) throw DatasetFormatError("cannot open " + a.input);
  const SkeletonSequence seq = parse_ntu_skeleton(in, layout, a.min_frames);
  std::cout << "parse: " << a.input << ": " << seq.frames << " frames x " << seq.joints << " joints\n";
  if (!a.out_dir.empty()) {
    ManifestScope scope("parse", 0, {{"input", a.input}, {"layout", a.layout}}, a.out_dir);
    const std::string echo_path = (std::filesystem::path(a.out_dir) / "echo.skeleton").string();
    std::ofstream out(echo_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + echo_path);
    write_ntu_skeleton(seq, out);
    scope.add(echo_path);
    scope.finish();
  }
  return kExitOk;
}

struct FeaturizeArgs {
  std::string config_path, data_path, checkpoint_path, out_dir = "runs/featurize";
};

inline int run_featurize(const FeaturizeArgs& a) {
  RunConfig cfg = load_config_or_default(a.config_path);
  const std::vector<SkeletonSequence> samples = read_dataset_file(a.data_path);
  const SkeletonLayout layout = layout_for_joint_count(samples.front().joints);
  const FeaturePlan plan = make_feature_plan(layout, cfg.train);
  SapParams sap;
  const SapParams* sap_ptr = nullptr;
  if (cfg.train.streams.angles_sap) {
    sap = a.checkpoint_path.empty()
              ? init_sap_params(cfg.train.heads, cfg.train.hidden_dim, cfg.train.variant, cfg.train.alpha,
                                cfg.train.seed, cfg.train.share_banks)
              : sap_params_from_checkpoint(load_checkpoint(a.checkpoint_path), cfg.train);
    sap_ptr = &sap;
  }
  ManifestScope scope("featurize", cfg.train.seed, config_to_json(cfg), a.out_dir);
  std::vector<FeatureTensor> features;
  std::vector<int> labels;
  for (const auto& s : samples) {
    features.push_back(assemble_features(s, plan, sap_ptr));
    labels.push_back(s.label);
  }
  const std::string out_path = (std::filesystem::path(a.out_dir) / "features.sapft").string();
  write_feature_file(features, labels, out_path);
  scope.add(out_path);
  scope.add(out_path + ".json");
  scope.finish();
  std::cout << "featurize: " << samples.size() << " samples x " << features.front().channel_count()
            << " channels (" << plan.streams.str() << ") -> " << out_path << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config_path, data_dir, out_dir = "runs/train", resume_path;
  int save_at = -1, stop_after = -1;
};

inline int run_train(const TrainArgs& a) {
  RunConfig cfg = load_config_or_default(a.config_path);
  std::vector<SkeletonSequence> train_set, test_set;
  SkeletonLayout layout;
  if (a.data_dir.empty()) {
    const SyntheticDataset data = generate_synthetic_dataset(cfg.data);
    train_set = data.train;
    test_set = data.test;
    layout = data.layout;
  } else {
    train_set = read_dataset_file((std::filesystem::path(a.data_dir) / "train.sapds").string());
    test_set = read_dataset_file((std::filesystem::path(a.data_dir) / "test.sapds").string());
    layout = layout_for_joint_count(train_set.front().joints);
  }
  ManifestScope scope("train", cfg.train.seed, config_to_json(cfg), a.out_dir);
  TrainOptions opts;
  opts.checkpoint_path = (std::filesystem::path(a.out_dir) / "checkpoint.sapc").string();
  opts.save_at_epoch = a.save_at;
  opts.stop_after_epoch = a.stop_after;
  opts.resume_path = a.resume_path;
  const TrainedModel model = train(train_set, test_set, layout, cfg.train, opts);
  const std::string report_path = (std::filesystem::path(a.out_dir) / "report.json").string();
  write_text_atomic(report_path, report_to_json(model.report).dump(2) + "\n");
  scope.add(report_path);
  scope.add(opts.checkpoint_path);
  scope.finish();
  std::cout << "train: " << model.report.epochs.size() << " epochs, final test accuracy "
            << model.report.final_test_accuracy() << " (" << model.plan.streams.str() << ", "
            << variant_name(model.config.variant) << ", H=" << model.config.heads << ") -> " << a.out_dir
            << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string config_path, data_dir, checkpoint_path, out_dir = "runs/eval";
};

inline int run_eval(const EvalArgs& a) {
  RunConfig cfg = load_config_or_default(a.config_path);
  const std::vector<SkeletonSequence> test_set =
      read_dataset_file((std::filesystem::path(a.data_dir) / "test.sapds").string());
  const SkeletonLayout layout = layout_for_joint_count(test_set.front().joints);
  int classes = 2;
  for (const auto& s : test_set) classes = std::max(classes, s.label + 1);
  TrainedModel model = initialize_model(test_set.front().frames, classes, layout, cfg.train);
  apply_checkpoint(model.graph, nullptr, load_checkpoint(a.checkpoint_path));
  ManifestScope scope("eval", cfg.train.seed, config_to_json(cfg), a.out_dir);
  const EvalResult result = evaluate(model.graph, model.plan, test_set, classes);
  nlohmann::json j;
  j["accuracy"] = result.accuracy;
  j["confusion"] = result.confusion;
  j["samples"] = test_set.size();
  const std::string eval_path = (std::filesystem::path(a.out_dir) / "eval.json").string();
  write_text_atomic(eval_path, j.dump(2) + "\n");
  scope.add(eval_path);
  scope.finish();
  std::cout << "eval: accuracy " << result.accuracy << " on " << test_set.size() << " samples -> "
            << eval_path << "\n";
  return kExitOk;
}

struct AblateArgs {
  std::string config_path, axis = "head-count", seeds = "1,2,3", out_dir = "runs/ablate";
};

inline int run_ablate(const AblateArgs& a) {
  RunConfig cfg = load_config_or_default(a.config_path);
  const std::vector<std::uint64_t> seeds = parse_seed_list(a.seeds);
  ManifestScope scope("ablate", seeds.front(), config_to_json(cfg), a.out_dir);
  const AblationTable table = run_ablation(a.axis, cfg.train, cfg.data, seeds);
  const std::string table_path = (std::filesystem::path(a.out_dir) / "ablation.json").string();
  write_text_atomic(table_path, ablation_to_json(table).dump(2) + "\n");
  scope.add(table_path);
  scope.finish();
  for (const auto& row : table.rows) {
    std::cout << "ablate[" << table.axis << "] seed " << row.seed << " " << row.arm << ": accuracy "
              << row.test_accuracy << "\n";
  }
  return kExitOk;
}

struct GradcheckArgs {
  std::string variant = "V3";
  int heads = 5, frames = 4, hidden1 = 16, hidden2 = 8;
  std::int64_t seed = 7;
  double step = 1e-5, tol = 1e-4;
};

inline int run_gradcheck(const GradcheckArgs& a) {
  SyntheticTaskSpec spec = default_synthetic_spec();
  spec.seed = static_cast<std::uint64_t>(a.seed);
  spec.frames = a.frames;
  spec.train_per_class = 1;
  spec.test_per_class = 1;
  const SyntheticDataset data = generate_synthetic_dataset(spec);

  TrainConfig config;
  config.variant = parse_variant(a.variant);
  config.heads = a.heads;
  config.seed = static_cast<std::uint64_t>(a.seed);
  config.hidden1 = a.hidden1;
  config.hidden2 = a.hidden2;
  TrainedModel model = initialize_model(spec.frames, static_cast<int>(spec.classes.size()), data.layout,
                                        config);
  bind_sample(model.graph, model.plan, data.train.front(), data.train.front().label);

  std::vector<ad::NodeId> ids;
  std::vector<std::string> names;
  for (const auto& [name, id] : model.graph.named_params) {
    ids.push_back(id);
    names.push_back(name);
  }
  const FdReport report = finite_difference_check(model.graph.g, model.graph.loss, ids, a.step, names);
  for (const auto& p : report.per_param) {
    std::cout << "gradcheck " << p.name << ": rel err " << p.rel_err << " (analytic " << p.analytic
              << ", numeric " << p.numeric << ")\n";
  }
  std::cout << "gradcheck max rel err " << report.max_rel_err << " over " << report.per_param.size()
            << " parameters (" << a.variant << ", H=" << a.heads << ")\n";
  return report.passed(a.tol) ? kExitOk : kExitNumeric;
}

struct ExportAnchorsArgs {
  std::string config_path, data_path, checkpoint_path, out_dir = "runs/export-anchors";
  int sample = 0;
};

inline int run_export_anchors(const ExportAnchorsArgs& a) {
  RunConfig cfg = load_config_or_default(a.config_path);
  const std::vector<SkeletonSequence> samples = read_dataset_file(a.data_path);
  if (a.sample < 0 || a.sample >= static_cast<int>(samples.size())) {
    throw DatasetFormatError("sample index " + std::to_string(a.sample) + " outside dataset of " +
                             std::to_string(samples.size()));
  }
  const SkeletonLayout layout = layout_for_joint_count(samples.front().joints);
  const FeaturePlan plan = make_feature_plan(layout, cfg.train);
  const SapParams sap = a.checkpoint_path.empty()
                            ? init_sap_params(cfg.train.heads, cfg.train.hidden_dim, cfg.train.variant,
                                              cfg.train.alpha, cfg.train.seed, cfg.train.share_banks)
                            : sap_params_from_checkpoint(load_checkpoint(a.checkpoint_path), cfg.train);
  const AnchorPairSet anchors =
      propose_anchor_pairs(plan.prepare(samples[static_cast<std::size_t>(a.sample)]), sap);
  ManifestScope scope("export-anchors", cfg.train.seed, config_to_json(cfg), a.out_dir);
  const std::string anchors_path = (std::filesystem::path(a.out_dir) / "anchors.json").string();
  write_text_atomic(anchors_path, anchors_to_json(anchors).dump(2) + "\n");
  scope.add(anchors_path);
  scope.finish();
  const int degenerate = anchors.degenerate_head_count();
  std::cout << "export-anchors: sample " << a.sample << ", " << anchors.heads << " pairs ("
            << (anchors.per_frame() ? "per-frame" : "shared") << ") -> " << anchors_path << "\n";
  if (degenerate > 0) {
    std::cout << "warning: " << degenerate << " head(s) have coincident anchors; their angle channels are dead\n";
  }
  return kExitOk;
}

}  // namespace cli_detail

inline int cli_dispatch(int argc, const char* const* argv) {
  using namespace cli_detail;
  static const std::set<std::string> known = {"gen-data", "parse",    "featurize", "train",
                                              "eval",     "ablate",   "gradcheck", "export-anchors"};
  if (argc > 1 && argv[1][0] != '-' && known.count(argv[1]) == 0) {
    std::cerr << UnknownSubcommand(argv[1]).what() << "\n";
    return kExitUsage;
  }

  CLI::App app{"skeleton anchor-proposal toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic 4-class dataset");
  gen_cmd->add_option("--config", gen.config_path, "INI config file");
  gen_cmd->add_option("--out", gen.out_dir, "output directory");
  gen_cmd->add_option("--seed", gen.seed, "dataset seed");
  gen_cmd->add_option("--frames", gen.frames, "frames per sequence");
  gen_cmd->add_option("--train-per-class", gen.train_per_class, "train samples per class");
  gen_cmd->add_option("--test-per-class", gen.test_per_class, "test samples per class");

  ParseArgs parse_args;
  auto* parse_cmd = app.add_subcommand("parse", "parse a recorded .skeleton file");
  parse_cmd->add_option("--input", parse_args.input, "NTU .skeleton file")->required();
  parse_cmd->add_option("--layout", parse_args.layout, "joint layout (ntu25 | synthetic11)");
  parse_cmd->add_option("--min-frames", parse_args.min_frames, "reject shorter sequences");
  parse_cmd->add_option("--out", parse_args.out_dir, "run directory for the re-serialized copy");

  FeaturizeArgs feat;
  auto* feat_cmd = app.add_subcommand("featurize", "compute feature tensors for a dataset");
  feat_cmd->add_option("--config", feat.config_path, "INI config file");
  feat_cmd->add_option("--data", feat.data_path, "input .sapds dataset")->required();
  feat_cmd->add_option("--checkpoint", feat.checkpoint_path, "use trained SAP parameters");
  feat_cmd->add_option("--out", feat.out_dir, "output directory");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train the classifier");
  train_cmd->add_option("--config", train_args.config_path, "INI config file");
  train_cmd->add_option("--data-dir", train_args.data_dir, "directory with train.sapds/test.sapds");
  train_cmd->add_option("--out", train_args.out_dir, "run directory");
  train_cmd->add_option("--resume", train_args.resume_path, "checkpoint to resume from");
  train_cmd->add_option("--save-at", train_args.save_at, "checkpoint once this many epochs completed");
  train_cmd->add_option("--stop-after", train_args.stop_after, "halt after this many epochs");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a test split");
  eval_cmd->add_option("--config", eval_args.config_path, "INI config file");
  eval_cmd->add_option("--data-dir", eval_args.data_dir, "directory with test.sapds")->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint_path, "checkpoint to evaluate")->required();
  eval_cmd->add_option("--out", eval_args.out_dir, "run directory");

  AblateArgs ablate_args;
  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation sweep");
  ablate_cmd->add_option("--config", ablate_args.config_path, "INI config file");
  ablate_cmd->add_option("--axis", ablate_args.axis, "head-count | anchor-location");
  ablate_cmd->add_option("--seeds", ablate_args.seeds, "comma-separated seed list");
  ablate_cmd->add_option("--out", ablate_args.out_dir, "run directory");

  GradcheckArgs grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  grad_cmd->add_option("--variant", grad.variant, "SAP variant (V1 | V2 | V3)");
  grad_cmd->add_option("--heads", grad.heads, "head count");
  grad_cmd->add_option("--seed", grad.seed, "input seed");
  grad_cmd->add_option("--frames", grad.frames, "frames in the probe sequence");
  grad_cmd->add_option("--hidden1", grad.hidden1, "first classifier width");
  grad_cmd->add_option("--hidden2", grad.hidden2, "second classifier width");
  grad_cmd->add_option("--step", grad.step, "finite-difference step");
  grad_cmd->add_option("--tol", grad.tol, "max relative error accepted");

  ExportAnchorsArgs exp;
  auto* exp_cmd = app.add_subcommand("export-anchors", "emit proposed anchor pairs as JSON");
  exp_cmd->add_option("--config", exp.config_path, "INI config file");
  exp_cmd->add_option("--data", exp.data_path, "input .sapds dataset")->required();
  exp_cmd->add_option("--checkpoint", exp.checkpoint_path, "trained parameters");
  exp_cmd->add_option("--sample", exp.sample, "sample index");
  exp_cmd->add_option("--out", exp.out_dir, "run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exits 0
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen);
    if (parse_cmd->parsed()) return run_parse(parse_args);
    if (feat_cmd->parsed()) return run_featurize(feat);
    if (train_cmd->parsed()) return run_train(train_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (ablate_cmd->parsed()) return run_ablate(ablate_args);
    if (grad_cmd->parsed()) return run_gradcheck(grad);
    if (exp_cmd->parsed()) return run_export_anchors(exp);
    return kExitUsage;
  } catch (const DivergenceDetected& e) {
    std::cerr << e.what() << "\n";
    return kExitNumeric;
  } catch (const ad::NonFiniteIntermediate& e) {
    std::cerr << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace sap
