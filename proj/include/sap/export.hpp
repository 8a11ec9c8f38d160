#pragma once

// Artifact exports: anchors / run reports / ablation tables as JSON for
// external plotting, feature tensors in a SAPFT binary container (same
// layout rules as the dataset container) with a channel-descriptor JSON
// sidecar, and the per-run manifest that records how every file was made.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sap/angle.hpp"
#include "sap/config.hpp"
#include "sap/dataset_io.hpp"
#include "sap/model.hpp"

namespace sap {

inline constexpr const char* kCodeVersion = "sapkit 0.1.0";

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed on " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

// ---- JSON views -----------------------------------------------------------

inline nlohmann::json anchors_to_json(const AnchorPairSet& anchors) {
  nlohmann::json out = nlohmann::json::array();
  const char* prov = anchors.provenance == AnchorProvenance::SapProposed ? "sap-proposed" : "fixed-joint";
  const int t_count = anchors.per_frame() ? anchors.frames : 1;
  for (int h = 0; h < anchors.heads; ++h) {
    for (int b = 0; b < 2; ++b) {
      for (int t = 0; t < t_count; ++t) {
        const Vec3 p = anchors.anchor(t, h, b);
        nlohmann::json row;
        row["head"] = h;
        row["bank"] = b;
        if (anchors.per_frame()) row["frame"] = t;
        else row["frame"] = "shared";
        row["xyz"] = {p[0], p[1], p[2]};
        row["provenance"] = prov;
        out.push_back(std::move(row));
      }
    }
  }
  return out;
}

inline nlohmann::json streams_to_json(const StreamSet& s) {
  nlohmann::json out = nlohmann::json::array();
  if (s.coords) out.push_back("coords");
  if (s.bones) out.push_back("bones");
  if (s.angles_fixed) out.push_back("angles-fixed");
  if (s.angles_sap) out.push_back("angles-sap");
  return out;
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["data"] = {{"frames", cfg.data.frames},
               {"train_per_class", cfg.data.train_per_class},
               {"test_per_class", cfg.data.test_per_class},
               {"classes", cfg.data.classes.size()},
               {"seed", cfg.data.seed},
               {"coordinate_noise", cfg.data.coordinate_noise},
               {"test_scale", {cfg.data.test_augment.scale_min, cfg.data.test_augment.scale_max}}};
  j["sap"] = {{"heads", cfg.train.heads},
              {"hidden_dim", cfg.train.hidden_dim},
              {"alpha", cfg.train.alpha},
              {"variant", variant_name(cfg.train.variant)},
              {"share_banks", cfg.train.share_banks}};
  j["train"] = {{"lr", cfg.train.lr},
                {"momentum", cfg.train.momentum},
                {"decay_epochs", cfg.train.decay_epochs},
                {"decay_factor", cfg.train.decay_factor},
                {"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"seed", cfg.train.seed},
                {"streams", streams_to_json(cfg.train.streams)},
                {"hidden1", cfg.train.hidden1},
                {"hidden2", cfg.train.hidden2},
                {"normalize", cfg.train.normalize}};
  return j;
}

inline nlohmann::json report_to_json(const RunReport& report) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"test_accuracy", e.test_accuracy},
                      {"lr", e.lr}});
  }
  return {{"epochs", std::move(epochs)},
          {"confusion", report.confusion},
          {"wall_clock_seconds", report.wall_clock_seconds},
          {"final_test_accuracy", report.final_test_accuracy()}};
}

inline nlohmann::json ablation_to_json(const AblationTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"arm", r.arm},
                    {"seed", r.seed},
                    {"test_accuracy", r.test_accuracy},
                    {"final_train_loss", r.final_train_loss}});
  }
  return {{"axis", table.axis}, {"rows", std::move(rows)}};
}

// ---- run manifest -----------------------------------------------------------

struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<std::string> artifacts;
  std::string started_at;
  std::string finished_at;
};

inline void write_manifest(const RunManifest& m, const std::string& run_dir) {
  nlohmann::json j;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["code_version"] = kCodeVersion;
  j["config"] = m.config;
  j["artifacts"] = m.artifacts;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  write_text_atomic((std::filesystem::path(run_dir) / "manifest.json").string(), j.dump(2) + "\n");
}

// ---- feature container ------------------------------------------------------

// `SAPFT v1 T V C N` header line, then N*T*V*C little-endian doubles
// (sample-major, frame-major, joint-major, channel), then N int32 labels.
// Channel descriptors travel in a `<path>.json` sidecar.
inline void write_feature_file(const std::vector<FeatureTensor>& features, const std::vector<int>& labels,
                               const std::string& path) {
  if (features.empty()) throw std::invalid_argument("write_feature_file: no features");
  if (labels.size() != features.size()) throw std::invalid_argument("write_feature_file: label count mismatch");
  const int t = features.front().frames(), v = features.front().joints(), c = features.front().channel_count();
  for (const auto& f : features) {
    if (f.frames() != t || f.joints() != v || f.channel_count() != c) {
      throw std::invalid_argument("write_feature_file: features disagree on T, V or C");
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "SAPFT v1 " << t << ' ' << v << ' ' << c << ' ' << features.size() << "\n";
  for (const auto& f : features) {
    for (long long i = 0; i < f.values.size(); ++i) detail::write_le(out, f.values[static_cast<std::size_t>(i)]);
  }
  for (int label : labels) detail::write_le(out, static_cast<std::int32_t>(label));
  if (!out) throw std::runtime_error("write failed on " + path);

  nlohmann::json sidecar;
  sidecar["channels"] = features.front().channels;
  sidecar["frames"] = t;
  sidecar["joints"] = v;
  sidecar["samples"] = features.size();
  write_text_atomic(path + ".json", sidecar.dump(2) + "\n");
}

inline std::pair<std::vector<FeatureTensor>, std::vector<int>> read_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetFormatError("cannot open " + path);
  std::string magic, version;
  long long t = 0, v = 0, c = 0, n = 0;
  in >> magic >> version >> t >> v >> c >> n;
  if (!in || magic != "SAPFT") throw DatasetFormatError("bad magic");
  if (version != "v1") throw DatasetFormatError("unsupported version '" + version + "'");
  if (t < 1 || v < 1 || c < 1 || n < 1) throw DatasetFormatError("invalid header dimensions");
  in.ignore(1);
  std::vector<std::string> channels(static_cast<std::size_t>(c));
  for (long long i = 0; i < c; ++i) channels[static_cast<std::size_t>(i)] = "channel-" + std::to_string(i);
  {
    std::ifstream side(path + ".json");
    if (side) {
      const nlohmann::json j = nlohmann::json::parse(side, nullptr, false);
      if (!j.is_discarded() && j.contains("channels") && j["channels"].size() == static_cast<std::size_t>(c)) {
        channels = j["channels"].get<std::vector<std::string>>();
      }
    }
  }
  std::vector<FeatureTensor> features;
  for (long long s = 0; s < n; ++s) {
    FeatureTensor f;
    f.values = Tensor({static_cast<int>(t), static_cast<int>(v), static_cast<int>(c)});
    f.channels = channels;
    for (long long i = 0; i < f.values.size(); ++i) {
      double d;
      if (!detail::read_le(in, d)) throw DatasetFormatError("truncated feature block");
      f.values[static_cast<std::size_t>(i)] = d;
    }
    features.push_back(std::move(f));
  }
  std::vector<int> labels;
  for (long long s = 0; s < n; ++s) {
    std::int32_t label;
    if (!detail::read_le(in, label)) throw DatasetFormatError("truncated label block");
    labels.push_back(label);
  }
  return {std::move(features), std::move(labels)};
}

}  // namespace sap
