#pragma once

// Run configuration files: INI-style sections [data], [sap], [train] with
// `key = value` lines, `#`/`;` comments. Parsing is strict — unknown keys
// and malformed values report the offending line and key so a typo cannot
// silently fall back to a default.

#include <cstdint>
#include <fstream>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sap/model.hpp"
#include "sap/synthetic.hpp"

namespace sap {

struct ConfigParseError : std::runtime_error {
  int line;
  std::string key;
  ConfigParseError(int line_no, const std::string& k, const std::string& m)
      : std::runtime_error("ConfigParseError at line " + std::to_string(line_no) +
                           (k.empty() ? "" : " (key '" + k + "')") + ": " + m),
        line(line_no),
        key(k) {}
};

// Everything a run needs: the synthetic data recipe plus the training setup
// (which embeds the SAP settings).
struct RunConfig {
  SyntheticTaskSpec data = default_synthetic_spec();
  TrainConfig train;
};

namespace detail {

struct ConfigEntry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
};

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<ConfigEntry> parse_config_stream(std::istream& in) {
  std::vector<ConfigEntry> entries;
  std::string section;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigParseError(line_no, "", "malformed section header '" + line + "'");
      }
      section = line.substr(1, line.size() - 2);
      if (section != "data" && section != "sap" && section != "train") {
        throw ConfigParseError(line_no, "", "unknown section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigParseError(line_no, "", "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigParseError(line_no, "", "empty key");
    if (section.empty()) throw ConfigParseError(line_no, key, "key appears before any [section]");
    entries.push_back({section, key, value, line_no});
  }
  return entries;
}

inline double to_double(const ConfigEntry& e) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigParseError(e.line, e.key, "expected a number, got '" + e.value + "'");
  }
}

inline long long to_int(const ConfigEntry& e) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigParseError(e.line, e.key, "expected an integer, got '" + e.value + "'");
  }
}

inline bool to_bool(const ConfigEntry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  throw ConfigParseError(e.line, e.key, "expected true/false, got '" + e.value + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      const std::string t = trim(cur);
      if (!t.empty()) parts.push_back(t);
      cur.clear();
    } else {
      cur += c;
    }
  }
  const std::string t = trim(cur);
  if (!t.empty()) parts.push_back(t);
  return parts;
}

inline StreamSet to_streams(const ConfigEntry& e) {
  StreamSet s{false, false, false, false};
  for (const std::string& part : split_list(e.value)) {
    if (part == "coords") s.coords = true;
    else if (part == "bones") s.bones = true;
    else if (part == "angles-fixed") s.angles_fixed = true;
    else if (part == "angles-sap") s.angles_sap = true;
    else throw ConfigParseError(e.line, e.key, "unknown feature stream '" + part + "'");
  }
  if (!s.any()) throw ConfigParseError(e.line, e.key, "no feature streams named");
  return s;
}

inline void apply_entry(RunConfig& cfg, const ConfigEntry& e) {
  auto unknown = [&]() -> ConfigParseError {
    return ConfigParseError(e.line, e.key, "unknown key in [" + e.section + "]");
  };
  if (e.section == "data") {
    if (e.key == "frames") cfg.data.frames = static_cast<int>(to_int(e));
    else if (e.key == "train_per_class") cfg.data.train_per_class = static_cast<int>(to_int(e));
    else if (e.key == "test_per_class") cfg.data.test_per_class = static_cast<int>(to_int(e));
    else if (e.key == "seed") cfg.data.seed = static_cast<std::uint64_t>(to_int(e));
    else if (e.key == "coordinate_noise") cfg.data.coordinate_noise = to_double(e);
    else if (e.key == "phase_jitter") cfg.data.phase_jitter = to_double(e);
    else if (e.key == "cycles") cfg.data.cycles = to_double(e);
    else if (e.key == "test_scale_min") cfg.data.test_augment.scale_min = to_double(e);
    else if (e.key == "test_scale_max") cfg.data.test_augment.scale_max = to_double(e);
    else throw unknown();
  } else if (e.section == "sap") {
    if (e.key == "heads") cfg.train.heads = static_cast<int>(to_int(e));
    else if (e.key == "hidden_dim") cfg.train.hidden_dim = static_cast<int>(to_int(e));
    else if (e.key == "alpha") cfg.train.alpha = to_double(e);
    else if (e.key == "variant") {
      try {
        cfg.train.variant = parse_variant(e.value);
      } catch (const std::invalid_argument& ex) {
        throw ConfigParseError(e.line, e.key, ex.what());
      }
    } else if (e.key == "share_banks") cfg.train.share_banks = to_bool(e);
    else throw unknown();
  } else {  // [train]
    if (e.key == "lr") cfg.train.lr = to_double(e);
    else if (e.key == "momentum") cfg.train.momentum = to_double(e);
    else if (e.key == "decay_factor") cfg.train.decay_factor = to_double(e);
    else if (e.key == "epochs") cfg.train.epochs = static_cast<int>(to_int(e));
    else if (e.key == "batch_size") cfg.train.batch_size = static_cast<int>(to_int(e));
    else if (e.key == "seed") cfg.train.seed = static_cast<std::uint64_t>(to_int(e));
    else if (e.key == "hidden1") cfg.train.hidden1 = static_cast<int>(to_int(e));
    else if (e.key == "hidden2") cfg.train.hidden2 = static_cast<int>(to_int(e));
    else if (e.key == "normalize") cfg.train.normalize = to_bool(e);
    else if (e.key == "streams") cfg.train.streams = to_streams(e);
    else if (e.key == "decay_epochs") {
      std::vector<int> epochs;
      for (const std::string& part : split_list(e.value)) {
        ConfigEntry sub = e;
        sub.value = part;
        epochs.push_back(static_cast<int>(to_int(sub)));
      }
      cfg.train.decay_epochs = std::move(epochs);
    } else if (e.key == "fixed_names") cfg.train.fixed_names = split_list(e.value);
    else throw unknown();
  }
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in) {
  RunConfig cfg;
  for (const auto& entry : detail::parse_config_stream(in)) detail::apply_entry(cfg, entry);
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  return parse_run_config(in);
}

}  // namespace sap
