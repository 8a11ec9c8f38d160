#pragma once

// SAPC checkpoint container: magic "SAPC", format version u32, epoch u32,
// then two named tensor tables (parameters, optimizer velocities). All
// integers and floats little-endian; doubles are stored raw so a load/save
// round trip is bit-exact, which the resume-equivalence guarantee depends
// on. Files are written to a temp path and renamed into place.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sap/dataset_io.hpp"
#include "sap/tensor.hpp"

namespace sap {

struct CorruptCheckpoint : std::runtime_error {
  explicit CorruptCheckpoint(const std::string& m) : std::runtime_error("CorruptCheckpoint: " + m) {}
};
struct VersionMismatch : std::runtime_error {
  explicit VersionMismatch(std::uint32_t got, std::uint32_t want)
      : std::runtime_error("VersionMismatch: checkpoint version " + std::to_string(got) + ", expected " +
                           std::to_string(want)) {}
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  int epoch = 0;  // completed epochs at save time
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, Tensor>> velocities;
};

namespace detail {

inline void write_tensor_table(std::ostream& out, const std::vector<std::pair<std::string, Tensor>>& table) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, t] : table) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) write_le<std::int32_t>(out, d);
    for (long long i = 0; i < t.size(); ++i) write_le<double>(out, t[static_cast<std::size_t>(i)]);
  }
}

inline std::vector<std::pair<std::string, Tensor>> read_tensor_table(std::istream& in, const char* what) {
  std::uint32_t count = 0;
  if (!read_le(in, count)) throw CorruptCheckpoint(std::string("truncated ") + what + " table header");
  std::vector<std::pair<std::string, Tensor>> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = 0;
    if (!read_le(in, name_len) || name_len > 4096) {
      throw CorruptCheckpoint(std::string("bad name length in ") + what + " table");
    }
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw CorruptCheckpoint(std::string("truncated name in ") + what);
    std::uint32_t rank = 0;
    if (!read_le(in, rank) || rank > 8) throw CorruptCheckpoint("bad tensor rank for '" + name + "'");
    std::vector<int> shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      std::int32_t d = 0;
      if (!read_le(in, d) || d < 0) throw CorruptCheckpoint("bad dimension for '" + name + "'");
      shape.push_back(d);
    }
    Tensor t(shape);
    for (long long j = 0; j < t.size(); ++j) {
      double v = 0.0;
      if (!read_le(in, v)) throw CorruptCheckpoint("truncated data for '" + name + "'");
      t[static_cast<std::size_t>(j)] = v;
    }
    table.emplace_back(std::move(name), std::move(t));
  }
  return table;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::filesystem::path target(path);
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + tmp.string());
    out.write("SAPC", 4);
    detail::write_le<std::uint32_t>(out, kCheckpointVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.epoch));
    detail::write_tensor_table(out, ckpt.params);
    detail::write_tensor_table(out, ckpt.velocities);
    if (!out) throw std::runtime_error("save_checkpoint: write failed on " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptCheckpoint("cannot open " + path);
  char magic[4] = {};
  if (!in.read(magic, 4) || std::string(magic, 4) != "SAPC") throw CorruptCheckpoint("bad magic");
  std::uint32_t version = 0;
  if (!detail::read_le(in, version)) throw CorruptCheckpoint("truncated version field");
  if (version != kCheckpointVersion) throw VersionMismatch(version, kCheckpointVersion);
  std::uint32_t epoch = 0;
  if (!detail::read_le(in, epoch)) throw CorruptCheckpoint("truncated epoch field");
  Checkpoint ckpt;
  ckpt.epoch = static_cast<int>(epoch);
  ckpt.params = detail::read_tensor_table(in, "parameter");
  ckpt.velocities = detail::read_tensor_table(in, "velocity");
  return ckpt;
}

}  // namespace sap
