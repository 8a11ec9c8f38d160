#pragma once

// SAPDS v1 container: one text header line `SAPDS v1 T V N`, then N*T*V*3
// little-endian 64-bit floats (sample-major, frame-major, joint-major,
// x/y/z) followed by N little-endian 32-bit labels.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sap/skeleton.hpp"

namespace sap {

struct DatasetFormatError : std::runtime_error {
  explicit DatasetFormatError(const std::string& m) : std::runtime_error("DatasetFormatError: " + m) {}
};

namespace detail {

template <typename T>
inline void write_le(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
inline bool read_le(std::istream& in, T& v) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  std::memcpy(&v, buf, sizeof(T));
  return true;
}

}  // namespace detail

inline void write_dataset(const std::vector<SkeletonSequence>& samples, std::ostream& out) {
  if (samples.empty()) throw DatasetFormatError("cannot write an empty dataset");
  const int t = samples.front().frames;
  const int v = samples.front().joints;
  for (const auto& s : samples) {
    if (s.frames != t || s.joints != v) throw DatasetFormatError("samples disagree on T or V");
  }
  out << "SAPDS v1 " << t << ' ' << v << ' ' << samples.size() << "\n";
  for (const auto& s : samples) {
    for (long long i = 0; i < s.coords.size(); ++i) detail::write_le(out, s.coords[static_cast<std::size_t>(i)]);
  }
  for (const auto& s : samples) detail::write_le(out, static_cast<std::int32_t>(s.label));
}

inline std::vector<SkeletonSequence> read_dataset(std::istream& in) {
  std::string magic, version;
  long long t = 0, v = 0, n = 0;
  in >> magic >> version >> t >> v >> n;
  if (!in || magic != "SAPDS") throw DatasetFormatError("bad magic");
  if (version != "v1") throw DatasetFormatError("unsupported version '" + version + "'");
  if (t < 1 || v < 2 || n < 1) throw DatasetFormatError("invalid header dimensions");
  in.ignore(1);  // newline after the header
  std::vector<SkeletonSequence> samples;
  samples.reserve(static_cast<std::size_t>(n));
  for (long long s = 0; s < n; ++s) {
    SkeletonSequence seq(static_cast<int>(t), static_cast<int>(v));
    for (long long i = 0; i < seq.coords.size(); ++i) {
      double d;
      if (!detail::read_le(in, d)) throw DatasetFormatError("truncated coordinate block");
      seq.coords[static_cast<std::size_t>(i)] = d;
    }
    samples.push_back(std::move(seq));
  }
  for (long long s = 0; s < n; ++s) {
    std::int32_t label;
    if (!detail::read_le(in, label)) throw DatasetFormatError("truncated label block");
    samples[static_cast<std::size_t>(s)].label = label;
  }
  return samples;
}

}  // namespace sap
