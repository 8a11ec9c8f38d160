#pragma once

// Reader/writer for the NTU RGB+D `.skeleton` text layout:
//
//   <frame count>
//   per frame:  <body count>
//               per body:  <10-field body info line>
//                          <joint count>
//                          <12-field joint line> x joint count   (x y z first)
//
// Only the x/y/z of body 0 is retained; frames with zero bodies are dropped.

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sap/skeleton.hpp"

namespace sap {

struct ParseError : std::runtime_error {
  int line;
  ParseError(const std::string& kind, int line_, const std::string& what)
      : std::runtime_error(kind + " at line " + std::to_string(line_) + ": " + what), line(line_) {}
};

struct MalformedHeader : ParseError {
  MalformedHeader(int line, const std::string& what) : ParseError("MalformedHeader", line, what) {}
};
struct TruncatedFrame : ParseError {
  TruncatedFrame(int line, const std::string& what) : ParseError("TruncatedFrame", line, what) {}
};
struct NonFiniteCoordinate : ParseError {
  NonFiniteCoordinate(int line, const std::string& what)
      : ParseError("NonFiniteCoordinate", line, what) {}
};

namespace detail {

struct LineReader {
  std::istream& in;
  int line_no = 0;

  bool next(std::string& out) {
    if (!std::getline(in, out)) return false;
    ++line_no;
    if (!out.empty() && out.back() == '\r') out.pop_back();
    return true;
  }
};

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline bool parse_int_strict(const std::string& s, long long& out) {
  const char* p = s.c_str();
  char* end = nullptr;
  out = std::strtoll(p, &end, 10);
  if (end == p) return false;
  while (*end == ' ' || *end == '\t') ++end;
  return *end == '\0';
}

inline bool parse_double_strict(const std::string& s, double& out) {
  const char* p = s.c_str();
  char* end = nullptr;
  out = std::strtod(p, &end);
  return end != p && *end == '\0';
}

}  // namespace detail

// Parses one NTU sample. Sequences that end up shorter than min_frames (after
// zero-body frames are dropped) are rejected with TruncatedFrame.
inline SkeletonSequence parse_ntu_skeleton(std::istream& in, const SkeletonLayout& layout,
                                           int min_frames = 1) {
  detail::LineReader rd{in};
  std::string line;

  if (!rd.next(line)) throw MalformedHeader(1, "missing frame count");
  long long declared_frames = 0;
  if (!detail::parse_int_strict(line, declared_frames) || declared_frames < 0) {
    throw MalformedHeader(rd.line_no, "frame count is not an integer: '" + line + "'");
  }

  const int v = layout.size();
  std::vector<double> coords;  // kept frames only
  int kept = 0;

  for (long long f = 0; f < declared_frames; ++f) {
    if (!rd.next(line)) {
      throw TruncatedFrame(rd.line_no + 1, "expected body count for frame " + std::to_string(f));
    }
    long long bodies = 0;
    if (!detail::parse_int_strict(line, bodies) || bodies < 0) {
      throw MalformedHeader(rd.line_no, "body count is not an integer: '" + line + "'");
    }
    for (long long b = 0; b < bodies; ++b) {
      if (!rd.next(line)) throw TruncatedFrame(rd.line_no + 1, "expected body info line");
      if (detail::split_ws(line).size() != 10) {
        throw TruncatedFrame(rd.line_no, "body info line does not have 10 fields");
      }
      if (!rd.next(line)) throw TruncatedFrame(rd.line_no + 1, "expected joint count");
      long long joint_count = 0;
      if (!detail::parse_int_strict(line, joint_count) || joint_count < 0) {
        throw MalformedHeader(rd.line_no, "joint count is not an integer: '" + line + "'");
      }
      if (joint_count != v) {
        throw MalformedHeader(rd.line_no, "joint count " + std::to_string(joint_count) +
                                              " does not match layout (" + std::to_string(v) + ")");
      }
      const bool keep = b == 0;
      if (keep) coords.resize(coords.size() + static_cast<std::size_t>(v) * 3);
      for (long long j = 0; j < joint_count; ++j) {
        if (!rd.next(line)) {
          throw TruncatedFrame(rd.line_no + 1, "expected joint " + std::to_string(j) + " of frame " +
                                                   std::to_string(f));
        }
        auto fields = detail::split_ws(line);
        if (fields.size() < 12) throw TruncatedFrame(rd.line_no, "joint line has fewer than 12 fields");
        if (keep) {
          double xyz[3];
          for (int c = 0; c < 3; ++c) {
            if (!detail::parse_double_strict(fields[static_cast<std::size_t>(c)], xyz[c]) ||
                !std::isfinite(xyz[c])) {
              throw NonFiniteCoordinate(rd.line_no, "coordinate '" + fields[static_cast<std::size_t>(c)] + "'");
            }
          }
          const std::size_t base = coords.size() - static_cast<std::size_t>(v) * 3 +
                                   static_cast<std::size_t>(j) * 3;
          coords[base + 0] = xyz[0];
          coords[base + 1] = xyz[1];
          coords[base + 2] = xyz[2];
        }
      }
    }
    if (bodies > 0) ++kept;
  }

  if (kept < min_frames) {
    throw TruncatedFrame(rd.line_no + 1, "only " + std::to_string(kept) + " usable frames, need " +
                                             std::to_string(min_frames));
  }
  SkeletonSequence seq(kept, v);
  seq.coords = Tensor({kept, v, 3}, std::move(coords));
  return seq;
}

// Writes a sequence back out as a single-body NTU sample. Coordinates are
// printed with 17 significant digits so parse(write(seq)) is bit-exact.
inline void write_ntu_skeleton(const SkeletonSequence& seq, std::ostream& out) {
  out << seq.frames << "\n";
  char buf[96];
  for (int t = 0; t < seq.frames; ++t) {
    out << 1 << "\n";
    out << "0 0 0 0 0 0 0 0 0 2\n";
    out << seq.joints << "\n";
    for (int v = 0; v < seq.joints; ++v) {
      std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g", seq.at(t, v, 0), seq.at(t, v, 1),
                    seq.at(t, v, 2));
      out << buf << " 0 0 0 0 0 0 0 0 2\n";
    }
  }
}

}  // namespace sap
