#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvdb/bytes.hpp"

namespace mvdb::protocol {

struct Run {
  std::uint8_t byte = 0;
  std::uint32_t length = 0;

  friend bool operator==(const Run&, const Run&) = default;
};

/// Maximal runs: every run has length >= 1 and adjacent runs differ.
inline std::vector<Run> rle_encode(std::span<const std::uint8_t> bytes) {
  std::vector<Run> runs;
  for (std::uint8_t b : bytes) {
    if (!runs.empty() && runs.back().byte == b && runs.back().length != UINT32_MAX) {
      ++runs.back().length;
    } else {
      runs.push_back({b, 1});
    }
  }
  return runs;
}

/// Throws DecodeError (offset = run index) on zero-length runs.
inline std::vector<std::uint8_t> rle_decode(std::span<const Run> runs) {
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].length == 0) throw DecodeError(i, "zero-length run");
    out.insert(out.end(), runs[i].length, runs[i].byte);
  }
  return out;
}

/// Byte form of a run list: (byte, varint length) per run, no header. At most
/// two bytes per input byte.
inline void write_runs(ByteWriter& w, std::span<const Run> runs) {
  for (const Run& r : runs) {
    w.u8(r.byte);
    w.varint(r.length);
  }
}

inline std::vector<Run> read_runs(ByteReader& r, std::size_t count) {
  std::vector<Run> runs;
  runs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = r.position();
    Run run;
    run.byte = r.u8();
    const std::uint64_t len = r.varint();
    if (len == 0) throw DecodeError(at, "zero-length run");
    if (len > UINT32_MAX) throw DecodeError(at, "run too long");
    run.length = static_cast<std::uint32_t>(len);
    runs.push_back(run);
  }
  return runs;
}

}  // namespace mvdb::protocol
