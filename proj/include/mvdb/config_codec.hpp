#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvdb/bytes.hpp"
#include "mvdb/machine.hpp"
#include "mvdb/rle.hpp"

namespace mvdb {

// Payload layout (all integers LEB128, signed ones zig-zag):
//   magic "MVC1" | step index | globals | memory | frames
//   memory = size, run count, runs (byte, length)
//   frame  = func, locals, stack, labels (kind, seq, pc, height)

inline constexpr std::uint8_t kConfigMagic[4] = {'M', 'V', 'C', '1'};
inline constexpr std::uint64_t kMaxDecodedMemory = 64u << 20;

inline void encode_memory(ByteWriter& w, std::span<const std::uint8_t> memory) {
  const auto runs = protocol::rle_encode(memory);
  w.varint(memory.size());
  w.varint(runs.size());
  protocol::write_runs(w, runs);
}

inline std::vector<std::uint8_t> decode_memory(ByteReader& r) {
  const std::size_t at = r.position();
  const std::uint64_t size = r.varint();
  if (size > kMaxDecodedMemory) throw DecodeError(at, "memory too large");
  const std::size_t count = r.count(2);
  const auto runs = protocol::read_runs(r, count);
  std::uint64_t total = 0;
  for (const auto& run : runs) total += run.length;
  if (total != size) throw DecodeError(at, "memory runs do not add up to the declared size");
  return protocol::rle_decode(runs);
}

namespace detail {
inline void write_values(ByteWriter& w, const std::vector<Value>& values) {
  w.varint(values.size());
  for (Value v : values) w.svarint(v);
}
inline std::vector<Value> read_values(ByteReader& r) {
  const std::size_t n = r.count();
  std::vector<Value> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = r.position();
    const std::int64_t v = r.svarint();
    if (v < INT32_MIN || v > INT32_MAX) throw DecodeError(at, "value out of 32-bit range");
    out.push_back(static_cast<Value>(v));
  }
  return out;
}
inline std::uint32_t read_u32(ByteReader& r) {
  const std::size_t at = r.position();
  const std::uint64_t v = r.varint();
  if (v > UINT32_MAX) throw DecodeError(at, "field out of 32-bit range");
  return static_cast<std::uint32_t>(v);
}

inline void write_body(ByteWriter& w, const ProgramConfig& c) {
  write_values(w, c.globals);
  encode_memory(w, c.memory);
  w.varint(c.frames.size());
  for (const Frame& f : c.frames) {
    w.varint(f.func);
    write_values(w, f.locals);
    write_values(w, f.stack);
    w.varint(f.labels.size());
    for (const Label& l : f.labels) {
      w.u8(static_cast<std::uint8_t>(l.kind));
      w.varint(l.seq);
      w.varint(l.pc);
      w.varint(l.height);
    }
  }
}
}  // namespace detail

inline std::vector<std::uint8_t> encode_config(const ProgramConfig& c) {
  ByteWriter w;
  w.bytes(kConfigMagic);
  w.varint(c.step_index);
  detail::write_body(w, c);
  return std::move(w).take();
}

inline ProgramConfig decode_config(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  for (std::uint8_t m : kConfigMagic) {
    const std::size_t at = r.position();
    if (r.u8() != m) throw DecodeError(at, "bad magic");
  }
  ProgramConfig c;
  c.step_index = r.varint();
  c.globals = detail::read_values(r);
  c.memory = decode_memory(r);
  const std::size_t frames = r.count(4);
  c.frames.reserve(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    Frame f;
    f.func = detail::read_u32(r);
    f.locals = detail::read_values(r);
    f.stack = detail::read_values(r);
    const std::size_t labels = r.count(4);
    f.labels.reserve(labels);
    for (std::size_t k = 0; k < labels; ++k) {
      const std::size_t at = r.position();
      const std::uint8_t kind = r.u8();
      if (kind > static_cast<std::uint8_t>(LabelKind::If)) throw DecodeError(at, "bad label kind");
      Label l;
      l.kind = static_cast<LabelKind>(kind);
      l.seq = detail::read_u32(r);
      l.pc = detail::read_u32(r);
      l.height = detail::read_u32(r);
      f.labels.push_back(l);
    }
    c.frames.push_back(std::move(f));
  }
  if (!r.done()) throw DecodeError(r.position(), "trailing bytes");
  return c;
}

/// 64-bit FNV-1a over the encoded config, step index excluded.
inline std::uint64_t config_digest(const ProgramConfig& c) {
  ByteWriter w;
  detail::write_body(w, c);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : w.data()) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace mvdb
