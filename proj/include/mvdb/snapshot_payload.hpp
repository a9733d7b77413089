#pragma once

#include <cstdint>
#include <vector>

#include "mvdb/environment.hpp"
#include "mvdb/machine.hpp"
#include "mvdb/rle.hpp"

namespace mvdb::protocol {

/// What the backend ships to a frontend for one program state.
struct SnapshotPayload {
  std::uint64_t step_index = 0;
  std::vector<Value> globals;
  std::vector<Frame> frames;  // locals, value stack and control stack per frame
  std::uint32_t memory_size = 0;
  std::vector<Run> memory;
  ExternalState external;

  friend bool operator==(const SnapshotPayload&, const SnapshotPayload&) = default;
};

inline SnapshotPayload make_payload(const ProgramConfig& c, const Environment& env) {
  SnapshotPayload p;
  p.step_index = c.step_index;
  p.globals = c.globals;
  p.frames = c.frames;
  p.memory_size = static_cast<std::uint32_t>(c.memory.size());
  p.memory = rle_encode(c.memory);
  p.external = serialize_external(env);
  return p;
}

inline ProgramConfig payload_config(const SnapshotPayload& p) {
  ProgramConfig c;
  c.step_index = p.step_index;
  c.globals = p.globals;
  c.frames = p.frames;
  c.memory = rle_decode(p.memory);
  return c;
}

}  // namespace mvdb::protocol
