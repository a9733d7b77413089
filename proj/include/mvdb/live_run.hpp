#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mvdb/environment.hpp"
#include "mvdb/machine.hpp"

namespace mvdb {

/// Host for run_steps that resolves primitives against a live environment.
class LiveHost {
 public:
  LiveHost(const Program& program, Environment& env, std::uint64_t seed = 0)
      : program_(program), env_(env), rng_(seed) {}

  ValueSet input_range(std::uint32_t call, const std::vector<Value>& args) const {
    return mvdb::input_range(env_, program_.imports[call].prim, args);
  }
  Value choose(std::uint32_t call, const std::vector<Value>& args, const ValueSet&) {
    return sample_input(env_, program_.imports[call].prim, args, rng_());
  }
  Value output(std::uint32_t call, const std::vector<Value>& args) {
    const PrimId prim = program_.imports[call].prim;
    OutputResult r = perform_output(env_, prim, args);
    effects_.push_back({EffectKind::Applied, call, prim, args, r.ret});
    return r.ret;
  }

  const std::vector<ExternalEffect>& effects() const { return effects_; }

 private:
  const Program& program_;
  Environment& env_;
  std::mt19937_64 rng_;
  std::vector<ExternalEffect> effects_;
};

}  // namespace mvdb
