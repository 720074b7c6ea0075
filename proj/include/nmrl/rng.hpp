#pragma once

#include <cstdint>

namespace nmrl {

// Counter-based generator: SplitMix64 evaluated at key + counter. Random
// access, no hidden state; every (seed, stream) pair owns an independent
// sequence, so concurrent runs never share a generator.
//
// Stream assignments:
//   kSimulate      trajectory simulation (hidden state, observations, actions)
//   kBurnIn        burn-in actions before the first full window
//   kRollout       Monte-Carlo rollout evaluation
//   kFunctionDraw  random test functions (contraction / mixing checks)
//   kParameterDraw random theta vectors and policies
enum class RngStream : std::uint64_t {
  kSimulate = 1,
  kBurnIn = 2,
  kRollout = 3,
  kFunctionDraw = 4,
  kParameterDraw = 5,
};

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, RngStream stream)
      : key_(mix(mix(seed) ^
                 (0x94d049bb133111ebULL * static_cast<std::uint64_t>(stream)))) {}

  std::uint64_t next_u64() {
    return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_);
  }

  // Uniform on [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Draws an index from a finite distribution given by any indexable weight
  // sequence (weights must sum to ~1). A point mass always yields its atom,
  // independent of the underlying uniform draw.
  template <class Weights>
  int categorical(const Weights& p, int n) {
    const double u = next_double();
    double cum = 0.0;
    int last_positive = 0;
    for (int i = 0; i < n; ++i) {
      const double w = p[i];
      if (w > 0.0) last_positive = i;
      cum += w;
      if (u < cum) return i;
    }
    return last_positive;  // guards against cum < 1 by rounding
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace nmrl
