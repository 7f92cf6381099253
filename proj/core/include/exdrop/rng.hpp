#pragma once

#include <cstdint>
#include <random>

namespace exdrop {

// Deterministic random source. Seeding goes through a SplitMix64 mix so
// nearby integer seeds land far apart in state space, and all sampling
// (uniform, normal, bernoulli) is generated from raw 64-bit draws rather
// than std:: distributions, whose output is not pinned across library
// implementations. Two Rng objects built from the same seed produce the
// same stream on every platform.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  // Uniform on [0, 1) with 53 bits of mantissa.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller on two uniform draws.
  double normal();
  double normal(double mean, double stddev);

  bool bernoulli(double p);

  // Integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);

  std::uint64_t next_u64() { return engine_(); }

  // Independent child stream: a new Rng whose seed is derived from this
  // generator's seed and the tag, without consuming draws from this stream.
  Rng split(std::uint64_t tag) const;

  std::uint64_t seed() const { return seed_; }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// The SplitMix64 finalizer. Exposed for components that need a cheap
// stateless hash of a seed/tag pair.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace exdrop
