#pragma once
// Deterministic seed derivation. Every randomized component of an experiment
// (model draw, reference draw, mismatch draw, per-trial noise, ...) gets its
// own stream derived from (master seed, stream id) so that changing one
// knob never silently reshuffles another component's randomness.

#include <cstdint>
#include <random>

namespace bilc {

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(mix_seed(seed, stream));
}

// Stream ids for the experiment pipeline.
enum SeedStream : std::uint64_t {
  kStreamModel = 1,
  kStreamMismatch = 2,
  kStreamReference = 3,
  kStreamNoise = 4,
  kStreamPerturbation = 5,
  kStreamOracle = 6,
  kStreamNominal = 7,
  kStreamArm = 8,
  kStreamSampling = 9,
};

}  // namespace bilc
