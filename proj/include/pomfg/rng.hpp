// Counter-based random number generation.
//
// Every draw is a pure function of (seed, stream, counter), so simulations
// are reproducible bit-for-bit regardless of evaluation order or thread
// count, and two simulations that address the same (agent, noise-kind)
// stream consume identical increments. That coupling is what the
// population-vs-McKean-Vlasov comparisons rely on.
#pragma once

#include <cmath>
#include <cstdint>

namespace pomfg::rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// splitmix64 finalizer; full-avalanche 64-bit mix.
inline std::uint64_t mix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Keyed counter hash: two injection rounds after the last input keep the
// output decorrelated across neighbouring (stream, counter) pairs.
inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t stream,
                                  std::uint64_t counter) {
  std::uint64_t h = mix64(seed ^ 0x8C2F1B4D9E6A3C75ull);
  h = mix64(h ^ stream);
  h = mix64(h ^ counter);
  return mix64(h + (stream << 1) + counter);
}

// Uniform in the open interval (0, 1); never returns 0 or 1.
inline double uniform01(std::uint64_t seed, std::uint64_t stream,
                        std::uint64_t counter) {
  const std::uint64_t bits = counter_hash(seed, stream, counter) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

// Standard normal via Box-Muller on counters (2i, 2i+1). The sine partner is
// discarded; draws stay independently addressable by index.
inline double standard_normal(std::uint64_t seed, std::uint64_t stream,
                              std::uint64_t index) {
  const double u1 = uniform01(seed, stream, 2 * index);
  const double u2 = uniform01(seed, stream, 2 * index + 1);
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

// Noise kinds multiplexed onto per-agent streams.
enum class NoiseKind : std::uint64_t {
  kStateW = 0,    // state Brownian motion (first component)
  kStateW2 = 1,   // second state component (Benes lane)
  kObs = 2,       // observation noise
  kInit = 3,      // initial condition (first component)
  kInit2 = 4,     // initial condition (second component)
  kResample = 5,  // particle-filter resampling offsets
  kAux = 6,       // auxiliary draws (test perturbations etc.)
};

inline std::uint64_t stream_id(std::uint64_t agent, NoiseKind kind) {
  return (static_cast<std::uint64_t>(kind) << 40) ^ agent;
}

// Derives an independent sub-seed (replications, probe sampling, ...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  return mix64(mix64(seed ^ 0xA5A5A5A55A5A5A5Aull) + salt);
}

}  // namespace pomfg::rng
