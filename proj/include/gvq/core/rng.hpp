#pragma once

#include <cmath>
#include <cstdint>

#include "gvq/core/error.hpp"

namespace gvq {

// Counter-based splittable RNG built on SplitMix64. Value semantics: copying
// a stream forks its future output; identical seeds give identical sequences
// on every platform, which the reproducibility tests rely on. We do not use
// <random> distributions because their output is implementation-defined.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Strictly inside (0,1), so log() and log(-log()) are always finite.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, cosine branch only. One normal costs two uniforms; the
  // predictable consumption rate keeps replayed rollouts aligned.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Standard Gumbel(0,1).
  double gumbel() { return -std::log(-std::log(uniform())); }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n). Modulo bias is < n / 2^64, irrelevant here.
  int uniform_int(int n) {
    if (n <= 0) throw ContractError("uniform_int: n must be positive");
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Child stream keyed by (current position, tag). Advances this stream by
  // one draw, so repeated splits with the same tag differ.
  RngStream split(std::uint64_t tag) {
    std::uint64_t base = next_u64();
    std::uint64_t z = (base ^ (tag * 0xd1342543de82ef95ull)) + 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return RngStream(z ^ (z >> 31));
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// Pure function of (seed, tag): used to key per-episode environment streams
// so every method variant sees the same world layout at the same trial index.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed ^ (tag * 0x9e3779b97f4a7c15ull) ^ 0x6a09e667f3bcc909ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace gvq
