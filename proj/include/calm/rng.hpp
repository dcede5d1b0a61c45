#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace calm {

// FNV-1a, used for substream derivation and config hashing.
inline uint64_t fnv1a64(std::string_view bytes, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64_u64(uint64_t x, uint64_t h) {
  for (int i = 0; i < 8; ++i) {
    h ^= (x >> (8 * i)) & 0xff;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Deterministic RNG. All randomness in the toolkit flows from one top-level
// seed through named substreams, so any component can be re-run in isolation
// and parallel workers can draw from independent streams without
// coordination. Distributions are implemented here rather than taken from
// <random> so that sequences are pinned by this code, not by the standard
// library vendor.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t seed() const { return seed_; }

  // Derived stream for (name, indices...): e.g. substream("synth", conv_idx).
  // Derivation uses the stream's base seed, not engine state, so the layout
  // of substreams is independent of how much the parent has been consumed.
  Rng substream(std::string_view name) const { return Rng(mix(name)); }
  Rng substream(std::string_view name, uint64_t a) const {
    return Rng(fnv1a64_u64(a, mix(name)));
  }
  Rng substream(std::string_view name, uint64_t a, uint64_t b) const {
    return Rng(fnv1a64_u64(b, fnv1a64_u64(a, mix(name))));
  }
  Rng substream(std::string_view name, std::string_view key, uint64_t b) const {
    return Rng(fnv1a64_u64(b, fnv1a64(key, mix(name))));
  }

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, unbiased.
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Index sampled proportionally to weights (need not be normalized).
  std::size_t discrete(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw std::invalid_argument("discrete: negative weight");
      total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("discrete: weights sum to zero");
    double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t mix(std::string_view name) const {
    return fnv1a64(name, fnv1a64_u64(seed_, 0xcbf29ce484222325ull));
  }
  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace calm
