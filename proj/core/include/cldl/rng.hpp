#pragma once

#include <cstdint>
#include <string_view>

namespace cldl {

// Deterministic counter-based generator (splitmix64). Every consumer of
// randomness derives its own stream from one root seed via child(), so runs
// are reproducible regardless of the order in which streams are drawn from.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n). Rejection-free modulo bias is negligible for
  // the sizes used here, but do it properly anyway.
  uint64_t uniform_int(uint64_t n) {
    uint64_t threshold = (~n + 1) % n;  // (2^64 - n) mod n
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Derive an independent child stream keyed by a label and an index.
  Rng child(std::string_view label, uint64_t index = 0) const {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the label
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    Rng derived(state_ ^ h ^ (index * 0xd6e8feb86659fd93ULL));
    derived.next_u64();  // decorrelate from the raw key
    return derived;
  }

 private:
  uint64_t state_;
};

}  // namespace cldl
