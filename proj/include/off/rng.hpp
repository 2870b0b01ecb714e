#pragma once

#include <cstdint>

#include "off/common.hpp"

namespace off {

// Deterministic PRNG with an explicitly pinned algorithm so that streams are
// reproducible bit-for-bit across platforms and standard libraries.
// splitmix64 seeds and mixes; xoshiro256** generates.

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  // Independent substream, e.g. one per clip id. Mixing both words through
  // splitmix64 decorrelates nearby (seed, stream) pairs.
  Rng(uint64_t seed, uint64_t stream) {
    uint64_t sm = seed;
    uint64_t a = splitmix64(sm);
    sm = stream ^ 0x6a09e667f3bcc909ull;
    uint64_t b = splitmix64(sm);
    sm = a ^ (b + 0x9e3779b97f4a7c15ull);
    for (auto& w : s_) w = splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection-free multiply-shift would bias for
  // huge n; bounded rejection keeps it exact.
  uint64_t below(uint64_t n) {
    require(n > 0, ErrKind::invalid_argument, "rng: below(0)");
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

}  // namespace off
