#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace sdst {

// 64-bit FNV-1a. Used for file checksums and for deriving rng streams
// from string salts, so it must never change across versions.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

// Incremental variant for streaming writers.
class Fnv64 {
 public:
  void update(const void* data, size_t len) { h_ = fnv1a64(data, len, h_); }
  uint64_t digest() const { return h_; }

 private:
  uint64_t h_ = 0xcbf29ce484222325ull;
};

inline uint64_t mix64(uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic, platform-independent generator. Streams are derived
// from (seed, salt) pairs so parallel corpus generation stays
// schedule-independent.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  static Rng derive(uint64_t seed, std::string_view salt, uint64_t index = 0) {
    uint64_t h = fnv1a64(salt);
    h = mix64(h ^ mix64(seed));
    h = mix64(h ^ mix64(index + 0x9e3779b97f4a7c15ull));
    return Rng(h);
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [lo, hi] inclusive
  int range_int(int lo, int hi) {
    if (hi <= lo) return lo;
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; computes a fresh pair each call and discards the second
  // member so the draw sequence has no hidden state.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

 private:
  uint64_t state_;
};

}  // namespace sdst
