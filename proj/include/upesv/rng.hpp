// Deterministic, platform-independent RNG. std:: distributions are
// implementation-defined, so bounded draws are done by hand (Lemire) and
// reals via the 53-bit mantissa trick. Streams are derived from a seed plus
// a path of labels so independent consumers never share a sequence.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace upesv::rng {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// xoshiro256** core.
class Stream {
 public:
  Stream() : Stream(0) {}

  explicit Stream(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  // Derive an independent stream from (seed, path...). Used to give every
  // env instance / phase / batch sampler its own sequence.
  static Stream derive(uint64_t seed, std::initializer_list<uint64_t> path) {
    uint64_t sm = seed;
    uint64_t acc = splitmix64(sm);
    for (uint64_t p : path) {
      sm = acc ^ (p + 0x9e3779b97f4a7c15ull);
      acc = splitmix64(sm);
    }
    return Stream(acc);
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    uint64_t result = rotl(s_[1] * 5, 7) * 9;
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Unbiased integer in [0, n). Lemire's multiply-shift with rejection.
  uint64_t bounded(uint64_t n) {
    if (n <= 1) return 0;
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
    auto lo = static_cast<uint64_t>(m);
    if (lo < n) {
      uint64_t threshold = (0 - n) % n;
      while (lo < threshold) {
        m = static_cast<__uint128_t>(next_u64()) * n;
        lo = static_cast<uint64_t>(m);
      }
    }
    return static_cast<uint64_t>(m >> 64);
  }

  // Inclusive range.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(bounded(static_cast<uint64_t>(hi - lo + 1)));
  }

  double uniform() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Symmetric uniform, the fan-in init distribution.
  template <class S>
  S uniform_sym(S radius) {
    return static_cast<S>(uniform(-static_cast<double>(radius),
                                  static_cast<double>(radius)));
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<uint64_t, 4> s_{};
};

}  // namespace upesv::rng
