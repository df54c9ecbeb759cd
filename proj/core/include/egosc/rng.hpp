#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace egosc {

// splitmix64 finalizer; used to derive child seeds (seed_i = hash(master, i))
// and to default-expand a raw seed into PCG state.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(master ^ mix64(index + 0x51ed270b2f6c87ceULL));
}

// PCG32 (pcg-random.org, XSH-RR variant). Fixed algorithm so every run is
// reproducible bit-for-bit regardless of platform or standard library.
class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0xda3e39cb94b95bdbULL)
      : state_(0), inc_((stream << 1u) | 1u) {
    next_u32();
    state_ += mix64(seed);
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // [0, 1) with 32 bits of resolution; enough for sampling decisions and
  // identical between float/double builds.
  double next_double() { return next_u32() * (1.0 / 4294967296.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // uniform integer in [0, n); n > 0
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi_exclusive) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi_exclusive - lo)));
  }

  // Box-Muller; cached second value keeps the stream deterministic.
  double gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 1e-12);
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

  // Gumbel(0,1) noise for the quantizer.
  double gumbel() {
    double u = 0.0;
    do {
      u = next_double();
    } while (u <= 1e-12);
    return -std::log(-std::log(u));
  }

  // Fisher-Yates; std::shuffle is implementation-defined so we roll our own.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace egosc
