#pragma once

#include <cstdint>
#include <cmath>

namespace cep {

// Counter-based deterministic RNG. Every random decision in a run is keyed
// by (seed, stream, counters...), so results never depend on call order or
// thread scheduling.
namespace rng {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t mix(uint64_t a, uint64_t b) {
  return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
}

// Named sub-streams; keeps independent purposes decorrelated under one seed.
enum Stream : uint64_t {
  kClip = 1,
  kTriple = 2,
  kAug = 3,
  kNoise = 4,
  kEasyNeg = 5,
  kHardNeg = 6,
  kInit = 7,
  kBackground = 8,
};

}  // namespace rng

// Stateful generator over a keyed stream. Cheap to construct; make a fresh
// one per (purpose, indices...) key rather than sharing.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(rng::splitmix64(seed)) {}

  template <typename... Keys>
  static Rng keyed(uint64_t seed, Keys... keys) {
    uint64_t h = rng::splitmix64(seed);
    ((h = rng::mix(h, static_cast<uint64_t>(keys))), ...);
    return Rng(h);
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n > 0.
  uint64_t below(uint64_t n) { return next_u64() % n; }

  bool coin() { return (next_u64() & 1ull) != 0; }

  // Standard normal via Box-Muller (portable across libm implementations).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace cep
