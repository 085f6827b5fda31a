#pragma once

#include <cstdint>
#include <cmath>

namespace faim {

// splitmix64, used both as a seed mixer and as the generator itself.
// All randomness in the project flows through this class so that runs are
// reproducible bit-for-bit from a single 64-bit seed.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  float uniform(float lo, float hi) {
    return lo + static_cast<float>(next_double()) * (hi - lo);
  }

  // uniform integer in [0, n)
  int next_int(int n) {
    return n <= 1 ? 0 : static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  bool bernoulli(double p) { return next_double() < p; }

  // Box-Muller; deterministic, no cached spare to keep state simple.
  float normal(float mean = 0.0f, float stddev = 1.0f) {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * static_cast<float>(r * std::cos(2.0 * M_PI * u2));
  }

private:
  uint64_t state_;
};

// FNV-1a; stable across platforms, used to derive per-name parameter seeds.
inline uint64_t fnv1a(const char* s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (; *s; ++s) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(*s));
    h *= 0x100000001B3ull;
  }
  return h;
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  Rng r(a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2)));
  return r.next_u64();
}

}  // namespace faim
