#pragma once

#include <cmath>
#include <cstdint>

namespace mvpose {

// splitmix64 generator. std:: distributions are implementation-defined, so all
// sampling goes through this to keep fixed seeds byte-identical across builds.
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

  // [0, 1)
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  double normal() {
    // Box-Muller; u1 shifted into (0, 1] so log() is safe.
    double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  int uniform_int(int n) {  // [0, n)
    return int(next_u64() % uint64_t(n));
  }

  // Decorrelated stream for (master seed, stream id) so per-sample draws do not
  // depend on generation order.
  static uint64_t derive(uint64_t master, uint64_t stream) {
    Rng mix(master ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    mix.next_u64();
    return mix.next_u64();
  }

 private:
  uint64_t state_;
};

}  // namespace mvpose
