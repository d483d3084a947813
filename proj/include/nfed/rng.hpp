// Counter-style seeded generator (splitmix64) with uniform and gaussian draws.
// Bit-reproducible across platforms, which the dataset manifests rely on.
#pragma once

#include <cmath>
#include <cstdint>

namespace nfed {

struct rng {
  uint64_t state = 0;

  explicit rng(uint64_t seed) : state(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  int uniform_int(int lo, int hi) {
    return lo + int(next_u64() % uint64_t(hi - lo + 1));
  }

  // Box-Muller without state caching: two draws per sample keeps the stream
  // position a pure function of the call count.
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  // Independent child stream; used to decorrelate per-sample draws.
  rng fork(uint64_t salt) {
    rng r(state ^ (salt * 0xD2B74407B1CE6E93ull + 0x9E3779B97F4A7C15ull));
    r.next_u64();
    return r;
  }
};

}  // namespace nfed
