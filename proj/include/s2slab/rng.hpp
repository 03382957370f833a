#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace s2slab {

// Deterministic random stream. mt19937_64 raw output is fully specified by the
// standard; all sampling on top of it is implemented here rather than with
// std distributions so that dumps and training runs replay identically across
// standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // Derives an independent substream from (seed, stream ids) via splitmix64.
  static Rng for_stream(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0);

  // Stateless mixer, also used to derive per-example seeds.
  static uint64_t mix(uint64_t x);

  uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi], inclusive. Rejection sampling, no modulo bias.
  int64_t uniform_int(int64_t lo, int64_t hi);

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one value per call for replayable streams.
  double normal(double mean = 0.0, double stddev = 1.0);

  // Knuth's product-of-uniforms method; fine for the small means used here.
  int poisson(double mean);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace s2slab
