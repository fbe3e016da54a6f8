#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace trifle {

// Deterministic 64-bit counter-based generator (SplitMix64, Steele et al.).
//
// Every draw is a fixed integer mixing function of (seed-derived state), so
// streams are reproducible bit-for-bit across platforms and compilers; nothing
// here depends on libstdc++ distribution internals. Independent streams for
// e.g. parallel episodes are derived with `fork`, which hashes a stream id
// into a fresh seed instead of sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 random mantissa bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n) via 128-bit multiplicative range reduction.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::next_below: n must be > 0");
    unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  int next_int(int n) { return static_cast<int>(next_below(static_cast<std::uint64_t>(n))); }

  // Samples an index proportional to the (nonnegative) weights. Total mass of
  // zero is a caller error. CDF walk keeps the draw order-deterministic.
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) {
      throw std::invalid_argument("Rng::categorical: total weight must be positive");
    }
    double u = next_double() * total;
    double acc = 0.0;
    int last = -1;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      acc += weights[i];
      last = static_cast<int>(i);
      if (u < acc) return last;
    }
    return last;  // u landed in the last sliver of rounding error
  }

  // Derives an independent stream for the given id. Mixing the id through the
  // same SplitMix64 finalizer keeps forked streams uncorrelated with the
  // parent and with each other, while staying a pure function of (seed, id).
  Rng fork(std::uint64_t stream_id) const {
    std::uint64_t z = state_ ^ (0xD1B54A32D192ED03ULL + stream_id * 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::uint64_t state_;
};

}  // namespace trifle
