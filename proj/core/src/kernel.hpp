#pragma once

// Shared bottom-up / top-down sweep kernels over the flat circuit arrays.
// Used by the public inference entry points and by the EM trainer, which fuses
// statistic accumulation into the top-down sweep.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "trifle/circuit.hpp"
#include "trifle/inference.hpp"

namespace trifle::detail {

// Range-extended representation: value = mant * 2^(1020 * expo) with mant
// either exactly 0 or in [2^-510, 2^510). Renormalization multiplies by
// 2^±1020, which is exact in binary floating point.
constexpr double kMantLo = 0x1p-510;
constexpr double kMantHi = 0x1p510;
constexpr double kScaleUp = 0x1p1020;
constexpr double kScaleDown = 0x1p-1020;
constexpr std::int32_t kZeroExpo = INT32_MIN / 2;  // sentinel for value 0
inline const double kLogUnit = 1020.0 * std::log(2.0);

inline void renorm(double& m, std::int32_t& e) {
  if (m == 0.0) {
    e = kZeroExpo;
    return;
  }
  while (m >= kMantHi) {
    m *= kScaleDown;
    ++e;
  }
  while (m < kMantLo) {
    m *= kScaleUp;
    --e;
  }
}

// Alignment factor for adding a term whose exponent sits `diff` units below
// the accumulator's exponent. Terms two or more units below are relatively
// smaller than 2^-1020 and contribute exactly zero.
inline double align_factor(std::int64_t diff) {
  if (diff == 0) return 1.0;
  if (diff == 1) return kScaleDown;
  return 0.0;
}

inline double ext_log(double m, std::int32_t e) {
  if (m == 0.0) return -std::numeric_limits<double>::infinity();
  return std::log(m) + static_cast<double>(e) * kLogUnit;
}

// Per-input-node evidence values (the leaf layer of the bottom-up sweep).
// Throws std::invalid_argument on mask/circuit mismatches.
void input_values(const Circuit& c, const EvidenceMask& e, std::vector<double>& leaf);

// Bottom-up sweep. `leaf` must hold one value per node (only input-node slots
// are read). Writes mant/expo for every node.
void upward_sweep(const Circuit& c, const std::vector<double>& leaf,
                  std::vector<double>& mant, std::vector<std::int32_t>& expo);

// Top-down flow sweep with flow[root] = 1. Zero-probability or zero-flow
// parents are skipped, so their edges contribute exactly zero.
//
// WithStats instantiations additionally accumulate, per sum-node edge, the
// posterior edge mass flow_m * w * p_n / p_m into edge_stat (aligned with
// Circuit::child). edge_stat may be null when WithStats is false.
template <bool WithStats>
void downward_sweep(const Circuit& c, const std::vector<double>& mant,
                    const std::vector<std::int32_t>& expo, std::vector<double>& flow,
                    double* edge_stat) {
  const std::int32_t n = c.n_nodes();
  flow.assign(n, 0.0);
  flow[c.root] = 1.0;
  for (std::int32_t m = n - 1; m >= 0; --m) {
    const double fm = flow[m];
    if (fm == 0.0 || c.kind[m] == NodeKind::input) continue;
    if (mant[m] == 0.0) continue;
    const std::int64_t lo = c.child_off[m];
    const std::int64_t hi = c.child_off[m + 1];
    if (c.kind[m] == NodeKind::product) {
      for (std::int64_t e = lo; e < hi; ++e) flow[c.child[e]] += fm;
      continue;
    }
    const double base = fm / mant[m];
    const std::int32_t em = expo[m];
    for (std::int64_t e = lo; e < hi; ++e) {
      const std::int32_t ch = c.child[e];
      double t = c.weight[e] * mant[ch] * base;
      const std::int64_t diff = static_cast<std::int64_t>(expo[ch]) - em;
      if (diff == -1) {
        t *= kScaleDown;
      } else if (diff == 1) {
        t *= kScaleUp;
      } else if (diff != 0) {
        // The weighted child mass never exceeds the parent mass, so the true
        // edge ratio is <= 1. |diff| >= 2 therefore means the term vanishes
        // relative to the parent (underflow to an exact 0 here).
        t *= std::exp2(1020.0 * static_cast<double>(diff));
      }
      flow[ch] += t;
      if constexpr (WithStats) edge_stat[e] += t;
    }
  }
}

}  // namespace trifle::detail
