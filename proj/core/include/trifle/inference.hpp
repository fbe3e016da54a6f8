#pragma once

#include <cstdint>
#include <vector>

#include "trifle/circuit.hpp"

namespace trifle {

class Rng;

// Per-variable evidence for a circuit query. Each variable is either
// unobserved (marginalized), observed at one category, or restricted to a
// nonempty category subset (its input nodes then report the subset mass).
class EvidenceMask {
 public:
  enum class State : std::int8_t { unobserved, observed, restricted };

  EvidenceMask() = default;
  explicit EvidenceMask(std::int32_t n_vars) : code_(n_vars, -1) {}

  std::int32_t n_vars() const { return static_cast<std::int32_t>(code_.size()); }

  State state(std::int32_t var) const {
    check_var(var);
    if (code_[var] >= 0) return State::observed;
    return code_[var] == -1 ? State::unobserved : State::restricted;
  }

  void observe(std::int32_t var, std::int32_t category);
  // `allowed` must be nonempty; duplicates are removed, order normalized.
  void restrict_to(std::int32_t var, std::vector<std::int32_t> allowed);
  void clear(std::int32_t var);

  std::int32_t observed_value(std::int32_t var) const;
  const std::vector<std::int32_t>& allowed_values(std::int32_t var) const;

  // Merges another mask into this one. Overlapping observations must agree;
  // overlapping restrictions intersect. Returns false (leaving the mask in an
  // unspecified state) if the merge produces an impossible event, e.g. two
  // different observed categories for one variable.
  bool merge(const EvidenceMask& other);

 private:
  void check_var(std::int32_t var) const;

  // code_[v]: category if >= 0, -1 unobserved, -2 restricted (allowed_ entry).
  std::vector<std::int32_t> code_;
  std::vector<std::vector<std::int32_t>> allowed_;  // sized lazily, per variable
};

// Bottom-up node values for one evidence mask. Values are kept in a
// range-extended linear form, value = mant * 2^(1020 * expo), so that windows
// of many low-probability tokens cannot underflow; logarithms are taken only
// at readout. mant is either 0 (with a sentinel exponent) or lies in
// [2^-510, 2^510), which makes products and weighted sums plain double
// arithmetic with an occasional exact renormalization by 2^±1020.
struct ForwardCache {
  std::vector<double> mant;
  std::vector<std::int32_t> expo;

  double log_prob(std::int32_t node) const;
  double value(std::int32_t node) const;  // plain double; may under/overflow by design
  std::int32_t n_nodes() const { return static_cast<std::int32_t>(mant.size()); }
};

// Top-down flows for one evidence mask, normalized so flow[root] == 1. The
// flow of a node is the posterior mass routed through it given the evidence;
// edges from zero-probability parents contribute exactly zero.
struct FlowCache {
  std::vector<double> flow;
};

// Maps category index -> real value (bin center or exact decoded value).
struct ValueMap {
  std::vector<double> value;
};

struct CategoricalDist {
  std::vector<double> p;
};

// A discrete distribution over real values: category i has probability
// dist.p[i] and value values.value[i].
struct DiscreteDist {
  CategoricalDist dist;
  ValueMap values;
};

struct WeightedComponent {
  CategoricalDist dist;
  ValueMap values;
  double weight = 1.0;
};

// --- Core queries -----------------------------------------------------------

// Evaluates all nodes bottom-up under the evidence. The root entry is the
// (unnormalized) marginal probability of the evidence. Throws
// std::invalid_argument if the mask size does not match the circuit or an
// observed/restricted category is out of range.
ForwardCache forward_marginal(const Circuit& c, const EvidenceMask& e);

// log p(e); convenience wrapper over forward_marginal.
double log_marginal(const Circuit& c, const EvidenceMask& e);

// log p(query | given) = log p(query ∧ given) - log p(given). The two masks
// are merged per-variable; conflicting observations make the query event
// impossible and return -infinity. Throws std::invalid_argument if the
// conditioning event itself has probability zero.
double conditional(const Circuit& c, const EvidenceMask& query, const EvidenceMask& given);

// Top-down flow pass over cached forward values. Throws std::invalid_argument
// if the root probability is zero (no posterior exists).
FlowCache backward_flows(const Circuit& c, const ForwardCache& fc);

// Unnormalized posterior scores for one unobserved target variable:
// score(x) = Σ over the target's input nodes n of flow[n] * f_n(x). With
// flow[root] = 1 the scores sum to 1 (i.e. to p(e)/p(e)); multiplying by the
// root marginal recovers absolute joint masses p(X = x, e).
std::vector<double> posterior_scores(const Circuit& c, const ForwardCache& fc,
                                     const FlowCache& flows, std::int32_t target);

// Normalized posterior p(X = x | e) computed from a single forward+backward
// pass. Throws std::invalid_argument if the target is observed/restricted in
// `e` or the evidence has probability zero.
CategoricalDist posterior_marginal(const Circuit& c, const EvidenceMask& e, std::int32_t target);

// Posteriors for several target variables from one shared forward+backward
// pass. Same preconditions per target as posterior_marginal.
std::vector<CategoricalDist> posterior_marginals(const Circuit& c, const EvidenceMask& e,
                                                 const std::vector<std::int32_t>& targets);

// Draws one category from the posterior of an unobserved target variable
// using already-computed caches, in O(#input nodes + card) and without
// materializing the posterior vector: picks an input node with probability
// proportional to its flow, then a category from that node's distribution.
std::int32_t posterior_sample(const Circuit& c, const ForwardCache& fc, const FlowCache& flows,
                              std::int32_t target, Rng& rng);

// --- Value-decoded queries ---------------------------------------------------

// Pure helpers on an explicit (distribution, value-map) pair. The circuit
// queries below are thin compositions of posterior_marginal with these, and
// planner code applies them to derived distributions (e.g. convolutions).
double expectation_of(const CategoricalDist& d, const ValueMap& vm);
// P(value >= v).
double tail_of(const CategoricalDist& d, const ValueMap& vm, double v);
// Largest value in the map's image whose tail probability is >= 1 - delta;
// ties broken toward the larger value. delta must lie in (0, 1).
double quantile_of(const CategoricalDist& d, const ValueMap& vm, double delta);

double expectation(const Circuit& c, const EvidenceMask& e, std::int32_t target,
                   const ValueMap& vm);
double tail_probability(const Circuit& c, const EvidenceMask& e, std::int32_t target,
                        const ValueMap& vm, double v);
double quantile_threshold(const Circuit& c, const EvidenceMask& e, std::int32_t target,
                          const ValueMap& vm, double delta);

// Distribution of Σ_i weight_i * X_i under independence of the components.
// out_bins > 0 re-bins the exact support onto a uniform grid of that many
// centers (nearest-center assignment; expectation moves by at most half a bin
// width). out_bins == 0 keeps the exact support. Throws on an empty component
// list or component size mismatches.
DiscreteDist convolve_sum(const std::vector<WeightedComponent>& parts, int out_bins = 101);

}  // namespace trifle
