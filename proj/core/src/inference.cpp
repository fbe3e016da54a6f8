#include "trifle/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "kernel.hpp"
#include "trifle/rng.hpp"

namespace trifle {

namespace detail {

void input_values(const Circuit& c, const EvidenceMask& e, std::vector<double>& leaf) {
  if (e.n_vars() != c.n_vars()) {
    std::ostringstream msg;
    msg << "evidence mask covers " << e.n_vars() << " variables, circuit has " << c.n_vars();
    throw std::invalid_argument(msg.str());
  }
  leaf.assign(c.n_nodes(), 1.0);
  for (std::int32_t v = 0; v < c.n_vars(); ++v) {
    const auto state = e.state(v);
    if (state == EvidenceMask::State::unobserved) continue;
    if (state == EvidenceMask::State::observed) {
      const std::int32_t x = e.observed_value(v);
      if (x < 0 || x >= c.card(v)) {
        std::ostringstream msg;
        msg << "evidence for variable " << v << ": category " << x << " out of range";
        throw std::invalid_argument(msg.str());
      }
      for (std::int32_t n : c.inputs_by_var[v]) leaf[n] = c.param[c.param_off[n] + x];
    } else {
      const auto& allowed = e.allowed_values(v);
      for (std::int32_t x : allowed) {
        if (x < 0 || x >= c.card(v)) {
          std::ostringstream msg;
          msg << "evidence for variable " << v << ": category " << x << " out of range";
          throw std::invalid_argument(msg.str());
        }
      }
      for (std::int32_t n : c.inputs_by_var[v]) {
        double total = 0.0;
        for (std::int32_t x : allowed) total += c.param[c.param_off[n] + x];
        leaf[n] = total;
      }
    }
  }
}

void upward_sweep(const Circuit& c, const std::vector<double>& leaf, std::vector<double>& mant,
                  std::vector<std::int32_t>& expo) {
  const std::int32_t n = c.n_nodes();
  mant.resize(n);
  expo.resize(n);
  for (std::int32_t i = 0; i < n; ++i) {
    switch (c.kind[i]) {
      case NodeKind::input: {
        double m = leaf[i];
        std::int32_t e = 0;
        renorm(m, e);
        mant[i] = m;
        expo[i] = e;
        break;
      }
      case NodeKind::product: {
        double m = 1.0;
        std::int32_t e = 0;
        bool zero = false;
        for (std::int64_t k = c.child_off[i]; k < c.child_off[i + 1]; ++k) {
          const std::int32_t ch = c.child[k];
          if (mant[ch] == 0.0) {
            zero = true;
            break;
          }
          m *= mant[ch];
          e += expo[ch];
          if (m >= kMantHi) {
            m *= kScaleDown;
            ++e;
          } else if (m < kMantLo) {
            m *= kScaleUp;
            --e;
          }
        }
        if (zero) {
          mant[i] = 0.0;
          expo[i] = kZeroExpo;
        } else {
          mant[i] = m;
          expo[i] = e;
        }
        break;
      }
      case NodeKind::sum: {
        std::int32_t emax = kZeroExpo;
        for (std::int64_t k = c.child_off[i]; k < c.child_off[i + 1]; ++k) {
          const std::int32_t ch = c.child[k];
          if (mant[ch] != 0.0 && expo[ch] > emax) emax = expo[ch];
        }
        if (emax == kZeroExpo) {
          mant[i] = 0.0;
          expo[i] = kZeroExpo;
          break;
        }
        double acc = 0.0;
        for (std::int64_t k = c.child_off[i]; k < c.child_off[i + 1]; ++k) {
          const std::int32_t ch = c.child[k];
          acc += c.weight[k] * mant[ch] *
                 align_factor(static_cast<std::int64_t>(emax) - expo[ch]);
        }
        renorm(acc, emax);
        mant[i] = acc;
        expo[i] = emax;
        break;
      }
    }
  }
}

}  // namespace detail

// --- EvidenceMask ------------------------------------------------------------

void EvidenceMask::check_var(std::int32_t var) const {
  if (var < 0 || var >= n_vars()) {
    std::ostringstream msg;
    msg << "evidence mask: variable " << var << " out of range (n_vars = " << n_vars() << ")";
    throw std::invalid_argument(msg.str());
  }
}

void EvidenceMask::observe(std::int32_t var, std::int32_t category) {
  check_var(var);
  if (category < 0) throw std::invalid_argument("evidence mask: category must be >= 0");
  code_[var] = category;
}

void EvidenceMask::restrict_to(std::int32_t var, std::vector<std::int32_t> allowed) {
  check_var(var);
  if (allowed.empty()) throw std::invalid_argument("evidence mask: empty restriction set");
  std::sort(allowed.begin(), allowed.end());
  allowed.erase(std::unique(allowed.begin(), allowed.end()), allowed.end());
  if (allowed.front() < 0) throw std::invalid_argument("evidence mask: category must be >= 0");
  if (allowed_.empty()) allowed_.resize(code_.size());
  allowed_[var] = std::move(allowed);
  code_[var] = -2;
}

void EvidenceMask::clear(std::int32_t var) {
  check_var(var);
  code_[var] = -1;
  if (!allowed_.empty()) allowed_[var].clear();
}

std::int32_t EvidenceMask::observed_value(std::int32_t var) const {
  check_var(var);
  if (code_[var] < 0) throw std::invalid_argument("evidence mask: variable is not observed");
  return code_[var];
}

const std::vector<std::int32_t>& EvidenceMask::allowed_values(std::int32_t var) const {
  check_var(var);
  if (code_[var] != -2) throw std::invalid_argument("evidence mask: variable is not restricted");
  return allowed_[var];
}

bool EvidenceMask::merge(const EvidenceMask& other) {
  if (other.n_vars() != n_vars()) {
    throw std::invalid_argument("evidence mask merge: size mismatch");
  }
  for (std::int32_t v = 0; v < n_vars(); ++v) {
    const State mine = state(v);
    const State theirs = other.state(v);
    if (theirs == State::unobserved) continue;
    if (mine == State::unobserved) {
      if (theirs == State::observed) {
        observe(v, other.observed_value(v));
      } else {
        restrict_to(v, other.allowed_values(v));
      }
      continue;
    }
    if (mine == State::observed && theirs == State::observed) {
      if (observed_value(v) != other.observed_value(v)) return false;
      continue;
    }
    if (mine == State::observed) {  // theirs restricted
      const auto& a = other.allowed_values(v);
      if (!std::binary_search(a.begin(), a.end(), observed_value(v))) return false;
      continue;
    }
    if (theirs == State::observed) {  // mine restricted
      const auto& a = allowed_values(v);
      if (!std::binary_search(a.begin(), a.end(), other.observed_value(v))) return false;
      observe(v, other.observed_value(v));
      continue;
    }
    // Both restricted: intersect.
    const auto& a = allowed_values(v);
    const auto& b = other.allowed_values(v);
    std::vector<std::int32_t> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    if (both.empty()) return false;
    restrict_to(v, std::move(both));
  }
  return true;
}

// --- Forward / backward ------------------------------------------------------

double ForwardCache::log_prob(std::int32_t node) const {
  return detail::ext_log(mant[node], expo[node]);
}

double ForwardCache::value(std::int32_t node) const {
  return mant[node] * std::exp2(1020.0 * static_cast<double>(expo[node]));
}

ForwardCache forward_marginal(const Circuit& c, const EvidenceMask& e) {
  thread_local std::vector<double> leaf;
  detail::input_values(c, e, leaf);
  ForwardCache fc;
  detail::upward_sweep(c, leaf, fc.mant, fc.expo);
  return fc;
}

double log_marginal(const Circuit& c, const EvidenceMask& e) {
  return forward_marginal(c, e).log_prob(c.root);
}

double conditional(const Circuit& c, const EvidenceMask& query, const EvidenceMask& given) {
  const double log_given = log_marginal(c, given);
  if (log_given == -std::numeric_limits<double>::infinity()) {
    throw std::invalid_argument("conditional: conditioning event has probability zero");
  }
  EvidenceMask merged = given;
  if (!merged.merge(query)) return -std::numeric_limits<double>::infinity();
  return log_marginal(c, merged) - log_given;
}

FlowCache backward_flows(const Circuit& c, const ForwardCache& fc) {
  if (fc.n_nodes() != c.n_nodes()) {
    throw std::invalid_argument("backward_flows: cache does not match circuit");
  }
  if (fc.mant[c.root] == 0.0) {
    throw std::invalid_argument("backward_flows: evidence has probability zero");
  }
  FlowCache flows;
  detail::downward_sweep<false>(c, fc.mant, fc.expo, flows.flow, nullptr);
  return flows;
}

std::vector<double> posterior_scores(const Circuit& c, const ForwardCache& fc,
                                     const FlowCache& flows, std::int32_t target) {
  if (target < 0 || target >= c.n_vars()) {
    throw std::invalid_argument("posterior_scores: target variable out of range");
  }
  std::vector<double> score(c.card(target), 0.0);
  for (std::int32_t n : c.inputs_by_var[target]) {
    const double f = flows.flow[n];
    if (f == 0.0) continue;
    const double* p = c.param.data() + c.param_off[n];
    for (std::int32_t x = 0; x < c.card(target); ++x) score[x] += f * p[x];
  }
  return score;
}

namespace {

CategoricalDist normalize_scores(std::vector<double> score) {
  double total = 0.0;
  for (double s : score) total += s;
  if (!(total > 0.0)) {
    throw std::invalid_argument("posterior: evidence has probability zero under every category");
  }
  for (double& s : score) s /= total;
  return CategoricalDist{std::move(score)};
}

void require_unobserved(const EvidenceMask& e, std::int32_t target) {
  if (e.state(target) != EvidenceMask::State::unobserved) {
    std::ostringstream msg;
    msg << "posterior: target variable " << target << " must be unobserved in the evidence";
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

CategoricalDist posterior_marginal(const Circuit& c, const EvidenceMask& e, std::int32_t target) {
  require_unobserved(e, target);
  ForwardCache fc = forward_marginal(c, e);
  FlowCache flows = backward_flows(c, fc);
  return normalize_scores(posterior_scores(c, fc, flows, target));
}

std::vector<CategoricalDist> posterior_marginals(const Circuit& c, const EvidenceMask& e,
                                                 const std::vector<std::int32_t>& targets) {
  for (std::int32_t t : targets) require_unobserved(e, t);
  ForwardCache fc = forward_marginal(c, e);
  FlowCache flows = backward_flows(c, fc);
  std::vector<CategoricalDist> out;
  out.reserve(targets.size());
  for (std::int32_t t : targets) {
    out.push_back(normalize_scores(posterior_scores(c, fc, flows, t)));
  }
  return out;
}

std::int32_t posterior_sample(const Circuit& c, const ForwardCache& fc, const FlowCache& flows,
                              std::int32_t target, Rng& rng) {
  if (target < 0 || target >= c.n_vars()) {
    throw std::invalid_argument("posterior_sample: target variable out of range");
  }
  if (fc.n_nodes() != c.n_nodes() ||
      flows.flow.size() != static_cast<std::size_t>(c.n_nodes())) {
    throw std::invalid_argument("posterior_sample: cache size does not match the circuit");
  }
  const auto& inputs = c.inputs_by_var[target];
  // Two-stage sampling of p(X = x | e) = Σ_n flow[n] * f_n(x): pick an input
  // node by flow, then a category from that node's distribution. Avoids
  // materializing the card-sized posterior; both stages walk a running sum.
  // Only valid for unobserved targets, where every f_n is the node's full
  // (normalized) distribution.
  double total = 0.0;
  for (std::int32_t n : inputs) total += flows.flow[n];
  if (!(total > 0.0)) {
    throw std::invalid_argument("posterior_sample: target carries no posterior mass");
  }
  double u = rng.next_double() * total;
  std::int32_t node = inputs.back();
  for (std::int32_t n : inputs) {
    u -= flows.flow[n];
    if (u < 0.0) {
      node = n;
      break;
    }
  }
  const double* p = c.param.data() + c.param_off[node];
  const std::int32_t card = c.card(target);
  double v = rng.next_double();
  for (std::int32_t x = 0; x < card; ++x) {
    v -= p[x];
    if (v < 0.0) return x;
  }
  for (std::int32_t x = card - 1; x >= 0; --x) {
    if (p[x] > 0.0) return x;
  }
  return card - 1;
}

// --- Value-decoded queries ----------------------------------------------------

namespace {

void check_sizes(const CategoricalDist& d, const ValueMap& vm, const char* who) {
  if (d.p.size() != vm.value.size()) {
    std::ostringstream msg;
    msg << who << ": distribution has " << d.p.size() << " categories, value map has "
        << vm.value.size();
    throw std::invalid_argument(msg.str());
  }
  if (d.p.empty()) {
    std::ostringstream msg;
    msg << who << ": empty distribution";
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

double expectation_of(const CategoricalDist& d, const ValueMap& vm) {
  check_sizes(d, vm, "expectation");
  double acc = 0.0;
  for (std::size_t i = 0; i < d.p.size(); ++i) acc += d.p[i] * vm.value[i];
  return acc;
}

double tail_of(const CategoricalDist& d, const ValueMap& vm, double v) {
  check_sizes(d, vm, "tail_probability");
  double acc = 0.0;
  for (std::size_t i = 0; i < d.p.size(); ++i) {
    if (vm.value[i] >= v) acc += d.p[i];
  }
  return acc;
}

double quantile_of(const CategoricalDist& d, const ValueMap& vm, double delta) {
  check_sizes(d, vm, "quantile_threshold");
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("quantile_threshold: delta must be in (0, 1)");
  }
  // Distinct values descending; the tail is accumulated value by value, so the
  // first value whose tail reaches 1 - delta is the largest valid threshold.
  std::map<double, double, std::greater<double>> mass_by_value;
  for (std::size_t i = 0; i < d.p.size(); ++i) mass_by_value[vm.value[i]] += d.p[i];
  double tail = 0.0;
  double last = mass_by_value.rbegin()->first;  // smallest value; returned if loop never hits
  for (const auto& [value, mass] : mass_by_value) {
    tail += mass;
    if (tail >= 1.0 - delta) return value;
  }
  return last;  // total mass < 1 - delta only via rounding; fall back to the minimum
}

double expectation(const Circuit& c, const EvidenceMask& e, std::int32_t target,
                   const ValueMap& vm) {
  return expectation_of(posterior_marginal(c, e, target), vm);
}

double tail_probability(const Circuit& c, const EvidenceMask& e, std::int32_t target,
                        const ValueMap& vm, double v) {
  return tail_of(posterior_marginal(c, e, target), vm, v);
}

double quantile_threshold(const Circuit& c, const EvidenceMask& e, std::int32_t target,
                          const ValueMap& vm, double delta) {
  return quantile_of(posterior_marginal(c, e, target), vm, delta);
}

// --- Convolution --------------------------------------------------------------

DiscreteDist convolve_sum(const std::vector<WeightedComponent>& parts, int out_bins) {
  if (parts.empty()) throw std::invalid_argument("convolve_sum: empty component list");
  if (out_bins < 0) throw std::invalid_argument("convolve_sum: out_bins must be >= 0");
  for (const auto& part : parts) check_sizes(part.dist, part.values, "convolve_sum");

  // Exact sparse convolution over (value, mass) pairs. Values are merged on
  // exact equality; distinct-but-close values stay distinct until re-binning.
  std::map<double, double> acc{{0.0, 1.0}};
  for (const auto& part : parts) {
    std::map<double, double> next;
    for (const auto& [value, mass] : acc) {
      for (std::size_t i = 0; i < part.dist.p.size(); ++i) {
        const double p = part.dist.p[i];
        if (p == 0.0) continue;
        next[value + part.weight * part.values.value[i]] += mass * p;
      }
    }
    acc = std::move(next);
  }

  DiscreteDist out;
  if (out_bins == 0 || acc.size() <= 1) {
    out.dist.p.reserve(acc.size());
    out.values.value.reserve(acc.size());
    for (const auto& [value, mass] : acc) {
      out.values.value.push_back(value);
      out.dist.p.push_back(mass);
    }
    return out;
  }

  const double lo = acc.begin()->first;
  const double hi = acc.rbegin()->first;
  if (lo == hi || out_bins == 1) {
    double total = 0.0;
    for (const auto& [value, mass] : acc) total += mass;
    out.values.value.push_back(lo == hi ? lo : 0.5 * (lo + hi));
    out.dist.p.push_back(total);
    return out;
  }
  // Uniform grid of bin centers spanning the exact support; each point of
  // mass moves to its nearest center, i.e. by at most half the bin spacing.
  const double step = (hi - lo) / static_cast<double>(out_bins - 1);
  out.values.value.resize(out_bins);
  out.dist.p.assign(out_bins, 0.0);
  for (int b = 0; b < out_bins; ++b) out.values.value[b] = lo + step * b;
  for (const auto& [value, mass] : acc) {
    auto b = static_cast<std::int64_t>(std::floor((value - lo) / step + 0.5));
    b = std::clamp<std::int64_t>(b, 0, out_bins - 1);
    out.dist.p[b] += mass;
  }
  return out;
}

}  // namespace trifle
