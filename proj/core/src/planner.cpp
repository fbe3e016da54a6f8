#include "trifle/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace trifle {

namespace {

using Field = WindowLayout::Field;

// Drops negligible posterior mass before an exact-support convolution so the
// support does not accrete cells that cannot affect any decision.
CategoricalDist pruned(CategoricalDist d) {
  for (double& p : d.p) {
    if (p < 1e-12) p = 0.0;
  }
  return d;
}

}  // namespace

TriflePlanner::TriflePlanner(const Circuit& circuit, DatasetMeta meta, PlannerConfig cfg,
                             PolicyMode mode)
    : circuit_(circuit), meta_(std::move(meta)), cfg_(cfg), mode_(mode) {
  if (!(cfg_.delta > 0.0 && cfg_.delta < 1.0)) {
    throw std::invalid_argument("planner: delta must lie in (0, 1)");
  }
  if (cfg_.beams < 1 || cfg_.horizon < 1 || cfg_.expand < 1 || cfg_.lookahead < 1 ||
      cfg_.mc_rollouts < 1) {
    throw std::invalid_argument(
        "planner: beams, horizon, expand, lookahead and mc_rollouts must all be >= 1");
  }
  if (cfg_.conv_bins < 0) {
    throw std::invalid_argument("planner: conv_bins must be >= 0");
  }
  const WindowLayout& lay = meta_.layout;
  const std::int32_t reach = std::max(cfg_.horizon, cfg_.lookahead);
  if (reach > lay.n_steps - 1) {
    std::ostringstream msg;
    msg << "planner: horizon/lookahead reach " << reach << " steps past the decision slot, but a "
        << lay.n_steps << "-step window leaves at most " << lay.n_steps - 1;
    throw std::invalid_argument(msg.str());
  }
  if (circuit_.n_vars() != lay.n_vars()) {
    throw std::invalid_argument("planner: circuit and window layout disagree on variable count");
  }
  const std::vector<std::int32_t> cards = lay.var_cards();
  for (std::int32_t v = 0; v < lay.n_vars(); ++v) {
    if (circuit_.card(v) != cards[v]) {
      std::ostringstream msg;
      msg << "planner: circuit variable " << v << " has " << circuit_.card(v)
          << " categories, layout expects " << cards[v];
      throw std::invalid_argument(msg.str());
    }
  }
  reward_values_ = lay.reward_values();
  rtg_values_ = lay.rtg_values();
}

std::int32_t TriflePlanner::full_slot() const {
  return meta_.layout.n_steps - 1 - std::max(cfg_.horizon, cfg_.lookahead);
}

std::int32_t TriflePlanner::current_slot() const {
  if (cfg_.pad_short_history) return full_slot();
  return static_cast<std::int32_t>(std::min<std::int64_t>(time_, full_slot()));
}

std::int32_t TriflePlanner::decision_slot() const {
  if (!episode_open_) throw std::logic_error("planner: no episode in progress");
  return current_slot();
}

void TriflePlanner::begin_episode(std::int32_t state) {
  if (state < 0 || state >= meta_.layout.state_card) {
    throw std::invalid_argument("planner: episode start state out of range");
  }
  episode_open_ = true;
  current_state_ = state;
  time_ = 0;
  history_.clear();
  last_value_ = 0.0;
  last_optimality_ = 0.0;
}

void TriflePlanner::observe_transition(std::int32_t action, double reward,
                                       std::int32_t next_state) {
  if (!episode_open_) throw std::logic_error("planner: no episode in progress");
  const WindowLayout& lay = meta_.layout;
  if (action < 0 || action >= lay.action_card) {
    throw std::invalid_argument("planner: observed action out of range");
  }
  if (next_state < 0 || next_state >= lay.state_card) {
    throw std::invalid_argument("planner: observed state out of range");
  }
  if (!std::isfinite(reward)) {
    throw std::invalid_argument("planner: observed reward must be finite");
  }
  history_.push_back(HistoryStep{current_state_, action, reward});
  while (static_cast<std::int32_t>(history_.size()) > full_slot()) history_.pop_front();
  current_state_ = next_state;
  ++time_;
}

void TriflePlanner::restrict_actions(std::vector<std::int32_t> allowed) {
  if (allowed.empty()) {
    throw std::invalid_argument("planner: the allowed action set must be nonempty");
  }
  for (std::int32_t a : allowed) {
    if (a < 0 || a >= meta_.layout.action_card) {
      throw std::invalid_argument("planner: allowed action out of range");
    }
  }
  std::sort(allowed.begin(), allowed.end());
  allowed.erase(std::unique(allowed.begin(), allowed.end()), allowed.end());
  allowed_ = std::move(allowed);
}

void TriflePlanner::clear_restriction() { allowed_.clear(); }

TriflePlanner::Pass TriflePlanner::run_pass(const EvidenceMask& e) const {
  Pass p;
  p.fc = forward_marginal(circuit_, e);
  p.fl = backward_flows(circuit_, p.fc);
  return p;
}

CategoricalDist TriflePlanner::posterior_from(const Pass& pass, std::int32_t var) const {
  std::vector<double> score = posterior_scores(circuit_, pass.fc, pass.fl, var);
  const double total = std::accumulate(score.begin(), score.end(), 0.0);
  if (!(total > 0.0)) {
    throw std::runtime_error("planner: posterior carries no mass");
  }
  for (double& s : score) s /= total;
  return CategoricalDist{std::move(score)};
}

EvidenceMask TriflePlanner::base_evidence() const {
  const WindowLayout& lay = meta_.layout;
  EvidenceMask e(lay.n_vars());
  const std::int32_t cur = current_slot();
  const std::int32_t used = static_cast<std::int32_t>(history_.size());
  // With the fixed decision slot, slots the episode has not reached yet are
  // past-the-boundary padding; when sliding, cur == used and none exist.
  const std::int32_t pad_slots = cur - used;
  for (std::int32_t s = 0; s < pad_slots; ++s) {
    e.observe(lay.var(s, Field::state), lay.pad_category(Field::state));
    e.observe(lay.var(s, Field::action), lay.pad_category(Field::action));
    e.observe(lay.var(s, Field::reward), lay.pad_category(Field::reward));
    e.observe(lay.var(s, Field::rtg), lay.pad_category(Field::rtg));
  }
  for (std::int32_t i = 0; i < used; ++i) {
    const HistoryStep& h = history_[i];
    const std::int32_t s = pad_slots + i;
    e.observe(lay.var(s, Field::state), h.state);
    e.observe(lay.var(s, Field::action), h.action);
    e.observe(lay.var(s, Field::reward), lay.reward_bins.encode(h.reward));
    // Past return-to-go stays marginalized: it depends on the future the
    // planner is about to choose, so observing it would bake in a prophecy.
  }
  e.observe(lay.var(cur, Field::state), current_state_);
  return e;
}

std::vector<double> TriflePlanner::proposal_weights(const Pass& pass, const EvidenceMask& e,
                                                    std::int32_t var, bool allow_pad) const {
  const std::int32_t real = meta_.layout.action_card;
  std::vector<double> w;
  if (prior_ != nullptr) {
    w = prior_->propose(e, var);
    if (w.size() != static_cast<std::size_t>(circuit_.card(var))) {
      throw std::runtime_error("planner: prior proposal has the wrong number of categories");
    }
    for (double x : w) {
      if (!(x >= 0.0)) {
        throw std::runtime_error("planner: prior proposal weights must be nonnegative");
      }
    }
  } else {
    w = posterior_scores(circuit_, pass.fc, pass.fl, var);
  }
  std::vector<char> keep(real, allowed_.empty() ? 1 : 0);
  for (std::int32_t a : allowed_) keep[a] = 1;
  double total = 0.0;
  for (std::int32_t x = 0; x < real; ++x) {
    if (!keep[x]) w[x] = 0.0;
    total += w[x];
  }
  if (!allow_pad) w[real] = 0.0;
  total += w[real];
  if (!(total > 0.0)) {
    // Degenerate proposal (e.g. a plugin prior disjoint from the allowed
    // set): fall back to uniform over the allowed real actions.
    for (std::int32_t x = 0; x < real; ++x) w[x] = keep[x] ? 1.0 : 0.0;
    w[real] = 0.0;
  }
  return w;
}

double TriflePlanner::multi_step_value(const Pass& pass, std::int32_t slot) const {
  const WindowLayout& lay = meta_.layout;
  double total = 0.0;
  double w = 1.0;
  for (std::int32_t j = 0; j < cfg_.lookahead; ++j) {
    total += w * expectation_of(posterior_from(pass, lay.var(slot + j, Field::reward)),
                                reward_values_);
    w *= meta_.gamma;
  }
  total += w * expectation_of(posterior_from(pass, lay.var(slot + cfg_.lookahead, Field::rtg)),
                              rtg_values_);
  return total;
}

DiscreteDist TriflePlanner::multi_step_dist(const Pass& pass, std::int32_t slot) const {
  const WindowLayout& lay = meta_.layout;
  std::vector<WeightedComponent> parts;
  parts.reserve(cfg_.lookahead + 1);
  double w = 1.0;
  for (std::int32_t j = 0; j < cfg_.lookahead; ++j) {
    parts.push_back(WeightedComponent{
        pruned(posterior_from(pass, lay.var(slot + j, Field::reward))), reward_values_, w});
    w *= meta_.gamma;
  }
  parts.push_back(WeightedComponent{
      pruned(posterior_from(pass, lay.var(slot + cfg_.lookahead, Field::rtg))), rtg_values_, w});
  return convolve_sum(parts, cfg_.conv_bins);
}

double TriflePlanner::mc_value(const EvidenceMask& e, std::int32_t slot, Rng& rng) const {
  const WindowLayout& lay = meta_.layout;
  const Pass start = run_pass(e);
  double total = 0.0;
  for (std::int32_t k = 0; k < cfg_.mc_rollouts; ++k) {
    EvidenceMask ev = e;
    Pass scratch;
    const Pass* at = &start;
    for (std::int32_t j = 1; j <= cfg_.lookahead; ++j) {
      const std::int32_t svar = lay.var(slot + j, Field::state);
      const std::int32_t s = posterior_sample(circuit_, at->fc, at->fl, svar, rng);
      ev.observe(svar, s);
      scratch = run_pass(ev);
      at = &scratch;
    }
    total += multi_step_value(*at, slot);
  }
  return total / cfg_.mc_rollouts;
}

double TriflePlanner::value_estimate(const EvidenceMask& e, std::int32_t slot, Rng& rng) const {
  switch (mode_) {
    case PolicyMode::single_step:
      return expectation(circuit_, e, meta_.layout.var(slot, Field::rtg), rtg_values_);
    case PolicyMode::multi_step:
      return multi_step_value(run_pass(e), slot);
    case PolicyMode::baseline:
      return mc_value(e, slot, rng);
  }
  throw std::logic_error("planner: unknown policy mode");
}

std::vector<double> TriflePlanner::corrected_weights(const Pass& base_pass,
                                                     const EvidenceMask& base, std::int32_t slot,
                                                     std::vector<double>* init_scores) const {
  const WindowLayout& lay = meta_.layout;
  const std::int32_t avar = lay.var(slot, Field::action);
  std::vector<double> w = proposal_weights(base_pass, base, avar, /*allow_pad=*/false);
  if (init_scores) {
    init_scores->assign(w.size(), std::numeric_limits<double>::quiet_NaN());
  }
  if (mode_ == PolicyMode::baseline) {
    return w;  // uncorrected; scores come from Monte-Carlo rollouts instead
  }
  // Threshold from the pre-action value distribution: the largest value whose
  // upper tail still holds mass 1 - delta.
  double vthresh;
  if (mode_ == PolicyMode::single_step) {
    vthresh = quantile_of(posterior_from(base_pass, lay.var(slot, Field::rtg)), rtg_values_,
                          cfg_.delta);
  } else {
    const DiscreteDist d = multi_step_dist(base_pass, slot);
    vthresh = quantile_of(d.dist, d.values, cfg_.delta);
  }
  std::vector<double> raw = w;
  for (std::int32_t a = 0; a < static_cast<std::int32_t>(w.size()); ++a) {
    if (w[a] <= 0.0) continue;
    EvidenceMask e = base;
    e.observe(avar, a);
    Pass p;
    p.fc = forward_marginal(circuit_, e);
    if (!std::isfinite(p.fc.log_prob(circuit_.root))) {
      // The model gives this action no mass here (possible with a plugin
      // prior); it can neither be scored nor sampled.
      w[a] = 0.0;
      raw[a] = 0.0;
      continue;
    }
    p.fl = backward_flows(circuit_, p.fc);
    double tail;
    double score;
    if (mode_ == PolicyMode::single_step) {
      const CategoricalDist g = posterior_from(p, lay.var(slot, Field::rtg));
      tail = tail_of(g, rtg_values_, vthresh);
      score = expectation_of(g, rtg_values_);
    } else {
      const DiscreteDist d = multi_step_dist(p, slot);
      tail = tail_of(d.dist, d.values, vthresh);
      score = expectation_of(d.dist, d.values);
    }
    w[a] *= tail;
    if (init_scores) (*init_scores)[a] = score;
  }
  // With the circuit's own prior the mixture identity
  //   Σ_a p(a | e) P(V >= v | e, a) = P(V >= v | e) >= 1 - delta
  // keeps some weight alive; a plugin prior can still zero everything out.
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) return raw;
  return w;
}

std::vector<double> TriflePlanner::current_action_weights() const {
  if (!episode_open_) throw std::logic_error("planner: no episode in progress");
  const EvidenceMask base = base_evidence();
  const Pass base_pass = run_pass(base);
  return corrected_weights(base_pass, base, current_slot(), nullptr);
}

std::int32_t TriflePlanner::act(Rng& rng) {
  if (!episode_open_) throw std::logic_error("planner: no episode in progress");
  const WindowLayout& lay = meta_.layout;
  const std::int32_t cur = current_slot();
  const EvidenceMask base = base_evidence();
  const Pass base_pass = run_pass(base);

  std::vector<double> init_scores;
  const std::vector<double> weights = corrected_weights(base_pass, base, cur, &init_scores);

  std::vector<Beam> beams;
  beams.reserve(cfg_.beams);
  for (std::int32_t b = 0; b < cfg_.beams; ++b) {
    beams.push_back(Beam{{static_cast<std::int32_t>(rng.categorical(weights))}, 0.0});
  }

  // Seed scores. Corrected modes already paid for E[V | e, a] while weighting;
  // the baseline prices only the actions actually drawn, memoized in
  // first-draw order so the stream of random numbers stays reproducible.
  for (Beam& b : beams) {
    const std::int32_t a = b.actions[0];
    if (std::isnan(init_scores[a])) {
      EvidenceMask e = base;
      e.observe(lay.var(cur, Field::action), a);
      init_scores[a] = value_estimate(e, cur, rng);
    }
    b.score = init_scores[a];
  }

  for (std::int32_t step = 1; step < cfg_.horizon; ++step) {
    const std::int32_t avar = lay.var(cur + step, Field::action);
    std::vector<Beam> next;
    next.reserve(beams.size() * cfg_.expand);
    for (const Beam& b : beams) {
      EvidenceMask e = base;
      for (std::size_t j = 0; j < b.actions.size(); ++j) {
        e.observe(lay.var(cur + static_cast<std::int32_t>(j), Field::action), b.actions[j]);
      }
      const Pass p = run_pass(e);
      // Replicas share the parent's extension posterior. Planned actions may
      // land on the padding category: that is the model's way of saying the
      // plan ends the episode, and later slots then follow suit on their own.
      const std::vector<double> w = proposal_weights(p, e, avar, /*allow_pad=*/true);
      std::vector<double> memo(w.size(), std::numeric_limits<double>::quiet_NaN());
      for (std::int32_t r = 0; r < cfg_.expand; ++r) {
        const std::int32_t a = static_cast<std::int32_t>(rng.categorical(w));
        if (std::isnan(memo[a])) {
          EvidenceMask ce = e;
          ce.observe(avar, a);
          memo[a] = value_estimate(ce, cur, rng);
        }
        Beam child = b;
        child.actions.push_back(a);
        child.score = memo[a];
        next.push_back(std::move(child));
      }
    }
    // Keep the best plans; ties resolve toward earlier creation.
    std::stable_sort(next.begin(), next.end(),
                     [](const Beam& x, const Beam& y) { return x.score > y.score; });
    if (static_cast<std::int32_t>(next.size()) > cfg_.beams) next.resize(cfg_.beams);
    beams = std::move(next);
  }

  const Beam* best = &beams.front();
  for (const Beam& b : beams) {
    if (b.score > best->score) best = &b;
  }
  const std::int32_t chosen = best->actions.front();

  // Diagnostics. The predicted value conditions on the chosen action alone
  // (not the rest of the winning plan, which the environment may never see).
  last_value_ = init_scores[chosen];

  // Optimality of the chosen action in its state, free of history context:
  // where the action's expected return sits in the state's return
  // distribution. 1.0 means no action promises more than this one delivers.
  // The padding category means "the window ran past the episode end", not a
  // return value, so both sides condition it away; the tolerance keeps a
  // point-mass return distribution from landing below its own atom through
  // rounding.
  {
    EvidenceMask es(lay.n_vars());
    es.observe(lay.var(cur, Field::state), current_state_);
    EvidenceMask esa = es;
    esa.observe(lay.var(cur, Field::action), chosen);
    const std::int32_t gvar = lay.var(cur, Field::rtg);
    const std::size_t gpad = static_cast<std::size_t>(lay.pad_category(Field::rtg));
    const CategoricalDist ga = posterior_marginal(circuit_, esa, gvar);
    double a_mass = 0.0;
    double a_mean = 0.0;
    for (std::size_t x = 0; x < ga.p.size(); ++x) {
      if (x == gpad) continue;
      a_mass += ga.p[x];
      a_mean += ga.p[x] * rtg_values_.value[x];
    }
    const double r_est = a_mass > 0.0 ? a_mean / a_mass : 0.0;
    const double bound = r_est + 1e-9 * std::max(1.0, std::abs(r_est));
    const CategoricalDist g = posterior_marginal(circuit_, es, gvar);
    double cdf = 0.0;
    double mass = 0.0;
    for (std::size_t x = 0; x < g.p.size(); ++x) {
      if (x == gpad) continue;
      mass += g.p[x];
      if (rtg_values_.value[x] <= bound) cdf += g.p[x];
    }
    last_optimality_ = mass > 0.0 ? cdf / mass : 1.0;
  }
  return chosen;
}

}  // namespace trifle
