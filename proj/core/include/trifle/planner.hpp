#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "trifle/circuit.hpp"
#include "trifle/inference.hpp"
#include "trifle/rng.hpp"
#include "trifle/trajectory.hpp"

namespace trifle {

// How candidate actions are weighted and how beams are scored.
//   single_step: corrected sampling against the current step's return-to-go;
//                beams scored by E[return-to-go at the decision slot].
//   multi_step:  corrected sampling against the convolved short-horizon value
//                (upcoming rewards plus the bootstrapped return-to-go); beams
//                scored by that value's expectation.
//   baseline:    uncorrected prior sampling; beams scored by Monte-Carlo
//                rollouts through the model (sample future states, then take
//                conditional reward/return expectations).
enum class PolicyMode { single_step, multi_step, baseline };

struct PlannerConfig {
  double delta = 0.2;          // tail mass excluded when picking the threshold
  std::int32_t beams = 8;      // beams kept between rounds
  std::int32_t horizon = 3;    // action tokens per beam (first + extensions)
  std::int32_t expand = 2;     // replicas per beam per extension round
  std::int32_t lookahead = 2;  // reward steps before bootstrapping the value
  std::int32_t mc_rollouts = 10;  // baseline-only: model rollouts per score
  std::int32_t conv_bins = 0;     // 0 = exact convolution support
  // When the episode is younger than the decision slot, either slide the
  // decision slot down to the episode length (false; matches how early steps
  // appear in training windows) or keep the slot fixed and mark the missing
  // history as past-the-boundary padding (true).
  bool pad_short_history = false;
};

// Proposal distribution over one action variable, for swapping in an external
// behavior prior. Entries are nonnegative weights over the variable's full
// category range (padding included); they do not need to be normalized.
class PriorPolicy {
 public:
  virtual ~PriorPolicy() = default;
  virtual std::vector<double> propose(const EvidenceMask& evidence,
                                      std::int32_t action_var) = 0;
};

// Turns a learned window circuit into an acting policy. Each act() call
// builds evidence from the rolling history, draws candidate current actions
// (corrected toward high-value outcomes unless in baseline mode), grows them
// into short action plans with beam search, and returns the first action of
// the best plan.
class TriflePlanner {
 public:
  TriflePlanner(const Circuit& circuit, DatasetMeta meta, PlannerConfig cfg, PolicyMode mode);

  void begin_episode(std::int32_t state);
  std::int32_t act(Rng& rng);
  void observe_transition(std::int32_t action, double reward, std::int32_t next_state);

  // Constrains every sampled action (current and planned) to this set.
  void restrict_actions(std::vector<std::int32_t> allowed);
  void clear_restriction();
  // Non-owning; nullptr restores the circuit's own posterior as the proposal.
  void set_prior(PriorPolicy* prior) { prior_ = prior; }

  // Diagnostics for the most recent act() call.
  double last_predicted_value() const { return last_value_; }
  double last_optimality_score() const { return last_optimality_; }

  // Corrected (or prior, in baseline mode) sampling weights over the current
  // action variable's categories, exposed for tests and diagnostics. Consumes
  // no randomness.
  std::vector<double> current_action_weights() const;

  std::int32_t decision_slot() const;
  PolicyMode mode() const { return mode_; }

 private:
  struct HistoryStep {
    std::int32_t state;
    std::int32_t action;
    double reward;
  };
  struct Pass {
    ForwardCache fc;
    FlowCache fl;
  };
  struct Beam {
    std::vector<std::int32_t> actions;
    double score = 0.0;
  };

  std::int32_t full_slot() const;     // decision slot once enough history exists
  std::int32_t current_slot() const;  // slot used right now (may slide down early)
  Pass run_pass(const EvidenceMask& e) const;
  CategoricalDist posterior_from(const Pass& pass, std::int32_t var) const;
  EvidenceMask base_evidence() const;
  // Prior weights over one action variable, masked to the allowed set
  // (plus optionally the padding category) and zeroed elsewhere.
  std::vector<double> proposal_weights(const Pass& pass, const EvidenceMask& e, std::int32_t var,
                                       bool allow_pad) const;
  // Mode-dependent value estimate of evidence with actions filled in.
  double value_estimate(const EvidenceMask& e, std::int32_t slot, Rng& rng) const;
  double multi_step_value(const Pass& pass, std::int32_t slot) const;
  DiscreteDist multi_step_dist(const Pass& pass, std::int32_t slot) const;
  double mc_value(const EvidenceMask& e, std::int32_t slot, Rng& rng) const;
  std::vector<double> corrected_weights(const Pass& base_pass, const EvidenceMask& base,
                                        std::int32_t slot,
                                        std::vector<double>* init_scores) const;

  const Circuit& circuit_;
  DatasetMeta meta_;
  PlannerConfig cfg_;
  PolicyMode mode_;
  PriorPolicy* prior_ = nullptr;
  ValueMap reward_values_;
  ValueMap rtg_values_;

  std::vector<std::int32_t> allowed_;  // empty = every real action

  bool episode_open_ = false;
  std::int32_t current_state_ = -1;
  std::int64_t time_ = 0;
  std::deque<HistoryStep> history_;  // most recent completed steps, capped

  double last_value_ = 0.0;
  double last_optimality_ = 0.0;
};

}  // namespace trifle
