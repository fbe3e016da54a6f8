#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "trifle/rng.hpp"
#include "trifle/trajectory.hpp"

namespace trifle {

struct StepResult {
  std::int32_t state = 0;
  double reward = 0.0;
  bool terminal = false;  // the MDP ended (delivery, hole, goal)
  bool done = false;      // terminal or step-limit truncation
};

// 5x5 grid taxi with slippery navigation. The passenger may wait on any cell
// and the destination may be any cell, so the state space is
// 25 (taxi) * 26 (passenger cell or in-taxi) * 25 (destination).
//
// Actions: 0 north, 1 south, 2 east, 3 west, 4 pick up, 5 drop off.
// A navigation action goes the intended way with probability 1 - slip and
// uniformly to one of the three other directions otherwise. Each step costs
// -1, plus -4 for driving into a wall, -5 for driving off the grid, and -10
// for an illegal pick-up/drop-off; delivering the passenger earns +20 and
// ends the episode. An illegal drop-off leaves the passenger in the taxi.
class TaxiEnv {
 public:
  // With depot_starts the passenger and destination are drawn from the four
  // classic corner depots instead of arbitrary cells, shrinking the reachable
  // start distribution to the canonical 500-configuration task. The state
  // encoding is unchanged either way.
  explicit TaxiEnv(double slip = 0.3, std::int32_t max_steps = 300, bool depot_starts = false);

  std::int32_t n_states() const { return 25 * 26 * 25; }
  std::int32_t n_actions() const { return 6; }

  // Uniform start: any taxi cell; passenger and destination on any two
  // distinct cells (or two distinct depots under depot_starts).
  std::int32_t reset(Rng& rng);
  // Begin an episode from a specific state (used by tests and diagnostics).
  std::int32_t reset_to(std::int32_t state);
  StepResult step(std::int32_t action, Rng& rng);

  std::int32_t state() const { return state_; }
  bool done() const { return done_; }
  bool succeeded() const { return delivered_; }
  std::int32_t steps_taken() const { return steps_; }

  static std::int32_t encode(std::int32_t taxi_cell, std::int32_t passenger,
                             std::int32_t destination);
  // Returns {taxi_cell, passenger, destination}; passenger == 25 means in taxi.
  static void decode(std::int32_t state, std::int32_t& taxi_cell, std::int32_t& passenger,
                     std::int32_t& destination);
  static constexpr std::int32_t kInTaxi = 25;

 private:
  double slip_;
  std::int32_t max_steps_;
  bool depot_starts_;
  std::int32_t state_ = 0;
  std::int32_t steps_ = 0;
  bool done_ = true;
  bool delivered_ = false;
};

// 4x4 slippery frozen lake:
//   S F F F
//   F H F H
//   F F F H
//   H F F G
// Actions: 0 left, 1 down, 2 right, 3 up. A move goes the intended way with
// probability 1 - slip and to each perpendicular direction with probability
// slip / 2. Sliding off the grid leaves the agent in place. Reaching the goal
// pays +1 and ends the episode; falling into a hole ends it with 0.
class LakeEnv {
 public:
  explicit LakeEnv(double slip = 0.3, std::int32_t max_steps = 100);

  std::int32_t n_states() const { return 16; }
  std::int32_t n_actions() const { return 4; }

  std::int32_t reset(Rng& rng);
  StepResult step(std::int32_t action, Rng& rng);

  std::int32_t state() const { return state_; }
  bool done() const { return done_; }
  bool succeeded() const { return reached_goal_; }
  std::int32_t steps_taken() const { return steps_; }

  static bool is_hole(std::int32_t cell);
  static constexpr std::int32_t kGoal = 15;

 private:
  double slip_;
  std::int32_t max_steps_;
  std::int32_t state_ = 0;
  std::int32_t steps_ = 0;
  bool done_ = true;
  bool reached_goal_ = false;
};

// Flat tabular action-value function.
struct QTable {
  std::int32_t n_states = 0;
  std::int32_t n_actions = 0;
  std::vector<double> q;

  QTable() = default;
  QTable(std::int32_t states, std::int32_t actions)
      : n_states(states), n_actions(actions),
        q(static_cast<std::size_t>(states) * actions, 0.0) {}

  double& at(std::int32_t s, std::int32_t a) {
    return q[static_cast<std::size_t>(s) * n_actions + a];
  }
  double at(std::int32_t s, std::int32_t a) const {
    return q[static_cast<std::size_t>(s) * n_actions + a];
  }
  // Highest-value action; ties go to the smallest index, so policies derived
  // from equal tables are identical.
  std::int32_t greedy(std::int32_t s) const {
    std::int32_t best = 0;
    for (std::int32_t a = 1; a < n_actions; ++a) {
      if (at(s, a) > at(s, best)) best = a;
    }
    return best;
  }
  double max_at(std::int32_t s) const {
    double best = at(s, 0);
    for (std::int32_t a = 1; a < n_actions; ++a) best = std::max(best, at(s, a));
    return best;
  }
};

struct QLearnConfig {
  std::int64_t episodes = 10000;
  double alpha = 0.25;
  double gamma = 0.95;
  double epsilon = 0.1;
  // Initial value for every entry. Set at or above the best attainable return
  // (optimistic) when rewards are sparse and nonnegative; otherwise untried
  // actions look worse than tried ones and greedy exploration can stall.
  double init_q = 0.0;
};

// Standard epsilon-greedy tabular Q-learning. Bootstrapping is cut only at
// true MDP terminals; a step-limit truncation keeps the max_a Q(s', a) term
// since the state itself is not absorbing.
template <class Env>
QTable q_learning(Env& env, const QLearnConfig& cfg, Rng& rng) {
  if (cfg.episodes < 0) throw std::invalid_argument("q_learning: negative episode count");
  QTable table(env.n_states(), env.n_actions());
  if (cfg.init_q != 0.0) std::fill(table.q.begin(), table.q.end(), cfg.init_q);
  for (std::int64_t ep = 0; ep < cfg.episodes; ++ep) {
    std::int32_t s = env.reset(rng);
    while (!env.done()) {
      const std::int32_t a = rng.next_double() < cfg.epsilon ? rng.next_int(env.n_actions())
                                                             : table.greedy(s);
      const StepResult r = env.step(a, rng);
      const double boot = r.terminal ? 0.0 : cfg.gamma * table.max_at(r.state);
      table.at(s, a) += cfg.alpha * (r.reward + boot - table.at(s, a));
      s = r.state;
    }
  }
  return table;
}

struct CollectConfig {
  std::int64_t episodes = 1000;  // successful episodes to keep
  double epsilon = 0.1;          // behavior-policy exploration
  std::int64_t max_rollouts = 2000000;
};

// Rolls out an epsilon-greedy policy over the Q table and keeps only episodes
// the environment reports as successful, mirroring how offline corpora are
// assembled from a learner's replay stream. Throws std::runtime_error if the
// rollout budget runs out before enough successes are recorded.
template <class Env>
std::vector<RawTrajectory> collect_successful(Env& env, const QTable& table,
                                              const CollectConfig& cfg, Rng& rng) {
  if (table.n_states != env.n_states() || table.n_actions != env.n_actions()) {
    throw std::invalid_argument("collect_successful: table does not match the environment");
  }
  std::vector<RawTrajectory> out;
  out.reserve(static_cast<std::size_t>(cfg.episodes));
  std::int64_t rollouts = 0;
  while (static_cast<std::int64_t>(out.size()) < cfg.episodes) {
    if (rollouts++ >= cfg.max_rollouts) {
      throw std::runtime_error("collect_successful: rollout budget exhausted after " +
                               std::to_string(cfg.max_rollouts) + " episodes");
    }
    RawTrajectory t;
    std::int32_t s = env.reset(rng);
    while (!env.done()) {
      const std::int32_t a = rng.next_double() < cfg.epsilon ? rng.next_int(env.n_actions())
                                                             : table.greedy(s);
      const StepResult r = env.step(a, rng);
      t.states.push_back(s);
      t.actions.push_back(a);
      t.rewards.push_back(r.reward);
      s = r.state;
    }
    if (env.succeeded()) out.push_back(std::move(t));
  }
  return out;
}

// Rolls out exactly `episodes` epsilon-greedy episodes and keeps every one,
// failures included. Corpora collected this way carry the contrast between
// high- and low-return behavior that return-conditioned planners rely on.
template <class Env>
std::vector<RawTrajectory> collect_rollouts(Env& env, const QTable& table, std::int64_t episodes,
                                            double epsilon, Rng& rng) {
  if (table.n_states != env.n_states() || table.n_actions != env.n_actions()) {
    throw std::invalid_argument("collect_rollouts: table does not match the environment");
  }
  if (episodes < 0) throw std::invalid_argument("collect_rollouts: negative episode count");
  std::vector<RawTrajectory> out;
  out.reserve(static_cast<std::size_t>(episodes));
  for (std::int64_t ep = 0; ep < episodes; ++ep) {
    RawTrajectory t;
    std::int32_t s = env.reset(rng);
    while (!env.done()) {
      const std::int32_t a = rng.next_double() < epsilon ? rng.next_int(env.n_actions())
                                                         : table.greedy(s);
      const StepResult r = env.step(a, rng);
      t.states.push_back(s);
      t.actions.push_back(a);
      t.rewards.push_back(r.reward);
      s = r.state;
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace trifle
