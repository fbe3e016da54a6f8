#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "trifle/circuit.hpp"
#include "trifle/planner.hpp"
#include "trifle/rng.hpp"
#include "trifle/trajectory.hpp"

namespace trifle {

struct EvalConfig {
  std::int32_t episodes = 100;
  std::uint64_t seed = 0;
  std::int32_t workers = 1;
  std::vector<std::int32_t> allowed_actions;  // empty = unconstrained
};

struct StepRecord {
  std::int32_t t = 0;
  std::int32_t state = 0;
  std::int32_t action = 0;
  double reward = 0.0;
  double predicted_value = 0.0;  // planner's estimate when it chose the action
  double optimality = 0.0;       // rank of that estimate in the state's return dist
  double realized_rtg = 0.0;     // realized return-to-go, labeled after the fact
};

struct EpisodeResult {
  std::int32_t episode = 0;
  double ret = 0.0;  // realized return under the dataset's labeling discount
  std::int32_t length = 0;
  bool succeeded = false;
  double mean_predicted = 0.0;
  double mean_optimality = 0.0;
  std::vector<StepRecord> steps;
};

struct EvalSummary {
  std::vector<EpisodeResult> episodes;
  double mean_return = 0.0;
  double success_rate = 0.0;
  double mean_length = 0.0;
  double mean_optimality = 0.0;  // across every step of every episode
  // Pearson correlation between per-episode mean predicted value and realized
  // return; NaN when either side is constant (no direction to correlate).
  double correlation = 0.0;
};

// Pearson correlation; NaN for fewer than two points or a zero-variance side.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

EvalSummary summarize(std::vector<EpisodeResult> episodes);

// CSV writers. Floating-point cells carry 17 significant digits, so a rerun
// with the same seed and config reproduces the files byte for byte.
void write_episodes_csv(const EvalSummary& summary, const std::string& path);
void write_pairs_csv(const EvalSummary& summary, const std::string& path);

namespace detail {

// Plays one episode with a fresh planner and its own random stream. `env` is
// a copy: episodes never share mutable environment state.
template <typename Env>
EpisodeResult roll_episode(Env env, const Circuit& circuit, const DatasetMeta& meta,
                           const PlannerConfig& pcfg, PolicyMode mode,
                           const std::vector<std::int32_t>& allowed, std::int32_t index,
                           Rng rng) {
  TriflePlanner planner(circuit, meta, pcfg, mode);
  if (!allowed.empty()) planner.restrict_actions(allowed);
  std::int32_t state = env.reset(rng);
  planner.begin_episode(state);

  EpisodeResult out;
  out.episode = index;
  std::vector<double> rewards;
  while (!env.done()) {
    const std::int32_t action = planner.act(rng);
    const auto r = env.step(action, rng);
    StepRecord rec;
    rec.t = static_cast<std::int32_t>(rewards.size());
    rec.state = state;
    rec.action = action;
    rec.reward = r.reward;
    rec.predicted_value = planner.last_predicted_value();
    rec.optimality = planner.last_optimality_score();
    out.steps.push_back(rec);
    rewards.push_back(r.reward);
    if (!env.done()) planner.observe_transition(action, r.reward, r.state);
    state = r.state;
  }

  const std::vector<double> rtg = rtg_labels(rewards, meta.gamma);
  for (std::size_t i = 0; i < out.steps.size(); ++i) out.steps[i].realized_rtg = rtg[i];
  out.ret = rtg.empty() ? 0.0 : rtg[0];
  out.length = static_cast<std::int32_t>(rewards.size());
  out.succeeded = env.succeeded();
  double sum_pred = 0.0;
  double sum_opt = 0.0;
  for (const StepRecord& s : out.steps) {
    sum_pred += s.predicted_value;
    sum_opt += s.optimality;
  }
  if (!out.steps.empty()) {
    out.mean_predicted = sum_pred / static_cast<double>(out.steps.size());
    out.mean_optimality = sum_opt / static_cast<double>(out.steps.size());
  }
  return out;
}

}  // namespace detail

// Evaluates the planner over independent episodes. Each episode draws from
// Rng(seed).fork(episode index), so the result — including every CSV byte —
// is a pure function of (seed, config) no matter how many workers run.
template <typename Env>
EvalSummary run_eval(const Env& env_proto, const Circuit& circuit, const DatasetMeta& meta,
                     const PlannerConfig& pcfg, PolicyMode mode, const EvalConfig& cfg) {
  if (cfg.episodes < 1) throw std::invalid_argument("run_eval: episodes must be >= 1");
  if (cfg.workers < 1) throw std::invalid_argument("run_eval: workers must be >= 1");
  const Rng base(cfg.seed);
  std::vector<EpisodeResult> results(cfg.episodes);
  auto play = [&](std::int32_t i) {
    results[i] = detail::roll_episode(env_proto, circuit, meta, pcfg, mode, cfg.allowed_actions,
                                      i, base.fork(static_cast<std::uint64_t>(i)));
  };

  const std::int32_t workers = std::min(cfg.workers, cfg.episodes);
  if (workers <= 1) {
    for (std::int32_t i = 0; i < cfg.episodes; ++i) play(i);
  } else {
    std::atomic<std::int32_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::int32_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        try {
          while (true) {
            const std::int32_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= cfg.episodes) return;
            play(i);
          }
        } catch (...) {
          const std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }
  return summarize(std::move(results));
}

}  // namespace trifle
