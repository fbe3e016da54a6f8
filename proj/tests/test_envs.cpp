#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include "trifle/envs.hpp"
#include "trifle/rng.hpp"

using namespace trifle;

namespace {

std::int32_t cell(std::int32_t row, std::int32_t col) { return row * 5 + col; }

// Deterministic taxi positioned at `taxi` with the passenger waiting far away.
TaxiEnv placed_taxi(std::int32_t taxi_cell, std::int32_t passenger = 24,
                    std::int32_t dest = 20) {
  TaxiEnv env(0.0);
  env.reset_to(TaxiEnv::encode(taxi_cell, passenger, dest));
  return env;
}

}  // namespace

TEST_CASE("taxi state encoding is a bijection over all components") {
  std::set<std::int32_t> seen;
  for (std::int32_t taxi = 0; taxi < 25; ++taxi) {
    for (std::int32_t p = 0; p <= TaxiEnv::kInTaxi; ++p) {
      for (std::int32_t d = 0; d < 25; ++d) {
        const std::int32_t s = TaxiEnv::encode(taxi, p, d);
        REQUIRE(s >= 0);
        REQUIRE(s < 25 * 26 * 25);
        seen.insert(s);
        std::int32_t t2, p2, d2;
        TaxiEnv::decode(s, t2, p2, d2);
        REQUIRE(t2 == taxi);
        REQUIRE(p2 == p);
        REQUIRE(d2 == d);
      }
    }
  }
  CHECK(seen.size() == 25u * 26u * 25u);
  CHECK_THROWS_AS(TaxiEnv::encode(25, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(TaxiEnv::encode(0, 26, 0), std::invalid_argument);
  CHECK_THROWS_AS(TaxiEnv::encode(0, 0, 25), std::invalid_argument);
  std::int32_t t, p, d;
  CHECK_THROWS_AS(TaxiEnv::decode(-1, t, p, d), std::invalid_argument);
  CHECK_THROWS_AS(TaxiEnv::decode(25 * 26 * 25, t, p, d), std::invalid_argument);
}

TEST_CASE("deterministic taxi movement, walls, and boundaries") {
  Rng rng(1);

  SUBCASE("free movement costs the base step") {
    TaxiEnv env = placed_taxi(cell(2, 2));
    const auto r = env.step(0, rng);  // north
    CHECK(r.reward == -1.0);
    std::int32_t t, p, d;
    TaxiEnv::decode(r.state, t, p, d);
    CHECK(t == cell(1, 2));
  }
  SUBCASE("driving off the grid stays put at extra cost") {
    for (const auto& [start, action] : std::vector<std::pair<std::int32_t, std::int32_t>>{
             {cell(0, 3), 0}, {cell(4, 2), 1}, {cell(2, 4), 2}, {cell(3, 0), 3}}) {
      TaxiEnv env = placed_taxi(start);
      const auto r = env.step(action, rng);
      CHECK(r.reward == -6.0);
      std::int32_t t, p, d;
      TaxiEnv::decode(r.state, t, p, d);
      CHECK(t == start);
    }
  }
  SUBCASE("walls block east-west movement at extra cost") {
    // Wall segments sit between columns (1,2) on rows 0-1, (0,1) and (2,3) on
    // rows 3-4. Each is checked from both sides.
    for (const auto& [start, action] : std::vector<std::pair<std::int32_t, std::int32_t>>{
             {cell(0, 1), 2}, {cell(0, 2), 3}, {cell(1, 1), 2}, {cell(1, 2), 3},
             {cell(3, 0), 2}, {cell(3, 1), 3}, {cell(3, 2), 2}, {cell(3, 3), 3},
             {cell(4, 0), 2}, {cell(4, 1), 3}, {cell(4, 2), 2}, {cell(4, 3), 3}}) {
      TaxiEnv env = placed_taxi(start);
      const auto r = env.step(action, rng);
      CHECK(r.reward == -5.0);
      std::int32_t t, p, d;
      TaxiEnv::decode(r.state, t, p, d);
      CHECK(t == start);
    }
    // Same columns on an open row pass freely.
    TaxiEnv env = placed_taxi(cell(2, 1));
    CHECK(env.step(2, rng).reward == -1.0);
  }
}

TEST_CASE("taxi pick-up and drop-off rules") {
  Rng rng(2);
  std::int32_t t, p, d;

  SUBCASE("legal pick-up loads the passenger") {
    TaxiEnv env(0.0);
    env.reset_to(TaxiEnv::encode(7, 7, 3));
    const auto r = env.step(4, rng);
    CHECK(r.reward == -1.0);
    TaxiEnv::decode(r.state, t, p, d);
    CHECK(p == TaxiEnv::kInTaxi);
    CHECK_FALSE(r.done);
  }
  SUBCASE("pick-up away from the passenger or with one aboard is illegal") {
    TaxiEnv env(0.0);
    env.reset_to(TaxiEnv::encode(7, 9, 3));
    CHECK(env.step(4, rng).reward == -11.0);
    env.reset_to(TaxiEnv::encode(7, TaxiEnv::kInTaxi, 3));
    CHECK(env.step(4, rng).reward == -11.0);
  }
  SUBCASE("delivery pays out and ends the episode") {
    TaxiEnv env(0.0);
    env.reset_to(TaxiEnv::encode(3, TaxiEnv::kInTaxi, 3));
    const auto r = env.step(5, rng);
    CHECK(r.reward == 19.0);
    CHECK(r.terminal);
    CHECK(r.done);
    CHECK(env.succeeded());
    TaxiEnv::decode(r.state, t, p, d);
    CHECK(p == d);
    CHECK_THROWS_AS(env.step(0, rng), std::logic_error);
  }
  SUBCASE("drop-off at the wrong cell keeps the passenger aboard") {
    TaxiEnv env(0.0);
    env.reset_to(TaxiEnv::encode(9, TaxiEnv::kInTaxi, 3));
    const auto r = env.step(5, rng);
    CHECK(r.reward == -11.0);
    CHECK_FALSE(r.done);
    TaxiEnv::decode(r.state, t, p, d);
    CHECK(p == TaxiEnv::kInTaxi);
  }
  SUBCASE("drop-off with no passenger is illegal") {
    TaxiEnv env(0.0);
    env.reset_to(TaxiEnv::encode(3, 8, 3));
    CHECK(env.step(5, rng).reward == -11.0);
  }
}

TEST_CASE("taxi episodes truncate at the step limit") {
  Rng rng(3);
  TaxiEnv env(0.0, 5);
  env.reset_to(TaxiEnv::encode(0, 24, 20));
  for (int i = 0; i < 4; ++i) CHECK_FALSE(env.step(4, rng).done);
  const auto last = env.step(4, rng);
  CHECK(last.done);
  CHECK_FALSE(last.terminal);
  CHECK_FALSE(env.succeeded());
  CHECK(env.steps_taken() == 5);
}

TEST_CASE("taxi slip spreads mass over the unintended directions") {
  Rng rng(4);
  TaxiEnv env(0.3);
  std::array<std::int64_t, 4> hits{};  // N, S, E, W landings from the center
  const std::int32_t trials = 40000;
  for (std::int32_t i = 0; i < trials; ++i) {
    env.reset_to(TaxiEnv::encode(cell(2, 2), 24, 20));
    const auto r = env.step(0, rng);  // intend north
    std::int32_t t, p, d;
    TaxiEnv::decode(r.state, t, p, d);
    if (t == cell(1, 2)) ++hits[0];
    if (t == cell(3, 2)) ++hits[1];
    if (t == cell(2, 3)) ++hits[2];
    if (t == cell(2, 1)) ++hits[3];
  }
  CHECK(std::abs(hits[0] / double(trials) - 0.7) < 0.02);
  for (int k = 1; k < 4; ++k) CHECK(std::abs(hits[k] / double(trials) - 0.1) < 0.015);
}

TEST_CASE("taxi resets are uniform with distinct passenger and destination") {
  Rng rng(5);
  TaxiEnv env;
  std::set<std::int32_t> taxis, passengers, dests;
  for (int i = 0; i < 20000; ++i) {
    const std::int32_t s = env.reset(rng);
    std::int32_t t, p, d;
    TaxiEnv::decode(s, t, p, d);
    REQUIRE(p != TaxiEnv::kInTaxi);
    REQUIRE(p != d);
    taxis.insert(t);
    passengers.insert(p);
    dests.insert(d);
  }
  CHECK(taxis.size() == 25);
  CHECK(passengers.size() == 25);
  CHECK(dests.size() == 25);
}

TEST_CASE("frozen lake layout, movement, and terminals") {
  Rng rng(6);
  LakeEnv env(0.0);

  CHECK(LakeEnv::is_hole(5));
  CHECK(LakeEnv::is_hole(7));
  CHECK(LakeEnv::is_hole(11));
  CHECK(LakeEnv::is_hole(12));
  CHECK_FALSE(LakeEnv::is_hole(0));
  CHECK_FALSE(LakeEnv::is_hole(15));

  CHECK(env.reset(rng) == 0);
  CHECK(env.step(0, rng).state == 0);  // left off-grid: stay
  CHECK(env.step(3, rng).state == 0);  // up off-grid: stay
  CHECK(env.step(2, rng).state == 1);  // right
  const auto into_hole = env.step(1, rng);  // down into the hole at 5
  CHECK(into_hole.state == 5);
  CHECK(into_hole.reward == 0.0);
  CHECK(into_hole.terminal);
  CHECK(into_hole.done);
  CHECK_FALSE(env.succeeded());
  CHECK_THROWS_AS(env.step(0, rng), std::logic_error);

  // Walk a safe path to the goal: down, down, right, down, right, right.
  env.reset(rng);
  double total = 0.0;
  for (const std::int32_t a : {1, 1, 2, 1, 2, 2}) {
    const auto r = env.step(a, rng);
    total += r.reward;
    if (r.done) {
      CHECK(r.state == LakeEnv::kGoal);
      CHECK(r.terminal);
    }
  }
  CHECK(env.succeeded());
  CHECK(total == 1.0);
}

TEST_CASE("lake slip is split between the perpendicular directions") {
  Rng rng(7);
  LakeEnv env(0.3);
  std::int64_t stay = 0, right = 0, down = 0;
  const std::int32_t trials = 40000;
  for (std::int32_t i = 0; i < trials; ++i) {
    env.reset(rng);
    const auto r = env.step(1, rng);  // intend down; perpendiculars are left/right
    if (r.state == 0) ++stay;        // slipped left, bounced off the edge
    if (r.state == 1) ++right;
    if (r.state == 4) ++down;
  }
  CHECK(std::abs(down / double(trials) - 0.7) < 0.02);
  CHECK(std::abs(stay / double(trials) - 0.15) < 0.015);
  CHECK(std::abs(right / double(trials) - 0.15) < 0.015);
}

TEST_CASE("one-step Q-learning with full overwrite stores immediate rewards") {
  Rng rng(8);
  TaxiEnv env(0.0);
  QLearnConfig cfg;
  cfg.episodes = 300;
  cfg.alpha = 1.0;
  cfg.gamma = 0.0;
  cfg.epsilon = 1.0;  // pure exploration
  const QTable table = q_learning(env, cfg, rng);

  Rng probe_rng(9);
  std::int32_t checked = 0;
  for (std::int32_t s = 0; s < env.n_states(); s += 37) {
    for (std::int32_t a = 0; a < env.n_actions(); ++a) {
      if (table.at(s, a) == 0.0) continue;  // never visited
      TaxiEnv probe(0.0);
      probe.reset_to(s);
      CHECK(table.at(s, a) == probe.step(a, probe_rng).reward);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("Q-learning masters the deterministic lake") {
  Rng rng(10);
  LakeEnv env(0.0);
  QLearnConfig cfg;
  cfg.episodes = 3000;
  cfg.alpha = 0.5;
  cfg.gamma = 0.95;  // strictly prefer shorter paths so greedy cannot dawdle
  cfg.epsilon = 0.3;
  cfg.init_q = 1.0;  // optimistic: the only reward is +1 at the goal
  const QTable table = q_learning(env, cfg, rng);

  for (int ep = 0; ep < 50; ++ep) {
    std::int32_t s = env.reset(rng);
    int steps = 0;
    while (!env.done()) {
      s = env.step(table.greedy(s), rng).state;
      ++steps;
    }
    CHECK(env.succeeded());
    CHECK(steps == 6);  // shortest safe path
  }
}

TEST_CASE("a fully trained taxi policy almost always delivers") {
  Rng rng(11);
  TaxiEnv env(0.3);
  QLearnConfig cfg;
  cfg.episodes = 60000;
  cfg.alpha = 0.25;
  cfg.gamma = 0.95;
  cfg.epsilon = 0.1;
  const QTable table = q_learning(env, cfg, rng);

  std::int32_t successes = 0;
  const std::int32_t trials = 400;
  for (std::int32_t ep = 0; ep < trials; ++ep) {
    std::int32_t s = env.reset(rng);
    while (!env.done()) s = env.step(table.greedy(s), rng).state;
    successes += env.succeeded() ? 1 : 0;
  }
  CHECK(successes / double(trials) > 0.95);
}

TEST_CASE("collection keeps only successful episodes and respects its budget") {
  Rng rng(12);
  LakeEnv env(0.3);
  QLearnConfig qcfg;
  qcfg.episodes = 4000;
  qcfg.alpha = 0.25;
  qcfg.gamma = 0.95;
  qcfg.epsilon = 0.2;
  qcfg.init_q = 1.0;
  const QTable table = q_learning(env, qcfg, rng);

  CollectConfig cfg;
  cfg.episodes = 40;
  cfg.epsilon = 0.2;
  cfg.max_rollouts = 100000;
  const auto trajs = collect_successful(env, table, cfg, rng);
  REQUIRE(trajs.size() == 40);
  for (const auto& t : trajs) {
    REQUIRE(t.length() > 0);
    CHECK(t.states.size() == t.actions.size());
    CHECK(t.states.size() == t.rewards.size());
    CHECK(t.rewards.back() == 1.0);  // ended at the goal
  }

  CollectConfig strict = cfg;
  strict.episodes = 10;
  strict.max_rollouts = 1;
  strict.epsilon = 1.0;
  CHECK_THROWS_AS(collect_successful(env, table, strict, rng), std::runtime_error);

  TaxiEnv other(0.3);
  CHECK_THROWS_AS(collect_successful(other, table, cfg, rng), std::invalid_argument);
}

TEST_CASE("unfiltered collection keeps every rollout, failures included") {
  Rng rng(13);
  LakeEnv env(2.0 / 3.0, 100);
  QLearnConfig qcfg;
  qcfg.episodes = 20000;
  qcfg.alpha = 0.1;
  qcfg.gamma = 0.95;
  qcfg.epsilon = 0.5;
  qcfg.init_q = 1.0;
  const QTable table = q_learning(env, qcfg, rng);

  const auto trajs = collect_rollouts(env, table, 200, 0.5, rng);
  REQUIRE(trajs.size() == 200);  // exact count: nothing is filtered out
  std::int32_t failures = 0;
  for (const auto& t : trajs) {
    REQUIRE(t.length() > 0);
    CHECK(t.states.size() == t.actions.size());
    CHECK(t.states.size() == t.rewards.size());
    const double ret = t.rewards.back();
    CHECK((ret == 0.0 || ret == 1.0));  // goal pays 1, everything else 0
    failures += ret == 0.0 ? 1 : 0;
  }
  // At epsilon = 0.5 on the slippery lake a large share of rollouts must
  // fail; their presence is the whole point of unfiltered collection.
  CHECK(failures > 20);
  CHECK(failures < 200);

  // Same seed, same table -> bitwise identical corpus.
  Rng replay(13);
  LakeEnv env2(2.0 / 3.0, 100);
  const QTable table2 = q_learning(env2, qcfg, replay);
  const auto again = collect_rollouts(env2, table2, 200, 0.5, replay);
  REQUIRE(again.size() == trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    CHECK(again[i].states == trajs[i].states);
    CHECK(again[i].actions == trajs[i].actions);
    CHECK(again[i].rewards == trajs[i].rewards);
  }

  CHECK(collect_rollouts(env, table, 0, 0.5, rng).empty());
  CHECK_THROWS_AS(collect_rollouts(env, table, -1, 0.5, rng), std::invalid_argument);
  TaxiEnv other(0.3);
  CHECK_THROWS_AS(collect_rollouts(other, table, 5, 0.5, rng), std::invalid_argument);
}

TEST_CASE("depot starts draw passenger and destination from the four depots") {
  const std::array<std::int32_t, 4> depots{0, 4, 20, 23};
  Rng rng(14);
  TaxiEnv env(0.3, 300, /*depot_starts=*/true);

  std::set<std::int32_t> passenger_seen, dest_seen, taxi_seen;
  std::set<std::pair<std::int32_t, std::int32_t>> pairs;
  for (std::int32_t i = 0; i < 4000; ++i) {
    const std::int32_t s = env.reset(rng);
    std::int32_t taxi, p, d;
    TaxiEnv::decode(s, taxi, p, d);
    CHECK(std::count(depots.begin(), depots.end(), p) == 1);
    CHECK(std::count(depots.begin(), depots.end(), d) == 1);
    CHECK(p != d);
    passenger_seen.insert(p);
    dest_seen.insert(d);
    taxi_seen.insert(taxi);
    pairs.insert({p, d});
  }
  CHECK(passenger_seen.size() == 4u);
  CHECK(dest_seen.size() == 4u);
  CHECK(taxi_seen.size() == 25u);       // the taxi itself starts anywhere
  CHECK(pairs.size() == 4u * 3u);       // every ordered depot pair occurs

  // The default remains the all-cells start distribution.
  TaxiEnv wide(0.3);
  std::set<std::int32_t> wide_passenger;
  for (std::int32_t i = 0; i < 4000; ++i) {
    std::int32_t taxi, p, d;
    TaxiEnv::decode(wide.reset(rng), taxi, p, d);
    wide_passenger.insert(p);
  }
  CHECK(wide_passenger.size() == 25u);
}
