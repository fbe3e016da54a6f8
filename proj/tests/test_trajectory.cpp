#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "trifle/trajectory.hpp"

using namespace trifle;

namespace {

bool close_rel(double a, double b, double tol = 1e-12) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

// Unique-ish temp path helper; tests clean up after themselves.
std::string temp_path(const std::string& name) { return "/tmp/trifle_test_" + name; }

RawTrajectory traj(std::vector<std::int32_t> s, std::vector<std::int32_t> a,
                   std::vector<double> r) {
  RawTrajectory t;
  t.states = std::move(s);
  t.actions = std::move(a);
  t.rewards = std::move(r);
  return t;
}

}  // namespace

TEST_CASE("return-to-go labels accumulate discounted suffix sums") {
  CHECK(rtg_labels({1.0, 2.0, 3.0}, 1.0) == std::vector<double>{6.0, 5.0, 3.0});
  const auto half = rtg_labels({1.0, 2.0, 3.0}, 0.5);
  REQUIRE(half.size() == 3);
  CHECK(close_rel(half[0], 2.75));
  CHECK(close_rel(half[1], 3.5));
  CHECK(close_rel(half[2], 3.0));
  CHECK(rtg_labels({}, 1.0).empty());
  CHECK(rtg_labels({-4.0}, 0.9) == std::vector<double>{-4.0});
}

TEST_CASE("exact dictionaries index distinct values and snap to the nearest one") {
  const BinDictionary d = BinDictionary::exact({-1.0, -1.0, 5.0, -6.0, 20.0});
  REQUIRE(d.n_bins() == 4);
  CHECK(d.representatives() == std::vector<double>{-6.0, -1.0, 5.0, 20.0});

  for (std::int32_t b = 0; b < d.n_bins(); ++b) {
    CHECK(d.encode(d.decode(b)) == b);
  }
  CHECK(d.encode(0.5) == 1);    // closer to -1 than to 5
  CHECK(d.encode(3.0) == 2);    // closer to 5
  CHECK(d.encode(-100.0) == 0); // clamps at the extremes
  CHECK(d.encode(1e9) == 3);
  CHECK(d.encode(2.0) == 1);    // exactly on the midpoint: lower bin wins
}

TEST_CASE("quantile dictionaries form equal-mass bins without splitting ties") {
  SUBCASE("uniform grid") {
    std::vector<double> samples;
    for (int i = 1; i <= 100; ++i) samples.push_back(static_cast<double>(i));
    const BinDictionary d = BinDictionary::quantile(samples, 4);
    REQUIRE(d.n_bins() == 4);
    CHECK(close_rel(d.decode(0), 13.0));
    CHECK(close_rel(d.decode(1), 38.0));
    CHECK(close_rel(d.decode(2), 63.0));
    CHECK(close_rel(d.decode(3), 88.0));
    CHECK(d.encode(25.0) == 0);
    CHECK(d.encode(26.0) == 1);
    CHECK(d.encode(1000.0) == 3);
  }
  SUBCASE("heavy duplication cannot split a value across bins") {
    std::vector<double> samples(50, 0.0);
    samples.insert(samples.end(), 30, 1.0);
    samples.insert(samples.end(), 20, 2.0);
    const BinDictionary two = BinDictionary::quantile(samples, 2);
    REQUIRE(two.n_bins() == 2);
    CHECK(close_rel(two.decode(0), 0.0));
    CHECK(close_rel(two.decode(1), 1.4));  // (30*1 + 20*2) / 50
    CHECK(two.encode(0.0) == 0);
    CHECK(two.encode(1.0) == 1);

    const BinDictionary three = BinDictionary::quantile(samples, 3);
    REQUIRE(three.n_bins() == 3);
    CHECK(three.encode(2.0) == 2);
  }
  SUBCASE("more bins than samples collapses gracefully") {
    const BinDictionary d = BinDictionary::quantile({5.0, 5.0}, 100);
    CHECK(d.n_bins() == 1);
    CHECK(d.encode(123.0) == 0);
  }
}

TEST_CASE("dictionary construction validates its parts") {
  CHECK_THROWS_AS(BinDictionary::exact({}), std::invalid_argument);
  CHECK_THROWS_AS(BinDictionary::exact({std::nan("")}), std::invalid_argument);
  CHECK_THROWS_AS(BinDictionary::quantile({1.0}, 0), std::invalid_argument);
  CHECK_THROWS_AS(BinDictionary::from_parts({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(BinDictionary::from_parts({1.0, 2.0}, {}), std::invalid_argument);
  CHECK_THROWS_AS(BinDictionary::from_parts({2.0, 1.0}, {1.5}), std::invalid_argument);
  CHECK_THROWS_AS(BinDictionary().encode(1.0), std::logic_error);
  CHECK_THROWS_AS(BinDictionary::exact({1.0}).decode(1), std::out_of_range);
  const BinDictionary d = BinDictionary::exact({1.0, 2.0});
  CHECK_THROWS_AS(d.encode(std::nan("")), std::invalid_argument);
}

TEST_CASE("window layout places four fields per step plus padding categories") {
  WindowLayout layout;
  layout.n_steps = 7;
  layout.state_card = 10;
  layout.action_card = 4;
  layout.reward_bins = BinDictionary::exact({-1.0, 20.0});
  layout.rtg_bins = BinDictionary::exact({-7.0, -1.0, 13.0, 20.0});

  CHECK(layout.n_vars() == 28);
  CHECK(layout.var(0, WindowLayout::state) == 0);
  CHECK(layout.var(0, WindowLayout::rtg) == 3);
  CHECK(layout.var(3, WindowLayout::action) == 13);
  CHECK(layout.var(6, WindowLayout::rtg) == 27);
  CHECK_THROWS_AS(layout.var(7, WindowLayout::state), std::out_of_range);

  const auto cards = layout.var_cards();
  REQUIRE(cards.size() == 28);
  CHECK(cards[0] == 11);   // states + padding
  CHECK(cards[1] == 5);    // actions + padding
  CHECK(cards[2] == 3);    // two reward values + padding
  CHECK(cards[3] == 5);    // four return values + padding
  CHECK(layout.pad_category(WindowLayout::state) == 10);

  const ValueMap rv = layout.reward_values();
  REQUIRE(rv.value.size() == 3);
  CHECK(rv.value[0] == -1.0);
  CHECK(rv.value[2] == 0.0);  // padding decodes to zero: ended episodes accrue nothing
}

TEST_CASE("windows slide with stride one and front-pad short episodes") {
  // Episode of length 9 over 3 states / 2 actions; rewards -1 until a final +5.
  RawTrajectory t;
  for (int i = 0; i < 9; ++i) {
    t.states.push_back(i % 3);
    t.actions.push_back(i % 2);
    t.rewards.push_back(i == 8 ? 5.0 : -1.0);
  }
  TokenizeConfig cfg;
  cfg.n_steps = 7;
  cfg.state_card = 3;
  cfg.action_card = 2;
  const WindowLayout layout = fit_layout({t}, cfg);
  CHECK(layout.reward_bins.n_bins() == 2);
  // Distinct RTG values: -1*k + 5 suffixes => {5, 4, 3, 2, 1, 0, -1, -2, -3}.
  CHECK(layout.rtg_bins.n_bins() == 9);

  const TokenMatrix w = make_windows({t}, layout, cfg.gamma);
  REQUIRE(w.n_rows() == 3);  // 9 - 7 + 1
  REQUIRE(w.n_cols == 28);
  for (std::int64_t win = 0; win < 3; ++win) {
    for (std::int32_t slot = 0; slot < 7; ++slot) {
      const auto step = static_cast<std::int32_t>(win) + slot;
      CHECK(w.row(win)[layout.var(slot, WindowLayout::state)] == t.states[step]);
      CHECK(w.row(win)[layout.var(slot, WindowLayout::action)] == t.actions[step]);
      const double rtg = 5.0 - static_cast<double>(8 - step);
      CHECK(w.row(win)[layout.var(slot, WindowLayout::rtg)] == layout.rtg_bins.encode(rtg));
    }
  }

  // A 3-step episode yields one window padded in the first four slots.
  RawTrajectory s = traj({0, 1, 2}, {0, 1, 0}, {-1.0, -1.0, 5.0});
  const TokenMatrix sw = make_windows({s}, layout, cfg.gamma);
  REQUIRE(sw.n_rows() == 1);
  for (std::int32_t slot = 0; slot < 4; ++slot) {
    CHECK(sw.row(0)[layout.var(slot, WindowLayout::state)] == layout.pad_category(WindowLayout::state));
    CHECK(sw.row(0)[layout.var(slot, WindowLayout::reward)] == layout.pad_category(WindowLayout::reward));
  }
  for (std::int32_t slot = 4; slot < 7; ++slot) {
    CHECK(sw.row(0)[layout.var(slot, WindowLayout::state)] == s.states[slot - 4]);
    CHECK(sw.row(0)[layout.var(slot, WindowLayout::action)] == s.actions[slot - 4]);
  }
}

TEST_CASE("bin mode selection follows the distinct-value budget") {
  std::vector<RawTrajectory> trajs;
  RawTrajectory t;
  for (int i = 0; i < 300; ++i) {
    t.states.push_back(0);
    t.actions.push_back(0);
    // Rewards from a 3-value alphabet, but 300 distinct return-to-go sums
    // under gamma = 0.99.
    t.rewards.push_back(i % 3 == 0 ? -1.0 : (i % 3 == 1 ? 0.0 : 2.0));
  }
  trajs.push_back(t);

  TokenizeConfig cfg;
  cfg.n_steps = 7;
  cfg.state_card = 1;
  cfg.action_card = 1;
  cfg.gamma = 0.99;
  cfg.quantile_bins = 50;

  const WindowLayout layout = fit_layout(trajs, cfg);
  CHECK(layout.reward_bins.n_bins() == 3);   // stayed exact
  CHECK(layout.rtg_bins.n_bins() == 50);     // fell back to quantiles

  TokenizeConfig force = cfg;
  force.bin_mode = BinMode::quantile;
  CHECK(fit_layout(trajs, force).reward_bins.n_bins() == 3);  // only 3 distinct runs
  force.bin_mode = BinMode::exact;
  CHECK(fit_layout(trajs, force).rtg_bins.n_bins() > 50);
}

TEST_CASE("trajectory corpus and metadata round-trip through disk") {
  const std::string jsonl = temp_path("corpus.traj.jsonl");
  const std::string meta_path = temp_path("corpus.meta.json");

  std::vector<RawTrajectory> trajs{
      traj({0, 1, 2}, {1, 0, 1}, {-1.0, -1.5, 20.0}),
      traj({2, 2}, {0, 0}, {0.25, -6.0}),
  };
  save_trajectories(trajs, jsonl);
  const auto back = load_trajectories(jsonl);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].states == trajs[i].states);
    CHECK(back[i].actions == trajs[i].actions);
    CHECK(back[i].rewards == trajs[i].rewards);
  }

  TokenizeConfig cfg;
  cfg.n_steps = 5;
  cfg.state_card = 3;
  cfg.action_card = 2;
  DatasetMeta meta;
  meta.layout = fit_layout(trajs, cfg);
  meta.gamma = 0.97;
  save_meta(meta, meta_path);
  const DatasetMeta loaded = load_meta(meta_path);
  CHECK(loaded == meta);

  // Quantile dictionaries (non-integral representatives) round-trip too.
  std::vector<double> noisy;
  for (int i = 0; i < 1000; ++i) noisy.push_back(std::sin(static_cast<double>(i)) * 17.3);
  meta.layout.rtg_bins = BinDictionary::quantile(noisy, 100);
  save_meta(meta, meta_path);
  CHECK(load_meta(meta_path) == meta);

  std::remove(jsonl.c_str());
  std::remove(meta_path.c_str());
}

TEST_CASE("loaders reject malformed files") {
  const std::string path = temp_path("bad_input");

  auto write_file = [&](const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    REQUIRE(f != nullptr);
    std::fputs(text.c_str(), f);
    std::fclose(f);
  };

  write_file("{\"states\":[0],\"actions\":[0],\"rewards\":[1.0]}\nnot json\n");
  CHECK_THROWS_AS(load_trajectories(path), std::runtime_error);
  write_file("{\"states\":[0],\"actions\":[0]}\n");
  CHECK_THROWS_AS(load_trajectories(path), std::runtime_error);
  write_file("{\"states\":[0,1],\"actions\":[0],\"rewards\":[1.0]}\n");
  CHECK_THROWS_AS(load_trajectories(path), std::runtime_error);
  CHECK_THROWS_AS(load_trajectories(temp_path("missing_file")), std::runtime_error);

  write_file("{\"format_version\": 2}");
  CHECK_THROWS_AS(load_meta(path), std::runtime_error);
  write_file("{\"format_version\": 1, \"gamma\": 1.0}");
  CHECK_THROWS_AS(load_meta(path), std::runtime_error);
  write_file("{\"format_version\": 1, \"gamma\": 1.0, \"layout\": {\"n_steps\": 3}}");
  CHECK_THROWS_AS(load_meta(path), std::runtime_error);
  write_file("not json at all");
  CHECK_THROWS_AS(load_meta(path), std::runtime_error);

  std::remove(path.c_str());
}

TEST_CASE("tokenization validates trajectories and configuration") {
  const RawTrajectory good = traj({0, 1}, {0, 1}, {1.0, 2.0});
  TokenizeConfig cfg;
  cfg.n_steps = 3;
  cfg.state_card = 2;
  cfg.action_card = 2;

  CHECK_THROWS_AS(fit_layout({}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(fit_layout({traj({0}, {0, 1}, {1.0})}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(fit_layout({traj({7}, {0}, {1.0})}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(fit_layout({traj({0}, {5}, {1.0})}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(fit_layout({traj({0}, {0}, {std::nan("")})}, cfg), std::invalid_argument);

  TokenizeConfig bad = cfg;
  bad.n_steps = 0;
  CHECK_THROWS_AS(fit_layout({good}, bad), std::invalid_argument);
  bad = cfg;
  bad.state_card = 0;
  CHECK_THROWS_AS(fit_layout({good}, bad), std::invalid_argument);
  bad = cfg;
  bad.quantile_bins = 0;
  CHECK_THROWS_AS(fit_layout({good}, bad), std::invalid_argument);

  WindowLayout unfitted;
  unfitted.n_steps = 3;
  unfitted.state_card = 2;
  unfitted.action_card = 2;
  CHECK_THROWS_AS(make_windows({good}, unfitted, 1.0), std::invalid_argument);

  const WindowLayout layout = fit_layout({good}, cfg);
  CHECK_THROWS_AS(make_windows({traj({3}, {0}, {1.0})}, layout, 1.0), std::invalid_argument);
}
