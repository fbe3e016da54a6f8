// Microbenchmarks for the hot paths: bottom-up/top-down sweeps, posterior
// readout, an EM epoch, and full planner decisions. The fixture mirrors the
// shape of a learned taxi window model (7 steps x 4 fields, a large state
// alphabet, ~100 return bins) so the numbers track what evaluation actually
// pays per step; token contents are synthetic because only shape matters for
// throughput.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <map>
#include <vector>

#include "trifle/circuit.hpp"
#include "trifle/inference.hpp"
#include "trifle/learning.hpp"
#include "trifle/planner.hpp"
#include "trifle/rng.hpp"
#include "trifle/trajectory.hpp"

namespace {

using namespace trifle;

constexpr std::int32_t kSteps = 7;
constexpr std::int32_t kStateCard = 16250;
constexpr std::int32_t kActionCard = 6;
constexpr std::int32_t kDistinctStates = 400;  // depot-style support
constexpr std::int32_t kRtgBins = 100;

struct Fixture {
  DatasetMeta meta;
  TokenMatrix data;
  Circuit circuit;
};

WindowLayout make_layout() {
  WindowLayout lay;
  lay.n_steps = kSteps;
  lay.state_card = kStateCard;
  lay.action_card = kActionCard;
  lay.reward_bins = BinDictionary::exact({-10.0, -6.0, -5.0, -1.0, 20.0});
  std::vector<double> rtg_samples;
  rtg_samples.reserve(2048);
  Rng rng(7);
  for (int i = 0; i < 2048; ++i) rtg_samples.push_back(-350.0 + 370.0 * rng.next_double());
  lay.rtg_bins = BinDictionary::quantile(rtg_samples, kRtgBins);
  return lay;
}

TokenMatrix synthetic_windows(const WindowLayout& lay, std::int64_t rows, Rng& rng) {
  // Tokens are drawn from a small state support with correlated neighbors so
  // the Chow-Liu step has structure to latch onto; exact content is irrelevant.
  std::vector<std::int32_t> support;
  support.reserve(kDistinctStates);
  for (std::int32_t i = 0; i < kDistinctStates; ++i) {
    support.push_back(rng.next_int(kStateCard));
  }
  TokenMatrix m;
  m.n_cols = lay.n_vars();
  std::vector<std::int32_t> row(m.n_cols);
  for (std::int64_t r = 0; r < rows; ++r) {
    std::int32_t s = support[rng.next_int(kDistinctStates)];
    std::int32_t g = rng.next_int(kRtgBins);
    for (std::int32_t t = 0; t < lay.n_steps; ++t) {
      // Random walk over the support / return bins step to step.
      s = support[(s + rng.next_int(7)) % kDistinctStates];
      g = std::min(kRtgBins - 1, std::max(0, g + rng.next_int(5) - 2));
      row[lay.var(t, WindowLayout::state)] = s;
      row[lay.var(t, WindowLayout::action)] = rng.next_int(kActionCard);
      row[lay.var(t, WindowLayout::reward)] = rng.next_int(lay.reward_bins.n_bins());
      row[lay.var(t, WindowLayout::rtg)] = g;
    }
    m.push_row(row);
  }
  return m;
}

// One fixture per latent size, built on first use and reused across
// benchmarks so repetitions do not retrain the model.
const Fixture& fixture(std::int32_t latents) {
  static std::map<std::int32_t, Fixture> cache;
  auto it = cache.find(latents);
  if (it != cache.end()) return it->second;

  Fixture f;
  f.meta.layout = make_layout();
  f.meta.gamma = 1.0;
  Rng rng(42);
  f.data = synthetic_windows(f.meta.layout, 4096, rng);
  const ChowLiuTree tree = chow_liu(f.data, f.meta.layout.var_cards());
  f.circuit = compile_hclt(tree, latents);
  init_params(f.circuit, 11);
  EMConfig cfg;
  cfg.epochs = 2;
  cfg.early_stop_delta = 0.0;
  em_fit(f.circuit, f.data, cfg);
  return cache.emplace(latents, std::move(f)).first->second;
}

// Evidence shaped like a mid-episode planner query: three history steps plus
// the current state observed, everything else marginalized.
EvidenceMask planner_like_evidence(const Fixture& f) {
  const WindowLayout& lay = f.meta.layout;
  EvidenceMask e(lay.n_vars());
  const std::int32_t* row = f.data.row(1);
  for (std::int32_t t = 0; t < 3; ++t) {
    e.observe(lay.var(t, WindowLayout::state), row[lay.var(t, WindowLayout::state)]);
    e.observe(lay.var(t, WindowLayout::action), row[lay.var(t, WindowLayout::action)]);
    e.observe(lay.var(t, WindowLayout::reward), row[lay.var(t, WindowLayout::reward)]);
  }
  e.observe(lay.var(3, WindowLayout::state), row[lay.var(3, WindowLayout::state)]);
  return e;
}

void BM_ForwardMarginal(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::int32_t>(state.range(0)));
  const EvidenceMask e = planner_like_evidence(f);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_marginal(f.circuit, e));
  }
  state.SetLabel(std::to_string(f.circuit.n_nodes()) + " nodes");
}
BENCHMARK(BM_ForwardMarginal)->Arg(16)->Arg(32)->Arg(64);

void BM_ForwardBackward(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::int32_t>(state.range(0)));
  const EvidenceMask e = planner_like_evidence(f);
  for (auto _ : state) {
    ForwardCache fc = forward_marginal(f.circuit, e);
    FlowCache fl = backward_flows(f.circuit, fc);
    benchmark::DoNotOptimize(fl.flow.data());
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(16)->Arg(32)->Arg(64);

void BM_PosteriorMarginal(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::int32_t>(state.range(0)));
  const EvidenceMask e = planner_like_evidence(f);
  const std::int32_t target = f.meta.layout.var(3, WindowLayout::rtg);
  for (auto _ : state) {
    benchmark::DoNotOptimize(posterior_marginal(f.circuit, e, target));
  }
}
BENCHMARK(BM_PosteriorMarginal)->Arg(16)->Arg(32)->Arg(64);

void BM_EmEpoch(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::int32_t>(state.range(0)));
  for (auto _ : state) {
    Circuit c = f.circuit;  // epoch updates parameters; keep the fixture clean
    EMConfig cfg;
    cfg.epochs = 1;
    cfg.early_stop_delta = 0.0;
    benchmark::DoNotOptimize(em_fit(c, f.data, cfg));
  }
  state.SetItemsProcessed(state.iterations() * f.data.n_rows());
}
BENCHMARK(BM_EmEpoch)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void bench_planner(benchmark::State& state, PolicyMode mode, std::int32_t mc_rollouts) {
  const Fixture& f = fixture(static_cast<std::int32_t>(state.range(0)));
  PlannerConfig cfg;
  cfg.mc_rollouts = mc_rollouts;
  TriflePlanner planner(f.circuit, f.meta, cfg, mode);
  const WindowLayout& lay = f.meta.layout;
  const std::int32_t* row = f.data.row(1);
  Rng rng(3);
  for (auto _ : state) {
    planner.begin_episode(row[lay.var(0, WindowLayout::state)]);
    benchmark::DoNotOptimize(planner.act(rng));
  }
}

void BM_PlannerActSingleStep(benchmark::State& state) {
  bench_planner(state, PolicyMode::single_step, 1);
}
void BM_PlannerActMultiStep(benchmark::State& state) {
  bench_planner(state, PolicyMode::multi_step, 1);
}
void BM_PlannerActBaselineMc1(benchmark::State& state) {
  bench_planner(state, PolicyMode::baseline, 1);
}
BENCHMARK(BM_PlannerActSingleStep)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PlannerActMultiStep)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PlannerActBaselineMc1)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ConvolveSum(benchmark::State& state) {
  // Two small reward components plus one ~100-bin return component — the
  // exact shape the multi-step value distribution convolves per candidate.
  Rng rng(5);
  auto dist = [&rng](std::int32_t n) {
    CategoricalDist d;
    double total = 0.0;
    for (std::int32_t i = 0; i < n; ++i) {
      d.p.push_back(rng.next_double());
      total += d.p.back();
    }
    for (double& p : d.p) p /= total;
    return d;
  };
  auto values = [&rng](std::int32_t n) {
    ValueMap vm;
    for (std::int32_t i = 0; i < n; ++i) vm.value.push_back(-350.0 + 4.0 * i + rng.next_double());
    return vm;
  };
  std::vector<WeightedComponent> parts;
  parts.push_back({dist(6), values(6), 1.0});
  parts.push_back({dist(6), values(6), 1.0});
  parts.push_back({dist(101), values(101), 1.0});
  for (auto _ : state) {
    benchmark::DoNotOptimize(convolve_sum(parts, static_cast<int>(state.range(0))));
  }
}
BENCHMARK(BM_ConvolveSum)->Arg(0)->Arg(101);

}  // namespace

BENCHMARK_MAIN();
