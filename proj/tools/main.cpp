// Command-line front end: collect environment datasets, train a window model,
// evaluate planner policies, and run self-diagnostics.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "trifle/circuit.hpp"
#include "trifle/envs.hpp"
#include "trifle/eval.hpp"
#include "trifle/inference.hpp"
#include "trifle/learning.hpp"
#include "trifle/planner.hpp"
#include "trifle/rng.hpp"
#include "trifle/trajectory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trifle;

namespace {

// Bad flag combinations and malformed --config files are usage errors (exit
// code 2), distinct from runtime failures (exit code 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Optional JSON file whose keys fill in option values; explicit command-line
// flags always win. Unknown keys are rejected so typos do not silently run a
// default.
class ConfigFile {
 public:
  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("--config: cannot open " + path);
    try {
      in >> j_;
    } catch (const std::exception& e) {
      throw UsageError("--config: " + std::string(e.what()));
    }
    if (!j_.is_object()) throw UsageError("--config: top level must be a JSON object");
  }

  template <typename T>
  void apply(const std::string& key, T& target, const CLI::Option* opt) {
    known_.insert(key);
    if (j_.is_null()) return;
    if (opt != nullptr && opt->count() > 0) return;
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      target = it->template get<T>();
    } catch (const std::exception& e) {
      throw UsageError("--config: key \"" + key + "\": " + std::string(e.what()));
    }
  }

  void finish() const {
    if (j_.is_null()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (known_.find(it.key()) == known_.end()) {
        throw UsageError("--config: unknown key \"" + it.key() + "\"");
      }
    }
  }

 private:
  json j_;
  std::set<std::string> known_;
};

// ---------------------------------------------------------------------------
// collect-taxi / collect-lake

struct CollectOpts {
  std::string out = ".";
  std::string config;
  std::uint64_t seed = 0;
  std::int64_t q_episodes = 0;
  double alpha = 0.0;
  double q_gamma = 0.95;
  double train_epsilon = 0.1;
  double init_q = 0.0;
  std::int32_t episodes = 1000;
  double epsilon = 0.0;
  std::int64_t max_rollouts = 0;
  double slip = 0.3;
  std::int32_t max_steps = 0;
  bool depot_starts = false;
  std::map<std::string, CLI::Option*> opt;
};

// Success-filtered corpora (taxi) carry a rollout budget and the depot-start
// toggle; unfiltered corpora (lake) keep every episode, so those flags are
// absent there.
void add_collect_options(CLI::App* sub, CollectOpts& o, bool taxi_extras,
                         const std::string& epsilon_names) {
  o.opt["out"] = sub->add_option("--out", o.out, "output directory");
  o.opt["config"] = sub->add_option("--config", o.config, "JSON file with option defaults");
  o.opt["seed"] = sub->add_option("--seed", o.seed, "random seed");
  o.opt["episodes"] = sub->add_option("--episodes", o.episodes, "episodes to keep");
  o.opt["epsilon"] = sub->add_option(epsilon_names, o.epsilon, "collection exploration rate");
  o.opt["q-episodes"] = sub->add_option("--q-episodes", o.q_episodes, "Q-learning episodes");
  o.opt["alpha"] = sub->add_option("--alpha", o.alpha, "Q-learning step size");
  o.opt["q-gamma"] = sub->add_option("--q-gamma", o.q_gamma, "Q-learning discount");
  o.opt["train-epsilon"] =
      sub->add_option("--train-epsilon", o.train_epsilon, "Q-learning exploration rate");
  if (taxi_extras) {
    o.opt["max-rollouts"] =
        sub->add_option("--max-rollouts", o.max_rollouts, "rollout budget for collection");
    o.opt["depot-starts"] = sub->add_flag("--depot-starts", o.depot_starts,
                                          "draw passenger/destination from the four depots");
  }
  o.opt["slip"] = sub->add_option("--slip", o.slip, "environment slip probability");
  o.opt["max-steps"] = sub->add_option("--max-steps", o.max_steps, "episode step cap");
}

void apply_collect_config(CollectOpts& o) {
  ConfigFile cf;
  if (!o.config.empty()) cf.load(o.config);
  cf.apply("out", o.out, o.opt["out"]);
  cf.apply("seed", o.seed, o.opt["seed"]);
  cf.apply("episodes", o.episodes, o.opt["episodes"]);
  cf.apply("epsilon", o.epsilon, o.opt["epsilon"]);
  cf.apply("q-episodes", o.q_episodes, o.opt["q-episodes"]);
  cf.apply("alpha", o.alpha, o.opt["alpha"]);
  cf.apply("q-gamma", o.q_gamma, o.opt["q-gamma"]);
  cf.apply("train-epsilon", o.train_epsilon, o.opt["train-epsilon"]);
  if (o.opt.count("max-rollouts") != 0) {
    cf.apply("max-rollouts", o.max_rollouts, o.opt["max-rollouts"]);
  }
  if (o.opt.count("depot-starts") != 0) {
    cf.apply("depot-starts", o.depot_starts, o.opt["depot-starts"]);
  }
  cf.apply("slip", o.slip, o.opt["slip"]);
  cf.apply("max-steps", o.max_steps, o.opt["max-steps"]);
  cf.finish();
}

template <typename Env>
void run_collect(Env& env, CollectOpts& o, const std::string& name, bool filter_success) {
  Rng rng(o.seed);

  QLearnConfig qcfg;
  qcfg.episodes = o.q_episodes;
  qcfg.alpha = o.alpha;
  qcfg.gamma = o.q_gamma;
  qcfg.epsilon = o.train_epsilon;
  qcfg.init_q = o.init_q;
  std::cout << "training behavior policy: " << o.q_episodes << " episodes" << std::endl;
  const QTable table = q_learning(env, qcfg, rng);

  std::vector<RawTrajectory> trajs;
  if (filter_success) {
    CollectConfig ccfg;
    ccfg.episodes = o.episodes;
    ccfg.epsilon = o.epsilon;
    ccfg.max_rollouts = o.max_rollouts;
    std::cout << "collecting " << o.episodes << " successful episodes at epsilon " << o.epsilon
              << std::endl;
    trajs = collect_successful(env, table, ccfg, rng);
  } else {
    std::cout << "collecting " << o.episodes << " episodes (no success filter) at epsilon "
              << o.epsilon << std::endl;
    trajs = collect_rollouts(env, table, o.episodes, o.epsilon, rng);
  }

  double total_return = 0.0;
  std::int64_t total_steps = 0;
  for (const RawTrajectory& t : trajs) {
    for (double r : t.rewards) total_return += r;
    total_steps += t.length();
  }
  fs::create_directories(o.out);
  const std::string path = (fs::path(o.out) / (name + ".traj.jsonl")).string();
  save_trajectories(trajs, path);
  std::cout << "episodes: " << trajs.size() << "\n"
            << "mean return: " << total_return / static_cast<double>(trajs.size()) << "\n"
            << "mean length: " << total_steps / static_cast<double>(trajs.size()) << "\n"
            << "wrote " << path << std::endl;
}

// ---------------------------------------------------------------------------
// train-pc

struct TrainOpts {
  std::string data;
  std::string env;
  std::string out = ".";
  std::string config;
  std::string bin_mode = "auto";
  std::uint64_t seed = 0;
  std::int32_t latents = 16;
  std::int32_t epochs = 40;
  double pseudocount = 0.1;
  double early_stop = 1e-6;
  std::int32_t workers = 1;
  double gamma = 1.0;
  std::int32_t n_steps = 7;
  std::int32_t quantile_bins = 100;
  std::map<std::string, CLI::Option*> opt;
};

BinMode parse_bin_mode(const std::string& s) {
  if (s == "auto") return BinMode::auto_detect;
  if (s == "exact") return BinMode::exact;
  if (s == "quantile") return BinMode::quantile;
  throw UsageError("--bin-mode must be auto, exact or quantile");
}

void run_train(TrainOpts& o) {
  ConfigFile cf;
  if (!o.config.empty()) cf.load(o.config);
  cf.apply("data", o.data, o.opt["data"]);
  cf.apply("env", o.env, o.opt["env"]);
  cf.apply("out", o.out, o.opt["out"]);
  cf.apply("seed", o.seed, o.opt["seed"]);
  cf.apply("latents", o.latents, o.opt["latents"]);
  cf.apply("epochs", o.epochs, o.opt["epochs"]);
  cf.apply("pseudocount", o.pseudocount, o.opt["pseudocount"]);
  cf.apply("early-stop", o.early_stop, o.opt["early-stop"]);
  cf.apply("workers", o.workers, o.opt["workers"]);
  cf.apply("gamma", o.gamma, o.opt["gamma"]);
  cf.apply("n-steps", o.n_steps, o.opt["n-steps"]);
  cf.apply("bin-mode", o.bin_mode, o.opt["bin-mode"]);
  cf.apply("quantile-bins", o.quantile_bins, o.opt["quantile-bins"]);
  cf.finish();

  TokenizeConfig tcfg;
  tcfg.n_steps = o.n_steps;
  tcfg.gamma = o.gamma;
  tcfg.bin_mode = parse_bin_mode(o.bin_mode);
  tcfg.quantile_bins = o.quantile_bins;
  if (o.env == "taxi") {
    tcfg.state_card = TaxiEnv().n_states();
    tcfg.action_card = TaxiEnv().n_actions();
  } else if (o.env == "lake") {
    tcfg.state_card = LakeEnv().n_states();
    tcfg.action_card = LakeEnv().n_actions();
  } else {
    throw UsageError("--env must be taxi or lake");
  }

  const std::vector<RawTrajectory> trajs = load_trajectories(o.data);
  std::cout << "loaded " << trajs.size() << " episodes from " << o.data << std::endl;
  const WindowLayout layout = fit_layout(trajs, tcfg);
  const TokenMatrix windows = make_windows(trajs, layout, tcfg.gamma);
  std::cout << "windows: " << windows.n_rows() << " x " << windows.n_cols
            << " (reward bins: " << layout.reward_bins.n_bins()
            << ", return bins: " << layout.rtg_bins.n_bins() << ")" << std::endl;

  const ChowLiuTree tree = chow_liu(windows, layout.var_cards(), o.pseudocount);
  Circuit circuit = compile_hclt(tree, o.latents);
  init_params(circuit, o.seed);
  std::cout << "circuit: " << circuit.n_nodes() << " nodes over " << circuit.n_vars()
            << " variables, " << o.latents << " latents per tree node" << std::endl;

  EMConfig emcfg;
  emcfg.epochs = o.epochs;
  emcfg.pseudocount = o.pseudocount;
  emcfg.early_stop_delta = o.early_stop;
  emcfg.workers = o.workers;
  const TrainReport report = em_fit(circuit, windows, emcfg);

  fs::create_directories(o.out);
  const std::string model_path = (fs::path(o.out) / "model.pc").string();
  const std::string meta_path = (fs::path(o.out) / "meta.json").string();
  const std::string log_path = (fs::path(o.out) / "train_log.csv").string();
  save_circuit(circuit, model_path);
  save_meta(DatasetMeta{layout, o.gamma}, meta_path);
  report.save_csv(log_path);
  std::cout << "epochs run: " << report.epochs_run
            << (report.early_stopped ? " (early stop)" : "") << "\n"
            << "avg log-likelihood entering last epoch: " << report.avg_log_likelihood.back()
            << "\n"
            << "wrote " << model_path << ", " << meta_path << ", " << log_path << std::endl;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string model;
  std::string meta_path;
  std::string env;
  std::string policy = "s-trifle";
  std::string out = ".";
  std::string config;
  std::int32_t episodes = 100;
  std::uint64_t seed = 0;
  std::int32_t workers = 1;
  std::vector<std::int32_t> constraint;
  double delta = 0.2;
  std::int32_t beams = 8;
  std::int32_t horizon = 3;
  std::int32_t lookahead = 2;
  std::int32_t expand = 2;
  std::int32_t mc_rollouts = 10;
  std::int32_t conv_bins = 0;
  bool pad_short_history = false;
  double slip = -1.0;          // < 0 = environment canon (taxi 0.3, lake 2/3)
  std::int32_t max_steps = 0;  // 0 = environment default
  bool depot_starts = false;
  std::map<std::string, CLI::Option*> opt;
};

PolicyMode parse_policy(const std::string& s) {
  if (s == "s-trifle") return PolicyMode::single_step;
  if (s == "m-trifle") return PolicyMode::multi_step;
  if (s == "tt-baseline") return PolicyMode::baseline;
  throw UsageError("--policy must be s-trifle, m-trifle or tt-baseline");
}

void run_eval_cmd(EvalOpts& o) {
  ConfigFile cf;
  if (!o.config.empty()) cf.load(o.config);
  cf.apply("model", o.model, o.opt["model"]);
  cf.apply("meta", o.meta_path, o.opt["meta"]);
  cf.apply("env", o.env, o.opt["env"]);
  cf.apply("policy", o.policy, o.opt["policy"]);
  cf.apply("out", o.out, o.opt["out"]);
  cf.apply("episodes", o.episodes, o.opt["episodes"]);
  cf.apply("seed", o.seed, o.opt["seed"]);
  cf.apply("workers", o.workers, o.opt["workers"]);
  cf.apply("constraint", o.constraint, o.opt["constraint"]);
  cf.apply("delta", o.delta, o.opt["delta"]);
  cf.apply("beams", o.beams, o.opt["beams"]);
  cf.apply("horizon", o.horizon, o.opt["horizon"]);
  cf.apply("lookahead", o.lookahead, o.opt["lookahead"]);
  cf.apply("expand", o.expand, o.opt["expand"]);
  cf.apply("mc-rollouts", o.mc_rollouts, o.opt["mc-rollouts"]);
  cf.apply("conv-bins", o.conv_bins, o.opt["conv-bins"]);
  cf.apply("pad-short-history", o.pad_short_history, o.opt["pad-short-history"]);
  cf.apply("slip", o.slip, o.opt["slip"]);
  cf.apply("max-steps", o.max_steps, o.opt["max-steps"]);
  cf.apply("depot-starts", o.depot_starts, o.opt["depot-starts"]);
  cf.finish();

  const PolicyMode mode = parse_policy(o.policy);
  const Circuit circuit = load_circuit(o.model);
  const DatasetMeta meta = load_meta(o.meta_path);

  PlannerConfig pcfg;
  pcfg.delta = o.delta;
  pcfg.beams = o.beams;
  pcfg.horizon = o.horizon;
  pcfg.lookahead = o.lookahead;
  pcfg.expand = o.expand;
  pcfg.mc_rollouts = o.mc_rollouts;
  pcfg.conv_bins = o.conv_bins;
  pcfg.pad_short_history = o.pad_short_history;

  EvalConfig ecfg;
  ecfg.episodes = o.episodes;
  ecfg.seed = o.seed;
  ecfg.workers = o.workers;
  ecfg.allowed_actions = o.constraint;

  EvalSummary summary;
  double slip = o.slip;
  if (slip < 0.0) slip = o.env == "taxi" ? 0.3 : 2.0 / 3.0;
  if (o.env == "taxi") {
    const TaxiEnv env(slip, o.max_steps > 0 ? o.max_steps : 300, o.depot_starts);
    if (meta.layout.state_card != env.n_states() || meta.layout.action_card != env.n_actions()) {
      throw UsageError("eval: the model was not trained for --env taxi");
    }
    summary = run_eval(env, circuit, meta, pcfg, mode, ecfg);
  } else if (o.env == "lake") {
    const LakeEnv env(slip, o.max_steps > 0 ? o.max_steps : 100);
    if (meta.layout.state_card != env.n_states() || meta.layout.action_card != env.n_actions()) {
      throw UsageError("eval: the model was not trained for --env lake");
    }
    summary = run_eval(env, circuit, meta, pcfg, mode, ecfg);
  } else {
    throw UsageError("--env must be taxi or lake");
  }

  fs::create_directories(o.out);
  write_episodes_csv(summary, (fs::path(o.out) / "episodes.csv").string());
  write_pairs_csv(summary, (fs::path(o.out) / "pairs.csv").string());

  // The report snapshots everything that determines the numbers. Worker count
  // and output paths only affect scheduling and destination, so they stay
  // out: reruns of one configuration must compare byte for byte.
  json report;
  report["config"] = {{"env", o.env},
                      {"policy", o.policy},
                      {"episodes", o.episodes},
                      {"seed", o.seed},
                      {"constraint", o.constraint},
                      {"delta", o.delta},
                      {"beams", o.beams},
                      {"horizon", o.horizon},
                      {"lookahead", o.lookahead},
                      {"expand", o.expand},
                      {"mc_rollouts", o.mc_rollouts},
                      {"conv_bins", o.conv_bins},
                      {"pad_short_history", o.pad_short_history},
                      {"slip", slip},
                      {"max_steps", o.max_steps},
                      {"depot_starts", o.depot_starts}};
  report["summary"] = {
      {"episodes", static_cast<std::int64_t>(summary.episodes.size())},
      {"mean_return", summary.mean_return},
      {"mean_length", summary.mean_length},
      {"success_rate", summary.success_rate},
      {"mean_optimality", summary.mean_optimality},
      {"correlation",
       std::isnan(summary.correlation) ? json(nullptr) : json(summary.correlation)}};
  const std::string report_path = (fs::path(o.out) / "report.json").string();
  std::ofstream rout(report_path);
  if (!rout) throw std::runtime_error("cannot open for writing: " + report_path);
  rout << report.dump(2) << "\n";

  std::cout << "episodes: " << summary.episodes.size() << "\n"
            << "mean return: " << summary.mean_return << "\n"
            << "success rate: " << summary.success_rate << "\n"
            << "mean length: " << summary.mean_length << "\n"
            << "mean optimality: " << summary.mean_optimality << "\n"
            << "value/return correlation: " << summary.correlation << "\n"
            << "wrote report.json, episodes.csv, pairs.csv under " << o.out << std::endl;
}

// ---------------------------------------------------------------------------
// diagnose

void run_diagnose(const std::string& model, const std::string& meta_path) {
  const Circuit c = load_circuit(model);
  std::int64_t inputs = 0;
  std::int64_t sums = 0;
  std::int64_t products = 0;
  for (std::int32_t n = 0; n < c.n_nodes(); ++n) {
    switch (c.kind[n]) {
      case NodeKind::input: ++inputs; break;
      case NodeKind::sum: ++sums; break;
      case NodeKind::product: ++products; break;
    }
  }
  std::cout << "variables: " << c.n_vars() << "\n"
            << "nodes: " << c.n_nodes() << " (" << inputs << " input, " << sums << " sum, "
            << products << " product)\n"
            << "edges: " << c.child.size() << "\n"
            << "parameters: " << c.param.size() << std::endl;
  if (!meta_path.empty()) {
    const DatasetMeta meta = load_meta(meta_path);
    std::cout << "layout: " << meta.layout.n_steps << " steps, state card "
              << meta.layout.state_card << ", action card " << meta.layout.action_card
              << ", reward bins " << meta.layout.reward_bins.n_bins() << ", return bins "
              << meta.layout.rtg_bins.n_bins() << ", discount " << meta.gamma << std::endl;
  }
  const EvidenceMask empty(c.n_vars());
  const double logz = log_marginal(c, empty);
  std::cout << "log total mass: " << logz << std::endl;
  if (std::abs(logz) > 1e-6) {
    std::cout << "WARNING: total mass differs from 1; the model is not normalized" << std::endl;
    throw std::runtime_error("diagnose: model is not normalized");
  }
  std::cout << "ok" << std::endl;
}

// ---------------------------------------------------------------------------
// oracle-check

// End-to-end consistency probes that any correct engine must satisfy, checked
// on a freshly trained toy model. This is a smoke test for an installed
// binary, not a substitute for the unit suites.
int run_oracle_check(std::uint64_t seed) {
  const std::vector<std::int32_t> cards = {3, 2, 4, 3, 2, 3};
  Rng rng(seed);

  TokenMatrix data;
  data.n_cols = static_cast<std::int32_t>(cards.size());
  for (int r = 0; r < 500; ++r) {
    std::vector<std::int32_t> row(cards.size());
    for (std::size_t v = 0; v < cards.size(); ++v) {
      // Skewed marginals so the fitted model is not uniform.
      std::vector<double> w(cards[v]);
      for (std::int32_t x = 0; x < cards[v]; ++x) w[x] = 1.0 + x + (v % 2 == 0 ? x * x : 0);
      row[v] = rng.categorical(w);
    }
    data.push_row(row);
  }

  const ChowLiuTree tree = chow_liu(data, cards);
  Circuit c = compile_hclt(tree, 4);
  init_params(c, seed ^ 0x9E3779B97F4A7C15ULL);
  EMConfig emcfg;
  emcfg.epochs = 3;
  emcfg.early_stop_delta = 0.0;
  em_fit(c, data, emcfg);

  int failures = 0;
  auto verdict = [&failures](bool ok, const std::string& name) {
    std::cout << (ok ? "ok   " : "FAIL ") << name << std::endl;
    if (!ok) ++failures;
  };

  // 1. The model is a distribution: full assignments sum to one.
  {
    double total = 0.0;
    std::vector<std::int32_t> x(cards.size(), 0);
    while (true) {
      EvidenceMask e(static_cast<std::int32_t>(cards.size()));
      for (std::size_t v = 0; v < cards.size(); ++v) {
        e.observe(static_cast<std::int32_t>(v), x[v]);
      }
      total += std::exp(log_marginal(c, e));
      std::size_t v = 0;
      while (v < cards.size() && ++x[v] == cards[v]) x[v++] = 0;
      if (v == cards.size()) break;
    }
    verdict(std::abs(total - 1.0) <= 1e-9, "full assignments sum to 1");
  }

  // 2. Marginalizing one variable by summation matches leaving it out.
  {
    bool ok = true;
    for (int trial = 0; trial < 20; ++trial) {
      EvidenceMask e(static_cast<std::int32_t>(cards.size()));
      std::int32_t free_var = static_cast<std::int32_t>(trial % cards.size());
      for (std::size_t v = 0; v < cards.size(); ++v) {
        if (static_cast<std::int32_t>(v) != free_var && rng.next_double() < 0.5) {
          e.observe(static_cast<std::int32_t>(v), static_cast<std::int32_t>(rng.next_below(cards[v])));
        }
      }
      const double pe = std::exp(log_marginal(c, e));
      double total = 0.0;
      for (std::int32_t xv = 0; xv < cards[free_var]; ++xv) {
        EvidenceMask ex = e;
        ex.observe(free_var, xv);
        total += std::exp(log_marginal(c, ex));
      }
      ok = ok && std::abs(total / pe - 1.0) <= 1e-10;
    }
    verdict(ok, "summing a variable out matches the marginal");
  }

  // 3. Posteriors are normalized.
  {
    bool ok = true;
    for (int trial = 0; trial < 10; ++trial) {
      EvidenceMask e(static_cast<std::int32_t>(cards.size()));
      const std::int32_t target = static_cast<std::int32_t>(trial % cards.size());
      for (std::size_t v = 0; v < cards.size(); ++v) {
        if (static_cast<std::int32_t>(v) != target && rng.next_double() < 0.4) {
          e.observe(static_cast<std::int32_t>(v), static_cast<std::int32_t>(rng.next_below(cards[v])));
        }
      }
      const CategoricalDist post = posterior_marginal(c, e, target);
      double total = 0.0;
      for (double p : post.p) total += p;
      ok = ok && std::abs(total - 1.0) <= 1e-12;
    }
    verdict(ok, "posteriors sum to 1");
  }

  // 4. Serialization round-trips bit for bit.
  {
    const std::string path =
        (fs::temp_directory_path() / ("trifle-oracle-check-" + std::to_string(seed) + ".pc"))
            .string();
    save_circuit(c, path);
    const Circuit back = load_circuit(path);
    fs::remove(path);
    bool ok = true;
    for (int trial = 0; trial < 20; ++trial) {
      EvidenceMask e(static_cast<std::int32_t>(cards.size()));
      for (std::size_t v = 0; v < cards.size(); ++v) {
        if (rng.next_double() < 0.5) {
          e.observe(static_cast<std::int32_t>(v), static_cast<std::int32_t>(rng.next_below(cards[v])));
        }
      }
      ok = ok && log_marginal(c, e) == log_marginal(back, e);
    }
    verdict(ok, "serialization round-trips bit for bit");
  }

  // 5. Chain rule: log p(a, b) = log p(b) + log p(a | b).
  {
    bool ok = true;
    for (int trial = 0; trial < 10; ++trial) {
      EvidenceMask given(static_cast<std::int32_t>(cards.size()));
      EvidenceMask query(static_cast<std::int32_t>(cards.size()));
      EvidenceMask both(static_cast<std::int32_t>(cards.size()));
      for (std::size_t v = 0; v < cards.size(); ++v) {
        const std::int32_t xv = static_cast<std::int32_t>(rng.next_below(cards[v]));
        if (v % 2 == 0) {
          given.observe(static_cast<std::int32_t>(v), xv);
        } else {
          query.observe(static_cast<std::int32_t>(v), xv);
        }
        both.observe(static_cast<std::int32_t>(v), xv);
      }
      const double lhs = log_marginal(c, both);
      const double rhs = log_marginal(c, given) + conditional(c, query, given);
      ok = ok && std::abs(lhs - rhs) <= 1e-10;
    }
    verdict(ok, "chain rule holds");
  }

  if (failures > 0) {
    std::cout << failures << " check(s) failed" << std::endl;
    return 2;
  }
  std::cout << "all checks passed" << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tractable-inference planning toolkit: collect offline data, train a window "
               "model, evaluate planner policies."};
  app.require_subcommand(1);
  app.set_version_flag("--version", "0.1.0");

  CollectOpts taxi_opts;
  taxi_opts.q_episodes = 10000;
  taxi_opts.alpha = 0.25;
  taxi_opts.epsilon = 0.3;
  taxi_opts.max_rollouts = 100000;
  taxi_opts.max_steps = 300;
  CLI::App* collect_taxi = app.add_subcommand(
      "collect-taxi", "Q-learn a taxi behavior policy and record noised successful episodes");
  add_collect_options(collect_taxi, taxi_opts, true, "--epsilon");

  CollectOpts lake_opts;
  lake_opts.q_episodes = 30000;
  lake_opts.alpha = 0.1;
  lake_opts.epsilon = 0.5;
  lake_opts.max_steps = 100;
  // Lake canon: the intended direction lands with probability 1/3, each
  // perpendicular with 1/3.
  lake_opts.slip = 2.0 / 3.0;
  // The lake pays only +1 at the goal: optimistic initialization is what
  // drives exploration there.
  lake_opts.init_q = 1.0;
  CLI::App* collect_lake = app.add_subcommand(
      "collect-lake",
      "Q-learn a frozen-lake behavior policy and record unfiltered noised episodes");
  add_collect_options(collect_lake, lake_opts, false, "--epsilon,--lake-eps");

  TrainOpts train_opts;
  CLI::App* train = app.add_subcommand("train-pc", "tokenize trajectories and fit the circuit");
  train_opts.opt["data"] =
      train->add_option("--data", train_opts.data, "trajectory .jsonl file")->required();
  train_opts.opt["env"] =
      train->add_option("--env", train_opts.env, "environment the data came from (taxi|lake)")
          ->required();
  train_opts.opt["out"] = train->add_option("--out", train_opts.out, "output directory");
  train_opts.opt["config"] =
      train->add_option("--config", train_opts.config, "JSON file with option defaults");
  train_opts.opt["seed"] = train->add_option("--seed", train_opts.seed, "random seed");
  train_opts.opt["latents"] =
      train->add_option("--latents", train_opts.latents, "mixture components per tree node");
  train_opts.opt["epochs"] = train->add_option("--epochs", train_opts.epochs, "EM epochs");
  train_opts.opt["pseudocount"] =
      train->add_option("--pseudocount", train_opts.pseudocount, "EM smoothing pseudocount");
  train_opts.opt["early-stop"] = train->add_option(
      "--early-stop", train_opts.early_stop, "stop when the epoch gain drops below this");
  train_opts.opt["workers"] = train->add_option("--workers", train_opts.workers, "EM threads");
  train_opts.opt["gamma"] =
      train->add_option("--gamma", train_opts.gamma, "return-to-go labeling discount");
  train_opts.opt["n-steps"] =
      train->add_option("--n-steps", train_opts.n_steps, "window length in steps");
  train_opts.opt["bin-mode"] = train->add_option(
      "--bin-mode", train_opts.bin_mode, "value binning: auto, exact or quantile");
  train_opts.opt["quantile-bins"] = train->add_option(
      "--quantile-bins", train_opts.quantile_bins, "bin budget in quantile mode");

  EvalOpts eval_opts;
  CLI::App* eval_cmd = app.add_subcommand("eval", "run a planner policy and write reports");
  eval_opts.opt["model"] =
      eval_cmd->add_option("--model", eval_opts.model, "trained circuit file")->required();
  eval_opts.opt["meta"] =
      eval_cmd->add_option("--meta", eval_opts.meta_path, "dataset metadata file")->required();
  eval_opts.opt["env"] =
      eval_cmd->add_option("--env", eval_opts.env, "environment (taxi|lake)")->required();
  eval_opts.opt["policy"] = eval_cmd->add_option(
      "--policy", eval_opts.policy, "s-trifle, m-trifle or tt-baseline");
  eval_opts.opt["out"] = eval_cmd->add_option("--out", eval_opts.out, "output directory");
  eval_opts.opt["config"] =
      eval_cmd->add_option("--config", eval_opts.config, "JSON file with option defaults");
  eval_opts.opt["episodes"] =
      eval_cmd->add_option("--episodes", eval_opts.episodes, "episodes to play");
  eval_opts.opt["seed"] = eval_cmd->add_option("--seed", eval_opts.seed, "random seed");
  eval_opts.opt["workers"] =
      eval_cmd->add_option("--workers", eval_opts.workers, "parallel episode workers");
  eval_opts.opt["constraint"] =
      eval_cmd->add_option("--constraint", eval_opts.constraint, "allowed actions (comma list)")
          ->delimiter(',');
  eval_opts.opt["delta"] = eval_cmd->add_option("--delta,--epsilon", eval_opts.delta,
                                                "tail mass excluded by the threshold");
  eval_opts.opt["beams"] = eval_cmd->add_option("--beams", eval_opts.beams, "beam count");
  eval_opts.opt["horizon"] =
      eval_cmd->add_option("--horizon", eval_opts.horizon, "action tokens per plan");
  eval_opts.opt["lookahead"] =
      eval_cmd->add_option("--lookahead", eval_opts.lookahead, "reward steps before bootstrap");
  eval_opts.opt["expand"] =
      eval_cmd->add_option("--expand", eval_opts.expand, "replicas per beam per round");
  eval_opts.opt["mc-rollouts"] = eval_cmd->add_option(
      "--mc-rollouts", eval_opts.mc_rollouts, "baseline Monte-Carlo rollouts per score");
  eval_opts.opt["conv-bins"] = eval_cmd->add_option(
      "--conv-bins", eval_opts.conv_bins, "re-binning of convolved values (0 = exact)");
  eval_opts.opt["pad-short-history"] = eval_cmd->add_flag(
      "--pad-short-history", eval_opts.pad_short_history, "fix the decision slot from step 0");
  eval_opts.opt["slip"] =
      eval_cmd->add_option("--slip", eval_opts.slip, "environment slip probability");
  eval_opts.opt["max-steps"] =
      eval_cmd->add_option("--max-steps", eval_opts.max_steps, "episode step cap (0 = default)");
  eval_opts.opt["depot-starts"] = eval_cmd->add_flag(
      "--depot-starts", eval_opts.depot_starts, "taxi passenger/destination from the four depots");

  std::string diag_model;
  std::string diag_meta;
  CLI::App* diagnose = app.add_subcommand("diagnose", "print model structure and sanity checks");
  diagnose->add_option("--model", diag_model, "trained circuit file")->required();
  diagnose->add_option("--meta", diag_meta, "dataset metadata file");

  std::uint64_t check_seed = 0;
  CLI::App* oracle = app.add_subcommand(
      "oracle-check", "train a toy model and verify inference identities end to end");
  oracle->add_option("--seed", check_seed, "random seed");

  // Exit codes: 0 success, 1 usage error, 2 runtime failure.
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*collect_taxi) {
      apply_collect_config(taxi_opts);
      TaxiEnv env(taxi_opts.slip, taxi_opts.max_steps, taxi_opts.depot_starts);
      run_collect(env, taxi_opts, "taxi", true);
    } else if (*collect_lake) {
      apply_collect_config(lake_opts);
      LakeEnv env(lake_opts.slip, lake_opts.max_steps);
      run_collect(env, lake_opts, "lake", false);
    } else if (*train) {
      run_train(train_opts);
    } else if (*eval_cmd) {
      run_eval_cmd(eval_opts);
    } else if (*diagnose) {
      run_diagnose(diag_model, diag_meta);
    } else if (*oracle) {
      return run_oracle_check(check_seed);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
