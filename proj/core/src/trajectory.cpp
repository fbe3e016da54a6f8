#include "trifle/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace trifle {

std::vector<double> rtg_labels(const std::vector<double>& rewards, double gamma) {
  std::vector<double> g(rewards.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

namespace {

void require_samples(const std::vector<double>& samples, const char* who) {
  if (samples.empty()) throw std::invalid_argument(std::string(who) + ": no samples");
  for (double v : samples) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(who) + ": non-finite sample");
  }
}

}  // namespace

BinDictionary BinDictionary::exact(const std::vector<double>& samples) {
  require_samples(samples, "BinDictionary::exact");
  std::vector<double> reps = samples;
  std::sort(reps.begin(), reps.end());
  reps.erase(std::unique(reps.begin(), reps.end()), reps.end());
  std::vector<double> edges;
  edges.reserve(reps.size() - 1);
  for (std::size_t i = 0; i + 1 < reps.size(); ++i) {
    edges.push_back(0.5 * (reps[i] + reps[i + 1]));
  }
  return from_parts(std::move(reps), std::move(edges));
}

BinDictionary BinDictionary::quantile(const std::vector<double>& samples, std::int32_t max_bins) {
  require_samples(samples, "BinDictionary::quantile");
  if (max_bins < 1) throw std::invalid_argument("BinDictionary::quantile: max_bins must be >= 1");
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());

  // Run-length encode the sorted samples; bins never split a run of equal
  // values, so they are well defined even with heavy duplication.
  std::vector<std::pair<double, std::int64_t>> runs;
  for (double v : sorted) {
    if (!runs.empty() && runs.back().first == v) {
      ++runs.back().second;
    } else {
      runs.emplace_back(v, 1);
    }
  }

  // Cumulative-quota fill: close a bin once the running total reaches
  // per_bin * (#bins closed + 1), except that the final bin absorbs
  // everything left. Bins therefore hold roughly equal sample mass.
  const double per_bin = static_cast<double>(sorted.size()) / static_cast<double>(max_bins);
  struct Span {
    double lo = 0.0, hi = 0.0, sum = 0.0, mass = 0.0;
  };
  std::vector<Span> spans;
  Span cur;
  bool open = false;
  double filled = 0.0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto [value, count] = runs[i];
    if (!open) {
      cur = Span{value, value, 0.0, 0.0};
      open = true;
    }
    cur.hi = value;
    cur.sum += value * static_cast<double>(count);
    cur.mass += static_cast<double>(count);
    filled += static_cast<double>(count);
    const bool quota = filled >= per_bin * static_cast<double>(spans.size() + 1) - 0.5;
    const bool last = i + 1 == runs.size();
    if (last || (quota && static_cast<std::int32_t>(spans.size()) + 1 < max_bins)) {
      spans.push_back(cur);
      open = false;
    }
  }

  std::vector<double> reps, edges;
  reps.reserve(spans.size());
  for (const Span& s : spans) reps.push_back(s.sum / s.mass);
  for (std::size_t b = 0; b + 1 < spans.size(); ++b) {
    edges.push_back(0.5 * (spans[b].hi + spans[b + 1].lo));
  }
  return from_parts(std::move(reps), std::move(edges));
}

BinDictionary BinDictionary::from_parts(std::vector<double> representatives,
                                        std::vector<double> edges) {
  if (representatives.empty()) {
    throw std::invalid_argument("BinDictionary: at least one bin required");
  }
  if (edges.size() + 1 != representatives.size()) {
    throw std::invalid_argument("BinDictionary: need exactly n_bins - 1 edges");
  }
  if (!std::is_sorted(representatives.begin(), representatives.end()) ||
      !std::is_sorted(edges.begin(), edges.end())) {
    throw std::invalid_argument("BinDictionary: bins must be ascending");
  }
  for (double v : representatives) {
    if (!std::isfinite(v)) throw std::invalid_argument("BinDictionary: non-finite representative");
  }
  BinDictionary d;
  d.reps_ = std::move(representatives);
  d.edges_ = std::move(edges);
  return d;
}

std::int32_t BinDictionary::encode(double v) const {
  if (reps_.empty()) throw std::logic_error("BinDictionary::encode: dictionary not fitted");
  if (!std::isfinite(v)) throw std::invalid_argument("BinDictionary::encode: non-finite value");
  const auto it = std::lower_bound(edges_.begin(), edges_.end(), v);
  return static_cast<std::int32_t>(it - edges_.begin());
}

double BinDictionary::decode(std::int32_t bin) const {
  if (bin < 0 || bin >= n_bins()) {
    throw std::out_of_range("BinDictionary::decode: bin out of range");
  }
  return reps_[bin];
}

std::int32_t WindowLayout::var(std::int32_t step, Field f) const {
  if (step < 0 || step >= n_steps) throw std::out_of_range("WindowLayout::var: bad step");
  return 4 * step + static_cast<std::int32_t>(f);
}

std::int32_t WindowLayout::field_card(Field f) const {
  switch (f) {
    case Field::state:
      return state_card;
    case Field::action:
      return action_card;
    case Field::reward:
      return reward_bins.n_bins();
    case Field::rtg:
      return rtg_bins.n_bins();
  }
  throw std::invalid_argument("WindowLayout::field_card: bad field");
}

std::vector<std::int32_t> WindowLayout::var_cards() const {
  std::vector<std::int32_t> cards(n_vars());
  for (std::int32_t step = 0; step < n_steps; ++step) {
    for (const Field f : {Field::state, Field::action, Field::reward, Field::rtg}) {
      cards[var(step, f)] = field_card(f) + 1;
    }
  }
  return cards;
}

namespace {

ValueMap padded_values(const BinDictionary& bins) {
  ValueMap vm;
  vm.value = bins.representatives();
  vm.value.push_back(0.0);
  return vm;
}

}  // namespace

ValueMap WindowLayout::reward_values() const { return padded_values(reward_bins); }
ValueMap WindowLayout::rtg_values() const { return padded_values(rtg_bins); }

namespace {

void validate_trajs(const std::vector<RawTrajectory>& trajs, std::int32_t state_card,
                    std::int32_t action_card) {
  if (trajs.empty()) throw std::invalid_argument("tokenize: empty corpus");
  for (const RawTrajectory& t : trajs) {
    if (t.states.empty() || t.states.size() != t.actions.size() ||
        t.states.size() != t.rewards.size()) {
      throw std::invalid_argument("tokenize: trajectory arrays must be nonempty and aligned");
    }
    for (std::int32_t s : t.states) {
      if (s < 0 || s >= state_card) throw std::invalid_argument("tokenize: state out of range");
    }
    for (std::int32_t a : t.actions) {
      if (a < 0 || a >= action_card) throw std::invalid_argument("tokenize: action out of range");
    }
    for (double r : t.rewards) {
      if (!std::isfinite(r)) throw std::invalid_argument("tokenize: non-finite reward");
    }
  }
}

BinDictionary fit_bins(const std::vector<double>& samples, const TokenizeConfig& cfg) {
  if (cfg.bin_mode == BinMode::exact) return BinDictionary::exact(samples);
  if (cfg.bin_mode == BinMode::quantile) {
    return BinDictionary::quantile(samples, cfg.quantile_bins);
  }
  std::set<double> distinct(samples.begin(), samples.end());
  if (static_cast<std::int32_t>(distinct.size()) <= cfg.quantile_bins) {
    return BinDictionary::exact(samples);
  }
  return BinDictionary::quantile(samples, cfg.quantile_bins);
}

}  // namespace

WindowLayout fit_layout(const std::vector<RawTrajectory>& trajs, const TokenizeConfig& cfg) {
  if (cfg.n_steps < 1) throw std::invalid_argument("fit_layout: n_steps must be >= 1");
  if (cfg.state_card < 1 || cfg.action_card < 1) {
    throw std::invalid_argument("fit_layout: state/action cardinality required");
  }
  if (cfg.quantile_bins < 1) throw std::invalid_argument("fit_layout: quantile_bins must be >= 1");
  validate_trajs(trajs, cfg.state_card, cfg.action_card);

  std::vector<double> rewards, rtgs;
  for (const RawTrajectory& t : trajs) {
    rewards.insert(rewards.end(), t.rewards.begin(), t.rewards.end());
    const auto g = rtg_labels(t.rewards, cfg.gamma);
    rtgs.insert(rtgs.end(), g.begin(), g.end());
  }

  WindowLayout layout;
  layout.n_steps = cfg.n_steps;
  layout.state_card = cfg.state_card;
  layout.action_card = cfg.action_card;
  layout.reward_bins = fit_bins(rewards, cfg);
  layout.rtg_bins = fit_bins(rtgs, cfg);
  return layout;
}

TokenMatrix make_windows(const std::vector<RawTrajectory>& trajs, const WindowLayout& layout,
                         double gamma) {
  validate_trajs(trajs, layout.state_card, layout.action_card);
  if (layout.reward_bins.n_bins() == 0 || layout.rtg_bins.n_bins() == 0) {
    throw std::invalid_argument("make_windows: layout has unfitted dictionaries");
  }

  const std::int32_t k = layout.n_steps;
  TokenMatrix out;
  out.n_cols = layout.n_vars();

  std::vector<std::int32_t> row(out.n_cols);
  for (const RawTrajectory& t : trajs) {
    const std::int32_t len = t.length();
    const auto g = rtg_labels(t.rewards, gamma);
    // Stride-one starts; a short trajectory yields the single start len - k
    // (negative), which front-pads the window so the episode ends flush.
    const std::int32_t first = std::min(0, len - k);
    const std::int32_t last = len - k;
    for (std::int32_t start = first; start <= last; ++start) {
      for (std::int32_t slot = 0; slot < k; ++slot) {
        const std::int32_t step = start + slot;
        if (step < 0 || step >= len) {
          row[layout.var(slot, WindowLayout::state)] = layout.pad_category(WindowLayout::state);
          row[layout.var(slot, WindowLayout::action)] = layout.pad_category(WindowLayout::action);
          row[layout.var(slot, WindowLayout::reward)] = layout.pad_category(WindowLayout::reward);
          row[layout.var(slot, WindowLayout::rtg)] = layout.pad_category(WindowLayout::rtg);
          continue;
        }
        row[layout.var(slot, WindowLayout::state)] = t.states[step];
        row[layout.var(slot, WindowLayout::action)] = t.actions[step];
        row[layout.var(slot, WindowLayout::reward)] = layout.reward_bins.encode(t.rewards[step]);
        row[layout.var(slot, WindowLayout::rtg)] = layout.rtg_bins.encode(g[step]);
      }
      out.push_row(row);
    }
  }
  return out;
}

// --- JSON persistence --------------------------------------------------------

namespace {

using nlohmann::json;

json bins_to_json(const BinDictionary& d) {
  return json{{"representatives", d.representatives()}, {"edges", d.edges()}};
}

BinDictionary bins_from_json(const json& j) {
  if (!j.is_object() || !j.contains("representatives") || !j.contains("edges")) {
    throw std::runtime_error("meta: malformed bin dictionary");
  }
  return BinDictionary::from_parts(j.at("representatives").get<std::vector<double>>(),
                                   j.at("edges").get<std::vector<double>>());
}

}  // namespace

void save_trajectories(const std::vector<RawTrajectory>& trajs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_trajectories: cannot open " + path);
  for (const RawTrajectory& t : trajs) {
    const json line{{"states", t.states}, {"actions", t.actions}, {"rewards", t.rewards}};
    out << line.dump() << '\n';
  }
  if (!out) throw std::runtime_error("save_trajectories: write failed for " + path);
}

std::vector<RawTrajectory> load_trajectories(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_trajectories: cannot open " + path);
  std::vector<RawTrajectory> trajs;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("load_trajectories: " + path + " line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    if (!j.is_object() || !j.contains("states") || !j.contains("actions") ||
        !j.contains("rewards")) {
      throw std::runtime_error("load_trajectories: " + path + " line " + std::to_string(line_no) +
                               ": missing fields");
    }
    RawTrajectory t;
    try {
      t.states = j.at("states").get<std::vector<std::int32_t>>();
      t.actions = j.at("actions").get<std::vector<std::int32_t>>();
      t.rewards = j.at("rewards").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw std::runtime_error("load_trajectories: " + path + " line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    if (t.states.size() != t.actions.size() || t.states.size() != t.rewards.size()) {
      throw std::runtime_error("load_trajectories: " + path + " line " + std::to_string(line_no) +
                               ": misaligned arrays");
    }
    trajs.push_back(std::move(t));
  }
  return trajs;
}

void save_meta(const DatasetMeta& meta, const std::string& path) {
  const json j{
      {"format_version", 1},
      {"gamma", meta.gamma},
      {"layout",
       {{"n_steps", meta.layout.n_steps},
        {"state_card", meta.layout.state_card},
        {"action_card", meta.layout.action_card},
        {"reward_bins", bins_to_json(meta.layout.reward_bins)},
        {"rtg_bins", bins_to_json(meta.layout.rtg_bins)}}},
  };
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_meta: cannot open " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("save_meta: write failed for " + path);
}

DatasetMeta load_meta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_meta: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_meta: " + path + ": " + e.what());
  }
  if (!j.is_object() || j.value("format_version", -1) != 1) {
    throw std::runtime_error("load_meta: " + path + ": unsupported or missing format_version");
  }
  if (!j.contains("gamma") || !j.contains("layout")) {
    throw std::runtime_error("load_meta: " + path + ": missing fields");
  }
  const json& jl = j.at("layout");
  for (const char* key : {"n_steps", "state_card", "action_card", "reward_bins", "rtg_bins"}) {
    if (!jl.contains(key)) {
      throw std::runtime_error("load_meta: " + path + ": layout missing " + key);
    }
  }
  DatasetMeta meta;
  try {
    meta.gamma = j.at("gamma").get<double>();
    meta.layout.n_steps = jl.at("n_steps").get<std::int32_t>();
    meta.layout.state_card = jl.at("state_card").get<std::int32_t>();
    meta.layout.action_card = jl.at("action_card").get<std::int32_t>();
  } catch (const json::exception& e) {
    throw std::runtime_error("load_meta: " + path + ": " + e.what());
  }
  meta.layout.reward_bins = bins_from_json(jl.at("reward_bins"));
  meta.layout.rtg_bins = bins_from_json(jl.at("rtg_bins"));
  if (meta.layout.n_steps < 1 || meta.layout.state_card < 1 || meta.layout.action_card < 1) {
    throw std::runtime_error("load_meta: " + path + ": invalid layout dimensions");
  }
  return meta;
}

}  // namespace trifle
