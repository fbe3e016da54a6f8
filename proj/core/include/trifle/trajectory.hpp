#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trifle/inference.hpp"
#include "trifle/tokens.hpp"

namespace trifle {

// One recorded episode: aligned per-step arrays of equal length.
struct RawTrajectory {
  std::vector<std::int32_t> states;
  std::vector<std::int32_t> actions;
  std::vector<double> rewards;

  std::int32_t length() const { return static_cast<std::int32_t>(states.size()); }
};

// Discounted return-to-go labels: g[t] = r[t] + gamma * g[t+1], g[L] = 0.
std::vector<double> rtg_labels(const std::vector<double>& rewards, double gamma);

// Maps real values to a small set of categories and back. Bins are defined by
// interior edges; category k covers (edge[k-1], edge[k]] going left to right,
// and decodes to a representative value.
//
// `exact` keeps every distinct value as its own category (representative =
// the value itself), which is lossless for environments with a small reward
// alphabet. `quantile` groups sorted samples into roughly equal-mass bins
// (representative = mean of the samples in the bin). Either way, encode() is
// nearest-bin by value, so values unseen at fit time still map sensibly.
class BinDictionary {
 public:
  BinDictionary() = default;

  static BinDictionary exact(const std::vector<double>& samples);
  static BinDictionary quantile(const std::vector<double>& samples, std::int32_t max_bins);
  static BinDictionary from_parts(std::vector<double> representatives, std::vector<double> edges);

  std::int32_t n_bins() const { return static_cast<std::int32_t>(reps_.size()); }
  std::int32_t encode(double v) const;
  double decode(std::int32_t bin) const;
  const std::vector<double>& representatives() const { return reps_; }
  const std::vector<double>& edges() const { return edges_; }

  bool operator==(const BinDictionary&) const = default;

 private:
  std::vector<double> reps_;   // ascending representative per bin
  std::vector<double> edges_;  // n_bins - 1 ascending interior cut points
};

// Layout of one flattened context window: n_steps time steps, each
// contributing the four variables (state, action, reward, return-to-go) in
// that order, so variable index = 4 * step + field. Every variable gets one
// extra trailing category that marks steps beyond the episode boundary.
struct WindowLayout {
  enum Field : std::int32_t { state = 0, action = 1, reward = 2, rtg = 3 };

  std::int32_t n_steps = 7;
  std::int32_t state_card = 0;   // environment cardinality, padding excluded
  std::int32_t action_card = 0;
  BinDictionary reward_bins;
  BinDictionary rtg_bins;

  std::int32_t n_vars() const { return 4 * n_steps; }
  std::int32_t var(std::int32_t step, Field f) const;
  std::int32_t field_card(Field f) const;      // real categories only
  std::int32_t pad_category(Field f) const { return field_card(f); }
  std::vector<std::int32_t> var_cards() const; // field_card + 1 per variable

  // Value maps over the full category range including the padding category,
  // which decodes to 0 (an ended episode accrues nothing further).
  ValueMap reward_values() const;
  ValueMap rtg_values() const;

  bool operator==(const WindowLayout&) const = default;
};

enum class BinMode : std::int32_t {
  auto_detect,  // exact when the distinct values fit in quantile_bins
  exact,
  quantile,
};

struct TokenizeConfig {
  std::int32_t n_steps = 7;
  std::int32_t state_card = 0;
  std::int32_t action_card = 0;
  double gamma = 1.0;
  BinMode bin_mode = BinMode::auto_detect;
  std::int32_t quantile_bins = 100;
};

// Fits reward / return-to-go dictionaries over the whole corpus and returns
// the resulting window layout. Throws std::invalid_argument on inconsistent
// trajectories or out-of-range states/actions.
WindowLayout fit_layout(const std::vector<RawTrajectory>& trajs, const TokenizeConfig& cfg);

// Slides a length-n_steps window with stride one over each labeled
// trajectory (a trajectory shorter than the window yields a single
// front-padded window) and encodes every step into the layout's categories.
TokenMatrix make_windows(const std::vector<RawTrajectory>& trajs, const WindowLayout& layout,
                         double gamma);

// Everything needed to reproduce a tokenization and to decode planner queries.
struct DatasetMeta {
  WindowLayout layout;
  double gamma = 1.0;

  bool operator==(const DatasetMeta&) const = default;
};

// Trajectory corpus as JSON-lines (one episode per line) plus a JSON metadata
// sidecar. Loaders validate shape and version and throw std::runtime_error on
// malformed input.
void save_trajectories(const std::vector<RawTrajectory>& trajs, const std::string& path);
std::vector<RawTrajectory> load_trajectories(const std::string& path);
void save_meta(const DatasetMeta& meta, const std::string& path);
DatasetMeta load_meta(const std::string& path);

}  // namespace trifle
