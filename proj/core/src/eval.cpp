#include "trifle/eval.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace trifle {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (x.size() != y.size()) throw std::invalid_argument("pearson: size mismatch");
  const std::size_t n = x.size();
  if (n < 2) return nan;
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0;
  double syy = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  const double denom = std::sqrt(sxx) * std::sqrt(syy);
  if (!(denom > 0.0)) return nan;
  return sxy / denom;
}

EvalSummary summarize(std::vector<EpisodeResult> episodes) {
  EvalSummary s;
  s.episodes = std::move(episodes);
  const std::size_t n = s.episodes.size();
  if (n == 0) return s;
  std::vector<double> preds;
  std::vector<double> rets;
  preds.reserve(n);
  rets.reserve(n);
  double opt_sum = 0.0;
  std::int64_t opt_count = 0;
  for (const EpisodeResult& ep : s.episodes) {
    s.mean_return += ep.ret;
    s.mean_length += ep.length;
    s.success_rate += ep.succeeded ? 1.0 : 0.0;
    preds.push_back(ep.mean_predicted);
    rets.push_back(ep.ret);
    for (const StepRecord& st : ep.steps) {
      opt_sum += st.optimality;
      ++opt_count;
    }
  }
  s.mean_return /= static_cast<double>(n);
  s.mean_length /= static_cast<double>(n);
  s.success_rate /= static_cast<double>(n);
  s.mean_optimality = opt_count > 0 ? opt_sum / static_cast<double>(opt_count) : 0.0;
  s.correlation = pearson(preds, rets);
  return s;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << std::setprecision(17);
  return out;
}

}  // namespace

void write_episodes_csv(const EvalSummary& summary, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "episode,return,length,succeeded,mean_predicted,mean_optimality\n";
  for (const EpisodeResult& ep : summary.episodes) {
    out << ep.episode << ',' << ep.ret << ',' << ep.length << ',' << (ep.succeeded ? 1 : 0) << ','
        << ep.mean_predicted << ',' << ep.mean_optimality << '\n';
  }
  if (!out) throw std::runtime_error("failed while writing: " + path);
}

void write_pairs_csv(const EvalSummary& summary, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "episode,t,state,action,reward,predicted_value,optimality,realized_rtg\n";
  for (const EpisodeResult& ep : summary.episodes) {
    for (const StepRecord& st : ep.steps) {
      out << ep.episode << ',' << st.t << ',' << st.state << ',' << st.action << ',' << st.reward
          << ',' << st.predicted_value << ',' << st.optimality << ',' << st.realized_rtg << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed while writing: " + path);
}

}  // namespace trifle
