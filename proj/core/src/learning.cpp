#include "trifle/learning.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kernel.hpp"

namespace trifle {
namespace {

void validate_tokens(const TokenMatrix& data, const std::vector<std::int32_t>& var_card,
                     const char* who) {
  const auto n_vars = static_cast<std::int32_t>(var_card.size());
  if (n_vars <= 0) throw std::invalid_argument(std::string(who) + ": no variables");
  if (data.n_cols != n_vars) {
    throw std::invalid_argument(std::string(who) + ": data width does not match variable count");
  }
  if (data.n_rows() <= 0) throw std::invalid_argument(std::string(who) + ": empty dataset");
  const std::int64_t rows = data.n_rows();
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int32_t* row = data.row(r);
    for (std::int32_t v = 0; v < n_vars; ++v) {
      if (row[v] < 0 || row[v] >= var_card[v]) {
        throw std::invalid_argument(std::string(who) + ": token out of range for its variable");
      }
    }
  }
}

struct DisjointSet {
  std::vector<std::int32_t> parent;
  explicit DisjointSet(std::int32_t n) : parent(n) {
    for (std::int32_t i = 0; i < n; ++i) parent[i] = i;
  }
  std::int32_t find(std::int32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  bool unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[b] = a;
    return true;
  }
};

// Mutual information from a smoothed dense joint table. Marginals are derived
// from the same smoothed table so the estimate is a proper MI (nonnegative).
double mi_dense(const std::vector<std::int64_t>& joint, const std::vector<std::int64_t>& mi_cnt,
                const std::vector<std::int64_t>& mj_cnt, std::int64_t n, double alpha) {
  const auto ci = static_cast<std::int64_t>(mi_cnt.size());
  const auto cj = static_cast<std::int64_t>(mj_cnt.size());
  const double total = static_cast<double>(n) + alpha * static_cast<double>(ci * cj);
  double mi = 0.0;
  for (std::int64_t x = 0; x < ci; ++x) {
    const double px = (static_cast<double>(mi_cnt[x]) + alpha * static_cast<double>(cj)) / total;
    if (px == 0.0) continue;
    for (std::int64_t y = 0; y < cj; ++y) {
      const double nxy = static_cast<double>(joint[x * cj + y]) + alpha;
      if (nxy == 0.0) continue;
      const double py = (static_cast<double>(mj_cnt[y]) + alpha * static_cast<double>(ci)) / total;
      const double pxy = nxy / total;
      mi += pxy * std::log(pxy / (px * py));
    }
  }
  return mi;
}

// Plug-in mutual information over observed cells only; used when the joint
// table would be too large to materialize. Cells are visited in sorted key
// order so the floating-point sum is reproducible.
double mi_sparse(const std::unordered_map<std::int64_t, std::int64_t>& joint,
                 const std::vector<std::int64_t>& mi_cnt, const std::vector<std::int64_t>& mj_cnt,
                 std::int64_t n, std::int64_t cj) {
  std::vector<std::pair<std::int64_t, std::int64_t>> cells(joint.begin(), joint.end());
  std::sort(cells.begin(), cells.end());
  const double total = static_cast<double>(n);
  double mi = 0.0;
  for (const auto& [key, cnt] : cells) {
    const std::int64_t x = key / cj;
    const std::int64_t y = key % cj;
    const double pxy = static_cast<double>(cnt) / total;
    const double px = static_cast<double>(mi_cnt[x]) / total;
    const double py = static_cast<double>(mj_cnt[y]) / total;
    mi += pxy * std::log(pxy / (px * py));
  }
  return std::max(mi, 0.0);
}

}  // namespace

ChowLiuTree chow_liu(const TokenMatrix& data, const std::vector<std::int32_t>& var_card,
                     double pseudocount, std::int64_t dense_cell_cap) {
  validate_tokens(data, var_card, "chow_liu");
  if (pseudocount < 0.0) throw std::invalid_argument("chow_liu: negative pseudocount");
  const auto n_vars = static_cast<std::int32_t>(var_card.size());
  const std::int64_t rows = data.n_rows();

  std::vector<std::vector<std::int64_t>> margin(n_vars);
  for (std::int32_t v = 0; v < n_vars; ++v) margin[v].assign(var_card[v], 0);
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int32_t* row = data.row(r);
    for (std::int32_t v = 0; v < n_vars; ++v) ++margin[v][row[v]];
  }

  struct ScoredEdge {
    double mi;
    std::int32_t i, j;
  };
  std::vector<ScoredEdge> scored;
  scored.reserve(static_cast<std::size_t>(n_vars) * (n_vars - 1) / 2);
  std::vector<std::int64_t> dense;
  for (std::int32_t i = 0; i < n_vars; ++i) {
    for (std::int32_t j = i + 1; j < n_vars; ++j) {
      const std::int64_t ci = var_card[i];
      const std::int64_t cj = var_card[j];
      double mi = 0.0;
      if (ci * cj <= dense_cell_cap) {
        dense.assign(static_cast<std::size_t>(ci * cj), 0);
        for (std::int64_t r = 0; r < rows; ++r) {
          const std::int32_t* row = data.row(r);
          ++dense[static_cast<std::int64_t>(row[i]) * cj + row[j]];
        }
        mi = mi_dense(dense, margin[i], margin[j], rows, pseudocount);
      } else {
        std::unordered_map<std::int64_t, std::int64_t> joint;
        joint.reserve(static_cast<std::size_t>(std::min<std::int64_t>(rows, 1 << 20)));
        for (std::int64_t r = 0; r < rows; ++r) {
          const std::int32_t* row = data.row(r);
          ++joint[static_cast<std::int64_t>(row[i]) * cj + row[j]];
        }
        mi = mi_sparse(joint, margin[i], margin[j], rows, cj);
      }
      scored.push_back({mi, i, j});
    }
  }

  std::sort(scored.begin(), scored.end(), [](const ScoredEdge& a, const ScoredEdge& b) {
    if (a.mi != b.mi) return a.mi > b.mi;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });

  ChowLiuTree tree;
  tree.n_vars = n_vars;
  tree.var_card = var_card;
  tree.parent.assign(n_vars, -1);
  DisjointSet ds(n_vars);
  std::vector<std::vector<std::int32_t>> adj(n_vars);
  for (const ScoredEdge& e : scored) {
    if (static_cast<std::int32_t>(tree.edges.size()) == n_vars - 1) break;
    if (!ds.unite(e.i, e.j)) continue;
    tree.edges.emplace_back(e.i, e.j);
    tree.edge_mi.push_back(e.mi);
    adj[e.i].push_back(e.j);
    adj[e.j].push_back(e.i);
  }

  // Orient away from variable 0.
  std::vector<std::int32_t> stack{0};
  std::vector<char> seen(n_vars, 0);
  seen[0] = 1;
  while (!stack.empty()) {
    const std::int32_t v = stack.back();
    stack.pop_back();
    for (std::int32_t u : adj[v]) {
      if (seen[u]) continue;
      seen[u] = 1;
      tree.parent[u] = v;
      stack.push_back(u);
    }
  }
  return tree;
}

Circuit compile_hclt(const ChowLiuTree& tree, std::int32_t n_latents) {
  const std::int32_t n_vars = tree.n_vars;
  if (n_vars <= 0) throw std::invalid_argument("compile_hclt: empty tree");
  if (n_latents < 1) throw std::invalid_argument("compile_hclt: n_latents must be positive");
  if (static_cast<std::int32_t>(tree.var_card.size()) != n_vars ||
      static_cast<std::int32_t>(tree.parent.size()) != n_vars) {
    throw std::invalid_argument("compile_hclt: inconsistent tree arrays");
  }
  if (tree.parent[0] != -1) throw std::invalid_argument("compile_hclt: tree must be rooted at 0");

  std::vector<std::vector<std::int32_t>> children(n_vars);
  for (std::int32_t v = 1; v < n_vars; ++v) {
    if (tree.parent[v] < 0 || tree.parent[v] >= n_vars || tree.parent[v] == v) {
      throw std::invalid_argument("compile_hclt: invalid parent pointer");
    }
    children[tree.parent[v]].push_back(v);
  }

  // Post-order over the variable tree, children in ascending order.
  std::vector<std::int32_t> order;
  order.reserve(n_vars);
  {
    std::vector<std::pair<std::int32_t, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      if (next < children[v].size()) {
        const std::int32_t c = children[v][next++];
        stack.emplace_back(c, 0);
      } else {
        order.push_back(v);
        stack.pop_back();
      }
    }
    if (static_cast<std::int32_t>(order.size()) != n_vars) {
      throw std::invalid_argument("compile_hclt: tree is not connected");
    }
  }

  const std::int32_t m_lat = n_latents;
  std::vector<NodeSpec> nodes;
  // component[v][m] is the node representing latent state m of tree node v.
  std::vector<std::vector<std::int32_t>> component(n_vars);

  for (const std::int32_t v : order) {
    const std::int32_t card = tree.var_card[v];
    const std::vector<double> uniform_obs(card, 1.0 / card);
    std::vector<std::int32_t> inputs(m_lat);
    for (std::int32_t m = 0; m < m_lat; ++m) {
      NodeSpec in;
      in.kind = NodeKind::input;
      in.var = v;
      in.dist = uniform_obs;
      inputs[m] = static_cast<std::int32_t>(nodes.size());
      nodes.push_back(std::move(in));
    }
    if (children[v].empty()) {
      component[v] = std::move(inputs);
      continue;
    }
    const std::vector<double> uniform_lat(m_lat, 1.0 / m_lat);
    std::vector<std::vector<std::int32_t>> mix(children[v].size(), std::vector<std::int32_t>(m_lat));
    for (std::size_t ci = 0; ci < children[v].size(); ++ci) {
      const std::int32_t c = children[v][ci];
      for (std::int32_t m = 0; m < m_lat; ++m) {
        NodeSpec s;
        s.kind = NodeKind::sum;
        s.children = component[c];
        s.weights = uniform_lat;
        mix[ci][m] = static_cast<std::int32_t>(nodes.size());
        nodes.push_back(std::move(s));
      }
    }
    component[v].resize(m_lat);
    for (std::int32_t m = 0; m < m_lat; ++m) {
      NodeSpec p;
      p.kind = NodeKind::product;
      p.children.push_back(inputs[m]);
      for (std::size_t ci = 0; ci < children[v].size(); ++ci) p.children.push_back(mix[ci][m]);
      component[v][m] = static_cast<std::int32_t>(nodes.size());
      nodes.push_back(std::move(p));
    }
  }

  // A single variable with one latent state is just its input node; anything
  // else gets a root mixture over the top component's latent states.
  if (!(n_vars == 1 && m_lat == 1)) {
    NodeSpec root;
    root.kind = NodeKind::sum;
    root.children = component[0];
    root.weights.assign(m_lat, 1.0 / m_lat);
    nodes.push_back(std::move(root));
  }
  return build_circuit(tree.var_card, nodes);
}

void init_params(Circuit& c, std::uint64_t seed) {
  Rng rng(seed);
  auto redraw = [&rng](double* w, std::int64_t k) {
    if (k == 1) {
      w[0] = 1.0;
      return;
    }
    double total = 0.0;
    for (std::int64_t i = 0; i < k; ++i) {
      // -log(1 - U) with U in [0, 1) is a strictly positive Exp(1) draw.
      w[i] = -std::log1p(-rng.next_double());
      total += w[i];
    }
    for (std::int64_t i = 0; i < k; ++i) w[i] /= total;
  };
  for (std::int32_t n = 0; n < c.n_nodes(); ++n) {
    if (c.kind[n] == NodeKind::sum) {
      redraw(c.weight.data() + c.child_off[n], c.n_children(n));
    } else if (c.kind[n] == NodeKind::input) {
      redraw(c.param.data() + c.param_off[n], c.param_off[n + 1] - c.param_off[n]);
    }
  }
}

void TrainReport::write_csv(std::ostream& out) const {
  out << "epoch,avg_ll\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < avg_log_likelihood.size(); ++i) {
    out << i << ',' << avg_log_likelihood[i] << '\n';
  }
}

void TrainReport::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("TrainReport: cannot open " + path);
  write_csv(out);
  if (!out) throw std::runtime_error("TrainReport: write failed for " + path);
}

namespace {

// Scratch for one E-step block: expected traversals per sum edge, expected
// activations per input parameter, block log-likelihood.
struct EStepBlock {
  std::vector<double> edge_stat;
  std::vector<double> in_stat;
  double ll = 0.0;

  void reset(std::size_t n_edges, std::size_t n_params) {
    edge_stat.assign(n_edges, 0.0);
    in_stat.assign(n_params, 0.0);
    ll = 0.0;
  }
};

struct InputSlot {
  std::int32_t node;
  std::int32_t var;
  std::int64_t off;
};

void run_block(const Circuit& c, const TokenMatrix& data, std::int64_t row_begin,
               std::int64_t row_end, const std::vector<InputSlot>& slots, EStepBlock& blk,
               std::vector<double>& leaf, std::vector<double>& mant,
               std::vector<std::int32_t>& expo, std::vector<double>& flow) {
  for (std::int64_t r = row_begin; r < row_end; ++r) {
    const std::int32_t* row = data.row(r);
    for (const InputSlot& s : slots) leaf[s.node] = c.param[s.off + row[s.var]];
    detail::upward_sweep(c, leaf, mant, expo);
    if (mant[c.root] == 0.0) {
      throw std::runtime_error("em_fit: a sample has zero probability under the current model");
    }
    blk.ll += detail::ext_log(mant[c.root], expo[c.root]);
    detail::downward_sweep<true>(c, mant, expo, flow, blk.edge_stat.data());
    for (const InputSlot& s : slots) blk.in_stat[s.off + row[s.var]] += flow[s.node];
  }
}

}  // namespace

TrainReport em_fit(Circuit& c, const TokenMatrix& data, const EMConfig& cfg) {
  validate_tokens(data, c.var_card, "em_fit");
  if (cfg.epochs < 1) throw std::invalid_argument("em_fit: epochs must be positive");
  if (cfg.pseudocount < 0.0) throw std::invalid_argument("em_fit: negative pseudocount");
  if (cfg.workers < 1) throw std::invalid_argument("em_fit: workers must be positive");
  if (cfg.block_size < 1) throw std::invalid_argument("em_fit: block_size must be positive");

  const std::int64_t rows = data.n_rows();
  const std::size_t n_edges = c.child.size();
  const std::size_t n_params = c.param.size();
  const auto n_nodes = static_cast<std::size_t>(c.n_nodes());

  std::vector<InputSlot> slots;
  for (std::int32_t n = 0; n < c.n_nodes(); ++n) {
    if (c.kind[n] == NodeKind::input) slots.push_back({n, c.input_var[n], c.param_off[n]});
  }

  const std::int64_t block = cfg.block_size;
  const std::int64_t n_blocks = (rows + block - 1) / block;
  const std::int32_t workers =
      static_cast<std::int32_t>(std::min<std::int64_t>(cfg.workers, n_blocks));

  EStepBlock global;
  TrainReport report;

  for (std::int32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    global.reset(n_edges, n_params);
    double ll_carry = 0.0;  // Kahan compensation for the cross-block fold

    auto fold = [&](const EStepBlock& blk) {
      for (std::size_t i = 0; i < n_edges; ++i) global.edge_stat[i] += blk.edge_stat[i];
      for (std::size_t i = 0; i < n_params; ++i) global.in_stat[i] += blk.in_stat[i];
      const double y = blk.ll - ll_carry;
      const double t = global.ll + y;
      ll_carry = (t - global.ll) - y;
      global.ll = t;
    };

    if (workers <= 1) {
      EStepBlock blk;
      std::vector<double> leaf(n_nodes), mant(n_nodes), flow(n_nodes);
      std::vector<std::int32_t> expo(n_nodes);
      for (std::int64_t b = 0; b < n_blocks; ++b) {
        blk.reset(n_edges, n_params);
        run_block(c, data, b * block, std::min(rows, (b + 1) * block), slots, blk, leaf, mant,
                  expo, flow);
        fold(blk);
      }
    } else {
      // Workers claim blocks from a shared counter but fold strictly in block
      // order, so the accumulated statistics are bitwise identical for any
      // worker count.
      std::atomic<std::int64_t> next_claim{0};
      std::int64_t next_fold = 0;
      std::mutex mu;
      std::condition_variable cv;
      std::exception_ptr first_error;
      bool aborted = false;

      auto work = [&]() {
        EStepBlock blk;
        std::vector<double> leaf(n_nodes), mant(n_nodes), flow(n_nodes);
        std::vector<std::int32_t> expo(n_nodes);
        try {
          while (true) {
            const std::int64_t b = next_claim.fetch_add(1);
            if (b >= n_blocks) return;
            blk.reset(n_edges, n_params);
            run_block(c, data, b * block, std::min(rows, (b + 1) * block), slots, blk, leaf,
                      mant, expo, flow);
            std::unique_lock<std::mutex> lock(mu);
            cv.wait(lock, [&] { return aborted || next_fold == b; });
            if (aborted) return;
            fold(blk);
            ++next_fold;
            cv.notify_all();
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first_error) first_error = std::current_exception();
          aborted = true;
          cv.notify_all();
        }
      };

      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (std::int32_t w = 0; w < workers; ++w) pool.emplace_back(work);
      for (auto& t : pool) t.join();
      if (first_error) std::rethrow_exception(first_error);
    }

    report.avg_log_likelihood.push_back(global.ll / static_cast<double>(rows));

    // M-step: normalized (statistic + pseudocount), keeping groups untouched
    // when they received neither mass nor pseudocount.
    for (std::int32_t n = 0; n < c.n_nodes(); ++n) {
      if (c.kind[n] == NodeKind::sum) {
        const std::int64_t lo = c.child_off[n];
        const std::int64_t hi = c.child_off[n + 1];
        double total = 0.0;
        for (std::int64_t e = lo; e < hi; ++e) total += global.edge_stat[e] + cfg.pseudocount;
        if (total <= 0.0) continue;
        for (std::int64_t e = lo; e < hi; ++e) {
          c.weight[e] = (global.edge_stat[e] + cfg.pseudocount) / total;
        }
      } else if (c.kind[n] == NodeKind::input) {
        const std::int64_t lo = c.param_off[n];
        const std::int64_t hi = c.param_off[n + 1];
        double total = 0.0;
        for (std::int64_t i = lo; i < hi; ++i) total += global.in_stat[i] + cfg.pseudocount;
        if (total <= 0.0) continue;
        for (std::int64_t i = lo; i < hi; ++i) {
          c.param[i] = (global.in_stat[i] + cfg.pseudocount) / total;
        }
      }
    }

    const std::size_t k = report.avg_log_likelihood.size();
    if (cfg.early_stop_delta > 0.0 && k >= 2 &&
        report.avg_log_likelihood[k - 1] - report.avg_log_likelihood[k - 2] <
            cfg.early_stop_delta) {
      report.early_stopped = true;
      break;
    }
  }
  report.epochs_run = static_cast<std::int32_t>(report.avg_log_likelihood.size());
  return report;
}

}  // namespace trifle
