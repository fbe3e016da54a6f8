#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <utility>
#include <vector>

#include "kernel.hpp"
#include "oracle.hpp"
#include "trifle/circuit.hpp"
#include "trifle/inference.hpp"
#include "trifle/learning.hpp"
#include "trifle/rng.hpp"

using namespace trifle;

namespace {

bool close_rel(double a, double b, double tol = 1e-9) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

// Tree-structured generating distribution over 5 variables,
// x0 - x1 - {x2, x3}, x3 - x4, with strong dependencies throughout.
struct ChainFixture {
  std::vector<std::int32_t> cards{2, 3, 2, 2, 3};
  test::JointTable joint;

  ChainFixture() {
    const std::array<double, 2> p0{0.3, 0.7};
    const double p1[2][3] = {{0.7, 0.2, 0.1}, {0.1, 0.2, 0.7}};
    const double p2[3][2] = {{0.9, 0.1}, {0.5, 0.5}, {0.1, 0.9}};
    const double p3[3][2] = {{0.8, 0.2}, {0.3, 0.7}, {0.1, 0.9}};
    const double p4[2][3] = {{0.6, 0.3, 0.1}, {0.05, 0.15, 0.8}};
    joint.cards = cards;
    joint.p.resize(2 * 3 * 2 * 2 * 3);
    for (std::int64_t row = 0; row < joint.n_rows(); ++row) {
      const auto x = joint.decode(row);
      joint.p[row] = p0[x[0]] * p1[x[0]][x[1]] * p2[x[1]][x[2]] * p3[x[1]][x[3]] * p4[x[3]][x[4]];
    }
  }

  TokenMatrix sample(std::int64_t n, std::uint64_t seed) const {
    Rng rng(seed);
    TokenMatrix data;
    data.n_cols = static_cast<std::int32_t>(cards.size());
    for (std::int64_t i = 0; i < n; ++i) {
      const auto x = joint.decode(rng.categorical(joint.p));
      data.tok.insert(data.tok.end(), x.begin(), x.end());
    }
    return data;
  }
};

// Plug-in pairwise mutual information from raw counts; written independently
// of the library estimator.
double sample_mi(const TokenMatrix& data, const std::vector<std::int32_t>& cards, std::int32_t i,
                 std::int32_t j) {
  std::map<std::pair<std::int32_t, std::int32_t>, double> nij;
  std::vector<double> ni(cards[i], 0.0), nj(cards[j], 0.0);
  const double n = static_cast<double>(data.n_rows());
  for (std::int64_t r = 0; r < data.n_rows(); ++r) {
    const std::int32_t* row = data.row(r);
    nij[{row[i], row[j]}] += 1.0;
    ni[row[i]] += 1.0;
    nj[row[j]] += 1.0;
  }
  double mi = 0.0;
  for (const auto& [cell, cnt] : nij) {
    const double pxy = cnt / n;
    mi += pxy * std::log(pxy * n * n / (ni[cell.first] * nj[cell.second]));
  }
  return mi;
}

// Decodes a Prüfer sequence over n labeled vertices into its spanning tree.
std::vector<std::pair<std::int32_t, std::int32_t>> prufer_tree(const std::vector<std::int32_t>& seq,
                                                               std::int32_t n) {
  std::vector<std::int32_t> degree(n, 1);
  for (std::int32_t v : seq) ++degree[v];
  std::vector<std::pair<std::int32_t, std::int32_t>> edges;
  std::vector<char> used(n, 0);
  for (std::int32_t v : seq) {
    for (std::int32_t u = 0; u < n; ++u) {
      if (degree[u] == 1 && !used[u]) {
        edges.emplace_back(std::min(u, v), std::max(u, v));
        used[u] = 1;
        --degree[v];
        break;
      }
    }
  }
  std::vector<std::int32_t> last;
  for (std::int32_t u = 0; u < n; ++u) {
    if (!used[u] && degree[u] == 1) last.push_back(u);
  }
  edges.emplace_back(last[0], last[1]);
  return edges;
}

using EdgeSet = std::set<std::pair<std::int32_t, std::int32_t>>;

EdgeSet edge_set(const ChowLiuTree& t) { return EdgeSet(t.edges.begin(), t.edges.end()); }

ChowLiuTree handmade_tree(std::vector<std::int32_t> cards, std::vector<std::int32_t> parent) {
  ChowLiuTree t;
  t.n_vars = static_cast<std::int32_t>(cards.size());
  t.var_card = std::move(cards);
  t.parent = std::move(parent);
  return t;
}

}  // namespace

TEST_CASE("tree learning recovers the generating structure and maximizes total MI") {
  ChainFixture fix;
  const TokenMatrix data = fix.sample(3000, 91);

  // Independent pairwise MI table and exhaustive best-tree search: every
  // spanning tree over 5 labeled vertices is one of the 5^3 Prüfer sequences.
  const std::int32_t nv = 5;
  std::vector<std::vector<double>> mi(nv, std::vector<double>(nv, 0.0));
  for (std::int32_t i = 0; i < nv; ++i) {
    for (std::int32_t j = i + 1; j < nv; ++j) mi[i][j] = sample_mi(data, fix.cards, i, j);
  }
  double best_total = -1.0;
  for (std::int32_t code = 0; code < 125; ++code) {
    const std::vector<std::int32_t> seq{code % 5, (code / 5) % 5, (code / 25) % 5};
    double total = 0.0;
    for (const auto& [i, j] : prufer_tree(seq, nv)) total += mi[i][j];
    best_total = std::max(best_total, total);
  }

  const ChowLiuTree tree = chow_liu(data, fix.cards, 0.0);
  REQUIRE(tree.edges.size() == 4);
  double got_total = 0.0;
  for (std::size_t e = 0; e < tree.edges.size(); ++e) {
    const auto [i, j] = tree.edges[e];
    CHECK(close_rel(tree.edge_mi[e], mi[i][j]));
    got_total += mi[i][j];
  }
  CHECK(got_total >= best_total - 1e-9);

  // Strong dependencies: the empirical MST must be the generating tree.
  CHECK(edge_set(tree) == EdgeSet{{0, 1}, {1, 2}, {1, 3}, {3, 4}});

  // Orientation: rooted at variable 0, parents consistent with the edge set.
  CHECK(tree.parent[0] == -1);
  for (std::int32_t v = 1; v < nv; ++v) {
    const std::int32_t p = tree.parent[v];
    REQUIRE(p >= 0);
    CHECK(edge_set(tree).count({std::min(v, p), std::max(v, p)}) == 1);
    std::int32_t cur = v;
    int hops = 0;
    while (cur != 0 && hops <= nv) {
      cur = tree.parent[cur];
      ++hops;
    }
    CHECK(cur == 0);
  }
}

TEST_CASE("sparse MI fallback selects the same tree as the dense path") {
  ChainFixture fix;
  const TokenMatrix data = fix.sample(1500, 17);
  const ChowLiuTree dense = chow_liu(data, fix.cards, 0.0);
  // A one-cell cap forces every pair through the sparse estimator, which is
  // the same plug-in formula when smoothing is off.
  const ChowLiuTree sparse = chow_liu(data, fix.cards, 0.0, 1);
  CHECK(edge_set(dense) == edge_set(sparse));
  REQUIRE(dense.edges.size() == sparse.edges.size());
  for (std::size_t e = 0; e < dense.edges.size(); ++e) {
    CHECK(close_rel(dense.edge_mi[e], sparse.edge_mi[e], 1e-12));
  }
  // Smoothing changes the scores but should not break structure recovery here.
  const ChowLiuTree smoothed = chow_liu(data, fix.cards, 0.1);
  CHECK(edge_set(smoothed) == edge_set(dense));
}

TEST_CASE("compiled latent tree circuits are smooth, decomposable, and normalized") {
  const ChowLiuTree tree = handmade_tree({2, 3, 2, 2, 3}, {-1, 0, 1, 1, 3});

  SUBCASE("multi-latent structure and node budget") {
    const Circuit c = compile_hclt(tree, 4);
    CHECK(check_structure(c).ok());
    // 5 vars * 4 input nodes, one mixture per (tree edge, latent state),
    // products only for the three internal variables, plus the root mixture.
    CHECK(c.n_nodes() == 5 * 4 + 4 * 4 + 3 * 4 + 1);
    CHECK(c.kind[c.root] == NodeKind::sum);

    const auto joint = test::enumerate_joint(c);
    double mass = 0.0;
    for (double p : joint.p) mass += p;
    CHECK(close_rel(mass, 1.0));

    Circuit randomized = c;
    init_params(randomized, 7);
    const auto joint2 = test::enumerate_joint(randomized);
    double mass2 = 0.0;
    for (double p : joint2.p) mass2 += p;
    CHECK(close_rel(mass2, 1.0));
  }

  SUBCASE("single latent state still builds a valid circuit") {
    const Circuit c = compile_hclt(tree, 1);
    CHECK(check_structure(c).ok());
    const auto joint = test::enumerate_joint(c);
    double mass = 0.0;
    for (double p : joint.p) mass += p;
    CHECK(close_rel(mass, 1.0));
  }

  SUBCASE("one variable, one latent state degenerates to a single input node") {
    const Circuit c = compile_hclt(handmade_tree({4}, {-1}), 1);
    CHECK(c.n_nodes() == 1);
    CHECK(c.kind[0] == NodeKind::input);
    CHECK(c.root == 0);
  }

  SUBCASE("one variable with several latent states becomes a root mixture") {
    const Circuit c = compile_hclt(handmade_tree({4}, {-1}), 3);
    CHECK(c.n_nodes() == 4);
    CHECK(c.kind[c.root] == NodeKind::sum);
    CHECK(c.n_children(c.root) == 3);
  }

  SUBCASE("malformed trees are rejected") {
    CHECK_THROWS_AS(compile_hclt(handmade_tree({2, 2}, {0, -1}), 2), std::invalid_argument);
    CHECK_THROWS_AS(compile_hclt(handmade_tree({2, 2}, {-1, 5}), 2), std::invalid_argument);
    CHECK_THROWS_AS(compile_hclt(handmade_tree({2, 2, 2}, {-1, 2, 1}), 2), std::invalid_argument);
    CHECK_THROWS_AS(compile_hclt(tree, 0), std::invalid_argument);
  }
}

TEST_CASE("random parameter initialization is seeded and normalized") {
  const ChowLiuTree tree = handmade_tree({2, 3, 2, 2, 3}, {-1, 0, 1, 1, 3});
  Circuit a = compile_hclt(tree, 4);
  Circuit b = compile_hclt(tree, 4);
  Circuit c = compile_hclt(tree, 4);
  init_params(a, 11);
  init_params(b, 11);
  init_params(c, 12);

  CHECK(a.param == b.param);
  CHECK(a.weight == b.weight);
  CHECK(a.param != c.param);

  for (std::int32_t n = 0; n < a.n_nodes(); ++n) {
    if (a.kind[n] == NodeKind::sum) {
      double total = 0.0;
      for (std::int64_t e = a.child_off[n]; e < a.child_off[n + 1]; ++e) {
        CHECK(a.weight[e] > 0.0);
        total += a.weight[e];
      }
      CHECK(close_rel(total, 1.0, 1e-12));
    } else if (a.kind[n] == NodeKind::input) {
      double total = 0.0;
      for (std::int64_t i = a.param_off[n]; i < a.param_off[n + 1]; ++i) {
        CHECK(a.param[i] > 0.0);
        total += a.param[i];
      }
      CHECK(close_rel(total, 1.0, 1e-12));
    }
  }
}

TEST_CASE("expected edge statistics conserve each sum node's flow") {
  Rng rng(515);
  int checked = 0;
  for (int trial = 0; trial < 12; ++trial) {
    std::vector<std::int32_t> cards;
    const int nv = 2 + rng.next_int(4);
    for (int v = 0; v < nv; ++v) cards.push_back(2 + rng.next_int(3));
    const Circuit c = test::random_circuit(rng, cards);
    const EvidenceMask mask = test::random_mask(rng, cards);

    std::vector<double> leaf(c.n_nodes());
    detail::input_values(c, mask, leaf);
    std::vector<double> mant(c.n_nodes());
    std::vector<std::int32_t> expo(c.n_nodes());
    detail::upward_sweep(c, leaf, mant, expo);
    if (mant[c.root] == 0.0) continue;  // impossible evidence: no posterior

    std::vector<double> stats(c.child.size(), 0.0);
    std::vector<double> flow;
    detail::downward_sweep<true>(c, mant, expo, flow, stats.data());

    std::vector<double> flow_plain;
    detail::downward_sweep<false>(c, mant, expo, flow_plain, nullptr);
    CHECK(flow == flow_plain);

    for (std::int32_t m = 0; m < c.n_nodes(); ++m) {
      CHECK(flow[m] >= 0.0);
      if (c.kind[m] != NodeKind::sum || mant[m] == 0.0) continue;
      double through = 0.0;
      for (std::int64_t e = c.child_off[m]; e < c.child_off[m + 1]; ++e) through += stats[e];
      CHECK(std::abs(through - flow[m]) <= 1e-9 * std::max(1.0, flow[m]));
      ++checked;
    }
  }
  CHECK(checked > 50);  // the fixtures actually exercised the invariant
}

TEST_CASE("reported likelihood equals the exact forward pass on the starting parameters") {
  Rng rng(99);
  const std::vector<std::int32_t> cards{2, 3, 2};
  const Circuit c0 = test::random_circuit(rng, cards);

  // Sample rows from the circuit itself so every sample has positive mass
  // (random circuits carry some exactly-zero input entries).
  const auto joint = test::enumerate_joint(c0);
  TokenMatrix data;
  data.n_cols = 3;
  for (int r = 0; r < 40; ++r) {
    const auto x = joint.decode(rng.categorical(joint.p));
    data.tok.insert(data.tok.end(), x.begin(), x.end());
  }

  double expected = 0.0;
  for (std::int64_t r = 0; r < data.n_rows(); ++r) {
    EvidenceMask e(3);
    for (std::int32_t v = 0; v < 3; ++v) e.observe(v, data.row(r)[v]);
    expected += log_marginal(c0, e);
  }
  expected /= static_cast<double>(data.n_rows());

  Circuit trained = c0;
  EMConfig cfg;
  cfg.epochs = 1;
  cfg.pseudocount = 0.37;
  const TrainReport report = em_fit(trained, data, cfg);
  REQUIRE(report.avg_log_likelihood.size() == 1);
  CHECK(close_rel(report.avg_log_likelihood[0], expected, 1e-10));
}

TEST_CASE("EM increases training likelihood monotonically toward the tree optimum") {
  ChainFixture fix;
  const TokenMatrix data = fix.sample(3000, 23);
  const ChowLiuTree tree = chow_liu(data, fix.cards);
  Circuit c = compile_hclt(tree, 4);
  init_params(c, 5);

  EMConfig cfg;
  cfg.epochs = 30;
  cfg.pseudocount = 0.1;
  cfg.early_stop_delta = 0.0;
  const TrainReport report = em_fit(c, data, cfg);

  REQUIRE(report.epochs_run == 30);
  CHECK_FALSE(report.early_stopped);
  REQUIRE(report.avg_log_likelihood.size() == 30);
  for (std::size_t k = 1; k < report.avg_log_likelihood.size(); ++k) {
    CHECK(report.avg_log_likelihood[k] >= report.avg_log_likelihood[k - 1] - 1e-8);
  }

  // Upper bound: no model beats the empirical joint on its own training set.
  std::map<std::int64_t, double> counts;
  for (std::int64_t r = 0; r < data.n_rows(); ++r) {
    std::vector<std::int32_t> x(data.row(r), data.row(r) + data.n_cols);
    counts[fix.joint.encode(x)] += 1.0;
  }
  const double n = static_cast<double>(data.n_rows());
  double joint_opt = 0.0;
  for (const auto& [row, cnt] : counts) joint_opt += (cnt / n) * std::log(cnt / n);

  // Target: the best tree-factored model scores sum-of-edge-MI minus the sum
  // of marginal entropies, all measured on the empirical distribution.
  double tree_opt = 0.0;
  for (const auto& [i, j] : tree.edges) tree_opt += sample_mi(data, fix.cards, i, j);
  for (std::int32_t v = 0; v < 5; ++v) {
    std::vector<double> cnt(fix.cards[v], 0.0);
    for (std::int64_t r = 0; r < data.n_rows(); ++r) cnt[data.row(r)[v]] += 1.0;
    for (double x : cnt) {
      if (x > 0.0) tree_opt += (x / n) * std::log(x / n);
    }
  }

  const double final_ll = report.avg_log_likelihood.back();
  CHECK(final_ll <= joint_opt + 1e-9);
  CHECK(final_ll >= tree_opt - 0.15);

  // The report serializes as a two-column CSV.
  std::ostringstream csv;
  report.write_csv(csv);
  const std::string text = csv.str();
  CHECK(text.rfind("epoch,avg_ll\n0,", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 31);
}

TEST_CASE("EM recovers naive-Bayes parameters from a perturbed start") {
  const double prior = 0.6;
  const std::vector<std::pair<double, double>> cond{{0.8, 0.3}, {0.9, 0.2}};
  const Circuit truth = build_naive_bayes(prior, cond);
  const auto joint = test::enumerate_joint(truth);

  Rng rng(404);
  TokenMatrix data;
  data.n_cols = 3;
  for (int i = 0; i < 20000; ++i) {
    const auto x = joint.decode(rng.categorical(joint.p));
    data.tok.insert(data.tok.end(), x.begin(), x.end());
  }

  Circuit c = build_naive_bayes(0.45, {{0.65, 0.45}, {0.75, 0.35}});
  EMConfig cfg;
  cfg.epochs = 50;
  cfg.pseudocount = 0.0;  // keep the hard class indicators fixed at {0, 1}
  cfg.early_stop_delta = 1e-12;
  const TrainReport report = em_fit(c, data, cfg);
  CHECK(report.avg_log_likelihood.back() >= report.avg_log_likelihood.front());

  // Identify the class branches by their indicator inputs rather than by node
  // id: the branch whose class-variable input puts all mass on category 1 is
  // the "true" branch.
  REQUIRE(c.kind[c.root] == NodeKind::sum);
  REQUIRE(c.n_children(c.root) == 2);
  bool saw_true = false, saw_false = false;
  for (std::int64_t e = c.child_off[c.root]; e < c.child_off[c.root + 1]; ++e) {
    const std::int32_t branch = c.child[e];
    REQUIRE(c.kind[branch] == NodeKind::product);
    double p_true_feature[2] = {-1.0, -1.0};
    bool is_true_branch = false;
    for (std::int64_t ce = c.child_off[branch]; ce < c.child_off[branch + 1]; ++ce) {
      const std::int32_t in = c.child[ce];
      REQUIRE(c.kind[in] == NodeKind::input);
      const std::int32_t var = c.input_var[in];
      if (var == 0) {
        is_true_branch = c.param[c.param_off[in] + 1] == 1.0;
      } else {
        p_true_feature[var - 1] = c.param[c.param_off[in] + 1];
      }
    }
    const double want_weight = is_true_branch ? prior : 1.0 - prior;
    CHECK(std::abs(c.weight[e] - want_weight) < 0.02);
    for (int f = 0; f < 2; ++f) {
      const double want = is_true_branch ? cond[f].first : cond[f].second;
      CHECK(std::abs(p_true_feature[f] - want) < 0.02);
    }
    saw_true |= is_true_branch;
    saw_false |= !is_true_branch;
  }
  CHECK(saw_true);
  CHECK(saw_false);
}

TEST_CASE("EM results are identical for any worker count") {
  ChainFixture fix;
  const TokenMatrix data = fix.sample(500, 31);
  const ChowLiuTree tree = chow_liu(data, fix.cards);
  Circuit base = compile_hclt(tree, 4);
  init_params(base, 3);

  EMConfig cfg;
  cfg.epochs = 5;
  cfg.early_stop_delta = 0.0;
  cfg.block_size = 37;

  std::vector<Circuit> trained;
  std::vector<TrainReport> reports;
  for (std::int32_t workers : {1, 2, 3}) {
    Circuit c = base;
    cfg.workers = workers;
    reports.push_back(em_fit(c, data, cfg));
    trained.push_back(std::move(c));
  }
  for (std::size_t i = 1; i < trained.size(); ++i) {
    CHECK(trained[i].param == trained[0].param);
    CHECK(trained[i].weight == trained[0].weight);
    CHECK(reports[i].avg_log_likelihood == reports[0].avg_log_likelihood);
  }
}

TEST_CASE("early stopping halts once improvements fall under the threshold") {
  ChainFixture fix;
  const TokenMatrix data = fix.sample(200, 77);
  const ChowLiuTree tree = chow_liu(data, fix.cards);
  Circuit c = compile_hclt(tree, 3);
  init_params(c, 9);

  EMConfig cfg;
  cfg.epochs = 40;
  cfg.early_stop_delta = 1e9;  // any finite improvement triggers the stop
  const TrainReport report = em_fit(c, data, cfg);
  CHECK(report.early_stopped);
  CHECK(report.epochs_run == 2);
}

TEST_CASE("learning entry points validate their inputs") {
  ChainFixture fix;
  TokenMatrix data = fix.sample(50, 1);

  CHECK_THROWS_AS(chow_liu(data, fix.cards, -0.5), std::invalid_argument);
  CHECK_THROWS_AS(chow_liu(TokenMatrix{}, fix.cards), std::invalid_argument);
  {
    TokenMatrix narrow;
    narrow.n_cols = 2;
    narrow.tok = {0, 1};
    CHECK_THROWS_AS(chow_liu(narrow, fix.cards), std::invalid_argument);
  }
  {
    TokenMatrix bad = data;
    bad.tok[3] = 99;  // out of range for every variable here
    CHECK_THROWS_AS(chow_liu(bad, fix.cards), std::invalid_argument);
  }

  const ChowLiuTree tree = chow_liu(data, fix.cards);
  Circuit c = compile_hclt(tree, 2);
  EMConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(em_fit(c, data, cfg), std::invalid_argument);
  cfg.epochs = 1;
  cfg.pseudocount = -1.0;
  CHECK_THROWS_AS(em_fit(c, data, cfg), std::invalid_argument);
  cfg.pseudocount = 0.1;
  cfg.workers = 0;
  CHECK_THROWS_AS(em_fit(c, data, cfg), std::invalid_argument);
  cfg.workers = 1;
  cfg.block_size = 0;
  CHECK_THROWS_AS(em_fit(c, data, cfg), std::invalid_argument);
  cfg.block_size = 4096;
  {
    TokenMatrix bad = data;
    bad.tok[0] = fix.cards[0];
    CHECK_THROWS_AS(em_fit(c, bad, cfg), std::invalid_argument);
  }

  // A sample that the model assigns zero probability is a hard error.
  Circuit nb = build_naive_bayes(0.5, {{1.0, 1.0}});
  TokenMatrix impossible;
  impossible.n_cols = 2;
  impossible.tok = {1, 0};  // feature = false has probability zero in both branches
  EMConfig one;
  one.epochs = 1;
  CHECK_THROWS_AS(em_fit(nb, impossible, one), std::runtime_error);
}
