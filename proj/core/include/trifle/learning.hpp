#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "trifle/circuit.hpp"
#include "trifle/rng.hpp"
#include "trifle/tokens.hpp"

namespace trifle {

// Maximum-spanning-tree structure over variables, rooted at variable 0.
struct ChowLiuTree {
  std::int32_t n_vars = 0;
  std::vector<std::int32_t> var_card;
  // parent[v] is the tree parent of variable v, or -1 for the root.
  std::vector<std::int32_t> parent;
  // Undirected MST edges (i < j) with their mutual-information scores,
  // in the order Kruskal accepted them.
  std::vector<std::pair<std::int32_t, std::int32_t>> edges;
  std::vector<double> edge_mi;
};

// Builds a Chow-Liu tree from data: pairwise mutual information between all
// variable pairs, then a maximum spanning tree (Kruskal, ties broken by
// ascending (i, j)), rooted at variable 0.
//
// Mutual information uses add-`pseudocount` smoothing over the joint table
// when card_i * card_j <= dense_cell_cap; above the cap it falls back to the
// plug-in estimate over observed cells only, which stays cheap for huge
// state spaces at the cost of ignoring smoothing mass.
ChowLiuTree chow_liu(const TokenMatrix& data, const std::vector<std::int32_t>& var_card,
                     double pseudocount = 0.1, std::int64_t dense_cell_cap = 1 << 20);

// Compiles a Chow-Liu tree into a smooth, decomposable circuit with
// `n_latents` latent states per tree node:
//   - input nodes I_v[m] carry a categorical over variable v,
//   - product nodes C_v[m] join I_v[m] with one mixture S_{v,c}[m] per child,
//   - sum nodes S_{v,c}[m] mix the child's products C_c[0..M),
//   - the root sum mixes C_root[0..M).
// Leaf tree nodes skip the product layer (the mixtures point straight at the
// inputs). A single-variable tree with n_latents == 1 degenerates to one
// input node. All distributions start uniform; see init_params for random
// initialization.
Circuit compile_hclt(const ChowLiuTree& tree, std::int32_t n_latents = 16);

// Same construction with an individual latent-state count per tree node, so
// capacity can be spent where a variable needs it (many categories, or strong
// interactions with its neighbours) without paying for it everywhere. Mixture
// S_{v,c}[m] then mixes C_c[0..latents_per_var[c]), and tree node v owns
// latents_per_var[v] inputs/products. A vector of identical entries produces
// exactly the circuit of the uniform overload.
Circuit compile_hclt(const ChowLiuTree& tree, const std::vector<std::int32_t>& latents_per_var);

// Resamples every sum-node weight vector and every input distribution from a
// flat Dirichlet (independent unit-exponential draws, normalized), in node
// order, so results are reproducible for a given seed.
void init_params(Circuit& c, std::uint64_t seed);

struct EMConfig {
  std::int32_t epochs = 100;
  double pseudocount = 0.1;
  // Stop once the per-sample average log-likelihood improves by less than
  // this many nats between consecutive epochs. <= 0 disables early stopping.
  double early_stop_delta = 1e-6;
  std::int32_t workers = 1;
  // Samples per reduction block. Statistics are accumulated per block and
  // folded in block order, so results are identical for any worker count.
  std::int32_t block_size = 4096;
};

struct TrainReport {
  // Average log-likelihood (nats per sample) of the parameters each epoch
  // started with, i.e. entry k is measured before epoch k's update.
  std::vector<double> avg_log_likelihood;
  std::int32_t epochs_run = 0;
  bool early_stopped = false;

  void write_csv(std::ostream& out) const;
  void save_csv(const std::string& path) const;
};

// Full-evidence expectation-maximization on the circuit parameters.
// Each epoch runs one upward and one downward pass per sample, accumulates
// expected edge traversals and input activations, then replaces every weight
// vector and input distribution with its normalized (statistic + pseudocount)
// estimate. Groups that receive no mass and no pseudocount keep their old
// parameters. Every token must satisfy 0 <= tok < card(var).
TrainReport em_fit(Circuit& c, const TokenMatrix& data, const EMConfig& cfg = {});

}  // namespace trifle
