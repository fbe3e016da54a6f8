#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace trifle {

enum class NodeKind : std::uint8_t { input, sum, product };

// Declarative description of one node, consumed by build_circuit. Children may
// only reference nodes declared earlier in the list, which makes the input
// order a topological order by construction.
struct NodeSpec {
  NodeKind kind = NodeKind::input;
  std::int32_t var = -1;             // input nodes: variable index
  std::vector<double> dist;          // input nodes: categorical over the variable
  std::vector<std::int32_t> children;
  std::vector<double> weights;       // sum nodes: one weight per child
};

// A discrete probabilistic circuit stored as flat arrays in topological order
// (children strictly before parents). Sum-node children carry normalized
// nonnegative weights; product-node children have pairwise disjoint scopes;
// sum-node children share a scope. Input nodes hold a categorical distribution
// over one variable. Evaluating the root bottom-up yields marginals directly:
// input nodes over unobserved variables contribute probability one.
//
// The flat layout is deliberately struct-of-arrays: a single linear sweep over
// `child`/`weight` is the hot loop of both inference and learning.
struct Circuit {
  std::vector<std::int32_t> var_card;  // cardinality per variable

  std::vector<NodeKind> kind;          // per node
  std::vector<std::int32_t> input_var; // per node; -1 unless input

  // Children of sum/product nodes, CSR layout. weight is aligned with child
  // and only meaningful for sum nodes.
  std::vector<std::int64_t> child_off;  // size n_nodes + 1
  std::vector<std::int32_t> child;
  std::vector<double> weight;

  // Input-node categorical parameters, CSR layout over the same node ids.
  std::vector<std::int64_t> param_off;  // size n_nodes + 1
  std::vector<double> param;

  std::int32_t root = -1;

  // Input nodes grouped by variable, in node order; used by posterior queries
  // and parameter learning.
  std::vector<std::vector<std::int32_t>> inputs_by_var;

  std::int32_t n_nodes() const { return static_cast<std::int32_t>(kind.size()); }
  std::int32_t n_vars() const { return static_cast<std::int32_t>(var_card.size()); }
  std::int64_t n_children(std::int32_t n) const { return child_off[n + 1] - child_off[n]; }
  std::int32_t card(std::int32_t v) const { return var_card[v]; }
};

// One structural violation found by check_structure.
struct StructureIssue {
  std::int32_t node = -1;
  std::string reason;
};

struct StructureReport {
  bool smooth = true;
  bool decomposable = true;
  std::vector<StructureIssue> issues;
  bool ok() const { return smooth && decomposable; }
};

// Validates and assembles a circuit from node descriptors.
//
// Throws std::invalid_argument on: a child reference that is not strictly
// earlier than its parent (reported as a cycle, since any cycle must contain a
// non-backward edge), out-of-range variable or child ids, a node count of
// zero, more than one parentless node, sum weight vectors or input
// distributions whose entries are negative or whose sum deviates from 1 by
// more than 1e-9. Weights within tolerance are renormalized exactly so that
// downstream code can rely on sum-to-one.
Circuit build_circuit(std::vector<std::int32_t> var_card, const std::vector<NodeSpec>& nodes);

// Checks smoothness (sum children share identical scope) and decomposability
// (product children have pairwise disjoint scopes). Never throws on structural
// violations; they are returned, one issue per offending node.
StructureReport check_structure(const Circuit& c);

// Per-node variable scopes as bitmasks, 64 variables per word. Exposed for
// tests and for structure-aware tooling.
std::vector<std::vector<std::uint64_t>> node_scopes(const Circuit& c);

// Builds a naive-Bayes circuit over variables {Y, X_1..X_k}, all binary with
// category 0 = false, 1 = true. Variable 0 is the class Y; feature i is
// variable i+1. `p_true_given` holds, per feature, the pair
// (P(X_i = true | Y = true), P(X_i = true | Y = false)).
// The result is smooth and decomposable by construction, and exact inference
// on it matches the Bayes-rule closed form.
Circuit build_naive_bayes(double class_prior_true,
                          const std::vector<std::pair<double, double>>& p_true_given);

// Text serialization. The format is versioned, line-oriented and stable:
// parameters are written with 17 significant digits, so serialize/deserialize
// round-trips bit-exactly. deserialize throws std::runtime_error on malformed
// input, version mismatch, or unknown node kinds, and runs full build
// validation on the decoded nodes.
void serialize(const Circuit& c, std::ostream& out);
Circuit deserialize(std::istream& in);

void save_circuit(const Circuit& c, const std::string& path);
Circuit load_circuit(const std::string& path);

}  // namespace trifle
