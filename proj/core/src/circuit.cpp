#include "trifle/circuit.hpp"

#include <cmath>
#include <limits>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace trifle {

namespace {

constexpr double kNormTol = 1e-9;

// Validates a probability vector in place: entries nonnegative, total within
// kNormTol of one. On success rescales exactly to sum 1.
void validate_and_renormalize(std::vector<double>& p, std::int32_t node, const char* what) {
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) {
      std::ostringstream msg;
      msg << "node " << node << ": " << what << " has negative or NaN entry";
      throw std::invalid_argument(msg.str());
    }
    total += x;
  }
  if (std::abs(total - 1.0) > kNormTol) {
    std::ostringstream msg;
    msg << "node " << node << ": " << what << " not normalized (sum = " << total << ")";
    throw std::invalid_argument(msg.str());
  }
  // Vectors already normalized to machine precision are left bit-untouched,
  // which keeps rebuild (and therefore serialize/deserialize) idempotent.
  const double machine = 32.0 * std::numeric_limits<double>::epsilon() *
                         static_cast<double>(std::max<std::size_t>(std::size_t{1}, p.size()));
  if (std::abs(total - 1.0) <= machine) return;
  for (double& x : p) x /= total;
}

}  // namespace

Circuit build_circuit(std::vector<std::int32_t> var_card, const std::vector<NodeSpec>& nodes) {
  if (nodes.empty()) throw std::invalid_argument("circuit must have at least one node");
  if (var_card.empty()) throw std::invalid_argument("circuit must have at least one variable");
  for (std::size_t v = 0; v < var_card.size(); ++v) {
    if (var_card[v] < 1) {
      std::ostringstream msg;
      msg << "variable " << v << ": cardinality must be >= 1";
      throw std::invalid_argument(msg.str());
    }
  }

  const auto n = static_cast<std::int32_t>(nodes.size());
  Circuit c;
  c.var_card = std::move(var_card);
  c.kind.resize(n);
  c.input_var.assign(n, -1);
  c.child_off.assign(n + 1, 0);
  c.param_off.assign(n + 1, 0);
  c.inputs_by_var.assign(c.var_card.size(), {});

  std::vector<char> has_parent(n, 0);

  for (std::int32_t i = 0; i < n; ++i) {
    const NodeSpec& spec = nodes[i];
    c.kind[i] = spec.kind;
    c.child_off[i + 1] = c.child_off[i];
    c.param_off[i + 1] = c.param_off[i];

    if (spec.kind == NodeKind::input) {
      if (spec.var < 0 || spec.var >= c.n_vars()) {
        std::ostringstream msg;
        msg << "node " << i << ": input variable " << spec.var << " out of range";
        throw std::invalid_argument(msg.str());
      }
      if (!spec.children.empty()) {
        std::ostringstream msg;
        msg << "node " << i << ": input node cannot have children";
        throw std::invalid_argument(msg.str());
      }
      std::vector<double> dist = spec.dist;
      if (static_cast<std::int32_t>(dist.size()) != c.var_card[spec.var]) {
        std::ostringstream msg;
        msg << "node " << i << ": input_dist size " << dist.size()
            << " != cardinality " << c.var_card[spec.var];
        throw std::invalid_argument(msg.str());
      }
      validate_and_renormalize(dist, i, "input_dist");
      c.input_var[i] = spec.var;
      c.param.insert(c.param.end(), dist.begin(), dist.end());
      c.param_off[i + 1] += static_cast<std::int64_t>(dist.size());
      c.inputs_by_var[spec.var].push_back(i);
      continue;
    }

    if (spec.children.empty()) {
      std::ostringstream msg;
      msg << "node " << i << ": sum/product node needs at least one child";
      throw std::invalid_argument(msg.str());
    }
    for (std::int32_t ch : spec.children) {
      if (ch < 0 || ch >= n) {
        std::ostringstream msg;
        msg << "node " << i << ": child " << ch << " out of range";
        throw std::invalid_argument(msg.str());
      }
      if (ch >= i) {
        // A self or forward reference cannot be part of any topological order,
        // which is exactly what a cyclic graph would require.
        std::ostringstream msg;
        msg << "node " << i << ": cycle detected (child " << ch
            << " not declared before its parent)";
        throw std::invalid_argument(msg.str());
      }
      has_parent[ch] = 1;
    }
    c.child.insert(c.child.end(), spec.children.begin(), spec.children.end());
    c.child_off[i + 1] += static_cast<std::int64_t>(spec.children.size());

    if (spec.kind == NodeKind::sum) {
      if (spec.weights.size() != spec.children.size()) {
        std::ostringstream msg;
        msg << "node " << i << ": sum node has " << spec.children.size()
            << " children but " << spec.weights.size() << " weights";
        throw std::invalid_argument(msg.str());
      }
      std::vector<double> w = spec.weights;
      validate_and_renormalize(w, i, "weight vector");
      c.weight.insert(c.weight.end(), w.begin(), w.end());
    } else {
      c.weight.insert(c.weight.end(), spec.children.size(), 1.0);
    }
  }

  std::int32_t root = -1;
  for (std::int32_t i = 0; i < n; ++i) {
    if (has_parent[i]) continue;
    if (root != -1) {
      std::ostringstream msg;
      msg << "multiple roots: nodes " << root << " and " << i << " have no parent";
      throw std::invalid_argument(msg.str());
    }
    root = i;
  }
  c.root = root;  // at least one parentless node always exists in a DAG
  return c;
}

std::vector<std::vector<std::uint64_t>> node_scopes(const Circuit& c) {
  const std::size_t words = (c.var_card.size() + 63) / 64;
  std::vector<std::vector<std::uint64_t>> scope(c.n_nodes(),
                                                std::vector<std::uint64_t>(words, 0));
  for (std::int32_t i = 0; i < c.n_nodes(); ++i) {
    if (c.kind[i] == NodeKind::input) {
      scope[i][c.input_var[i] / 64] |= 1ULL << (c.input_var[i] % 64);
      continue;
    }
    for (std::int64_t e = c.child_off[i]; e < c.child_off[i + 1]; ++e) {
      const auto& cs = scope[c.child[e]];
      for (std::size_t w = 0; w < words; ++w) scope[i][w] |= cs[w];
    }
  }
  return scope;
}

StructureReport check_structure(const Circuit& c) {
  StructureReport report;
  auto scope = node_scopes(c);
  const std::size_t words = scope.empty() ? 0 : scope[0].size();

  for (std::int32_t i = 0; i < c.n_nodes(); ++i) {
    if (c.kind[i] == NodeKind::sum) {
      const auto& first = scope[c.child[c.child_off[i]]];
      for (std::int64_t e = c.child_off[i] + 1; e < c.child_off[i + 1]; ++e) {
        if (scope[c.child[e]] != first) {
          report.smooth = false;
          std::ostringstream msg;
          msg << "sum node " << i << ": children " << c.child[c.child_off[i]] << " and "
              << c.child[e] << " have different scopes";
          report.issues.push_back({i, msg.str()});
          break;
        }
      }
    } else if (c.kind[i] == NodeKind::product) {
      std::vector<std::uint64_t> seen(words, 0);
      for (std::int64_t e = c.child_off[i]; e < c.child_off[i + 1]; ++e) {
        const auto& cs = scope[c.child[e]];
        bool overlap = false;
        for (std::size_t w = 0; w < words; ++w) {
          if (seen[w] & cs[w]) overlap = true;
          seen[w] |= cs[w];
        }
        if (overlap) {
          report.decomposable = false;
          std::ostringstream msg;
          msg << "product node " << i << ": child " << c.child[e]
              << " overlaps the scope of an earlier sibling";
          report.issues.push_back({i, msg.str()});
        }
      }
    }
  }
  return report;
}

Circuit build_naive_bayes(double class_prior_true,
                          const std::vector<std::pair<double, double>>& p_true_given) {
  if (!(class_prior_true >= 0.0 && class_prior_true <= 1.0)) {
    throw std::invalid_argument("naive Bayes: class prior must be in [0, 1]");
  }
  for (const auto& [pt, pf] : p_true_given) {
    if (!(pt >= 0.0 && pt <= 1.0) || !(pf >= 0.0 && pf <= 1.0)) {
      throw std::invalid_argument("naive Bayes: feature conditionals must be in [0, 1]");
    }
  }
  const auto k = static_cast<std::int32_t>(p_true_given.size());
  std::vector<std::int32_t> cards(1 + k, 2);
  std::vector<NodeSpec> nodes;

  // Branch for Y = true: indicator on Y plus one input per feature.
  std::vector<std::int32_t> true_children, false_children;
  {
    NodeSpec y_true;
    y_true.kind = NodeKind::input;
    y_true.var = 0;
    y_true.dist = {0.0, 1.0};
    true_children.push_back(static_cast<std::int32_t>(nodes.size()));
    nodes.push_back(std::move(y_true));
    for (std::int32_t i = 0; i < k; ++i) {
      NodeSpec x;
      x.kind = NodeKind::input;
      x.var = i + 1;
      x.dist = {1.0 - p_true_given[i].first, p_true_given[i].first};
      true_children.push_back(static_cast<std::int32_t>(nodes.size()));
      nodes.push_back(std::move(x));
    }
  }
  {
    NodeSpec y_false;
    y_false.kind = NodeKind::input;
    y_false.var = 0;
    y_false.dist = {1.0, 0.0};
    false_children.push_back(static_cast<std::int32_t>(nodes.size()));
    nodes.push_back(std::move(y_false));
    for (std::int32_t i = 0; i < k; ++i) {
      NodeSpec x;
      x.kind = NodeKind::input;
      x.var = i + 1;
      x.dist = {1.0 - p_true_given[i].second, p_true_given[i].second};
      false_children.push_back(static_cast<std::int32_t>(nodes.size()));
      nodes.push_back(std::move(x));
    }
  }

  NodeSpec prod_true;
  prod_true.kind = NodeKind::product;
  prod_true.children = std::move(true_children);
  const auto prod_true_id = static_cast<std::int32_t>(nodes.size());
  nodes.push_back(std::move(prod_true));

  NodeSpec prod_false;
  prod_false.kind = NodeKind::product;
  prod_false.children = std::move(false_children);
  const auto prod_false_id = static_cast<std::int32_t>(nodes.size());
  nodes.push_back(std::move(prod_false));

  NodeSpec root;
  root.kind = NodeKind::sum;
  root.children = {prod_true_id, prod_false_id};
  root.weights = {class_prior_true, 1.0 - class_prior_true};
  nodes.push_back(std::move(root));

  return build_circuit(std::move(cards), nodes);
}

namespace {

constexpr const char* kMagic = "PCIRC";
constexpr const char* kVersion = "v1";

std::string read_token(std::istream& in, const char* context) {
  std::string tok;
  if (!(in >> tok)) {
    std::ostringstream msg;
    msg << "circuit file: unexpected end of stream while reading " << context;
    throw std::runtime_error(msg.str());
  }
  return tok;
}

template <typename T>
T read_number(std::istream& in, const char* context) {
  T value;
  if (!(in >> value)) {
    std::ostringstream msg;
    msg << "circuit file: malformed or missing " << context;
    throw std::runtime_error(msg.str());
  }
  return value;
}

void expect_token(std::istream& in, const char* expected, const char* context) {
  std::string tok = read_token(in, context);
  if (tok != expected) {
    std::ostringstream msg;
    msg << "circuit file: expected '" << expected << "' while reading " << context
        << ", got '" << tok << "'";
    throw std::runtime_error(msg.str());
  }
}

}  // namespace

void serialize(const Circuit& c, std::ostream& out) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "vars " << c.n_vars() << '\n';
  for (std::int32_t v = 0; v < c.n_vars(); ++v) {
    out << "var " << v << ' ' << c.var_card[v] << '\n';
  }
  out << "nodes " << c.n_nodes() << " root " << c.root << '\n';
  out << std::setprecision(17);  // round-trips every double exactly
  for (std::int32_t i = 0; i < c.n_nodes(); ++i) {
    out << "n " << i << ' ';
    switch (c.kind[i]) {
      case NodeKind::input: {
        out << "input " << c.input_var[i];
        for (std::int64_t p = c.param_off[i]; p < c.param_off[i + 1]; ++p) {
          out << ' ' << c.param[p];
        }
        break;
      }
      case NodeKind::sum: {
        out << "sum " << c.n_children(i);
        for (std::int64_t e = c.child_off[i]; e < c.child_off[i + 1]; ++e) {
          out << ' ' << c.child[e];
        }
        for (std::int64_t e = c.child_off[i]; e < c.child_off[i + 1]; ++e) {
          out << ' ' << c.weight[e];
        }
        break;
      }
      case NodeKind::product: {
        out << "prod " << c.n_children(i);
        for (std::int64_t e = c.child_off[i]; e < c.child_off[i + 1]; ++e) {
          out << ' ' << c.child[e];
        }
        break;
      }
    }
    out << '\n';
  }
  out << "end\n";
}

Circuit deserialize(std::istream& in) {
  std::string magic = read_token(in, "magic");
  std::string version = read_token(in, "version");
  if (magic != kMagic) throw std::runtime_error("circuit file: bad magic '" + magic + "'");
  if (version != kVersion) {
    throw std::runtime_error("circuit file: unsupported version '" + version + "'");
  }

  expect_token(in, "vars", "variable count");
  const auto n_vars = read_number<std::int32_t>(in, "variable count");
  if (n_vars < 1) throw std::runtime_error("circuit file: variable count must be >= 1");
  std::vector<std::int32_t> cards(n_vars, 0);
  for (std::int32_t v = 0; v < n_vars; ++v) {
    expect_token(in, "var", "variable declaration");
    const auto idx = read_number<std::int32_t>(in, "variable index");
    if (idx != v) throw std::runtime_error("circuit file: variable indices must be 0..V-1 in order");
    cards[v] = read_number<std::int32_t>(in, "variable cardinality");
  }

  expect_token(in, "nodes", "node count");
  const auto n_nodes = read_number<std::int32_t>(in, "node count");
  expect_token(in, "root", "root id");
  const auto declared_root = read_number<std::int32_t>(in, "root id");
  if (n_nodes < 1) throw std::runtime_error("circuit file: node count must be >= 1");

  std::vector<NodeSpec> nodes;
  nodes.reserve(n_nodes);
  for (std::int32_t i = 0; i < n_nodes; ++i) {
    expect_token(in, "n", "node line");
    const auto id = read_number<std::int32_t>(in, "node id");
    if (id != i) throw std::runtime_error("circuit file: node ids must be 0..N-1 in order");
    std::string kind = read_token(in, "node kind");
    NodeSpec spec;
    if (kind == "input") {
      spec.kind = NodeKind::input;
      spec.var = read_number<std::int32_t>(in, "input variable");
      if (spec.var < 0 || spec.var >= n_vars) {
        throw std::runtime_error("circuit file: input variable out of range");
      }
      spec.dist.resize(cards[spec.var]);
      for (auto& p : spec.dist) p = read_number<double>(in, "input probability");
    } else if (kind == "sum" || kind == "prod") {
      const auto k = read_number<std::int32_t>(in, "child count");
      if (k < 1) throw std::runtime_error("circuit file: child count must be >= 1");
      spec.children.resize(k);
      for (auto& ch : spec.children) ch = read_number<std::int32_t>(in, "child id");
      if (kind == "sum") {
        spec.kind = NodeKind::sum;
        spec.weights.resize(k);
        for (auto& w : spec.weights) w = read_number<double>(in, "sum weight");
      } else {
        spec.kind = NodeKind::product;
      }
    } else {
      throw std::runtime_error("circuit file: unknown node kind '" + kind + "'");
    }
    nodes.push_back(std::move(spec));
  }
  expect_token(in, "end", "trailer");

  Circuit c = build_circuit(std::move(cards), nodes);
  if (c.root != declared_root) {
    std::ostringstream msg;
    msg << "circuit file: declared root " << declared_root
        << " does not match structural root " << c.root;
    throw std::runtime_error(msg.str());
  }
  return c;
}

void save_circuit(const Circuit& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  serialize(c, out);
  if (!out) throw std::runtime_error("write failed: " + path);
}

Circuit load_circuit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return deserialize(in);
}

}  // namespace trifle
