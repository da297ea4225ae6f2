#include "oplab/gwtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "oplab/parallel.hpp"

namespace oplab {

KMatrix offspring_means(const KMatrix& kappa, std::span<const double> shares, double theta) {
  const auto K = static_cast<int>(shares.size());
  KMatrix q(K, K);
  for (int s = 0; s < K; ++s)
    for (int r = 0; r < K; ++r) q(s, r) = kappa(s, r) * shares[s] * theta;
  return q;
}

std::size_t GWTree::size() const {
  std::size_t total = 0;
  for (const auto& lv : levels_) total += lv.size();
  return total;
}

std::vector<int> GWTree::label(int g, int idx) const {
  std::vector<int> path(static_cast<std::size_t>(g));
  for (int lv = g; lv > 0; --lv) {
    const TreeNode& nd = node(lv, idx);
    path[static_cast<std::size_t>(lv - 1)] = nd.rank;
    idx = nd.parent;
  }
  return path;
}

double GWTree::generation_mass(int g) const {
  double total = 0.0;
  for (const auto& nd : level(g)) total += nd.Pi;
  return total;
}

double expected_tree_size(int r, const KMatrix& q, int depth) {
  Vector m = Vector::Zero(q.rows());
  m[r] = 1.0;
  double total = 1.0;
  for (int g = 1; g <= depth; ++g) {
    m = q * m;
    total += m.sum();
  }
  return total;
}

namespace {

int draw_poisson(double mean, Engine& rng) {
  if (mean <= 0.0) return 0;
  return std::poisson_distribution<int>(mean)(rng);
}

std::string budget_message(double expected, double budget) {
  std::ostringstream os;
  os << "tree budget exceeded: expected " << expected << " nodes, budget " << budget;
  return os.str();
}

}  // namespace

GWTree sample_tree(int root_type, const KMatrix& q, int depth, const ModelSpec& spec, std::uint64_t seed,
                   double budget) {
  if (depth < 0) throw std::invalid_argument("sample_tree: depth must be nonnegative");
  if (root_type < 0 || root_type >= q.rows()) throw std::invalid_argument("sample_tree: root type out of range");
  const double expected = expected_tree_size(root_type, q, depth);
  if (expected > budget) throw BudgetError(budget_message(expected, budget));

  GWTree t;
  t.K_ = static_cast<int>(q.rows());
  Engine rng = make_engine(seed, Stream::kTree, {static_cast<std::uint64_t>(root_type)});
  TreeNode root;
  root.type = root_type;
  t.levels_.push_back({root});
  std::size_t total = 1;
  std::vector<int> kinds;
  for (int g = 0; g < depth; ++g) {
    std::vector<TreeNode> next;
    auto& cur = t.levels_.back();
    for (std::size_t p = 0; p < cur.size(); ++p) {
      TreeNode& parent = cur[p];
      parent.offspring.assign(static_cast<std::size_t>(t.K_), 0);
      kinds.clear();
      for (int s = 0; s < t.K_; ++s) {
        const int cnt = draw_poisson(q(s, parent.type), rng);
        parent.offspring[s] = cnt;
        kinds.insert(kinds.end(), static_cast<std::size_t>(cnt), s);
      }
      std::shuffle(kinds.begin(), kinds.end(), rng);
      total += kinds.size();
      if (static_cast<double>(total) > budget) throw BudgetError(budget_message(static_cast<double>(total), budget));
      parent.first_child = static_cast<int>(next.size());
      parent.child_count = static_cast<int>(kinds.size());
      double mass = 0.0;
      for (std::size_t k = 0; k < kinds.size(); ++k) {
        TreeNode child;
        child.type = kinds[k];
        child.parent = static_cast<int>(p);
        child.rank = static_cast<int>(k) + 1;
        child.B = spec.weight(parent.type, child.type).sample(rng);
        mass += child.B;
        next.push_back(std::move(child));
      }
      for (int k = 0; k < parent.child_count; ++k) {
        TreeNode& child = next[static_cast<std::size_t>(parent.first_child + k)];
        child.C = mass > 0.0 ? child.B / mass : 0.0;
        child.Pi = parent.Pi * child.C;
      }
    }
    t.levels_.push_back(std::move(next));
  }
  for (auto& nd : t.levels_.back()) nd.offspring.assign(static_cast<std::size_t>(t.K_), 0);
  return t;
}

Eigen::RowVectorXd weighted_generation_sum(const GWTree& tree, int s, const Matrix& per_node) {
  const auto& lv = tree.level(s);
  if (per_node.rows() != static_cast<Eigen::Index>(lv.size()))
    throw std::invalid_argument("weighted_generation_sum: one row per node of the level is required");
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(per_node.cols());
  for (std::size_t i = 0; i < lv.size(); ++i) out += lv[i].Pi * per_node.row(static_cast<Eigen::Index>(i));
  return out;
}

Eigen::RowVectorXd weighted_generation_sum_by_type(const GWTree& tree, int s, const KMatrix& values) {
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(values.cols());
  for (const auto& nd : tree.level(s)) out += nd.Pi * values.row(nd.type);
  return out;
}

double weighted_generation_sum(const GWTree& tree, int s, std::span<const ScalarDist> laws, Engine& rng) {
  double out = 0.0;
  for (const auto& nd : tree.level(s)) {
    const double x = laws[static_cast<std::size_t>(nd.type)].sample(rng);
    out += nd.Pi * x;
  }
  return out;
}

namespace {

// Depth-first evaluation of sum_{|i|=rem} (Pi_i / Pi_root) X_i for a subtree
// whose root has type t.
class StreamingTree {
 public:
  StreamingTree(const KMatrix& q, const ModelSpec& spec, std::span<const ScalarDist> leaves)
      : q_(q), spec_(spec), leaves_(leaves), K_(static_cast<int>(q.rows())) {}

  // Offspring samplers for one replication, indexed u * K + t.
  struct Samplers {
    std::vector<std::poisson_distribution<int>> poisson;
    std::vector<bool> active;
  };
  Samplers samplers() const {
    Samplers sm;
    for (int u = 0; u < K_; ++u)
      for (int t = 0; t < K_; ++t) {
        const double m = q_(u, t);
        sm.active.push_back(m > 0.0);
        sm.poisson.emplace_back(m > 0.0 ? m : 1.0);
      }
    return sm;
  }

  double eval(int t, int rem, Engine& rng, Samplers& sm) const {
    if (rem == 0) return leaves_[static_cast<std::size_t>(t)].sample(rng);
    std::vector<int> counts(static_cast<std::size_t>(K_));
    int total = 0;
    bool point_weights = true;
    for (int u = 0; u < K_; ++u) {
      const auto idx = static_cast<std::size_t>(u * K_ + t);
      counts[u] = sm.active[idx] ? sm.poisson[idx](rng) : 0;
      total += counts[u];
      if (counts[u] > 0 && !spec_.weight(t, u).is_point()) point_weights = false;
    }
    if (total == 0) return 0.0;
    double mass = 0.0, acc = 0.0;
    if (point_weights) {
      // Every child of type u carries weight b_u.
      for (int u = 0; u < K_; ++u) {
        if (counts[u] == 0) continue;
        const double b = spec_.weight(t, u).mean();
        mass += b * counts[u];
        if (b == 0.0) continue;
        if (rem == 1) {
          acc += b * leaves_[static_cast<std::size_t>(u)].sample_sum(static_cast<std::size_t>(counts[u]), rng);
        } else {
          for (int k = 0; k < counts[u]; ++k) acc += b * eval(u, rem - 1, rng, sm);
        }
      }
    } else {
      for (int u = 0; u < K_; ++u)
        for (int k = 0; k < counts[u]; ++k) {
          const double b = spec_.weight(t, u).sample(rng);
          mass += b;
          if (b != 0.0) acc += b * eval(u, rem - 1, rng, sm);
        }
    }
    return mass > 0.0 ? acc / mass : 0.0;
  }

 private:
  const KMatrix& q_;
  const ModelSpec& spec_;
  std::span<const ScalarDist> leaves_;
  int K_;
};

}  // namespace

MonteCarloEstimate estimate_a_s(int r, int s, const KMatrix& q, const ModelSpec& spec,
                                std::span<const ScalarDist> leaf_laws, const KMatrix& M_breve, int replications,
                                std::uint64_t seed, int threads) {
  if (replications < 1) throw std::invalid_argument("estimate_a_s: need at least one replication");
  if (s < 0) throw std::invalid_argument("estimate_a_s: s must be nonnegative");
  if (static_cast<int>(leaf_laws.size()) != q.rows())
    throw std::invalid_argument("estimate_a_s: one leaf law per type is required");
  Vector x(q.rows());
  for (int t = 0; t < q.rows(); ++t) x[t] = leaf_laws[static_cast<std::size_t>(t)].mean();
  Vector target = x;
  for (int k = 0; k < s; ++k) target = M_breve * target;
  const double centre = target[r];
  // Upper bound on the expected work per tree, in node visits.
  const double work = expected_tree_size(r, q, std::max(s - 1, 0));
  if (work > kDefaultTreeBudget) throw BudgetError(budget_message(work, kDefaultTreeBudget));

  const StreamingTree walker(q, spec, leaf_laws);
  const auto draws = parallel_map(replications, threads, [&](int rep) {
    Engine rng = make_engine(seed, Stream::kTree,
                             {static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(s),
                              static_cast<std::uint64_t>(rep)});
    auto sm = walker.samplers();
    return std::abs(walker.eval(r, s, rng, sm) - centre);
  });
  MonteCarloEstimate est;
  est.replications = replications;
  est.mean = std::accumulate(draws.begin(), draws.end(), 0.0) / replications;
  if (replications > 1) {
    double ss = 0.0;
    for (double v : draws) ss += (v - est.mean) * (v - est.mean);
    est.se = std::sqrt(ss / (replications - 1) / replications);
  }
  return est;
}

NeighborhoodDiagnostic neighborhood_diagnostic(const GraphSample& g, int vertex, int depth) {
  if (vertex < 0 || vertex >= g.n) throw std::invalid_argument("neighborhood_diagnostic: vertex out of range");
  if (depth < 0) throw std::invalid_argument("neighborhood_diagnostic: depth must be nonnegative");
  NeighborhoodDiagnostic out;
  out.vertex = vertex;
  out.is_tree.assign(static_cast<std::size_t>(depth) + 1, true);
  out.census.assign(static_cast<std::size_t>(depth) + 1, std::vector<int>(static_cast<std::size_t>(g.K), 0));
  out.in_degrees.resize(static_cast<std::size_t>(depth) + 1);
  std::vector<int> frontier{vertex}, next;
  std::unordered_set<int> seen{vertex};
  out.census[0][g.labels[vertex]] = 1;
  out.in_degrees[0].push_back(g.in_degree(vertex));
  bool tree = true;
  for (int lv = 1; lv <= depth; ++lv) {
    next.clear();
    for (int v : frontier)
      for (int u : g.in_neighbors(v)) {
        if (!seen.insert(u).second) {
          tree = false;
          continue;
        }
        next.push_back(u);
        ++out.census[lv][g.labels[u]];
        out.in_degrees[lv].push_back(g.in_degree(u));
      }
    out.is_tree[lv] = tree;
    frontier.swap(next);
  }
  return out;
}

TreeLikenessRow tree_likeness(const ModelSpec& spec, int n, double theta, int depth, int graphs,
                              int vertices_per_graph, std::uint64_t seed, int threads) {
  if (graphs < 1) throw std::invalid_argument("tree_likeness: need at least one graph");
  const int per_graph = (vertices_per_graph <= 0 || vertices_per_graph >= n) ? n : vertices_per_graph;
  const auto failures = parallel_map(graphs, threads, [&](int rep) {
    const std::uint64_t gseed = derive_seed(seed, Stream::kMisc, {static_cast<std::uint64_t>(n),
                                                                  static_cast<std::uint64_t>(rep)});
    GraphSample g = sample_graph(spec, sample_labels(spec, n, gseed), theta, gseed);
    long long bad = 0;
    for (int v = 0; v < per_graph; ++v)
      if (!neighborhood_diagnostic(g, v, depth).is_tree.back()) ++bad;
    return bad;
  });
  TreeLikenessRow row;
  row.n = n;
  row.theta = theta;
  row.depth = depth;
  row.vertex_count_checked = static_cast<long long>(graphs) * per_graph;
  row.non_tree_fraction =
      static_cast<double>(std::accumulate(failures.begin(), failures.end(), 0LL)) / row.vertex_count_checked;
  return row;
}

}  // namespace oplab
