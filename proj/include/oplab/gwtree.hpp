#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "oplab/distributions.hpp"
#include "oplab/graph.hpp"
#include "oplab/model_spec.hpp"
#include "oplab/rng.hpp"
#include "oplab/types.hpp"

namespace oplab {

inline constexpr double kDefaultTreeBudget = 1e6;

// q(s, r) = kappa(s, r) pi_s theta: mean number of type-s children of a
// type-r node.
KMatrix offspring_means(const KMatrix& kappa, std::span<const double> shares, double theta);

struct TreeNode {
  int type = 0;
  int parent = -1;  // index in the previous level
  int rank = 0;     // 1-based position among the parent's children
  double B = 0.0;   // weight the parent gives this node
  double C = 0.0;   // B normalised over the parent's children
  double Pi = 1.0;  // product of C along the path from the root
  int first_child = -1;
  int child_count = 0;
  std::vector<int> offspring;  // children per type
};

// Marked K-type Galton-Watson tree materialised level by level.
class GWTree {
 public:
  int K() const { return K_; }
  int depth() const { return static_cast<int>(levels_.size()) - 1; }
  std::size_t size() const;
  const std::vector<TreeNode>& level(int g) const { return levels_.at(static_cast<std::size_t>(g)); }
  const TreeNode& node(int g, int idx) const { return level(g).at(static_cast<std::size_t>(idx)); }
  // Ulam-Harris label of a node: the ranks along the path from the root.
  std::vector<int> label(int g, int idx) const;
  // Sum of Pi over level g.
  double generation_mass(int g) const;

 private:
  friend GWTree sample_tree(int, const KMatrix&, int, const ModelSpec&, std::uint64_t, double);
  int K_ = 1;
  std::vector<std::vector<TreeNode>> levels_;
};

// Expected number of nodes on levels 0..depth for a root of type r.
double expected_tree_size(int r, const KMatrix& q, int depth);

// Offspring of a type-r node: independent Poisson(q(s, r)) per type s, in a
// uniformly random order; edge weights B ~ G_{r,s}. Throws BudgetError if the
// expected or realised node count exceeds `budget`.
GWTree sample_tree(int root_type, const KMatrix& q, int depth, const ModelSpec& spec, std::uint64_t seed,
                   double budget = kDefaultTreeBudget);

// sum_{|i|=s} Pi_i X_i with X given per node of level s (rows) ...
Eigen::RowVectorXd weighted_generation_sum(const GWTree& tree, int s, const Matrix& per_node);
// ... with X_i = values.row(type of i) ...
Eigen::RowVectorXd weighted_generation_sum_by_type(const GWTree& tree, int s, const KMatrix& values);
// ... or X_i ~ laws[type of i] independently.
double weighted_generation_sum(const GWTree& tree, int s, std::span<const ScalarDist> laws, Engine& rng);

struct MonteCarloEstimate {
  double mean = 0.0;
  double se = 0.0;  // standard error of the mean
  int replications = 0;
};

// a_s(r) = E| sum_{|i|=s} Pi_i X_i - (M_breve^s x)_r | over independent trees
// rooted at type r, with X_i ~ leaf_laws[type] and x_t the mean of
// leaf_laws[t]. Trees are evaluated depth-first without being stored.
MonteCarloEstimate estimate_a_s(int r, int s, const KMatrix& q, const ModelSpec& spec,
                                std::span<const ScalarDist> leaf_laws, const KMatrix& M_breve, int replications,
                                std::uint64_t seed, int threads = 1);

// Breadth-first exploration of the in-neighbourhood of one vertex.
struct NeighborhoodDiagnostic {
  int vertex = 0;
  // is_tree[g]: no vertex reached twice within depth g. Entry 0 is true.
  std::vector<bool> is_tree;
  // census[g][r]: newly reached vertices of community r at distance g.
  std::vector<std::vector<int>> census;
  // in_degrees[g]: in-degrees of the vertices reached at distance g.
  std::vector<std::vector<int>> in_degrees;
};

NeighborhoodDiagnostic neighborhood_diagnostic(const GraphSample& g, int vertex, int depth);

struct TreeLikenessRow {
  int n = 0;
  double theta = 0.0;
  int depth = 0;
  long long vertex_count_checked = 0;
  double non_tree_fraction = 0.0;
};

// Samples `graphs` graphs at (n, theta) and checks `vertices_per_graph`
// vertices of each (all vertices when <= 0 or >= n).
TreeLikenessRow tree_likeness(const ModelSpec& spec, int n, double theta, int depth, int graphs,
                              int vertices_per_graph, std::uint64_t seed, int threads = 1);

inline constexpr const char* kTreeDiagnosticHeader = "n,theta,depth,vertex_count_checked,non_tree_fraction";

}  // namespace oplab
