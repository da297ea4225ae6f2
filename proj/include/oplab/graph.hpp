#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "oplab/model_spec.hpp"
#include "oplab/rng.hpp"
#include "oplab/types.hpp"

namespace oplab {

// One realised directed SBM. Edges are stored as in-adjacency lists in CSR
// form: the in-neighbours j of vertex i (edges j -> i) with the unnormalised
// weight B_ij that i gives to j.
struct GraphSample {
  int n = 0;
  int K = 1;
  std::vector<int> labels;                 // 0-based community of each vertex
  std::vector<std::size_t> in_offsets{0};  // size n + 1
  std::vector<int> in_sources;
  std::vector<double> in_weights;
  Matrix Q;                    // n x ell internal beliefs
  std::vector<double> pi_hat;  // empirical community shares

  std::size_t edge_count() const { return in_sources.size(); }
  int in_degree(int i) const { return static_cast<int>(in_offsets[i + 1] - in_offsets[i]); }
  std::span<const int> in_neighbors(int i) const {
    return {in_sources.data() + in_offsets[i], in_offsets[i + 1] - in_offsets[i]};
  }
  std::span<const double> in_weights_of(int i) const {
    return {in_weights.data() + in_offsets[i], in_offsets[i + 1] - in_offsets[i]};
  }
};

// Exact census shares. Throws std::invalid_argument on an empty label vector.
std::vector<double> empirical_shares(std::span<const int> labels, int K);

// Labels i.i.d. from pi (LabelMode::kIid) or a uniformly permuted fixed
// composition with floor(n pi_r) per community plus largest-remainder
// rounding (LabelMode::kFixed).
std::vector<int> sample_labels(const ModelSpec& spec, int n, std::uint64_t seed);

// Edge j -> i present independently with probability
// min(kappa(J_j, J_i) theta / n, 1); weights B_ij ~ G_{J_i, J_j} on present
// edges; beliefs Q_i ~ F_{J_i}. Edges, weights and beliefs use separate
// streams derived from `seed`.
GraphSample sample_graph(const ModelSpec& spec, std::vector<int> labels, double theta, std::uint64_t seed);

// Normalised influence matrix C. Row i is B_i. / sum(B_i.) over in-neighbours,
// or identically zero when the vertex has no in-neighbours or all its
// in-weights vanish. Stored sparse, or dense when the mean in-degree exceeds
// n / 4.
class RowStochasticMatrix {
 public:
  enum class Storage { kAuto, kSparse, kDense };

  RowStochasticMatrix() = default;
  static RowStochasticMatrix from_graph(const GraphSample& g, Storage storage = Storage::kAuto);

  int rows() const { return n_; }
  bool is_dense() const { return dense_; }
  bool zero_row(int i) const { return zero_row_[static_cast<std::size_t>(i)] != 0; }

  // out = C * x (out must not alias x).
  void multiply(const Matrix& x, Matrix& out) const;
  Matrix multiply(const Matrix& x) const {
    Matrix out(x.rows(), x.cols());
    multiply(x, out);
    return out;
  }
  // u * C for a row vector u of length n.
  Eigen::RowVectorXd left_multiply(const Eigen::RowVectorXd& u) const;
  double row_sum(int i) const;
  Matrix to_dense() const;

 private:
  int n_ = 0;
  bool dense_ = false;
  std::vector<std::size_t> offsets_;
  std::vector<int> cols_;
  std::vector<double> vals_;
  Matrix full_;
  std::vector<std::uint8_t> zero_row_;
};

inline RowStochasticMatrix normalize_weights(const GraphSample& g) { return RowStochasticMatrix::from_graph(g); }

// Text dump: "n K", then n lines "i J_i Q_i1 ... Q_iell" (J_i 1-based), then
// one line "i j B_ij" per edge j -> i. Indices are 0-based.
void write_graph_dump(const GraphSample& g, std::ostream& os);
GraphSample read_graph_dump(std::istream& is, int ell);

}  // namespace oplab
