#include "oplab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace oplab {

namespace {

// Above this edge probability, per-pair Bernoulli draws beat geometric skips.
constexpr double kBernoulliCutoff = 0.25;

}  // namespace

std::vector<double> empirical_shares(std::span<const int> labels, int K) {
  if (labels.empty()) throw std::invalid_argument("empirical_shares: need at least one vertex");
  std::vector<double> counts(static_cast<std::size_t>(K), 0.0);
  for (int j : labels) {
    if (j < 0 || j >= K) throw std::invalid_argument("empirical_shares: label out of range");
    counts[static_cast<std::size_t>(j)] += 1.0;
  }
  const double n = static_cast<double>(labels.size());
  for (double& x : counts) x /= n;
  return counts;
}

std::vector<int> sample_labels(const ModelSpec& spec, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_labels: n must be at least 1");
  Engine rng = make_engine(seed, Stream::kLabels, {static_cast<std::uint64_t>(n)});
  std::vector<int> labels(static_cast<std::size_t>(n));
  if (spec.label_mode == LabelMode::kIid) {
    std::discrete_distribution<int> pick(spec.pi.begin(), spec.pi.end());
    for (int& j : labels) j = pick(rng);
    return labels;
  }
  // Fixed composition, largest remainder for the leftover vertices.
  std::vector<int> count(static_cast<std::size_t>(spec.K));
  std::vector<std::pair<double, int>> remainder;
  int assigned = 0;
  for (int r = 0; r < spec.K; ++r) {
    const double exact = n * spec.pi[r];
    count[r] = static_cast<int>(std::floor(exact));
    assigned += count[r];
    remainder.emplace_back(exact - count[r], r);
  }
  std::stable_sort(remainder.begin(), remainder.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int i = 0; assigned < n; ++i, ++assigned) ++count[remainder[static_cast<std::size_t>(i % spec.K)].second];
  std::size_t pos = 0;
  for (int r = 0; r < spec.K; ++r)
    for (int i = 0; i < count[r]; ++i) labels[pos++] = r;
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

GraphSample sample_graph(const ModelSpec& spec, std::vector<int> labels, double theta, std::uint64_t seed) {
  if (!(theta > 0.0)) throw std::invalid_argument("sample_graph: theta must be positive");
  const int n = static_cast<int>(labels.size());
  GraphSample g;
  g.n = n;
  g.K = spec.K;
  g.pi_hat = empirical_shares(labels, spec.K);
  g.labels = std::move(labels);

  std::vector<std::vector<int>> members(static_cast<std::size_t>(spec.K));
  for (int i = 0; i < n; ++i) members[g.labels[i]].push_back(i);

  Engine edge_rng = make_engine(seed, Stream::kEdges);
  Engine weight_rng = make_engine(seed, Stream::kWeights);
  Engine belief_rng = make_engine(seed, Stream::kBeliefs);

  g.in_offsets.assign(static_cast<std::size_t>(n) + 1, 0);
  g.in_sources.reserve(static_cast<std::size_t>(std::min<double>(
      1.0 * n * n, n * theta * std::max(1.0, spec.kappa.maxCoeff()) * 1.2 + 16)));

  for (int i = 0; i < n; ++i) {
    const int r = g.labels[i];
    for (int s = 0; s < spec.K; ++s) {
      const double p = std::min(spec.kappa(s, r) * theta / n, 1.0);
      if (p <= 0.0) continue;
      const auto& cand = members[s];
      const auto m = static_cast<std::ptrdiff_t>(cand.size());
      if (p >= kBernoulliCutoff) {
        for (int j : cand) {
          if (j == i) continue;
          if (p >= 1.0 || uniform01(edge_rng) < p) g.in_sources.push_back(j);
        }
      } else {
        // Gap to the next success among independent Bernoulli(p) trials.
        std::geometric_distribution<std::ptrdiff_t> gap(p);
        for (std::ptrdiff_t pos = gap(edge_rng); pos < m; pos += 1 + gap(edge_rng)) {
          const int j = cand[static_cast<std::size_t>(pos)];
          if (j != i) g.in_sources.push_back(j);
        }
      }
    }
    // Members of different communities interleave: keep each list sorted.
    const auto begin = g.in_sources.begin() + static_cast<std::ptrdiff_t>(g.in_offsets[i]);
    std::sort(begin, g.in_sources.end());
    g.in_offsets[i + 1] = g.in_sources.size();
  }

  g.in_weights.resize(g.in_sources.size());
  for (int i = 0; i < n; ++i)
    for (std::size_t e = g.in_offsets[i]; e < g.in_offsets[i + 1]; ++e)
      g.in_weights[e] = spec.weight(g.labels[i], g.labels[g.in_sources[e]]).sample(weight_rng);

  g.Q.resize(n, spec.ell);
  for (int i = 0; i < n; ++i) spec.beliefs[g.labels[i]].sample_into(g.Q.row(i), belief_rng);
  return g;
}

RowStochasticMatrix RowStochasticMatrix::from_graph(const GraphSample& g, Storage storage) {
  RowStochasticMatrix C;
  C.n_ = g.n;
  C.zero_row_.assign(static_cast<std::size_t>(g.n), 0);
  if (storage == Storage::kAuto) {
    const double mean_degree = g.n > 0 ? static_cast<double>(g.edge_count()) / g.n : 0.0;
    storage = mean_degree > g.n / 4.0 ? Storage::kDense : Storage::kSparse;
  }
  C.dense_ = storage == Storage::kDense;
  C.offsets_ = g.in_offsets;
  C.cols_ = g.in_sources;
  C.vals_.resize(g.in_weights.size());
  for (int i = 0; i < g.n; ++i) {
    double total = 0.0;
    for (std::size_t e = g.in_offsets[i]; e < g.in_offsets[i + 1]; ++e) total += g.in_weights[e];
    if (total > 0.0) {
      for (std::size_t e = g.in_offsets[i]; e < g.in_offsets[i + 1]; ++e) C.vals_[e] = g.in_weights[e] / total;
    } else {
      for (std::size_t e = g.in_offsets[i]; e < g.in_offsets[i + 1]; ++e) C.vals_[e] = 0.0;
      C.zero_row_[i] = 1;
    }
  }
  if (C.dense_) {
    C.dense_ = false;
    C.full_ = C.to_dense();
    C.dense_ = true;
    C.offsets_.clear();
    C.cols_.clear();
    C.vals_.clear();
  }
  return C;
}

void RowStochasticMatrix::multiply(const Matrix& x, Matrix& out) const {
  if (x.rows() != n_) throw std::invalid_argument("RowStochasticMatrix::multiply: dimension mismatch");
  if (dense_) {
    out.noalias() = full_ * x;
    return;
  }
  out.resize(n_, x.cols());
  for (int i = 0; i < n_; ++i) {
    auto row = out.row(i);
    row.setZero();
    for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e) row += vals_[e] * x.row(cols_[e]);
  }
}

Eigen::RowVectorXd RowStochasticMatrix::left_multiply(const Eigen::RowVectorXd& u) const {
  if (u.size() != n_) throw std::invalid_argument("RowStochasticMatrix::left_multiply: dimension mismatch");
  if (dense_) return u * full_;
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(n_);
  for (int i = 0; i < n_; ++i) {
    if (u[i] == 0.0) continue;
    for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e) out[cols_[e]] += u[i] * vals_[e];
  }
  return out;
}

double RowStochasticMatrix::row_sum(int i) const {
  if (dense_) return full_.row(i).sum();
  double s = 0.0;
  for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e) s += vals_[e];
  return s;
}

Matrix RowStochasticMatrix::to_dense() const {
  if (dense_) return full_;
  Matrix m = Matrix::Zero(n_, n_);
  for (int i = 0; i < n_; ++i)
    for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e) m(i, cols_[e]) += vals_[e];
  return m;
}

void write_graph_dump(const GraphSample& g, std::ostream& os) {
  os.precision(17);
  os << g.n << ' ' << g.K << '\n';
  for (int i = 0; i < g.n; ++i) {
    os << i << ' ' << g.labels[i] + 1;
    for (Eigen::Index t = 0; t < g.Q.cols(); ++t) os << ' ' << g.Q(i, t);
    os << '\n';
  }
  for (int i = 0; i < g.n; ++i)
    for (std::size_t e = g.in_offsets[i]; e < g.in_offsets[i + 1]; ++e)
      os << i << ' ' << g.in_sources[e] << ' ' << g.in_weights[e] << '\n';
}

GraphSample read_graph_dump(std::istream& is, int ell) {
  GraphSample g;
  if (!(is >> g.n >> g.K) || g.n < 1 || g.K < 1) throw std::runtime_error("graph dump: bad header");
  g.labels.resize(static_cast<std::size_t>(g.n));
  g.Q.resize(g.n, ell);
  for (int v = 0; v < g.n; ++v) {
    int i = 0, label = 0;
    if (!(is >> i >> label) || i != v || label < 1 || label > g.K)
      throw std::runtime_error("graph dump: bad vertex line " + std::to_string(v));
    g.labels[v] = label - 1;
    for (int t = 0; t < ell; ++t)
      if (!(is >> g.Q(v, t))) throw std::runtime_error("graph dump: bad belief on vertex " + std::to_string(v));
  }
  std::vector<std::vector<std::pair<int, double>>> rows(static_cast<std::size_t>(g.n));
  int i = 0, j = 0;
  double b = 0.0;
  while (is >> i >> j >> b) {
    if (i < 0 || i >= g.n || j < 0 || j >= g.n || i == j) throw std::runtime_error("graph dump: bad edge line");
    rows[i].emplace_back(j, b);
  }
  g.in_offsets.assign(static_cast<std::size_t>(g.n) + 1, 0);
  for (int v = 0; v < g.n; ++v) {
    std::sort(rows[v].begin(), rows[v].end());
    for (auto [src, w] : rows[v]) {
      g.in_sources.push_back(src);
      g.in_weights.push_back(w);
    }
    g.in_offsets[v + 1] = g.in_sources.size();
  }
  g.pi_hat = empirical_shares(g.labels, g.K);
  return g;
}

}  // namespace oplab
