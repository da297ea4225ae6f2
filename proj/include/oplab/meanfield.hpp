#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "oplab/graph.hpp"
#include "oplab/model_spec.hpp"
#include "oplab/rng.hpp"
#include "oplab/types.hpp"

namespace oplab {

// beta_{r,s} = E[B | J_i = r, J_j = s] and v_{r,s} = E[B^2 | ...].
struct WeightMoments {
  KMatrix beta;
  KMatrix v;
};

// Analytic moments of the configured weight laws.
WeightMoments weight_moments(const ModelSpec& spec);
// Plug-in moments from the realised edge weights of one graph (pairs with no
// edges fall back to the analytic value).
WeightMoments estimate_weight_moments(const ModelSpec& spec, const GraphSample& g);

// m_{rs} = shares_s beta_{r,s} kappa(s,r) / sum_t shares_t beta_{r,t} kappa(t,r),
// zero row when the denominator vanishes. With shares = pi this is M; with
// the census shares pi^(n) it is the finite-n matrix.
KMatrix averaged_matrix(std::span<const double> shares, const KMatrix& kappa, const KMatrix& beta);
inline KMatrix build_M(std::span<const double> pi, const KMatrix& kappa, const KMatrix& beta) {
  return averaged_matrix(pi, kappa, beta);
}
inline KMatrix build_breve_M(std::span<const double> pi_hat, const KMatrix& kappa, const KMatrix& beta) {
  return averaged_matrix(pi_hat, kappa, beta);
}

// P(d_i^- = 0 | J_i = r) = prod_s (1 - p_sr)^{count_s}, with
// count_s = n shares_s - 1(s = r) other vertices of community s.
std::vector<double> isolation_probability(const ModelSpec& spec, std::span<const double> shares, int n,
                                          double theta);

struct MeanInputs {
  KMatrix W_bar;  // K x ell, row r = E[W_i^(0) | J_i = r]
  KMatrix R_bar;  // K x ell, row r = E[R_i^(0) | J_i = r]
  std::vector<double> isolated_prob;
};

// W_bar_r = d E[Z | r] + c E[q | r] P(d^- = 0 | r); R_bar from mu_0.
MeanInputs mean_matrices(const ModelSpec& spec, std::span<const double> shares, int n, double theta);

struct RegimeStats {
  std::vector<double> mu;  // mu_r^(n)
  std::vector<double> nu;  // nu_r^(n)
  std::optional<double> Delta;   // absent when no row of M is nonzero
  std::optional<double> Lambda;
  double E_n = 0.0;
  double dense_threshold = 0.0;  // (6 H Lambda)^2 Delta log n
  bool dense_threshold_ok = false;
  bool clipping_free = true;     // max kappa theta / n <= 1
};

RegimeStats regime_stats(const ModelSpec& spec, const WeightMoments& moments, std::span<const double> pi_hat, int n,
                         double theta);

// Everything the mean-field and intermediate processes need at one (n, theta)
// point for a given label census.
struct MeanFieldModel {
  KMatrix M;
  KMatrix M_breve;
  KMatrix beta;
  KMatrix v;
  KMatrix W_bar;
  KMatrix R_bar;
  std::vector<double> isolated_prob;
  std::vector<int> nonzero_rows;
  std::vector<double> pi_hat;
  RegimeStats stats;
  int n = 0;
  double theta = 0.0;
};

MeanFieldModel build_model(const ModelSpec& spec, std::span<const double> pi_hat, int n, double theta,
                           const WeightMoments* moments = nullptr);

// Deterministic part of the approximating processes, for k = 0..k_max:
//   D_k = 1(k>=2) sum_{t=1}^{k-1} sum_{s=1}^t a_{s,t} (P^s W_bar)
//         + sum_{s=1}^k a_{s,k} (P^s R_bar),
// with P = M (mean-field) or P = M_breve (intermediate). Row r is the
// contribution for a vertex of community r.
class DriftTable {
 public:
  DriftTable(const KMatrix& P, const KMatrix& W_bar, const KMatrix& R_bar, double c, double d, int k_max);
  int k_max() const { return static_cast<int>(drift_.size()) - 1; }
  const KMatrix& at(int k) const { return drift_.at(static_cast<std::size_t>(k)); }

 private:
  std::vector<KMatrix> drift_;
};

struct MeanFieldTrajectory {
  Matrix values;  // (k_max + 1) x ell, row k is the value at time k
  bool intermediate = false;
};

// Approximating trajectory of one vertex of community r driven by its own
// signals W^(1..k_max) (rows of `signals`) and initial opinion R0_i:
//   value_k = sum_{t<k} (1-c-d)^t W^(k-t) + D_k(r) + (1-c-d)^k R0_i.
MeanFieldTrajectory meanfield_trajectory(int r, const Matrix& signals, const MeanFieldModel& model,
                                         const Eigen::RowVectorXd& R0_i, double c, double d, int k_max);
// Same construction with M_breve; equals the row of the n x n intermediate
// process through (Mtilde^s X)_{i.} = (M_breve^s x)_{J_i .}.
MeanFieldTrajectory intermediate_trajectory(int r, const Matrix& signals, const MeanFieldModel& model,
                                            const Eigen::RowVectorXd& R0_i, double c, double d, int k_max);

// Dense n x n Mtilde_{ij} = beta_{J_i J_j} kappa(J_j, J_i) /
// (n sum_s beta_{J_i s} pi_s^(n) kappa(s, J_i)). Test oracle only.
// The row identity (Mtilde^s X)_{i.} = (M_breve^s x)_{J_i .} is exact only with
// the diagonal kept; exclude_diagonal zeroes it and the identity then holds
// up to O(1/n).
Matrix materialize_Mtilde(std::span<const int> labels, const KMatrix& kappa, const KMatrix& beta,
                          bool exclude_diagonal = false);

// Streams the coupled approximating process for every vertex at once.
class ApproxProcess {
 public:
  ApproxProcess(const DriftTable& drift, std::span<const int> labels, const Matrix& R0, double c, double d);
  // Consumes W^(k+1) and moves to time k+1.
  void advance(const Matrix& W);
  int time() const { return k_; }
  // Current value for every vertex (n x ell).
  const Matrix& value() const { return value_; }

 private:
  void refresh();
  const DriftTable& drift_;
  std::vector<int> labels_;
  Matrix R0_, S_, value_;
  double c_, d_, decay_ = 1.0;
  int k_ = 0;
};

// Samples the stationary limit R_emptyset of a vertex of community r:
//   sum_{t=0}^T (1-c-d)^t W^(t) + sum_{t=1}^T sum_{s=1}^t a_{s,t} (M^s W_bar)_r,
// with T = ceil(log(tol d / ell) / log(1-d)) so the discarded tail is <= tol.
class StationarySampler {
 public:
  StationarySampler(const ModelSpec& spec, const MeanFieldModel& model, double tol);
  int horizon() const { return T_; }
  const KMatrix& drift() const { return drift_; }
  Eigen::RowVectorXd sample(int r, Engine& rng) const;
  // Closed-form mean of the truncated sum.
  Eigen::RowVectorXd mean(int r) const;

 private:
  ModelSpec spec_;
  MeanFieldModel model_;
  int T_ = 0;
  KMatrix drift_;
};

int stationary_horizon(double tol, double d, int ell);

Eigen::RowVectorXd sample_stationary(int r, const ModelSpec& spec, const MeanFieldModel& model, double tol,
                                     std::uint64_t seed);

// E[Z | r] including the belief-echo component.
Eigen::RowVectorXd signal_mean(const ModelSpec& spec, int r);
Eigen::RowVectorXd belief_mean(const ModelSpec& spec, int r);

// JSON model report: M, M_breve, W_bar, R_bar, regime statistics and flags.
void write_model_report(std::ostream& os, const MeanFieldModel& model);

}  // namespace oplab
