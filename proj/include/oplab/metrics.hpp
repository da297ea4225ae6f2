#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "oplab/distributions.hpp"
#include "oplab/meanfield.hpp"
#include "oplab/model_spec.hpp"
#include "oplab/types.hpp"

namespace oplab {

// Max over rows of the l1 distance between rows: the induced infinity norm
// of Xa - Xb.
double matrix_inf_distance(const Matrix& Xa, const Matrix& Xb);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};
// Ordinary least squares of y on x.
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// Smallest k with (1-d)^k < fraction.
int contraction_horizon(double d, double fraction);

// ---------------------------------------------------------------------------
// Graph process vs mean-field process

struct ErrorParams {
  ModelSpec spec;
  std::vector<int> n_list;
  std::vector<double> thetas;  // one per entry of n_list
  int k_max = 0;               // 0: smallest k with (1-d)^k < 0.01
  int inner = 20;              // graph/signal replications per label draw
  int outer = 5;               // label draws per n
  std::uint64_t seed = 1;
  int threads = 0;
  bool plugin_moments = false;  // beta, v from the realised weights
};

enum class NormType { kInf, kRowL1 };
const char* norm_name(NormType t);

struct ErrorPoint {
  int n = 0;
  double theta = 0.0;
  int k = 0;
  int outer = -1;  // -1 for the aggregate over label draws
  NormType norm = NormType::kInf;
  double estimate = 0.0;
  double se = 0.0;
  int reps = 0;
  bool dense_ok = false;
};

struct ErrorSummary {
  int n = 0;
  double theta = 0.0;
  NormType norm = NormType::kInf;
  // sup over k <= k_max of the per-k estimate, averaged over label draws.
  double sup_estimate = 0.0;
  double se = 0.0;
  std::vector<double> per_outer_sup;
  double E_n_mean = 0.0;
  bool dense_ok = false;
  bool clipping_free = true;
};

struct ErrorCurve {
  int k_max = 0;
  std::vector<ErrorPoint> points;     // aggregated over label draws
  std::vector<ErrorPoint> per_outer;  // one curve per label draw
  std::vector<ErrorSummary> summaries;
  const ErrorSummary& summary(int n, NormType norm) const;
};

// The graph run and the mean-field run share R^(0) and every W_i^(k).
// E_n is realised by fixing the labels for `inner` replications; the
// max over i of E_n||R_i - Rcal_i||_1 uses within-community exchangeability:
// it is the max over communities of the average over that community's
// vertices and the replications.
ErrorCurve error_experiment(const ErrorParams& p);

inline constexpr const char* kErrorCurveHeader = "n,theta,k,norm_type,estimate,stderr,reps,dense_ok";
void write_error_curve(std::ostream& os, const ErrorCurve& curve);
void write_error_curve_per_outer(std::ostream& os, const ErrorCurve& curve);
void write_error_summary(std::ostream& os, const ErrorCurve& curve);

// ---------------------------------------------------------------------------
// Test functions of a trajectory, evaluated on the opinion at the final time.

struct TestFunction {
  enum class Kind { kOne, kProjection, kProduct, kClippedPoly };
  Kind kind = Kind::kProjection;
  int topic = 0;
  int topic2 = 0;
  std::vector<double> coeffs;  // polynomial coefficients, constant first

  // "one", "proj:T", "prod:T1:T2", "poly:T:a0,a1,..." with 1-based topics.
  static TestFunction parse(const std::string& id);
  std::string id() const;
  double operator()(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  double bound() const { return 1.0; }
  bool linear() const { return kind == Kind::kProjection || kind == Kind::kOne; }
};

struct ChaosParams {
  ModelSpec spec;
  int n = 500;
  double theta = 10.0;
  int k = 2;
  // Community of each chosen vertex; the j-th vertex is the lowest-index
  // vertex of that community not already chosen.
  std::vector<int> communities{0, 1};
  // f_j applied to vertex j (same length as communities).
  std::vector<TestFunction> functions;
  // Disjoint vertex tuples with this community pattern pooled per graph.
  // Given the labels every such tuple has the same joint law, so pooling
  // estimates the same quantity with less noise. 0: as many as fit.
  int tuples = 1;
  int inner = 200;
  int outer = 5;
  int limit_samples = 20000;  // Monte Carlo size for non-linear limit means
  std::uint64_t seed = 1;
  int threads = 0;
  // Conditional mode integrates the signals and initial opinions out
  // analytically given the graph (linear functions, m <= 2 only).
  enum class Mode { kAuto, kSimulate, kConditional } mode = Mode::kAuto;
};

struct ChaosOuter {
  std::vector<int> vertices;  // first tuple
  int tuples = 1;
  double joint = 0.0;  // E_n[prod f_j(V)]
  double joint_se = 0.0;
  double product = 0.0;  // prod E[f_j(V) | r_j] under the mean-field law
  double product_se = 0.0;
  double gap = 0.0;  // joint - product, coupled estimator
  double gap_se = 0.0;
  double E_n = 0.0;
};

struct EmpiricalFunctional {
  std::string function;
  int community = 0;
  double empirical = 0.0;  // (1/n) sum_i f(V_i) 1(J_i = r)
  double empirical_se = 0.0;
  double limit = 0.0;  // pi_r E[f | r]
  double limit_se = 0.0;
};

struct ChaosReport {
  int n = 0;
  double theta = 0.0;
  int k = 0;
  bool conditional = false;
  std::vector<ChaosOuter> outers;
  double mean_abs_gap = 0.0;
  double mean_abs_gap_se = 0.0;
  std::vector<EmpiricalFunctional> functionals;  // from the first label draw
};

ChaosReport chaos_experiment(const ChaosParams& p);

inline constexpr const char* kChaosHeader =
    "n,theta,k,outer,vertices,tuples,functions,joint,joint_se,product,product_se,gap,gap_se,E_n";
void write_chaos(std::ostream& os, const ChaosReport& report, const std::vector<TestFunction>& fns);
inline constexpr const char* kFunctionalHeader = "n,theta,k,function,community,empirical,empirical_se,limit,limit_se";
void write_functionals(std::ostream& os, const ChaosReport& report);

// ---------------------------------------------------------------------------
// Stationary regime

struct StationarityParams {
  ModelSpec spec;
  int n = 1000;
  double theta = 100.0;
  double tol = 1e-4;      // burn-in: (1-d)^k_long < tol; also truncation tolerance
  int replications = 20;  // graph runs
  int stationary_samples = 20000;
  std::uint64_t seed = 1;
  int threads = 0;
};

struct StationarityRow {
  int community = 0;
  int topic = 0;
  std::string moment;  // "mean" or "second"
  double simulated = 0.0;
  double simulated_se = 0.0;
  double stationary = 0.0;
  double stationary_se = 0.0;
  double closed_form = 0.0;  // exact mean of the truncated sum (means only)
  double gap = 0.0;
  double combined_se = 0.0;
};

struct StationarityReport {
  int n = 0;
  double theta = 0.0;
  int k_long = 0;
  int horizon = 0;
  std::vector<StationarityRow> rows;
};

StationarityReport stationarity_experiment(const StationarityParams& p);

inline constexpr const char* kStationarityHeader =
    "n,theta,k_long,community,topic,moment,simulated,simulated_se,stationary,stationary_se,closed_form,gap,combined_se";
void write_stationarity(std::ostream& os, const StationarityReport& report);

// ---------------------------------------------------------------------------
// Random sums

struct CountLaw {
  enum class Kind { kPoisson, kBinomial } kind = Kind::kPoisson;
  double mean = 1.0;  // Poisson mean
  int trials = 0;     // Binomial
  double p = 0.0;
  double expectation() const { return kind == Kind::kPoisson ? mean : trials * p; }
  // "poisson(m)" or "binomial(N,p)".
  static CountLaw parse(const std::string& text);
  std::string to_string() const;
};

struct ConcentrationCase {
  std::string name;
  double H = 1.0;
  std::vector<CountLaw> counts;   // N_r, one per type
  std::vector<ScalarDist> weights;  // B^(r) on [0, H]
  std::vector<ScalarDist> values;   // X^(r) on [-1, 1]
  std::vector<double> eps;

  double mu() const;
  double nu() const;
  // Throws SpecError on a malformed case.
  void validate() const;
};

// exp(-(e mu)^2 / (2 nu) + H (e mu)^3 / (2 nu^2)); 0 when nu = 0.
double sum_tail_bound(double eps, double mu, double nu, double H);
// 4 exp(-(e/2)^2 mu^2 / (2 nu) + H (e/2)^3 mu^3 / (2 nu^2)); 0 when nu = 0.
double ratio_tail_bound(double eps, double mu, double nu, double H);

struct ConcentrationRow {
  std::string name;
  std::string check;  // "sum" or "ratio"
  double eps = 0.0;
  double empirical = 0.0;
  double se = 0.0;  // binomial standard error at the bound value
  double bound = 0.0;
  bool bound_informative = false;  // bound <= 1
  bool pass = true;                // empirical <= bound + 3 se, or bound > 1
};

std::vector<ConcentrationRow> concentration_check(const ConcentrationCase& c, int replications, std::uint64_t seed,
                                                  int threads = 0);

inline constexpr const char* kConcentrationHeader = "case,check,eps,empirical,stderr,bound,bound_informative,pass";
void write_concentration(std::ostream& os, const std::vector<ConcentrationRow>& rows);

}  // namespace oplab
