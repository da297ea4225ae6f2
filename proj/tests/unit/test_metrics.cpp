#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oplab/metrics.hpp"

using namespace oplab;

namespace {

ModelSpec dense_k1(double c = 0.3, double d = 0.2) {
  return ModelSpec::homogeneous(1, {1.0}, KMatrix::Ones(1, 1), 1, c, d, ScalarDist::point(1),
                                ScalarDist::uniform(-1, 1), ScalarDist::uniform(-1, 1));
}

ModelSpec two_block() {
  KMatrix kappa(2, 2);
  kappa << 2, 1, 1, 2;
  return ModelSpec::homogeneous(2, {0.5, 0.5}, kappa, 2, 0.3, 0.2, ScalarDist::uniform(0, 1),
                                ScalarDist::uniform(-1, 1), ScalarDist::uniform(-1, 1));
}

}  // namespace

TEST_CASE("matrix_inf_distance") {
  Matrix a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 0, 2, 3, 1;
  CHECK(matrix_inf_distance(a, a) == 0.0);
  CHECK(matrix_inf_distance(a, b) == doctest::Approx(3.0));
  Matrix c = a;
  c(1, 0) += 0.25;
  CHECK(matrix_inf_distance(a, c) == doctest::Approx(0.25));
  CHECK_THROWS_AS(matrix_inf_distance(a, Matrix::Zero(3, 2)), std::invalid_argument);
}

TEST_CASE("fit_line and contraction_horizon") {
  const auto f = fit_line({0, 1, 2, 3}, {1, 3, 5, 7});
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK_THROWS_AS(fit_line({1}, {1}), std::invalid_argument);
  CHECK(contraction_horizon(0.2, 0.01) == 21);
  CHECK(std::pow(0.8, 21) < 0.01);
  CHECK(std::pow(0.8, 20) >= 0.01);
  CHECK(contraction_horizon(0.5, 1e-4) == 14);
}

TEST_CASE("error experiment: no network term means no error") {
  ErrorParams p;
  p.spec = dense_k1(0.0, 0.3);
  p.n_list = {60, 120};
  p.thetas = {10.0, 10.0};
  p.inner = 3;
  p.outer = 2;
  const ErrorCurve curve = error_experiment(p);
  CHECK(curve.k_max == contraction_horizon(0.3, 0.01));
  for (const auto& pt : curve.points) CHECK(pt.estimate < 1e-12);
}

TEST_CASE("error experiment: structure, invariants and thread independence") {
  ErrorParams p;
  p.spec = two_block();
  p.n_list = {100, 300};
  p.thetas = {20.0, 40.0};
  p.inner = 4;
  p.outer = 2;
  p.k_max = 8;
  p.threads = 1;
  const ErrorCurve a = error_experiment(p);
  p.threads = 3;
  const ErrorCurve b = error_experiment(p);
  REQUIRE(a.points.size() == b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) CHECK(a.points[i].estimate == b.points[i].estimate);
  CHECK(a.points.size() == 2 * 2 * 9);
  CHECK(a.per_outer.size() == 2 * 2 * 2 * 9);
  for (int n : p.n_list) {
    const auto& inf = a.summary(n, NormType::kInf);
    const auto& l1 = a.summary(n, NormType::kRowL1);
    for (const auto& pt : a.points)
      if (pt.n == n && pt.norm == NormType::kInf) CHECK(inf.sup_estimate >= pt.estimate - 1e-15);
    for (int k = 0; k <= 8; ++k) {
      const ErrorPoint *pi = nullptr, *pl = nullptr;
      for (const auto& pt : a.points)
        if (pt.n == n && pt.k == k) (pt.norm == NormType::kInf ? pi : pl) = &pt;
      REQUIRE(pi);
      REQUIRE(pl);
      CHECK(pl->estimate <= pi->estimate + 2.0 * std::hypot(pi->se, pl->se) + 1e-15);
    }
    CHECK(l1.per_outer_sup.size() == 2);
  }
  // k = 0 shares R^(0) exactly.
  for (const auto& pt : a.points)
    if (pt.k == 0) CHECK(pt.estimate == 0.0);
  std::ostringstream os;
  write_error_curve(os, a);
  CHECK(os.str().rfind(std::string(kErrorCurveHeader) + "\n", 0) == 0);
  ErrorParams bad = p;
  bad.inner = 0;
  CHECK_THROWS_AS(error_experiment(bad), std::invalid_argument);
}

TEST_CASE("test functions") {
  Eigen::RowVectorXd x(3);
  x << 0.5, -0.4, 0.9;
  CHECK(TestFunction::parse("one")(x) == 1.0);
  CHECK(TestFunction::parse("proj:2")(x) == -0.4);
  CHECK(TestFunction::parse("prod:1:3")(x) == doctest::Approx(0.45));
  CHECK(TestFunction::parse("poly:1:0,0,4")(x) == 1.0);  // 4 * 0.25 clipped
  CHECK(TestFunction::parse("poly:2:0.1,1")(x) == doctest::Approx(-0.3));
  for (const char* bad : {"proj:0", "proj", "cube:1", "prod:1", "poly:1:", "proj:x"})
    CHECK_THROWS_AS(TestFunction::parse(bad), std::invalid_argument);
  CHECK(TestFunction::parse("poly:1:0.5,2").id() == "poly:1:0.5,2");
}

TEST_CASE("chaos: constant function reproduces the census exactly") {
  for (auto mode : {ChaosParams::Mode::kConditional, ChaosParams::Mode::kSimulate}) {
    ChaosParams p;
    p.spec = two_block();
    p.n = 200;
    p.theta = 15.0;
    p.k = 2;
    p.communities = {0, 1};
    p.functions = {TestFunction::parse("one"), TestFunction::parse("proj:1")};
    p.inner = 5;
    p.outer = 1;
    p.mode = mode;
    const ChaosReport rep = chaos_experiment(p);
    const auto pi_hat = empirical_shares(sample_labels(p.spec, p.n, derive_seed(p.seed, Stream::kLabels, {0})), 2);
    int seen = 0;
    for (const auto& f : rep.functionals)
      if (f.function == "one") {
        CHECK(f.empirical == doctest::Approx(pi_hat[f.community]).epsilon(1e-12));
        CHECK(f.empirical_se < 1e-12);
        CHECK(f.limit == doctest::Approx(p.spec.pi[f.community]));
        ++seen;
      }
    CHECK(seen == 2);
    for (const auto& f : rep.functionals) CHECK(std::abs(f.empirical) <= 1.0);
  }
}

TEST_CASE("chaos: single vertex gap is Monte Carlo noise, modes agree") {
  ChaosParams p;
  p.spec = two_block();
  p.n = 400;
  p.theta = 40.0;
  p.k = 1;
  p.communities = {1};
  p.functions = {TestFunction::parse("proj:1")};
  p.inner = 400;
  p.outer = 1;
  p.mode = ChaosParams::Mode::kSimulate;
  const ChaosReport sim = chaos_experiment(p);
  CHECK(std::abs(sim.outers[0].gap) < 4.0 * sim.outers[0].gap_se + 0.01);
  p.mode = ChaosParams::Mode::kConditional;
  const ChaosReport cond = chaos_experiment(p);
  CHECK(cond.conditional);
  CHECK(std::abs(cond.outers[0].joint - sim.outers[0].joint) <
        4.0 * std::hypot(cond.outers[0].joint_se, sim.outers[0].joint_se) + 1e-3);
  p.functions = {TestFunction::parse("prod:1:2")};
  CHECK_THROWS_AS(chaos_experiment(p), std::invalid_argument);
}

TEST_CASE("chaos: conditional covariance matches simulation for a pair") {
  ChaosParams p;
  p.spec = two_block();
  p.spec.signals[0].belief_weight = 0.4;
  p.n = 120;
  p.theta = 6.0;
  p.k = 2;
  p.communities = {0, 0};
  p.functions = {TestFunction::parse("proj:1"), TestFunction::parse("proj:1")};
  p.inner = 3000;
  p.outer = 1;
  p.mode = ChaosParams::Mode::kSimulate;
  const auto sim = chaos_experiment(p);
  p.mode = ChaosParams::Mode::kConditional;
  const auto cond = chaos_experiment(p);
  CHECK(std::abs(cond.outers[0].joint - sim.outers[0].joint) <
        4.0 * std::hypot(cond.outers[0].joint_se, sim.outers[0].joint_se) + 1e-3);
}

TEST_CASE("chaos: pooling disjoint tuples") {
  ChaosParams p;
  p.spec = two_block();
  p.spec.label_mode = LabelMode::kFixed;
  p.n = 100;
  p.theta = 10.0;
  p.k = 2;
  p.communities = {0, 1};
  p.functions = {TestFunction::parse("proj:1"), TestFunction::parse("proj:1")};
  p.inner = 40;
  p.outer = 1;
  p.mode = ChaosParams::Mode::kSimulate;
  const auto single = chaos_experiment(p);
  p.tuples = 0;
  const auto pooled = chaos_experiment(p);
  CHECK(single.outers[0].tuples == 1);
  CHECK(pooled.outers[0].tuples == 50);
  CHECK(pooled.outers[0].vertices == single.outers[0].vertices);
  CHECK(pooled.outers[0].gap_se < single.outers[0].gap_se);
  CHECK(std::abs(pooled.outers[0].gap - single.outers[0].gap) <
        4.0 * std::hypot(pooled.outers[0].gap_se, single.outers[0].gap_se));
  p.tuples = 51;
  CHECK_THROWS_AS(chaos_experiment(p), std::runtime_error);
  p.tuples = 5;
  p.mode = ChaosParams::Mode::kConditional;
  CHECK(chaos_experiment(p).outers[0].tuples == 5);
}

TEST_CASE("stationarity: deterministic signals without a network term") {
  StationarityParams p;
  p.spec = ModelSpec::homogeneous(1, {1.0}, KMatrix::Ones(1, 1), 1, 0.0, 0.3, ScalarDist::point(1),
                                  ScalarDist::uniform(-1, 1), ScalarDist::point(0.45));
  p.n = 50;
  p.theta = 10.0;
  p.replications = 3;
  p.stationary_samples = 100;
  const auto rep = stationarity_experiment(p);
  for (const auto& row : rep.rows) {
    const double target = row.moment == "mean" ? 0.45 : 0.45 * 0.45;
    CHECK(std::abs(row.simulated - target) < 1e-3);
    CHECK(std::abs(row.stationary - target) < 1e-3);
  }
}

TEST_CASE("stationarity: community without in-edges") {
  KMatrix kappa(2, 2);
  kappa << 2, 0, 1, 0;  // community 2 receives nothing
  StationarityParams p;
  p.spec = ModelSpec::homogeneous(2, {0.5, 0.5}, kappa, 1, 0.3, 0.2, ScalarDist::point(1),
                                  ScalarDist::uniform(-0.2, 1), ScalarDist::uniform(-1, 0.6));
  p.n = 300;
  p.theta = 30.0;
  p.replications = 10;
  p.stationary_samples = 20000;
  const auto rep = stationarity_experiment(p);
  const double b = 1.0 - 0.3 - 0.2;
  const double closed = (0.2 * -0.2 + 0.3 * 0.4) / (1.0 - b);
  bool seen = false;
  for (const auto& row : rep.rows)
    if (row.community == 1 && row.moment == "mean") {
      CHECK(row.closed_form == doctest::Approx(closed).epsilon(1e-3));
      CHECK(row.gap < 3.0 * row.combined_se + 1e-3);
      seen = true;
    }
  CHECK(seen);
}

TEST_CASE("concentration: bounds and degenerate cases") {
  CHECK(sum_tail_bound(0.1, 10.0, 0.0, 1.0) == 0.0);
  CHECK(ratio_tail_bound(0.1, 10.0, 0.0, 1.0) == 0.0);
  CHECK(sum_tail_bound(0.5, 50.0, 50.0, 1.0) == doctest::Approx(std::exp(-625.0 / 100.0 + 15625.0 / 5000.0)));
  CHECK(ratio_tail_bound(0.1, 50.0, 50.0, 1.0) > 1.0);

  ConcentrationCase zero;
  zero.name = "zero";
  zero.counts = {CountLaw::parse("poisson(30)")};
  zero.weights = {ScalarDist::point(0)};
  zero.values = {ScalarDist::uniform(-1, 1)};
  zero.eps = {0.01, 0.5};
  for (const auto& row : concentration_check(zero, 2000, 1)) {
    CHECK(row.empirical == 0.0);
    CHECK(row.pass);
  }

  ConcentrationCase c;
  c.name = "coin";
  c.counts = {CountLaw::parse("poisson(50)")};
  c.weights = {ScalarDist::point(1)};
  c.values = {ScalarDist::mixture({0.5, 0.5}, {ScalarDist::point(-1), ScalarDist::point(1)})};
  c.eps = {0.05, 0.5, 1.5};
  const auto rows = concentration_check(c, 100000, 2, 2);
  for (const auto& row : rows) {
    CHECK(row.empirical >= 0.0);
    CHECK(row.empirical <= 1.0);
    CHECK(row.bound >= 0.0);
    CHECK(row.pass);
    if (!row.bound_informative) CHECK(row.pass);
  }
  CHECK(concentration_check(c, 1000, 3, 1)[0].empirical == concentration_check(c, 1000, 3, 4)[0].empirical);
}

TEST_CASE("concentration: count laws") {
  CHECK(CountLaw::parse("binomial(100,0.3)").expectation() == doctest::Approx(30.0));
  CHECK(CountLaw::parse("poisson(7.5)").to_string() == "poisson(7.5)");
  for (const char* bad : {"geometric(0.5)", "poisson(-1)", "binomial(10)", "binomial(10,2)", "poisson"})
    CHECK_THROWS_AS(CountLaw::parse(bad), std::invalid_argument);
  ConcentrationCase c;
  c.counts = {CountLaw::parse("poisson(5)")};
  c.weights = {ScalarDist::uniform(0, 2)};
  c.values = {ScalarDist::uniform(-1, 1)};
  c.H = 1.0;
  CHECK_THROWS_AS(c.validate(), SpecError);
}
