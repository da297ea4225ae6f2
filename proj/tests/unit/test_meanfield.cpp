#include <cmath>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "oplab/dynamics.hpp"
#include "oplab/meanfield.hpp"

using namespace oplab;

namespace {

ModelSpec two_block(double kappa_cross = 1.0) {
  KMatrix kappa(2, 2);
  kappa << 2, kappa_cross, kappa_cross, 2;
  return ModelSpec::homogeneous(2, {0.5, 0.5}, kappa, 1, 0.3, 0.2, ScalarDist::point(1),
                                ScalarDist::uniform(-1, 1), ScalarDist::uniform(-1, 1));
}

ModelSpec random_spec(Engine& rng) {
  const int K = 1 + static_cast<int>(uniform01(rng) * 3);
  const int ell = 1 + static_cast<int>(uniform01(rng) * 2);
  std::vector<double> pi(static_cast<std::size_t>(K));
  double tot = 0.0;
  for (double& p : pi) tot += (p = 0.2 + uniform01(rng));
  for (double& p : pi) p /= tot;
  KMatrix kappa = KMatrix::Random(K, K).cwiseAbs() * 3.0;
  const double d = 0.1 + 0.6 * uniform01(rng);
  const double c = (1.0 - d) * uniform01(rng);
  ModelSpec s = ModelSpec::homogeneous(K, pi, kappa, ell, c, d, ScalarDist::uniform(0.2, 1),
                                       ScalarDist::uniform(-1, 1), ScalarDist::uniform(-1, 1));
  for (int r = 0; r < K; ++r) {
    const double lo = -1.0 + 1.5 * uniform01(rng);
    s.signals[static_cast<std::size_t>(r)].media = VectorDist::broadcast(ScalarDist::uniform(lo, 1.0), ell);
    s.beliefs[static_cast<std::size_t>(r)] = VectorDist::broadcast(ScalarDist::uniform(-1.0, 1.0 - 1.5 * uniform01(rng)), ell);
  }
  return s;
}

double inf_norm(const KMatrix& A) { return A.cwiseAbs().rowwise().sum().maxCoeff(); }

}  // namespace

TEST_CASE("averaged matrix examples") {
  const std::vector<double> one{1.0};
  CHECK(build_M(one, KMatrix::Ones(1, 1), KMatrix::Ones(1, 1))(0, 0) == 1.0);
  const ModelSpec s = two_block();
  const KMatrix M = build_M(s.pi, s.kappa, weight_moments(s).beta);
  CHECK(M(0, 0) == doctest::Approx(2.0 / 3.0));
  CHECK(M(0, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(M(1, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(M(1, 1) == doctest::Approx(2.0 / 3.0));
  CHECK(build_breve_M(s.pi, s.kappa, weight_moments(s).beta) == M);
  // Community 1 receives no edges: kappa(s, 1) = 0 for all s.
  KMatrix bots(2, 2);
  bots << 1, 0, 1, 0;
  const KMatrix Mb = build_M(s.pi, bots, KMatrix::Ones(2, 2));
  CHECK(Mb.row(1).cwiseAbs().sum() == 0.0);
  CHECK(Mb.row(0).sum() == doctest::Approx(1.0));
  CHECK_THROWS_AS(build_M(s.pi, KMatrix::Ones(3, 3), KMatrix::Ones(2, 2)), std::invalid_argument);
}

TEST_CASE("averaged matrix invariants on random specs") {
  Engine rng = make_engine(17, Stream::kMisc);
  for (int trial = 0; trial < 30; ++trial) {
    const ModelSpec s = random_spec(rng);
    const int n = 50 + trial * 7;
    const auto labels = sample_labels(s, n, trial);
    const auto pi_hat = empirical_shares(labels, s.K);
    const MeanFieldModel m = build_model(s, pi_hat, n, 5.0);
    CHECK((m.beta.array() <= s.H).all());
    CHECK((m.v.array() >= m.beta.array().square() - 1e-15).all());
    KMatrix P = m.M, Pb = m.M_breve;
    const double gap = inf_norm(m.M_breve - m.M);
    if (std::isfinite(m.stats.E_n)) CHECK(gap <= m.stats.E_n + 1e-12);
    for (int s_pow = 1; s_pow <= 6; ++s_pow) {
      for (int r = 0; r < s.K; ++r) {
        const double rs = P.row(r).sum();
        CHECK((std::abs(rs - 1.0) < 1e-10 || rs == 0.0));
        CHECK((P.row(r).sum() == 0.0) == (m.M.row(r).sum() == 0.0));
      }
      CHECK(inf_norm(Pb - P) <= s_pow * gap + 1e-12);
      P = m.M * P;
      Pb = m.M_breve * Pb;
    }
  }
}

TEST_CASE("regime statistics examples") {
  const ModelSpec s = two_block();
  const std::vector<double> skew{0.6, 0.4};
  const RegimeStats st = regime_stats(s, weight_moments(s), skew, 100, 10.0);
  CHECK(st.E_n == doctest::Approx(0.5));
  const RegimeStats eq = regime_stats(s, weight_moments(s), s.pi, 100, 10.0);
  CHECK(eq.E_n == 0.0);
  // B == 1: Lambda = 1, Delta = 1 / min mu.
  REQUIRE(eq.Lambda);
  CHECK(*eq.Lambda == doctest::Approx(1.0));
  CHECK(eq.mu[0] == doctest::Approx(1.5));
  CHECK(*eq.Delta == doctest::Approx(1.0 / 1.5));
  const ModelSpec none = ModelSpec::homogeneous(1, {1.0}, KMatrix::Zero(1, 1), 1, 0.3, 0.2, ScalarDist::point(1),
                                                ScalarDist::uniform(-1, 1), ScalarDist::uniform(-1, 1));
  const RegimeStats empty = regime_stats(none, weight_moments(none), none.pi, 100, 10.0);
  CHECK_FALSE(empty.Delta.has_value());
  CHECK_FALSE(empty.Lambda.has_value());
}

TEST_CASE("mean matrices") {
  const int n = 100;
  const double theta = std::log(100.0);
  const ModelSpec s = ModelSpec::homogeneous(1, {1.0}, KMatrix::Ones(1, 1), 1, 0.3, 0.2, ScalarDist::point(1),
                                             ScalarDist::point(0.5), ScalarDist::point(-0.4));
  const auto iso = isolation_probability(s, s.pi, n, theta);
  const double p0 = std::pow(1.0 - theta / n, 99);
  CHECK(iso[0] == doctest::Approx(p0).epsilon(1e-13));
  const MeanInputs mi = mean_matrices(s, s.pi, n, theta);
  CHECK(mi.W_bar(0, 0) == doctest::Approx(0.2 * -0.4 + 0.3 * 0.5 * p0));
  CHECK(mi.R_bar(0, 0) == 0.0);

  ModelSpec e = s;
  e.kappa = KMatrix::Zero(1, 1);
  CHECK(mean_matrices(e, e.pi, n, theta).W_bar(0, 0) == doctest::Approx(0.2 * -0.4 + 0.3 * 0.5));
  ModelSpec full = s;
  full.kappa = KMatrix::Constant(1, 1, 100.0);
  CHECK(mean_matrices(full, full.pi, n, 1.0).W_bar(0, 0) == doctest::Approx(0.2 * -0.4));
  ModelSpec bel = s;
  bel.initial = InitialLaw::kBelief;
  CHECK(mean_matrices(bel, bel.pi, n, theta).R_bar(0, 0) == doctest::Approx(0.5));
  // Belief echo: E[Z] = rho q + (1 - rho) E[media].
  ModelSpec echo = s;
  echo.signals[0].belief_weight = 0.25;
  CHECK(signal_mean(echo, 0)[0] == doctest::Approx(0.25 * 0.5 + 0.75 * -0.4));
}

TEST_CASE("mean-field trajectory: k = 0, k = 1, c = 0") {
  const ModelSpec s = two_block();
  const MeanFieldModel m = build_model(s, s.pi, 200, 20.0);
  Matrix W(3, 1);
  W << 0.1, -0.05, 0.02;
  Eigen::RowVectorXd R0(1);
  R0 << 0.4;
  const auto tr = meanfield_trajectory(1, W, m, R0, s.c, s.d, 3);
  CHECK(tr.values(0, 0) == 0.4);
  const double expect1 = W(0, 0) + s.c * (m.M * m.R_bar)(1, 0) + (1 - s.c - s.d) * 0.4;
  CHECK(tr.values(1, 0) == doctest::Approx(expect1));
  CHECK_FALSE(tr.intermediate);
  CHECK_THROWS_AS(meanfield_trajectory(1, W, m, R0, s.c, s.d, 4), std::invalid_argument);

  ModelSpec c0 = s;
  c0.c = 0.0;
  const MeanFieldModel m0 = build_model(c0, c0.pi, 200, 20.0);
  const auto t0 = meanfield_trajectory(0, W, m0, R0, 0.0, c0.d, 3);
  double expect = 0.4;
  for (int k = 1; k <= 3; ++k) {
    expect = W(k - 1, 0) + (1 - c0.d) * expect;
    CHECK(t0.values(k, 0) == doctest::Approx(expect));
  }
}

TEST_CASE("intermediate equals mean-field when the census is exact") {
  const ModelSpec s = two_block();
  const MeanFieldModel m = build_model(s, s.pi, 200, 20.0);
  Matrix W = Matrix::Constant(6, 1, 0.05);
  Eigen::RowVectorXd R0 = Eigen::RowVectorXd::Constant(1, -0.3);
  const auto a = meanfield_trajectory(0, W, m, R0, s.c, s.d, 6);
  const auto b = intermediate_trajectory(0, W, m, R0, s.c, s.d, 6);
  CHECK(b.intermediate);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("row identity for the dense Mtilde at n = 6") {
  ModelSpec s = two_block(0.5);
  s.weights = {ScalarDist::point(1), ScalarDist::uniform(0, 1), ScalarDist::point(0.5), ScalarDist::point(0.8)};
  const std::vector<int> labels{0, 1, 1, 0, 1, 1};
  const auto pi_hat = empirical_shares(labels, 2);
  const auto beta = weight_moments(s).beta;
  const Matrix Mt = materialize_Mtilde(labels, s.kappa, beta);
  const KMatrix Mb = build_breve_M(pi_hat, s.kappa, beta);
  KMatrix x(2, 2);
  x << 0.3, -0.7, 0.9, 0.1;
  Matrix X(6, 2);
  for (int i = 0; i < 6; ++i) X.row(i) = x.row(labels[i]);
  Matrix lhs = X;
  KMatrix rhs = x;
  for (int s_pow = 1; s_pow <= 4; ++s_pow) {
    lhs = Mt * lhs;
    rhs = Mb * rhs;
    for (int i = 0; i < 6; ++i) CHECK((lhs.row(i) - rhs.row(labels[i])).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(Mt.rowwise().sum().isApproxToConstant(1.0, 1e-12));
  const Matrix off = materialize_Mtilde(labels, s.kappa, beta, true);
  CHECK(off.diagonal().cwiseAbs().maxCoeff() == 0.0);
  CHECK((off * X - Mt * X).cwiseAbs().maxCoeff() > 0.0);
  CHECK((off - Mt).cwiseAbs().maxCoeff() <= Mt.maxCoeff());
}

TEST_CASE("intermediate vs mean-field drift bound on random specs") {
  Engine rng = make_engine(23, Stream::kMisc);
  int nontrivial = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const ModelSpec s = random_spec(rng);
    const int n = 30 + 10 * trial;
    const auto pi_hat = empirical_shares(sample_labels(s, n, trial), s.K);
    const MeanFieldModel m = build_model(s, pi_hat, n, 4.0);
    const int k_max = 40;
    const DriftTable a(m.M, m.W_bar, m.R_bar, s.c, s.d, k_max), b(m.M_breve, m.W_bar, m.R_bar, s.c, s.d, k_max);
    double sup = 0.0;
    for (int k = 0; k <= k_max; ++k) sup = std::max(sup, inf_norm(b.at(k) - a.at(k)));
    if (std::isfinite(m.stats.E_n)) CHECK(sup <= s.ell * s.c / (s.d * s.d) * m.stats.E_n + 1e-12);
    if (s.K > 1 && s.c > 0.05) nontrivial += sup > 0.0;
  }
  CHECK(nontrivial > 0);
}

TEST_CASE("ApproxProcess reproduces per-vertex trajectories") {
  const ModelSpec s = two_block();
  const std::vector<int> labels{0, 1, 1, 0};
  const MeanFieldModel m = build_model(s, empirical_shares(labels, 2), 4, 2.0);
  const DriftTable drift(m.M, m.W_bar, m.R_bar, s.c, s.d, 5);
  Matrix R0(4, 1);
  R0 << 0.1, -0.2, 0.3, 0.9;
  ApproxProcess ap(drift, labels, R0, s.c, s.d);
  std::vector<Matrix> frames;
  Engine rng = make_engine(1, Stream::kSignals);
  for (int k = 0; k < 5; ++k) {
    frames.push_back(Matrix::NullaryExpr(4, 1, [&]() { return s.d * (2 * uniform01(rng) - 1); }));
    ap.advance(frames.back());
  }
  CHECK_THROWS_AS(ap.advance(frames.back()), std::out_of_range);
  for (int i = 0; i < 4; ++i) {
    Matrix Wi(5, 1);
    for (int k = 0; k < 5; ++k) Wi(k, 0) = frames[k](i, 0);
    const auto tr = meanfield_trajectory(labels[i], Wi, m, R0.row(i), s.c, s.d, 5);
    CHECK(std::abs(tr.values(5, 0) - ap.value()(i, 0)) < 1e-14);
  }
}

TEST_CASE("stationary horizon and samples") {
  CHECK(stationary_horizon(1e-10, 0.2, 1) == static_cast<int>(std::ceil(std::log(1e-10 * 0.2) / std::log(0.8))));
  CHECK_THROWS_AS(stationary_horizon(0.0, 0.2, 1), std::invalid_argument);
  ModelSpec s = ModelSpec::homogeneous(1, {1.0}, KMatrix::Ones(1, 1), 2, 0.0, 0.2, ScalarDist::point(1),
                                       ScalarDist::uniform(-1, 1), ScalarDist::point(0.35));
  const MeanFieldModel m = build_model(s, s.pi, 1000, 100.0);
  const auto x = sample_stationary(0, s, m, 1e-8, 1);
  CHECK((x.array() - 0.35).abs().maxCoeff() < 1e-8);
}

TEST_CASE("stationary sample matches a long deterministic dynamics run") {
  // Dense K = 1 graph, deterministic signals Z == z; no isolated vertices.
  const double z = -0.6;
  ModelSpec s = ModelSpec::homogeneous(1, {1.0}, KMatrix::Ones(1, 1), 1, 0.3, 0.2, ScalarDist::point(1),
                                       ScalarDist::uniform(-1, 1), ScalarDist::point(z));
  const int n = 60;
  const auto g = sample_graph(s, sample_labels(s, n, 1), static_cast<double>(n), 1);
  const MeanFieldModel m = build_model(s, g.pi_hat, n, static_cast<double>(n));
  const auto C = normalize_weights(g);
  Engine rng = make_engine(1, Stream::kInitial);
  Matrix R = sample_initial(s, g, rng), scratch;
  for (int k = 1; k <= 200; ++k) step_inplace(R, C, Matrix::Constant(n, 1, s.d * z), s.c, s.d, scratch);
  const auto x = sample_stationary(0, s, m, 1e-10, 5);
  CHECK(std::abs(x[0] - R(0, 0)) < 1e-9);
  CHECK(std::abs(x[0] - z) < 1e-9);
}

TEST_CASE("model report is valid JSON") {
  const ModelSpec s = two_block();
  std::ostringstream os;
  write_model_report(os, build_model(s, std::vector<double>{0.6, 0.4}, 100, 10.0));
  const auto j = nlohmann::json::parse(os.str());
  CHECK(j.contains("M"));
  CHECK(j["M"].size() == 2);
}
