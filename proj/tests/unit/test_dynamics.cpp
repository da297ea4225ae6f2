#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oplab/dynamics.hpp"

using namespace oplab;

namespace {

GraphSample hand_graph(const std::vector<std::vector<int>>& in, int ell) {
  GraphSample g;
  g.n = static_cast<int>(in.size());
  g.K = 1;
  g.labels.assign(in.size(), 0);
  for (const auto& row : in) {
    for (int j : row) {
      g.in_sources.push_back(j);
      g.in_weights.push_back(1.0);
    }
    g.in_offsets.push_back(g.in_sources.size());
  }
  g.Q = Matrix::Constant(g.n, ell, 0.5);
  g.pi_hat = {1.0};
  return g;
}

ModelSpec random_spec(Engine& rng, int ell) {
  const double d = 0.05 + 0.9 * uniform01(rng);
  const double c = (1.0 - d) * uniform01(rng);
  const int K = 1 + static_cast<int>(uniform01(rng) * 3);
  std::vector<double> pi(static_cast<std::size_t>(K), 1.0 / K);
  KMatrix kappa = KMatrix::Random(K, K).cwiseAbs() * 3.0;
  return ModelSpec::homogeneous(K, pi, kappa, ell, c, d, ScalarDist::uniform(0, 1), ScalarDist::uniform(-1, 1),
                                ScalarDist::uniform(-1, 1));
}

}  // namespace

TEST_CASE("coefficient: examples and domain") {
  CHECK(coefficient(1, 1, 0.3, 0.2) == doctest::Approx(0.3));
  double s1 = 0.0, sm = 0.0;
  for (int s = 1; s <= 2; ++s) {
    s1 += coefficient(s, 2, 0.3, 0.2);
    sm += s * coefficient(s, 2, 0.3, 0.2);
  }
  CHECK(s1 == doctest::Approx(0.39).epsilon(1e-14));
  CHECK(sm == doctest::Approx(0.48).epsilon(1e-14));
  CHECK_THROWS_AS(coefficient(3, 2, 0.3, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(coefficient(-1, 2, 0.3, 0.2), std::invalid_argument);
}

TEST_CASE("coefficient: binomial identities up to t = 60 and log-space beyond") {
  for (double c : {0.0, 0.1, 0.3, 0.5, 0.79})
    for (double d : {0.01, 0.2, 0.2, 0.5}) {
      if (c + d > 1.0) continue;
      for (int t = 0; t <= 60; ++t) {
        double all = 0.0, pos = 0.0, mean = 0.0;
        for (int s = 0; s <= t; ++s) {
          const double a = coefficient(s, t, c, d);
          all += a;
          if (s >= 1) {
            pos += a;
            mean += s * a;
          }
        }
        CHECK(std::abs(all - std::pow(1 - d, t)) < 1e-12);
        CHECK(std::abs(pos - (std::pow(1 - d, t) - std::pow(1 - c - d, t))) < 1e-12);
        CHECK(std::abs(mean - (t == 0 ? 0.0 : c * t * std::pow(1 - d, t - 1))) < 1e-12);
      }
    }
  double all = 0.0;
  for (int s = 0; s <= 200; ++s) all += coefficient(s, 200, 0.3, 0.2);
  CHECK(all == doctest::Approx(std::pow(0.8, 200)).epsilon(1e-9));
}

TEST_CASE("signal frame examples") {
  const auto g = hand_graph({{1}, {}}, 2);
  ModelSpec s = ModelSpec::homogeneous(1, {1.0}, KMatrix::Ones(1, 1), 2, 0.3, 0.2, ScalarDist::point(1),
                                       ScalarDist::uniform(-1, 1), ScalarDist::point(0));
  Engine rng = make_engine(1, Stream::kSignals);
  auto f = sample_signal_frame(s, g, rng);
  CHECK(f.W.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(f.W(1, 0) == doctest::Approx(0.3 * 0.5));  // isolated: c q_i
  CHECK(f.W(1, 1) == doctest::Approx(0.3 * 0.5));
  s.signals[0].media = VectorDist::parse("product(point(1), point(-1))", 2);
  f = sample_signal_frame(s, g, rng);
  CHECK(f.W(0, 0) == doctest::Approx(0.2));
  CHECK(f.W(0, 1) == doctest::Approx(-0.2));
  const auto a = sample_signal_frame(s, g, 3, 77), b = sample_signal_frame(s, g, 3, 77);
  CHECK(a.W == b.W);
}

TEST_CASE("step: hand example, c = 0, fixed point") {
  const auto g = hand_graph({{1}, {0}}, 1);
  const auto C = normalize_weights(g);
  OpinionState st;
  st.R = Matrix(2, 1);
  st.R << 1, -1;
  SignalFrame zero{Matrix::Zero(2, 1), Matrix::Zero(2, 1)};
  const auto next = step(st, C, zero, 0.5, 0.5);
  CHECK(next.R(0, 0) == doctest::Approx(-0.5));
  CHECK(next.R(1, 0) == doctest::Approx(0.5));
  CHECK(next.k == 1);

  SignalFrame w{Matrix::Constant(2, 1, 0.1), Matrix::Constant(2, 1, 0.5)};
  const auto c0 = step(st, C, w, 0.0, 0.2);
  CHECK((c0.R - (w.W + 0.8 * st.R)).cwiseAbs().maxCoeff() < 1e-15);

  const double r = 0.3, c = 0.4, d = 0.25;
  OpinionState fixed{Matrix::Constant(2, 1, r), 0};
  SignalFrame wz{Matrix::Constant(2, 1, d * r), Matrix::Constant(2, 1, r)};
  CHECK((step(fixed, C, wz, c, d).R.array() - r).abs().maxCoeff() < 1e-15);

  SignalFrame bad{Matrix::Zero(3, 1), Matrix::Zero(3, 1)};
  CHECK_THROWS_AS(step(st, C, bad, 0.5, 0.5), std::invalid_argument);
}

TEST_CASE("bounds are checked") {
  Matrix R = Matrix::Zero(2, 2);
  check_opinion_bounds(R, "test");
  R(1, 1) = 1.0 + 1e-9;
  CHECK_THROWS_AS(check_opinion_bounds(R, "test"), BoundsViolation);
  const auto before = bound_checks_performed();
  R(1, 1) = 1.0;
  check_opinion_bounds(R, "test");
  CHECK(bound_checks_performed() == before + 4);
}

TEST_CASE("simulate equals the solved recursion on random small instances") {
  Engine rng = make_engine(42, Stream::kMisc);
  for (int trial = 0; trial < 25; ++trial) {
    const int ell = 1 + trial % 3, n = 3 + trial % 8, k = 1 + trial % 5;
    const ModelSpec s = random_spec(rng, ell);
    const auto g = sample_graph(s, sample_labels(s, n, trial), 3.0, trial);
    const auto C = normalize_weights(g);
    const auto res = simulate(s, g, C, k, 100 + trial, {}, true);
    const Matrix closed = closed_form_state(C, res.signal_history, res.R0, s.c, s.d, k);
    CHECK((closed - res.final_state.R).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("simulate: k_max = 0, trajectories and dump") {
  const ModelSpec s = ModelSpec::homogeneous(1, {1.0}, KMatrix::Ones(1, 1), 2, 0.3, 0.2, ScalarDist::point(1),
                                             ScalarDist::uniform(-1, 1), ScalarDist::uniform(-1, 1));
  const auto g = sample_graph(s, sample_labels(s, 30, 1), 5.0, 1);
  const auto C = normalize_weights(g);
  const auto r0 = simulate(s, g, C, 0, 5);
  CHECK(r0.final_state.R == r0.R0);
  const std::vector<int> sel{0, 7};
  const auto r = simulate(s, g, C, 4, 5, sel);
  REQUIRE(r.trajectories.size() == 2);
  CHECK(r.trajectories[1].cols() == 5);
  CHECK(r.trajectories[1].col(0).transpose() == r.R0.row(7));
  CHECK(r.trajectories[1].col(4).transpose() == r.final_state.R.row(7));
  std::ostringstream os;
  write_trajectory_rows(os, 0, g, r);
  int lines = 0;
  for (char ch : os.str()) lines += ch == '\n';
  CHECK(lines == 2 * 5 * 2);
}

TEST_CASE("contraction: identical signals, different starts") {
  const ModelSpec s = ModelSpec::homogeneous(1, {1.0}, KMatrix::Ones(1, 1), 2, 0.5, 0.1, ScalarDist::uniform(0, 1),
                                             ScalarDist::uniform(-1, 1), ScalarDist::uniform(-1, 1));
  const auto g = sample_graph(s, sample_labels(s, 100, 2), 6.0, 2);
  const auto C = normalize_weights(g);
  Engine rng = make_engine(2, Stream::kInitial);
  Matrix A = sample_initial(s, g, rng), B = sample_initial(s, g, rng);
  const double d0 = (A - B).cwiseAbs().rowwise().sum().maxCoeff();
  Matrix scratch;
  for (int k = 1; k <= 30; ++k) {
    const auto f = sample_signal_frame(s, g, k, 9);
    step_inplace(A, C, f.W, s.c, s.d, scratch);
    step_inplace(B, C, f.W, s.c, s.d, scratch);
    CHECK((A - B).cwiseAbs().rowwise().sum().maxCoeff() <=
          std::pow(1 - s.d, k) * d0 + 1e-12);
  }
}
