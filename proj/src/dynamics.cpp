#include "oplab/dynamics.hpp"

#include <atomic>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

namespace oplab {

namespace {
std::atomic<std::uint64_t> g_bound_checks{0};
}  // namespace

std::uint64_t bound_checks_performed() { return g_bound_checks.load(); }

void check_opinion_bounds(const Matrix& R, const char* where) {
  if (R.size() == 0) return;
  g_bound_checks += static_cast<std::uint64_t>(R.size());
  const double worst = R.cwiseAbs().maxCoeff();
  if (!(worst <= 1.0 + kBoundSlack))
    throw BoundsViolation(std::string(where) + ": opinion entry of magnitude " + std::to_string(worst) +
                          " left [-1, 1]");
}

double coefficient(int s, int t, double c, double d) {
  if (s < 0 || s > t) throw std::invalid_argument("coefficient: need 0 <= s <= t");
  const double b = 1.0 - c - d;
  if (c == 0.0) return s == 0 ? std::pow(b, t) : 0.0;
  if (b == 0.0) return s == t ? std::pow(c, t) : 0.0;
  if (t <= 60) {
    double binom = 1.0;
    for (int i = 1; i <= s; ++i) binom = binom * (t - s + i) / i;
    return binom * std::pow(b, t - s) * std::pow(c, s);
  }
  const double log_binom = std::lgamma(t + 1.0) - std::lgamma(s + 1.0) - std::lgamma(t - s + 1.0);
  return std::exp(log_binom + (t - s) * std::log(b) + s * std::log(c));
}

SignalFrame sample_signal_frame(const ModelSpec& spec, const GraphSample& g, Engine& rng) {
  SignalFrame f;
  f.Z.resize(g.n, spec.ell);
  f.W.resize(g.n, spec.ell);
  for (int i = 0; i < g.n; ++i) {
    const auto& law = spec.signals[g.labels[i]];
    auto z = f.Z.row(i);
    if (law.belief_weight > 0.0 && uniform01(rng) < law.belief_weight) z = g.Q.row(i);
    else law.media.sample_into(z, rng);
    f.W.row(i) = spec.d * z;
    if (g.in_degree(i) == 0) f.W.row(i) += spec.c * g.Q.row(i);
  }
  return f;
}

SignalFrame sample_signal_frame(const ModelSpec& spec, const GraphSample& g, int k, std::uint64_t seed) {
  Engine rng = make_engine(seed, Stream::kSignals, {static_cast<std::uint64_t>(k)});
  return sample_signal_frame(spec, g, rng);
}

Matrix sample_initial(const ModelSpec& spec, const GraphSample& g, Engine& rng) {
  if (spec.initial == InitialLaw::kBelief) return g.Q;
  Matrix R(g.n, spec.ell);
  for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = -1.0 + 2.0 * uniform01(rng);
  return R;
}

void step_inplace(Matrix& R, const RowStochasticMatrix& C, const Matrix& W, double c, double d, Matrix& scratch) {
  if (R.rows() != C.rows() || W.rows() != R.rows() || W.cols() != R.cols())
    throw std::invalid_argument("step: dimension mismatch");
  C.multiply(R, scratch);
  R = c * scratch + W + (1.0 - c - d) * R;
  check_opinion_bounds(R, "step");
}

OpinionState step(const OpinionState& state, const RowStochasticMatrix& C, const SignalFrame& frame, double c,
                  double d) {
  OpinionState next{state.R, state.k + 1};
  Matrix scratch;
  step_inplace(next.R, C, frame.W, c, d, scratch);
  return next;
}

SimulationResult simulate(const ModelSpec& spec, const GraphSample& g, const RowStochasticMatrix& C, int k_max,
                          std::uint64_t seed, std::span<const int> selection, bool keep_history) {
  if (k_max < 0) throw std::invalid_argument("simulate: k_max must be nonnegative");
  SimulationResult res;
  Engine init_rng = make_engine(seed, Stream::kInitial);
  res.R0 = sample_initial(spec, g, init_rng);
  check_opinion_bounds(res.R0, "simulate: initial state");
  res.selection.assign(selection.begin(), selection.end());
  for (int v : res.selection) {
    if (v < 0 || v >= g.n) throw std::invalid_argument("simulate: selected vertex out of range");
    res.trajectories.emplace_back(spec.ell, k_max + 1);
  }
  Matrix R = res.R0;
  Matrix scratch;
  auto record = [&](int k) {
    for (std::size_t a = 0; a < res.selection.size(); ++a) res.trajectories[a].col(k) = R.row(res.selection[a]).transpose();
  };
  record(0);
  for (int k = 1; k <= k_max; ++k) {
    SignalFrame f = sample_signal_frame(spec, g, k, seed);
    step_inplace(R, C, f.W, spec.c, spec.d, scratch);
    record(k);
    if (keep_history) res.signal_history.push_back(std::move(f.W));
  }
  res.final_state = OpinionState{std::move(R), k_max};
  return res;
}

Matrix closed_form_state(const RowStochasticMatrix& C, std::span<const Matrix> history, const Matrix& R0, double c,
                         double d, int k) {
  if (k < 0 || static_cast<int>(history.size()) < k)
    throw std::invalid_argument("closed_form_state: need W^(1..k) in the history");
  Matrix out = Matrix::Zero(R0.rows(), R0.cols());
  Matrix power, next;
  for (int t = 0; t < k; ++t) {
    power = history[static_cast<std::size_t>(k - t - 1)];  // W^(k-t)
    for (int s = 0; s <= t; ++s) {
      out += coefficient(s, t, c, d) * power;
      if (s < t) {
        C.multiply(power, next);
        power.swap(next);
      }
    }
  }
  power = R0;
  for (int s = 0; s <= k; ++s) {
    out += coefficient(s, k, c, d) * power;
    if (s < k) {
      C.multiply(power, next);
      power.swap(next);
    }
  }
  return out;
}

void write_trajectory_rows(std::ostream& os, int replication, const GraphSample& g, const SimulationResult& result) {
  os.precision(17);
  for (std::size_t a = 0; a < result.selection.size(); ++a) {
    const int v = result.selection[a];
    const Matrix& traj = result.trajectories[a];
    for (Eigen::Index k = 0; k < traj.cols(); ++k)
      for (Eigen::Index t = 0; t < traj.rows(); ++t)
        os << replication << ',' << v << ',' << g.labels[v] + 1 << ',' << k << ',' << t + 1 << ',' << traj(t, k)
           << '\n';
  }
}

}  // namespace oplab
