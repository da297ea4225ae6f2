#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "oplab/graph.hpp"
#include "oplab/model_spec.hpp"
#include "oplab/types.hpp"

namespace oplab {

// Expressed opinions R^(k), n x ell, entries in [-1, 1].
struct OpinionState {
  Matrix R;
  int k = 0;
};

// External signals at one step: W_i = d Z_i + c q_i 1(d_i^- = 0).
struct SignalFrame {
  Matrix W;
  Matrix Z;
};

// Slack allowed on the [-1, 1] bound for floating-point round-off.
inline constexpr double kBoundSlack = 1e-12;

// Throws BoundsViolation naming `where` if any entry leaves [-1-slack, 1+slack].
void check_opinion_bounds(const Matrix& R, const char* where);
// Number of entries checked by check_opinion_bounds since program start.
std::uint64_t bound_checks_performed();

// a_{s,t} = binom(t, s) (1-c-d)^{t-s} c^s. Direct evaluation for t <= 60,
// log-space beyond. Throws std::invalid_argument unless 0 <= s <= t.
double coefficient(int s, int t, double c, double d);

SignalFrame sample_signal_frame(const ModelSpec& spec, const GraphSample& g, Engine& rng);
// Frame for time k drawn from its own stream derived from `seed`.
SignalFrame sample_signal_frame(const ModelSpec& spec, const GraphSample& g, int k, std::uint64_t seed);

// R^(0) from the configured initial law (uniform on [-1,1]^ell or the
// vertex's own belief).
Matrix sample_initial(const ModelSpec& spec, const GraphSample& g, Engine& rng);

// R^(k+1) = c C R^(k) + W^(k+1) + (1-c-d) R^(k). Throws std::invalid_argument on
// a dimension mismatch and BoundsViolation if the result leaves [-1, 1].
OpinionState step(const OpinionState& state, const RowStochasticMatrix& C, const SignalFrame& frame, double c,
                  double d);

// In-place variant used by the experiment loops; `scratch` is reused.
void step_inplace(Matrix& R, const RowStochasticMatrix& C, const Matrix& W, double c, double d, Matrix& scratch);

struct SimulationResult {
  OpinionState final_state;
  Matrix R0;
  std::vector<int> selection;
  // One ell x (k_max + 1) matrix per selected vertex; column j is R_i^(j).
  std::vector<Matrix> trajectories;
  // W^(1..k_max), only when requested.
  std::vector<Matrix> signal_history;
};

// Iterates `step` k_max times from R^(0) ~ mu_0. Signals at time k use
// sample_signal_frame(spec, g, k, seed); R^(0) uses Stream::kInitial.
SimulationResult simulate(const ModelSpec& spec, const GraphSample& g, const RowStochasticMatrix& C, int k_max,
                          std::uint64_t seed, std::span<const int> selection = {}, bool keep_history = false);

// Solved recursion:
//   R^(k) = sum_{t<k} sum_{s<=t} a_{s,t} C^s W^(k-t) + sum_{s<=k} a_{s,k} C^s R^(0).
// `history` holds W^(1), ..., W^(k) (at least k frames).
Matrix closed_form_state(const RowStochasticMatrix& C, std::span<const Matrix> history, const Matrix& R0, double c,
                         double d, int k);

// CSV rows "replication,vertex,community,time,topic,value" (no header).
void write_trajectory_rows(std::ostream& os, int replication, const GraphSample& g, const SimulationResult& result);
inline constexpr const char* kTrajectoryHeader = "replication,vertex,community,time,topic,value";

}  // namespace oplab
