#include "oplab/meanfield.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

#include "oplab/dynamics.hpp"

namespace oplab {

WeightMoments weight_moments(const ModelSpec& spec) {
  WeightMoments m{KMatrix(spec.K, spec.K), KMatrix(spec.K, spec.K)};
  for (int r = 0; r < spec.K; ++r)
    for (int s = 0; s < spec.K; ++s) {
      m.beta(r, s) = spec.weight(r, s).mean();
      m.v(r, s) = spec.weight(r, s).second_moment();
    }
  return m;
}

WeightMoments estimate_weight_moments(const ModelSpec& spec, const GraphSample& g) {
  WeightMoments m = weight_moments(spec);
  KMatrix sum = KMatrix::Zero(spec.K, spec.K), sum2 = sum, count = sum;
  for (int i = 0; i < g.n; ++i) {
    const int r = g.labels[i];
    for (std::size_t e = g.in_offsets[i]; e < g.in_offsets[i + 1]; ++e) {
      const int s = g.labels[g.in_sources[e]];
      const double b = g.in_weights[e];
      sum(r, s) += b;
      sum2(r, s) += b * b;
      count(r, s) += 1.0;
    }
  }
  for (int r = 0; r < spec.K; ++r)
    for (int s = 0; s < spec.K; ++s)
      if (count(r, s) > 0.0) {
        m.beta(r, s) = sum(r, s) / count(r, s);
        m.v(r, s) = sum2(r, s) / count(r, s);
      }
  return m;
}

KMatrix averaged_matrix(std::span<const double> shares, const KMatrix& kappa, const KMatrix& beta) {
  const auto K = static_cast<int>(shares.size());
  if (kappa.rows() != K || kappa.cols() != K || beta.rows() != K || beta.cols() != K)
    throw std::invalid_argument("averaged_matrix: dimension mismatch");
  KMatrix M = KMatrix::Zero(K, K);
  for (int r = 0; r < K; ++r) {
    double denom = 0.0;
    for (int s = 0; s < K; ++s) denom += shares[s] * beta(r, s) * kappa(s, r);
    if (denom > 0.0)
      for (int s = 0; s < K; ++s) M(r, s) = shares[s] * beta(r, s) * kappa(s, r) / denom;
  }
  return M;
}

std::vector<double> isolation_probability(const ModelSpec& spec, std::span<const double> shares, int n,
                                          double theta) {
  std::vector<double> out(static_cast<std::size_t>(spec.K), 1.0);
  for (int r = 0; r < spec.K; ++r) {
    double log_p = 0.0;
    for (int s = 0; s < spec.K; ++s) {
      const double p = std::min(spec.kappa(s, r) * theta / n, 1.0);
      const double count = std::max(0.0, n * shares[s] - (s == r ? 1.0 : 0.0));
      if (p <= 0.0 || count <= 0.0) continue;
      if (p >= 1.0) {
        log_p = -std::numeric_limits<double>::infinity();
        break;
      }
      log_p += count * std::log1p(-p);
    }
    out[r] = std::exp(log_p);
  }
  return out;
}

Eigen::RowVectorXd belief_mean(const ModelSpec& spec, int r) {
  Eigen::RowVectorXd m(spec.ell);
  for (int t = 0; t < spec.ell; ++t) m[t] = spec.beliefs[r][t].mean();
  return m;
}

Eigen::RowVectorXd signal_mean(const ModelSpec& spec, int r) {
  const auto& law = spec.signals[r];
  Eigen::RowVectorXd m(spec.ell);
  for (int t = 0; t < spec.ell; ++t) m[t] = law.media[t].mean();
  return (1.0 - law.belief_weight) * m + law.belief_weight * belief_mean(spec, r);
}

MeanInputs mean_matrices(const ModelSpec& spec, std::span<const double> shares, int n, double theta) {
  MeanInputs in;
  in.isolated_prob = isolation_probability(spec, shares, n, theta);
  in.W_bar.resize(spec.K, spec.ell);
  in.R_bar.resize(spec.K, spec.ell);
  for (int r = 0; r < spec.K; ++r) {
    const Eigen::RowVectorXd q = belief_mean(spec, r);
    in.W_bar.row(r) = spec.d * signal_mean(spec, r) + spec.c * in.isolated_prob[r] * q;
    if (spec.initial == InitialLaw::kBelief) in.R_bar.row(r) = q;
    else in.R_bar.row(r).setZero();
  }
  return in;
}

RegimeStats regime_stats(const ModelSpec& spec, const WeightMoments& moments, std::span<const double> pi_hat, int n,
                         double theta) {
  RegimeStats st;
  const int K = spec.K;
  st.mu.assign(static_cast<std::size_t>(K), 0.0);
  st.nu.assign(static_cast<std::size_t>(K), 0.0);
  for (int r = 0; r < K; ++r)
    for (int s = 0; s < K; ++s) {
      st.mu[r] += moments.beta(r, s) * pi_hat[s] * spec.kappa(s, r);
      st.nu[r] += moments.v(r, s) * pi_hat[s] * spec.kappa(s, r);
    }
  const KMatrix M = averaged_matrix(spec.pi, spec.kappa, moments.beta);
  const double inf = std::numeric_limits<double>::infinity();
  for (int r = 0; r < K; ++r) {
    if (!(M.row(r).sum() > 0.0)) continue;
    const double delta = st.mu[r] > 0.0 ? st.nu[r] / (st.mu[r] * st.mu[r]) : inf;
    const double lambda = st.nu[r] > 0.0 ? st.mu[r] / st.nu[r] : inf;
    st.Delta = st.Delta ? std::max(*st.Delta, delta) : delta;
    st.Lambda = st.Lambda ? std::max(*st.Lambda, lambda) : lambda;
  }
  for (int r = 0; r < K; ++r)
    for (int s = 0; s < K; ++s) {
      const double num = std::abs(pi_hat[s] * spec.pi[r] - spec.pi[s] * pi_hat[r]);
      const double den = pi_hat[r] * spec.pi[s];
      st.E_n = std::max(st.E_n, num == 0.0 ? 0.0 : (den > 0.0 ? num / den : inf));
    }
  if (st.Delta && st.Lambda) {
    const double a = 6.0 * spec.H * *st.Lambda;
    st.dense_threshold = a * a * *st.Delta * std::log(static_cast<double>(n));
    st.dense_threshold_ok = theta >= st.dense_threshold;
  }
  st.clipping_free = spec.kappa.maxCoeff() * theta / n <= 1.0;
  return st;
}

MeanFieldModel build_model(const ModelSpec& spec, std::span<const double> pi_hat, int n, double theta,
                           const WeightMoments* moments) {
  MeanFieldModel m;
  const WeightMoments wm = moments ? *moments : weight_moments(spec);
  m.beta = wm.beta;
  m.v = wm.v;
  m.M = build_M(spec.pi, spec.kappa, m.beta);
  m.M_breve = build_breve_M(pi_hat, spec.kappa, m.beta);
  MeanInputs in = mean_matrices(spec, pi_hat, n, theta);
  m.W_bar = std::move(in.W_bar);
  m.R_bar = std::move(in.R_bar);
  m.isolated_prob = std::move(in.isolated_prob);
  for (int r = 0; r < spec.K; ++r)
    if (m.M.row(r).sum() > 0.0) m.nonzero_rows.push_back(r);
  m.pi_hat.assign(pi_hat.begin(), pi_hat.end());
  m.stats = regime_stats(spec, wm, pi_hat, n, theta);
  m.n = n;
  m.theta = theta;
  return m;
}

DriftTable::DriftTable(const KMatrix& P, const KMatrix& W_bar, const KMatrix& R_bar, double c, double d, int k_max) {
  if (k_max < 0) throw std::invalid_argument("DriftTable: k_max must be nonnegative");
  // PW[s] = P^s W_bar, PR[s] = P^s R_bar.
  std::vector<KMatrix> PW(static_cast<std::size_t>(k_max) + 1), PR(static_cast<std::size_t>(k_max) + 1);
  PW[0] = W_bar;
  PR[0] = R_bar;
  for (int s = 1; s <= k_max; ++s) {
    PW[s] = P * PW[s - 1];
    PR[s] = P * PR[s - 1];
  }
  drift_.reserve(static_cast<std::size_t>(k_max) + 1);
  KMatrix signal_part = KMatrix::Zero(W_bar.rows(), W_bar.cols());
  for (int k = 0; k <= k_max; ++k) {
    // signal_part = sum_{t=1}^{k-1} sum_{s=1}^t a_{s,t} P^s W_bar
    KMatrix D = signal_part;
    for (int s = 1; s <= k; ++s) D += coefficient(s, k, c, d) * PR[s];
    drift_.push_back(std::move(D));
    if (k >= 1)
      for (int s = 1; s <= k; ++s) signal_part += coefficient(s, k, c, d) * PW[s];
  }
}

namespace {

MeanFieldTrajectory approx_trajectory(const KMatrix& P, int r, const Matrix& signals, const MeanFieldModel& model,
                                      const Eigen::RowVectorXd& R0_i, double c, double d, int k_max,
                                      bool intermediate) {
  if (signals.rows() < k_max) throw std::invalid_argument("meanfield_trajectory: need k_max signal rows");
  DriftTable drift(P, model.W_bar, model.R_bar, c, d, k_max);
  MeanFieldTrajectory out;
  out.intermediate = intermediate;
  out.values.resize(k_max + 1, R0_i.size());
  Eigen::RowVectorXd S = Eigen::RowVectorXd::Zero(R0_i.size());
  const double b = 1.0 - c - d;
  double decay = 1.0;
  out.values.row(0) = R0_i;
  for (int k = 1; k <= k_max; ++k) {
    S = b * S + signals.row(k - 1);
    decay *= b;
    out.values.row(k) = S + drift.at(k).row(r) + decay * R0_i;
  }
  check_opinion_bounds(out.values, "mean-field trajectory");
  return out;
}

}  // namespace

MeanFieldTrajectory meanfield_trajectory(int r, const Matrix& signals, const MeanFieldModel& model,
                                         const Eigen::RowVectorXd& R0_i, double c, double d, int k_max) {
  return approx_trajectory(model.M, r, signals, model, R0_i, c, d, k_max, false);
}

MeanFieldTrajectory intermediate_trajectory(int r, const Matrix& signals, const MeanFieldModel& model,
                                            const Eigen::RowVectorXd& R0_i, double c, double d, int k_max) {
  return approx_trajectory(model.M_breve, r, signals, model, R0_i, c, d, k_max, true);
}

Matrix materialize_Mtilde(std::span<const int> labels, const KMatrix& kappa, const KMatrix& beta,
                          bool exclude_diagonal) {
  const auto n = static_cast<int>(labels.size());
  const int K = static_cast<int>(kappa.rows());
  const std::vector<double> pi_hat = empirical_shares(labels, K);
  Matrix Mt = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const int r = labels[i];
    double denom = 0.0;
    for (int s = 0; s < K; ++s) denom += beta(r, s) * pi_hat[s] * kappa(s, r);
    if (!(denom > 0.0)) continue;
    for (int j = 0; j < n; ++j)
      if (!exclude_diagonal || j != i) Mt(i, j) = beta(r, labels[j]) * kappa(labels[j], r) / (n * denom);
  }
  return Mt;
}

ApproxProcess::ApproxProcess(const DriftTable& drift, std::span<const int> labels, const Matrix& R0, double c,
                             double d)
    : drift_(drift), labels_(labels.begin(), labels.end()), R0_(R0), c_(c), d_(d) {
  S_ = Matrix::Zero(R0.rows(), R0.cols());
  refresh();
}

void ApproxProcess::advance(const Matrix& W) {
  if (k_ + 1 > drift_.k_max()) throw std::out_of_range("ApproxProcess: past the drift table horizon");
  const double b = 1.0 - c_ - d_;
  S_ = b * S_ + W;
  decay_ *= b;
  ++k_;
  refresh();
}

void ApproxProcess::refresh() {
  const KMatrix& D = drift_.at(k_);
  value_ = S_ + decay_ * R0_;
  for (std::size_t i = 0; i < labels_.size(); ++i) value_.row(static_cast<Eigen::Index>(i)) += D.row(labels_[i]);
  check_opinion_bounds(value_, "mean-field process");
}

int stationary_horizon(double tol, double d, int ell) {
  if (!(tol > 0.0)) throw std::invalid_argument("stationary sampling: tol must be positive");
  if (d >= 1.0) return 0;
  const double target = tol * d / ell;
  if (target >= 1.0) return 0;
  return static_cast<int>(std::ceil(std::log(target) / std::log(1.0 - d)));
}

StationarySampler::StationarySampler(const ModelSpec& spec, const MeanFieldModel& model, double tol)
    : spec_(spec), model_(model), T_(stationary_horizon(tol, spec.d, spec.ell)) {
  drift_ = KMatrix::Zero(spec.K, spec.ell);
  KMatrix power = model.W_bar;
  for (int s = 1; s <= T_; ++s) {
    power = model.M * power;
    double weight = 0.0;
    for (int t = s; t <= T_; ++t) weight += coefficient(s, t, spec.c, spec.d);
    drift_ += weight * power;
  }
}

Eigen::RowVectorXd StationarySampler::sample(int r, Engine& rng) const {
  const auto& law = spec_.signals[r];
  Eigen::RowVectorXd q(spec_.ell), z(spec_.ell);
  spec_.beliefs[r].sample_into(q, rng);
  const bool isolated = uniform01(rng) < model_.isolated_prob[r];
  const double b = 1.0 - spec_.c - spec_.d;
  Eigen::RowVectorXd out = drift_.row(r);
  double decay = 1.0;
  for (int t = 0; t <= T_; ++t) {
    if (law.belief_weight > 0.0 && uniform01(rng) < law.belief_weight) z = q;
    else law.media.sample_into(z, rng);
    Eigen::RowVectorXd w = spec_.d * z;
    if (isolated) w += spec_.c * q;
    out += decay * w;
    decay *= b;
  }
  return out;
}

Eigen::RowVectorXd StationarySampler::mean(int r) const {
  const double b = 1.0 - spec_.c - spec_.d;
  double geo = 0.0, decay = 1.0;
  for (int t = 0; t <= T_; ++t, decay *= b) geo += decay;
  return geo * model_.W_bar.row(r) + drift_.row(r);
}

Eigen::RowVectorXd sample_stationary(int r, const ModelSpec& spec, const MeanFieldModel& model, double tol,
                                     std::uint64_t seed) {
  StationarySampler sampler(spec, model, tol);
  Engine rng = make_engine(seed, Stream::kStationary, {static_cast<std::uint64_t>(r)});
  return sampler.sample(r, rng);
}

namespace {

nlohmann::json to_json(const KMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json optional_json(const std::optional<double>& x) {
  if (!x || !std::isfinite(*x)) return nullptr;
  return *x;
}

}  // namespace

void write_model_report(std::ostream& os, const MeanFieldModel& model) {
  nlohmann::json j;
  j["n"] = model.n;
  j["theta"] = model.theta;
  j["pi_hat"] = model.pi_hat;
  j["M"] = to_json(model.M);
  j["M_breve"] = to_json(model.M_breve);
  j["beta"] = to_json(model.beta);
  j["v"] = to_json(model.v);
  j["W_bar"] = to_json(model.W_bar);
  j["R_bar"] = to_json(model.R_bar);
  j["isolated_prob"] = model.isolated_prob;
  std::vector<int> rows1;
  for (int r : model.nonzero_rows) rows1.push_back(r + 1);
  j["nonzero_rows"] = rows1;
  const auto& st = model.stats;
  j["regime"] = {{"mu", st.mu},
                 {"nu", st.nu},
                 {"Delta", optional_json(st.Delta)},
                 {"Lambda", optional_json(st.Lambda)},
                 {"E_n", std::isfinite(st.E_n) ? nlohmann::json(st.E_n) : nlohmann::json(nullptr)},
                 {"dense_threshold", st.dense_threshold},
                 {"dense_threshold_ok", st.dense_threshold_ok},
                 {"clipping_free", st.clipping_free}};
  os << j.dump(2) << '\n';
}

}  // namespace oplab
