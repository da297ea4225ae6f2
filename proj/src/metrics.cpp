#include "oplab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "oplab/dynamics.hpp"
#include "oplab/graph.hpp"
#include "oplab/parallel.hpp"

namespace oplab {

namespace {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
  MeanSe out;
  if (v.empty()) return out;
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return out;
}

std::uint64_t u64(long long x) { return static_cast<std::uint64_t>(x); }

std::vector<std::vector<int>> community_members(std::span<const int> labels, int K) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(static_cast<int>(i));
  return out;
}

}  // namespace

double matrix_inf_distance(const Matrix& Xa, const Matrix& Xb) {
  if (Xa.rows() != Xb.rows() || Xa.cols() != Xb.cols())
    throw std::invalid_argument("matrix_inf_distance: shape mismatch");
  if (Xa.size() == 0) return 0.0;
  return (Xa - Xb).cwiseAbs().rowwise().sum().maxCoeff();
}

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line: need two or more points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: x values are all equal");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

int contraction_horizon(double d, double fraction) {
  if (!(fraction > 0.0) || !(d > 0.0)) throw std::invalid_argument("contraction_horizon: need d > 0, fraction > 0");
  if (d >= 1.0) return 1;
  int k = static_cast<int>(std::floor(std::log(fraction) / std::log(1.0 - d))) + 1;
  k = std::max(k, 0);
  while (k > 0 && std::pow(1.0 - d, k - 1) < fraction) --k;
  while (!(std::pow(1.0 - d, k) < fraction)) ++k;
  return k;
}

const char* norm_name(NormType t) { return t == NormType::kInf ? "inf" : "row_l1"; }

const ErrorSummary& ErrorCurve::summary(int n, NormType norm) const {
  for (const auto& s : summaries)
    if (s.n == n && s.norm == norm) return s;
  throw std::out_of_range("ErrorCurve::summary: no such point");
}

ErrorCurve error_experiment(const ErrorParams& p) {
  p.spec.validate();
  if (p.inner < 1 || p.outer < 1) throw std::invalid_argument("error_experiment: replication counts must be positive");
  if (p.n_list.empty()) throw std::invalid_argument("error_experiment: empty n grid");
  if (p.thetas.size() != p.n_list.size()) throw std::invalid_argument("error_experiment: one theta per n is required");
  const ModelSpec& spec = p.spec;
  const int K = spec.K;
  ErrorCurve curve;
  curve.k_max = p.k_max > 0 ? p.k_max : contraction_horizon(spec.d, 0.01);
  const int k_max = curve.k_max;

  struct RepErrors {
    std::vector<double> inf;                // per k
    std::vector<std::vector<double>> comm;  // [k][r] mean row l1 over community r
  };

  for (std::size_t pt = 0; pt < p.n_list.size(); ++pt) {
    const int n = p.n_list[pt];
    const double theta = p.thetas[pt];
    std::vector<double> outer_sup_inf, outer_sup_l1, E_ns;
    std::vector<std::vector<double>> outer_inf(static_cast<std::size_t>(k_max) + 1),
        outer_l1(static_cast<std::size_t>(k_max) + 1);
    std::vector<double> inner_inf_se(static_cast<std::size_t>(k_max) + 1),
        inner_l1_se(static_cast<std::size_t>(k_max) + 1);
    bool dense_all = true, clip_all = true;
    for (int o = 0; o < p.outer; ++o) {
      const std::vector<int> labels = sample_labels(spec, n, derive_seed(p.seed, Stream::kLabels, {u64(o)}));
      const auto members = community_members(labels, K);
      const std::vector<double> pi_hat = empirical_shares(labels, K);
      const MeanFieldModel model = build_model(spec, pi_hat, n, theta);
      dense_all = dense_all && model.stats.dense_threshold_ok;
      clip_all = clip_all && model.stats.clipping_free;
      E_ns.push_back(model.stats.E_n);
      const DriftTable shared_drift(model.M, model.W_bar, model.R_bar, spec.c, spec.d, k_max);

      const auto reps = parallel_map(p.inner, p.threads, [&](int rep) {
        const std::uint64_t rseed = derive_seed(p.seed, Stream::kMisc, {u64(n), u64(o), u64(rep)});
        const GraphSample g = sample_graph(spec, labels, theta, rseed);
        const RowStochasticMatrix C = normalize_weights(g);
        std::optional<DriftTable> own_drift;
        if (p.plugin_moments) {
          const WeightMoments wm = estimate_weight_moments(spec, g);
          const MeanFieldModel m2 = build_model(spec, pi_hat, n, theta, &wm);
          own_drift.emplace(m2.M, m2.W_bar, m2.R_bar, spec.c, spec.d, k_max);
        }
        const DriftTable& drift = own_drift ? *own_drift : shared_drift;
        Engine init = make_engine(rseed, Stream::kInitial);
        Matrix R = sample_initial(spec, g, init);
        check_opinion_bounds(R, "error experiment: initial state");
        ApproxProcess approx(drift, labels, R, spec.c, spec.d);
        RepErrors out;
        out.inf.assign(static_cast<std::size_t>(k_max) + 1, 0.0);
        out.comm.assign(static_cast<std::size_t>(k_max) + 1, std::vector<double>(static_cast<std::size_t>(K), 0.0));
        Matrix scratch;
        for (int k = 1; k <= k_max; ++k) {
          const SignalFrame f = sample_signal_frame(spec, g, k, rseed);
          step_inplace(R, C, f.W, spec.c, spec.d, scratch);
          approx.advance(f.W);
          const Eigen::VectorXd row_l1 = (R - approx.value()).cwiseAbs().rowwise().sum();
          out.inf[k] = row_l1.maxCoeff();
          for (int r = 0; r < K; ++r) {
            if (members[r].empty()) continue;
            double acc = 0.0;
            for (int i : members[r]) acc += row_l1[i];
            out.comm[k][r] = acc / static_cast<double>(members[r].size());
          }
        }
        return out;
      });

      double sup_inf = 0.0, sup_l1 = 0.0;
      for (int k = 0; k <= k_max; ++k) {
        std::vector<double> v;
        for (const auto& rr : reps) v.push_back(rr.inf[k]);
        const MeanSe inf = mean_se(v);
        MeanSe best;
        for (int r = 0; r < K; ++r) {
          if (members[r].empty()) continue;
          std::vector<double> w;
          for (const auto& rr : reps) w.push_back(rr.comm[k][r]);
          const MeanSe m = mean_se(w);
          if (m.mean > best.mean || (r == 0)) best = m;
        }
        const bool dense_ok = model.stats.dense_threshold_ok;
        curve.per_outer.push_back({n, theta, k, o, NormType::kInf, inf.mean, inf.se, p.inner, dense_ok});
        curve.per_outer.push_back({n, theta, k, o, NormType::kRowL1, best.mean, best.se, p.inner, dense_ok});
        outer_inf[k].push_back(inf.mean);
        outer_l1[k].push_back(best.mean);
        inner_inf_se[k] += inf.se * inf.se;
        inner_l1_se[k] += best.se * best.se;
        sup_inf = std::max(sup_inf, inf.mean);
        sup_l1 = std::max(sup_l1, best.mean);
      }
      outer_sup_inf.push_back(sup_inf);
      outer_sup_l1.push_back(sup_l1);
    }

    auto aggregate = [&](const std::vector<double>& per_outer, double inner_var_sum) {
      MeanSe m = mean_se(per_outer);
      if (p.outer == 1) m.se = std::sqrt(inner_var_sum);
      return m;
    };
    for (int k = 0; k <= k_max; ++k) {
      const MeanSe a = aggregate(outer_inf[k], inner_inf_se[k]);
      const MeanSe b = aggregate(outer_l1[k], inner_l1_se[k]);
      curve.points.push_back({n, theta, k, -1, NormType::kInf, a.mean, a.se, p.inner * p.outer, dense_all});
      curve.points.push_back({n, theta, k, -1, NormType::kRowL1, b.mean, b.se, p.inner * p.outer, dense_all});
    }
    const double E_n_mean = std::accumulate(E_ns.begin(), E_ns.end(), 0.0) / static_cast<double>(E_ns.size());
    for (NormType t : {NormType::kInf, NormType::kRowL1}) {
      const auto& sups = t == NormType::kInf ? outer_sup_inf : outer_sup_l1;
      ErrorSummary s;
      s.n = n;
      s.theta = theta;
      s.norm = t;
      const MeanSe m = mean_se(sups);
      s.sup_estimate = m.mean;
      s.se = m.se;
      if (p.outer == 1) {
        // Inner standard error at the maximising k.
        double best = -1.0;
        for (const auto& pt2 : curve.per_outer)
          if (pt2.n == n && pt2.norm == t && pt2.estimate > best) {
            best = pt2.estimate;
            s.se = pt2.se;
          }
      }
      s.per_outer_sup = sups;
      s.E_n_mean = E_n_mean;
      s.dense_ok = dense_all;
      s.clipping_free = clip_all;
      curve.summaries.push_back(std::move(s));
    }
  }
  return curve;
}

namespace {

void write_point(std::ostream& os, const ErrorPoint& pt, bool with_outer) {
  os << pt.n << ',' << pt.theta << ',' << pt.k << ',';
  if (with_outer) os << pt.outer << ',';
  os << norm_name(pt.norm) << ',' << pt.estimate << ',' << pt.se << ',' << pt.reps << ','
     << (pt.dense_ok ? 1 : 0) << '\n';
}

}  // namespace

void write_error_curve(std::ostream& os, const ErrorCurve& curve) {
  os.precision(10);
  os << kErrorCurveHeader << '\n';
  for (const auto& pt : curve.points) write_point(os, pt, false);
}

void write_error_curve_per_outer(std::ostream& os, const ErrorCurve& curve) {
  os.precision(10);
  os << "n,theta,k,outer,norm_type,estimate,stderr,reps,dense_ok\n";
  for (const auto& pt : curve.per_outer) write_point(os, pt, true);
}

void write_error_summary(std::ostream& os, const ErrorCurve& curve) {
  os.precision(10);
  os << "n,theta,norm_type,k_max,sup_estimate,stderr,E_n_mean,dense_ok,clipping_free\n";
  for (const auto& s : curve.summaries)
    os << s.n << ',' << s.theta << ',' << norm_name(s.norm) << ',' << curve.k_max << ',' << s.sup_estimate << ','
       << s.se << ',' << s.E_n_mean << ',' << (s.dense_ok ? 1 : 0) << ',' << (s.clipping_free ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------------------

TestFunction TestFunction::parse(const std::string& id) {
  auto fail = [&]() -> TestFunction { throw std::invalid_argument("unknown test function '" + id + "'"); };
  std::vector<std::string> parts;
  {
    std::stringstream ss(id);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(item);
  }
  if (parts.empty()) return fail();
  auto topic = [&](const std::string& s) {
    std::size_t used = 0;
    int t = 0;
    try {
      t = std::stoi(s, &used);
    } catch (const std::exception&) {
      fail();
    }
    if (used != s.size() || t < 1) fail();
    return t - 1;
  };
  TestFunction f;
  if (parts[0] == "one" && parts.size() == 1) {
    f.kind = Kind::kOne;
  } else if (parts[0] == "proj" && parts.size() == 2) {
    f.kind = Kind::kProjection;
    f.topic = topic(parts[1]);
  } else if (parts[0] == "prod" && parts.size() == 3) {
    f.kind = Kind::kProduct;
    f.topic = topic(parts[1]);
    f.topic2 = topic(parts[2]);
  } else if (parts[0] == "poly" && parts.size() == 3) {
    f.kind = Kind::kClippedPoly;
    f.topic = topic(parts[1]);
    std::stringstream ss(parts[2]);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        f.coeffs.push_back(std::stod(item));
      } catch (const std::exception&) {
        fail();
      }
    }
    if (f.coeffs.empty()) fail();
  } else {
    fail();
  }
  return f;
}

std::string TestFunction::id() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::kOne: os << "one"; break;
    case Kind::kProjection: os << "proj:" << topic + 1; break;
    case Kind::kProduct: os << "prod:" << topic + 1 << ':' << topic2 + 1; break;
    case Kind::kClippedPoly:
      os << "poly:" << topic + 1 << ':';
      for (std::size_t i = 0; i < coeffs.size(); ++i) os << (i ? "," : "") << coeffs[i];
      break;
  }
  return os.str();
}

double TestFunction::operator()(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  switch (kind) {
    case Kind::kOne: return 1.0;
    case Kind::kProjection: return x[topic];
    case Kind::kProduct: return x[topic] * x[topic2];
    case Kind::kClippedPoly: {
      double acc = 0.0;
      for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x[topic] + *it;
      return std::clamp(acc, -1.0, 1.0);
    }
  }
  return 0.0;
}

namespace {

void check_topics(const TestFunction& f, int ell) {
  if (f.kind != TestFunction::Kind::kOne && (f.topic >= ell || f.topic2 >= ell))
    throw std::invalid_argument("test function " + f.id() + " refers to a topic beyond ell");
}

// One draw of the mean-field value at time k for a vertex of community r,
// driven by freshly sampled own signals and initial opinion.
Eigen::RowVectorXd sample_meanfield_endpoint(const ModelSpec& spec, const MeanFieldModel& model,
                                             const DriftTable& drift, int r, int k, Engine& rng) {
  Eigen::RowVectorXd q(spec.ell), z(spec.ell), R0(spec.ell);
  spec.beliefs[r].sample_into(q, rng);
  const bool isolated = uniform01(rng) < model.isolated_prob[r];
  if (spec.initial == InitialLaw::kBelief) R0 = q;
  else
    for (int t = 0; t < spec.ell; ++t) R0[t] = -1.0 + 2.0 * uniform01(rng);
  const auto& law = spec.signals[r];
  const double b = 1.0 - spec.c - spec.d;
  Eigen::RowVectorXd S = Eigen::RowVectorXd::Zero(spec.ell);
  for (int t = 1; t <= k; ++t) {
    if (law.belief_weight > 0.0 && uniform01(rng) < law.belief_weight) z = q;
    else law.media.sample_into(z, rng);
    S = b * S + spec.d * z;
    if (isolated) S += spec.c * q;
  }
  return S + drift.at(k).row(r) + std::pow(b, k) * R0;
}

// Exact mean-field mean at time k: sum_{t<k} b^t W_bar + D_k + b^k R_bar.
Eigen::RowVectorXd meanfield_mean(const ModelSpec& spec, const MeanFieldModel& model, const DriftTable& drift, int r,
                                  int k) {
  const double b = 1.0 - spec.c - spec.d;
  double geo = 0.0;
  for (int t = 0; t < k; ++t) geo += std::pow(b, t);
  return geo * model.W_bar.row(r) + drift.at(k).row(r) + std::pow(b, k) * model.R_bar.row(r);
}

// Conditional covariance of two coordinates of Z given the belief q.
double signal_cov(const ModelSpec& spec, int r, const Eigen::RowVectorXd& q, int ta, int tb) {
  const auto& law = spec.signals[r];
  const double rho = law.belief_weight;
  const double ma = law.media[ta].mean(), mb = law.media[tb].mean();
  const double ea = rho * q[ta] + (1.0 - rho) * ma, eb = rho * q[tb] + (1.0 - rho) * mb;
  const double cross = ta == tb ? rho * q[ta] * q[ta] + (1.0 - rho) * law.media[ta].second_moment()
                                : rho * q[ta] * q[tb] + (1.0 - rho) * ma * mb;
  return cross - ea * eb;
}

}  // namespace

ChaosReport chaos_experiment(const ChaosParams& p) {
  p.spec.validate();
  const ModelSpec& spec = p.spec;
  const int m = static_cast<int>(p.communities.size());
  if (m < 1) throw std::invalid_argument("chaos_experiment: need at least one vertex");
  if (static_cast<int>(p.functions.size()) != m)
    throw std::invalid_argument("chaos_experiment: one test function per vertex is required");
  if (p.inner < 1 || p.outer < 1) throw std::invalid_argument("chaos_experiment: replication counts must be positive");
  if (p.k < 0) throw std::invalid_argument("chaos_experiment: k must be nonnegative");
  for (int r : p.communities)
    if (r < 0 || r >= spec.K) throw std::invalid_argument("chaos_experiment: community out of range");
  for (const auto& f : p.functions) check_topics(f, spec.ell);
  const bool all_linear = std::all_of(p.functions.begin(), p.functions.end(), [](const auto& f) { return f.linear(); });
  bool conditional = false;
  if (p.mode == ChaosParams::Mode::kConditional) {
    if (!all_linear || m > 2)
      throw std::invalid_argument("chaos_experiment: conditional mode needs linear functions and m <= 2");
    conditional = true;
  } else if (p.mode == ChaosParams::Mode::kAuto) {
    conditional = all_linear && m <= 2;
  }

  std::vector<TestFunction> distinct;
  for (const auto& f : p.functions)
    if (std::none_of(distinct.begin(), distinct.end(), [&](const auto& g) { return g.id() == f.id(); }))
      distinct.push_back(f);

  const int K = spec.K, n = p.n, k = p.k;
  const double b = 1.0 - spec.c - spec.d;
  ChaosReport report;
  report.n = n;
  report.theta = p.theta;
  report.k = k;
  report.conditional = conditional;

  for (int o = 0; o < p.outer; ++o) {
    const std::vector<int> labels = sample_labels(spec, n, derive_seed(p.seed, Stream::kLabels, {u64(o)}));
    const std::vector<double> pi_hat = empirical_shares(labels, K);
    const MeanFieldModel model = build_model(spec, pi_hat, n, p.theta);
    const DriftTable drift(model.M, model.W_bar, model.R_bar, spec.c, spec.d, std::max(k, 1));

    ChaosOuter out;
    out.E_n = model.stats.E_n;
    std::vector<std::vector<int>> tuples;
    {
      std::vector<int> next(static_cast<std::size_t>(K), 0);
      const int want = p.tuples > 0 ? p.tuples : n;
      while (static_cast<int>(tuples.size()) < want) {
        std::vector<int> tup;
        for (int r : p.communities) {
          int& i = next[static_cast<std::size_t>(r)];
          while (i < n && labels[i] != r) ++i;
          if (i == n) break;
          tup.push_back(i++);
        }
        if (static_cast<int>(tup.size()) < m) break;
        tuples.push_back(std::move(tup));
      }
    }
    if (tuples.empty() || (p.tuples > 0 && static_cast<int>(tuples.size()) < p.tuples))
      throw std::runtime_error("chaos_experiment: community has too few vertices in this label draw");
    out.vertices = tuples.front();
    out.tuples = static_cast<int>(tuples.size());
    const double ntup = static_cast<double>(tuples.size());

    // Limit means E[f(V_k) | r] for every distinct function and community.
    std::vector<std::vector<MeanSe>> limit(distinct.size(), std::vector<MeanSe>(static_cast<std::size_t>(K)));
    for (std::size_t fi = 0; fi < distinct.size(); ++fi)
      for (int r = 0; r < K; ++r) {
        const TestFunction& f = distinct[fi];
        if (f.linear()) {
          limit[fi][r].mean = f(meanfield_mean(spec, model, drift, r, k));
        } else {
          Engine rng = make_engine(p.seed, Stream::kMisc, {u64(o), u64(fi), u64(r), 0xC4A05ULL});
          std::vector<double> draws(static_cast<std::size_t>(p.limit_samples));
          for (double& x : draws) x = f(sample_meanfield_endpoint(spec, model, drift, r, k, rng));
          limit[fi][r] = mean_se(draws);
        }
      }
    auto fn_index = [&](const TestFunction& f) {
      for (std::size_t fi = 0; fi < distinct.size(); ++fi)
        if (distinct[fi].id() == f.id()) return fi;
      return std::size_t{0};
    };
    out.product = 1.0;
    std::vector<double> factors;
    for (int j = 0; j < m; ++j) {
      const MeanSe& lm = limit[fn_index(p.functions[j])][p.communities[j]];
      out.product *= lm.mean;
      factors.push_back(lm.mean);
    }
    double var = 0.0;
    for (int j = 0; j < m; ++j) {
      double others = 1.0;
      for (int i = 0; i < m; ++i)
        if (i != j) others *= factors[i];
      const double se = limit[fn_index(p.functions[j])][p.communities[j]].se;
      var += others * others * se * se;
    }
    out.product_se = std::sqrt(var);

    struct RepOut {
      double joint = 0.0;
      double gap = 0.0;
      std::vector<double> functional;  // [fi * K + r]
    };
    const auto reps = parallel_map(p.inner, p.threads, [&](int rep) {
      const std::uint64_t rseed = derive_seed(p.seed, Stream::kMisc, {u64(n), u64(o), u64(rep), 0xC4A0ULL});
      const GraphSample g = sample_graph(spec, labels, p.theta, rseed);
      const RowStochasticMatrix C = normalize_weights(g);
      RepOut res;
      res.functional.assign(distinct.size() * static_cast<std::size_t>(K), 0.0);
      if (conditional) {
        // Conditional means of W and R^(0) given the graph and beliefs.
        Matrix EW(n, spec.ell), ER0(n, spec.ell);
        for (int i = 0; i < n; ++i) {
          const int r = labels[i];
          const auto& law = spec.signals[r];
          for (int t = 0; t < spec.ell; ++t) {
            const double ez = law.belief_weight * g.Q(i, t) + (1.0 - law.belief_weight) * law.media[t].mean();
            EW(i, t) = spec.d * ez + (g.in_degree(i) == 0 ? spec.c * g.Q(i, t) : 0.0);
          }
          if (spec.initial == InitialLaw::kBelief) ER0.row(i) = g.Q.row(i);
          else ER0.row(i).setZero();
        }
        Matrix Rm = ER0, scratch;
        for (int t = 1; t <= k; ++t) {
          C.multiply(Rm, scratch);
          Rm = spec.c * scratch + EW + b * Rm;
        }
        check_opinion_bounds(Rm, "chaos experiment: conditional mean");
        std::vector<double> ER(static_cast<std::size_t>(m)), ERcal(static_cast<std::size_t>(m));
        double geo = 0.0;
        for (int t = 0; t < k; ++t) geo += std::pow(b, t);
        for (const auto& tup : tuples) {
        for (int j = 0; j < m; ++j) {
          const int v = tup[j];
          const int r = labels[v];
          const Eigen::RowVectorXd mean_cal =
              geo * EW.row(v) + drift.at(k).row(r) + std::pow(b, k) * ER0.row(v);
          ER[j] = p.functions[j](Rm.row(v));
          ERcal[j] = p.functions[j](mean_cal);
        }
        double cov = 0.0;
        if (m == 2 && p.functions[0].kind == TestFunction::Kind::kProjection &&
            p.functions[1].kind == TestFunction::Kind::kProjection) {
          const int ta = p.functions[0].topic, tb = p.functions[1].topic;
          Eigen::RowVectorXd ua = Eigen::RowVectorXd::Zero(n), ub = Eigen::RowVectorXd::Zero(n);
          ua[tup[0]] = 1.0;
          ub[tup[1]] = 1.0;
          for (int t = 0; t <= k; ++t) {
            for (int j = 0; j < n; ++j) {
              const double w = ua[j] * ub[j];
              if (w == 0.0) continue;
              if (t < k) {
                cov += w * spec.d * spec.d * signal_cov(spec, labels[j], g.Q.row(j), ta, tb);
              } else if (spec.initial == InitialLaw::kUniform && ta == tb) {
                cov += w / 3.0;
              }
            }
            if (t < k) {
              ua = spec.c * C.left_multiply(ua) + b * ua;
              ub = spec.c * C.left_multiply(ub) + b * ub;
            }
          }
        }
        double joint = 1.0, prod_cal = 1.0;
        for (int j = 0; j < m; ++j) {
          joint *= ER[j];
          prod_cal *= ERcal[j];
        }
        joint += cov;
        res.joint += joint / ntup;
        res.gap += (joint - prod_cal) / ntup;
        }
        for (std::size_t fi = 0; fi < distinct.size(); ++fi)
          for (int i = 0; i < n; ++i) res.functional[fi * K + labels[i]] += distinct[fi](Rm.row(i)) / n;
      } else {
        Engine init = make_engine(rseed, Stream::kInitial);
        Matrix R = sample_initial(spec, g, init);
        check_opinion_bounds(R, "chaos experiment: initial state");
        ApproxProcess approx(drift, labels, R, spec.c, spec.d);
        Matrix scratch;
        for (int t = 1; t <= k; ++t) {
          const SignalFrame f = sample_signal_frame(spec, g, t, rseed);
          step_inplace(R, C, f.W, spec.c, spec.d, scratch);
          approx.advance(f.W);
        }
        for (const auto& tup : tuples) {
          double joint = 1.0, joint_cal = 1.0;
          for (int j = 0; j < m; ++j) {
            joint *= p.functions[j](R.row(tup[j]));
            joint_cal *= p.functions[j](approx.value().row(tup[j]));
          }
          res.joint += joint / ntup;
          res.gap += (joint - joint_cal) / ntup;
        }
        for (std::size_t fi = 0; fi < distinct.size(); ++fi)
          for (int i = 0; i < n; ++i) res.functional[fi * K + labels[i]] += distinct[fi](R.row(i)) / n;
      }
      return res;
    });

    std::vector<double> joints, gaps;
    for (const auto& rr : reps) {
      joints.push_back(rr.joint);
      gaps.push_back(rr.gap);
    }
    const MeanSe js = mean_se(joints), gs = mean_se(gaps);
    out.joint = js.mean;
    out.joint_se = js.se;
    out.gap = gs.mean;
    out.gap_se = gs.se;
    report.outers.push_back(out);

    if (o == 0) {
      for (std::size_t fi = 0; fi < distinct.size(); ++fi)
        for (int r = 0; r < K; ++r) {
          std::vector<double> v;
          for (const auto& rr : reps) v.push_back(rr.functional[fi * K + r]);
          const MeanSe e = mean_se(v);
          EmpiricalFunctional ef;
          ef.function = distinct[fi].id();
          ef.community = r;
          ef.empirical = e.mean;
          ef.empirical_se = e.se;
          ef.limit = spec.pi[r] * limit[fi][r].mean;
          ef.limit_se = spec.pi[r] * limit[fi][r].se;
          report.functionals.push_back(ef);
        }
    }
  }
  std::vector<double> abs_gaps;
  for (const auto& o : report.outers) abs_gaps.push_back(std::abs(o.gap));
  const MeanSe ag = mean_se(abs_gaps);
  report.mean_abs_gap = ag.mean;
  report.mean_abs_gap_se = ag.se;
  if (p.outer == 1) report.mean_abs_gap_se = report.outers[0].gap_se;
  return report;
}

void write_chaos(std::ostream& os, const ChaosReport& report, const std::vector<TestFunction>& fns) {
  os.precision(10);
  os << kChaosHeader << '\n';
  std::string ids;
  for (std::size_t j = 0; j < fns.size(); ++j) ids += (j ? ";" : "") + fns[j].id();
  for (std::size_t o = 0; o < report.outers.size(); ++o) {
    const auto& x = report.outers[o];
    std::string verts;
    for (std::size_t j = 0; j < x.vertices.size(); ++j) verts += (j ? ";" : "") + std::to_string(x.vertices[j]);
    os << report.n << ',' << report.theta << ',' << report.k << ',' << o << ',' << verts << ',' << x.tuples << ','
       << ids << ',' << x.joint << ',' << x.joint_se << ',' << x.product << ',' << x.product_se << ',' << x.gap << ',' << x.gap_se
       << ',' << x.E_n << '\n';
  }
}

void write_functionals(std::ostream& os, const ChaosReport& report) {
  os.precision(10);
  os << kFunctionalHeader << '\n';
  for (const auto& f : report.functionals)
    os << report.n << ',' << report.theta << ',' << report.k << ',' << f.function << ',' << f.community + 1 << ','
       << f.empirical << ',' << f.empirical_se << ',' << f.limit << ',' << f.limit_se << '\n';
}

// ---------------------------------------------------------------------------

StationarityReport stationarity_experiment(const StationarityParams& p) {
  p.spec.validate();
  const ModelSpec& spec = p.spec;
  if (!(p.tol > 0.0)) throw std::invalid_argument("stationarity_experiment: tol must be positive");
  if (p.replications < 1 || p.stationary_samples < 2)
    throw std::invalid_argument("stationarity_experiment: replication counts too small");
  const int K = spec.K, ell = spec.ell, n = p.n;
  StationarityReport rep;
  rep.n = n;
  rep.theta = p.theta;
  rep.k_long = contraction_horizon(spec.d, p.tol);

  const std::vector<int> labels = sample_labels(spec, n, derive_seed(p.seed, Stream::kLabels));
  const auto members = community_members(labels, K);
  const MeanFieldModel model = build_model(spec, empirical_shares(labels, K), n, p.theta);
  const StationarySampler sampler(spec, model, p.tol);
  rep.horizon = sampler.horizon();

  // Per replication: K x ell community means and second moments of R^(k_long).
  const auto runs = parallel_map(p.replications, p.threads, [&](int r) {
    const std::uint64_t rseed = derive_seed(p.seed, Stream::kMisc, {u64(n), u64(r), 0x57A7ULL});
    const GraphSample g = sample_graph(spec, labels, p.theta, rseed);
    const RowStochasticMatrix C = normalize_weights(g);
    Engine init = make_engine(rseed, Stream::kInitial);
    Matrix R = sample_initial(spec, g, init);
    check_opinion_bounds(R, "stationarity experiment: initial state");
    Matrix scratch;
    for (int k = 1; k <= rep.k_long; ++k) {
      const SignalFrame f = sample_signal_frame(spec, g, k, rseed);
      step_inplace(R, C, f.W, spec.c, spec.d, scratch);
    }
    std::pair<KMatrix, KMatrix> mom{KMatrix::Zero(K, ell), KMatrix::Zero(K, ell)};
    for (int c = 0; c < K; ++c) {
      if (members[c].empty()) continue;
      for (int i : members[c]) {
        mom.first.row(c) += R.row(i);
        mom.second.row(c) += R.row(i).cwiseProduct(R.row(i));
      }
      mom.first.row(c) /= static_cast<double>(members[c].size());
      mom.second.row(c) /= static_cast<double>(members[c].size());
    }
    return mom;
  });

  for (int c = 0; c < K; ++c) {
    if (members[c].empty()) continue;
    Engine rng = make_engine(p.seed, Stream::kStationary, {u64(c)});
    Matrix draws(p.stationary_samples, ell);
    for (int s = 0; s < p.stationary_samples; ++s) draws.row(s) = sampler.sample(c, rng);
    check_opinion_bounds(draws, "stationary sampler");
    const Eigen::RowVectorXd closed = sampler.mean(c);
    for (int t = 0; t < ell; ++t)
      for (int moment = 0; moment < 2; ++moment) {
        std::vector<double> sim, stat;
        for (const auto& run : runs) sim.push_back(moment == 0 ? run.first(c, t) : run.second(c, t));
        for (int s = 0; s < p.stationary_samples; ++s)
          stat.push_back(moment == 0 ? draws(s, t) : draws(s, t) * draws(s, t));
        const MeanSe a = mean_se(sim), b = mean_se(stat);
        StationarityRow row;
        row.community = c;
        row.topic = t;
        row.moment = moment == 0 ? "mean" : "second";
        row.simulated = a.mean;
        row.simulated_se = a.se;
        row.stationary = b.mean;
        row.stationary_se = b.se;
        row.closed_form = moment == 0 ? closed[t] : std::nan("");
        row.gap = std::abs(a.mean - b.mean);
        row.combined_se = std::sqrt(a.se * a.se + b.se * b.se);
        rep.rows.push_back(row);
      }
  }
  return rep;
}

void write_stationarity(std::ostream& os, const StationarityReport& report) {
  os.precision(10);
  os << kStationarityHeader << '\n';
  for (const auto& r : report.rows) {
    os << report.n << ',' << report.theta << ',' << report.k_long << ',' << r.community + 1 << ',' << r.topic + 1
       << ',' << r.moment << ',' << r.simulated << ',' << r.simulated_se << ',' << r.stationary << ','
       << r.stationary_se << ',';
    if (std::isnan(r.closed_form)) os << "";
    else os << r.closed_form;
    os << ',' << r.gap << ',' << r.combined_se << '\n';
  }
}

// ---------------------------------------------------------------------------

CountLaw CountLaw::parse(const std::string& text) {
  CountLaw law;
  auto open = text.find('('), close = text.rfind(')');
  if (open == std::string::npos || close != text.size() - 1)
    throw std::invalid_argument("count law '" + text + "': expected poisson(m) or binomial(N,p)");
  const std::string name = text.substr(0, open), args = text.substr(open + 1, close - open - 1);
  try {
    if (name == "poisson") {
      law.kind = Kind::kPoisson;
      law.mean = std::stod(args);
      if (!(law.mean >= 0.0)) throw std::invalid_argument("negative mean");
      return law;
    }
    if (name == "binomial") {
      const auto comma = args.find(',');
      if (comma == std::string::npos) throw std::invalid_argument("missing p");
      law.kind = Kind::kBinomial;
      law.trials = std::stoi(args.substr(0, comma));
      law.p = std::stod(args.substr(comma + 1));
      if (law.trials < 0 || !(law.p >= 0.0 && law.p <= 1.0)) throw std::invalid_argument("bad parameters");
      return law;
    }
  } catch (const std::exception& e) {
    throw std::invalid_argument("count law '" + text + "': " + e.what());
  }
  throw std::invalid_argument("count law '" + text + "': only poisson and binomial counts are supported");
}

std::string CountLaw::to_string() const {
  std::ostringstream os;
  os.precision(17);
  if (kind == Kind::kPoisson) os << "poisson(" << mean << ')';
  else os << "binomial(" << trials << ',' << p << ')';
  return os.str();
}

double ConcentrationCase::mu() const {
  double m = 0.0;
  for (std::size_t r = 0; r < counts.size(); ++r) m += counts[r].expectation() * weights[r].mean();
  return m;
}

double ConcentrationCase::nu() const {
  double v = 0.0;
  for (std::size_t r = 0; r < counts.size(); ++r) v += counts[r].expectation() * weights[r].second_moment();
  return v;
}

void ConcentrationCase::validate() const {
  std::vector<std::string> errs;
  if (counts.empty()) errs.push_back("counts: at least one type is required");
  if (weights.size() != counts.size()) errs.push_back("weights: one law per type is required");
  if (values.size() != counts.size()) errs.push_back("values: one law per type is required");
  if (!(H > 0.0)) errs.push_back("H: must be positive");
  for (std::size_t r = 0; r < weights.size(); ++r)
    if (weights[r].lower() < 0.0 || weights[r].upper() > H)
      errs.push_back("weights." + std::to_string(r + 1) + ": support must lie in [0, H]");
  for (std::size_t r = 0; r < values.size(); ++r)
    if (values[r].lower() < -1.0 || values[r].upper() > 1.0)
      errs.push_back("values." + std::to_string(r + 1) + ": support must lie in [-1, 1]");
  for (double e : eps)
    if (!(e > 0.0)) errs.push_back("eps: entries must be positive");
  if (!errs.empty()) throw SpecError(errs);
}

double sum_tail_bound(double eps, double mu, double nu, double H) {
  if (nu <= 0.0) return 0.0;
  const double a = eps * mu;
  return std::exp(-a * a / (2.0 * nu) + H * a * a * a / (2.0 * nu * nu));
}

double ratio_tail_bound(double eps, double mu, double nu, double H) {
  if (nu <= 0.0) return 0.0;
  const double a = 0.5 * eps * mu;
  return 4.0 * std::exp(-a * a / (2.0 * nu) + H * a * a * a / (2.0 * nu * nu));
}

std::vector<ConcentrationRow> concentration_check(const ConcentrationCase& c, int replications, std::uint64_t seed,
                                                  int threads) {
  c.validate();
  if (replications < 1) throw std::invalid_argument("concentration_check: need at least one replication");
  const std::size_t K = c.counts.size(), E = c.eps.size();
  const double mu = c.mu(), nu = c.nu();
  double ES = 0.0, ESt = 0.0;
  for (std::size_t r = 0; r < K; ++r) {
    ES += c.counts[r].expectation() * c.weights[r].mean();
    ESt += c.counts[r].expectation() * c.weights[r].mean() * c.values[r].mean();
  }
  const double target = ES > 0.0 ? ESt / ES : 0.0;

  constexpr int kChunk = 1000;
  const int chunks = (replications + kChunk - 1) / kChunk;
  struct Counts {
    std::vector<long long> sum, ratio;
  };
  const auto parts = parallel_map(chunks, threads, [&](int ch) {
    Engine rng = make_engine(seed, Stream::kConcentration, {u64(ch)});
    Counts out{std::vector<long long>(E, 0), std::vector<long long>(E, 0)};
    const int lo = ch * kChunk, hi = std::min(replications, lo + kChunk);
    for (int rep = lo; rep < hi; ++rep) {
      double S = 0.0, St = 0.0;
      for (std::size_t r = 0; r < K; ++r) {
        const CountLaw& law = c.counts[r];
        const int N = law.kind == CountLaw::Kind::kPoisson
                          ? (law.mean > 0.0 ? std::poisson_distribution<int>(law.mean)(rng) : 0)
                          : std::binomial_distribution<int>(law.trials, law.p)(rng);
        for (int i = 0; i < N; ++i) {
          const double Bv = c.weights[r].sample(rng);
          const double Xv = c.values[r].sample(rng);
          S += Bv;
          St += Xv * Bv;
        }
      }
      const double dev = S - ES;
      const double ratio = S > 0.0 ? St / S : 0.0;
      for (std::size_t e = 0; e < E; ++e) {
        if (dev > c.eps[e] * mu) ++out.sum[e];
        if (std::abs(ratio - target) > c.eps[e]) ++out.ratio[e];
      }
    }
    return out;
  });
  std::vector<ConcentrationRow> rows;
  for (int check = 0; check < 2; ++check)
    for (std::size_t e = 0; e < E; ++e) {
      long long hits = 0;
      for (const auto& pt : parts) hits += check == 0 ? pt.sum[e] : pt.ratio[e];
      ConcentrationRow row;
      row.name = c.name;
      row.check = check == 0 ? "sum" : "ratio";
      row.eps = c.eps[e];
      row.empirical = static_cast<double>(hits) / replications;
      row.bound = check == 0 ? sum_tail_bound(c.eps[e], mu, nu, c.H) : ratio_tail_bound(c.eps[e], mu, nu, c.H);
      row.bound_informative = row.bound <= 1.0;
      const double b = std::clamp(row.bound, 0.0, 1.0);
      row.se = std::sqrt(b * (1.0 - b) / replications);
      row.pass = !row.bound_informative || row.empirical <= row.bound + 3.0 * row.se;
      rows.push_back(row);
    }
  return rows;
}

void write_concentration(std::ostream& os, const std::vector<ConcentrationRow>& rows) {
  os.precision(10);
  os << kConcentrationHeader << '\n';
  for (const auto& r : rows)
    os << r.name << ',' << r.check << ',' << r.eps << ',' << r.empirical << ',' << r.se << ',' << r.bound << ','
       << (r.bound_informative ? 1 : 0) << ',' << (r.pass ? 1 : 0) << '\n';
}

}  // namespace oplab
