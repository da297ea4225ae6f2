#include <cmath>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "oplab/dynamics.hpp"
#include "oplab/graph.hpp"
#include "oplab/gwtree.hpp"
#include "oplab/harness.hpp"
#include "oplab/meanfield.hpp"
#include "oplab/metrics.hpp"

namespace py = pybind11;
using namespace oplab;

namespace {

std::vector<ScalarDist> parse_laws(const std::vector<std::string>& texts) {
  std::vector<ScalarDist> out;
  for (const auto& t : texts) out.push_back(ScalarDist::parse(t));
  return out;
}

py::dict error_curve_dict(const ErrorCurve& curve) {
  py::list points, summaries;
  for (const auto& pt : curve.points)
    points.append(py::dict(py::arg("n") = pt.n, py::arg("theta") = pt.theta, py::arg("k") = pt.k,
                           py::arg("norm") = norm_name(pt.norm), py::arg("estimate") = pt.estimate,
                           py::arg("stderr") = pt.se, py::arg("reps") = pt.reps, py::arg("dense_ok") = pt.dense_ok));
  for (const auto& s : curve.summaries)
    summaries.append(py::dict(py::arg("n") = s.n, py::arg("theta") = s.theta, py::arg("norm") = norm_name(s.norm),
                              py::arg("sup_estimate") = s.sup_estimate, py::arg("stderr") = s.se,
                              py::arg("per_outer_sup") = s.per_outer_sup, py::arg("E_n_mean") = s.E_n_mean,
                              py::arg("dense_ok") = s.dense_ok, py::arg("clipping_free") = s.clipping_free));
  return py::dict(py::arg("k_max") = curve.k_max, py::arg("points") = points, py::arg("summaries") = summaries);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Opinion dynamics on directed stochastic block models";
  m.attr("__version__") = kVersion;

  py::register_exception<BudgetError>(m, "BudgetError", PyExc_RuntimeError);
  py::register_exception<BoundsViolation>(m, "BoundsViolation", PyExc_RuntimeError);

  py::class_<ModelSpec>(m, "ModelSpec")
      .def_static(
          "homogeneous",
          [](int K, std::vector<double> pi, const KMatrix& kappa, int ell, double c, double d, const std::string& weight,
             const std::string& belief, const std::string& signal) {
            ModelSpec s = ModelSpec::homogeneous(K, std::move(pi), kappa, ell, c, d, ScalarDist::parse(weight),
                                                 ScalarDist::parse(belief), ScalarDist::parse(signal));
            s.validate();
            return s;
          }, py::arg("K"), py::arg("pi"), py::arg("kappa"),
                  py::arg("ell"), py::arg("c"), py::arg("d"), py::arg("weight") = "point(1)",
                  py::arg("belief") = "uniform(-1,1)", py::arg("signal") = "uniform(-1,1)")
      .def_readonly("K", &ModelSpec::K)
      .def_readonly("ell", &ModelSpec::ell)
      .def_readonly("pi", &ModelSpec::pi)
      .def_readonly("kappa", &ModelSpec::kappa)
      .def_readonly("c", &ModelSpec::c)
      .def_readonly("d", &ModelSpec::d)
      .def_readonly("H", &ModelSpec::H)
      .def("violations", &ModelSpec::violations)
      .def("validate", &ModelSpec::validate);

  py::class_<ExperimentConfig>(m, "Config")
      .def_static("parse", &parse_config_any, py::arg("text"))
      .def_static("load", &load_config, py::arg("path"))
      .def("serialize", &serialize_config)
      .def("hash", &config_hash)
      .def_property(
          "experiment", [](const ExperimentConfig& c) { return std::string(kind_name(c.kind)); },
          [](ExperimentConfig& c, const std::string& s) { c.kind = parse_kind(s); })
      .def_readonly("spec", &ExperimentConfig::spec)
      .def_readwrite("n_grid", &ExperimentConfig::n_grid)
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_readwrite("out_dir", &ExperimentConfig::out_dir)
      .def_readwrite("threads", &ExperimentConfig::threads)
      .def_readwrite("inner", &ExperimentConfig::inner)
      .def_readwrite("outer", &ExperimentConfig::outer)
      .def_readwrite("k_max", &ExperimentConfig::k_max)
      .def("theta", [](const ExperimentConfig& c, int n) { return c.theta(n); }, py::arg("n"));

  m.def(
      "run",
      [](const ExperimentConfig& c) {
        const RunSummary s = run(c);
        return py::dict(py::arg("files") = s.files, py::arg("metrics") = s.metrics,
                        py::arg("wall_seconds") = s.wall_seconds);
      },
      py::arg("config"), "Run the configured experiment and write its outputs to config.out_dir.");

  py::class_<GraphSample>(m, "Graph")
      .def_readonly("n", &GraphSample::n)
      .def_readonly("K", &GraphSample::K)
      .def_readonly("labels", &GraphSample::labels)
      .def_readonly("pi_hat", &GraphSample::pi_hat)
      .def_readonly("Q", &GraphSample::Q)
      .def_property_readonly("edge_count", &GraphSample::edge_count)
      .def("in_degrees",
           [](const GraphSample& g) {
             std::vector<int> d(static_cast<std::size_t>(g.n));
             for (int i = 0; i < g.n; ++i) d[static_cast<std::size_t>(i)] = g.in_degree(i);
             return d;
           })
      .def("edges",
           [](const GraphSample& g) {
             std::vector<int> src, dst;
             for (int i = 0; i < g.n; ++i)
               for (int j : g.in_neighbors(i)) {
                 src.push_back(j);
                 dst.push_back(i);
               }
             return py::make_tuple(src, dst, g.in_weights);
           },
           "Edges j -> i as (sources, targets, weights).")
      .def("influence_matrix", [](const GraphSample& g) { return normalize_weights(g).to_dense(); },
           "Dense row-normalised influence matrix C.");

  m.def("sample_labels", &sample_labels, py::arg("spec"), py::arg("n"), py::arg("seed"));
  m.def("sample_graph", &sample_graph, py::arg("spec"), py::arg("labels"), py::arg("theta"), py::arg("seed"),
        py::call_guard<py::gil_scoped_release>());
  m.def("coefficient", &coefficient, py::arg("s"), py::arg("t"), py::arg("c"), py::arg("d"));

  m.def(
      "simulate",
      [](const ModelSpec& spec, const GraphSample& g, int k_max, std::uint64_t seed, std::vector<int> selection,
         bool keep_history) {
        SimulationResult r;
        {
          py::gil_scoped_release release;
          r = simulate(spec, g, normalize_weights(g), k_max, seed, selection, keep_history);
        }
        return py::dict(py::arg("final") = r.final_state.R, py::arg("R0") = r.R0,
                        py::arg("selection") = r.selection, py::arg("trajectories") = r.trajectories,
                        py::arg("signals") = r.signal_history);
      },
      py::arg("spec"), py::arg("graph"), py::arg("k_max"), py::arg("seed"), py::arg("selection") = std::vector<int>{},
      py::arg("keep_history") = false);
  m.def(
      "closed_form_state",
      [](const GraphSample& g, const std::vector<Matrix>& history, const Matrix& R0, double c, double d, int k) {
        return closed_form_state(normalize_weights(g), history, R0, c, d, k);
      },
      py::arg("graph"), py::arg("signals"), py::arg("R0"), py::arg("c"), py::arg("d"), py::arg("k"));

  py::class_<MeanFieldModel>(m, "MeanFieldModel")
      .def_readonly("M", &MeanFieldModel::M)
      .def_readonly("M_breve", &MeanFieldModel::M_breve)
      .def_readonly("beta", &MeanFieldModel::beta)
      .def_readonly("W_bar", &MeanFieldModel::W_bar)
      .def_readonly("R_bar", &MeanFieldModel::R_bar)
      .def_readonly("isolated_prob", &MeanFieldModel::isolated_prob)
      .def_readonly("pi_hat", &MeanFieldModel::pi_hat)
      .def_property_readonly("E_n", [](const MeanFieldModel& mf) { return mf.stats.E_n; })
      .def_property_readonly("Delta", [](const MeanFieldModel& mf) { return mf.stats.Delta; })
      .def_property_readonly("Lambda", [](const MeanFieldModel& mf) { return mf.stats.Lambda; })
      .def_property_readonly("dense_threshold_ok", [](const MeanFieldModel& mf) { return mf.stats.dense_threshold_ok; });

  m.def(
      "build_model",
      [](const ModelSpec& spec, const std::vector<double>& shares, int n, double theta) {
        return build_model(spec, shares, n, theta);
      },
      py::arg("spec"), py::arg("shares"), py::arg("n"), py::arg("theta"));
  m.def(
      "meanfield_means",
      [](const ModelSpec& spec, const MeanFieldModel& mf, int k_max) {
        const DriftTable drift(mf.M, mf.W_bar, mf.R_bar, spec.c, spec.d, k_max);
        const double b = 1.0 - spec.c - spec.d;
        std::vector<KMatrix> out;
        double geo = 0.0;
        for (int k = 0; k <= k_max; ++k) {
          out.push_back(geo * mf.W_bar + drift.at(k) + std::pow(b, k) * mf.R_bar);
          geo = 1.0 + b * geo;
        }
        return out;
      },
      py::arg("spec"), py::arg("model"), py::arg("k_max"), "Mean-field mean (K x ell) at each k = 0..k_max.");
  m.def(
      "sample_stationary",
      [](const ModelSpec& spec, const MeanFieldModel& mf, int r, int count, double tol, std::uint64_t seed) {
        const StationarySampler sampler(spec, mf, tol);
        Engine rng = make_engine(seed, Stream::kStationary, {static_cast<std::uint64_t>(r)});
        Matrix out(count, spec.ell);
        for (int i = 0; i < count; ++i) out.row(i) = sampler.sample(r, rng);
        return out;
      },
      py::arg("spec"), py::arg("model"), py::arg("community"), py::arg("count"), py::arg("tol") = 1e-6,
      py::arg("seed") = 1);

  m.def(
      "error_experiment",
      [](const ModelSpec& spec, std::vector<int> n_list, std::vector<double> thetas, int k_max, int inner, int outer,
         std::uint64_t seed, int threads) {
        ErrorParams p;
        p.spec = spec;
        p.n_list = std::move(n_list);
        p.thetas = std::move(thetas);
        p.k_max = k_max;
        p.inner = inner;
        p.outer = outer;
        p.seed = seed;
        p.threads = threads;
        ErrorCurve curve;
        {
          py::gil_scoped_release release;
          curve = error_experiment(p);
        }
        return error_curve_dict(curve);
      },
      py::arg("spec"), py::arg("n_list"), py::arg("thetas"), py::arg("k_max") = 0, py::arg("inner") = 20,
      py::arg("outer") = 5, py::arg("seed") = 1, py::arg("threads") = 0);

  m.def(
      "chaos_experiment",
      [](const ModelSpec& spec, int n, double theta, int k, std::vector<int> communities,
         std::vector<std::string> functions, int inner, int outer, int tuples, const std::string& mode,
         std::uint64_t seed, int threads) {
        ChaosParams p;
        p.spec = spec;
        p.n = n;
        p.theta = theta;
        p.k = k;
        p.communities = std::move(communities);
        for (const auto& f : functions) p.functions.push_back(TestFunction::parse(f));
        p.inner = inner;
        p.outer = outer;
        p.tuples = tuples;
        p.mode = mode == "simulate"      ? ChaosParams::Mode::kSimulate
                 : mode == "conditional" ? ChaosParams::Mode::kConditional
                                         : ChaosParams::Mode::kAuto;
        p.seed = seed;
        p.threads = threads;
        ChaosReport rep;
        {
          py::gil_scoped_release release;
          rep = chaos_experiment(p);
        }
        py::list outers, fns;
        for (const auto& o : rep.outers)
          outers.append(py::dict(py::arg("vertices") = o.vertices, py::arg("tuples") = o.tuples,
                                 py::arg("joint") = o.joint, py::arg("joint_se") = o.joint_se,
                                 py::arg("product") = o.product, py::arg("gap") = o.gap, py::arg("gap_se") = o.gap_se,
                                 py::arg("E_n") = o.E_n));
        for (const auto& f : rep.functionals)
          fns.append(py::dict(py::arg("function") = f.function, py::arg("community") = f.community,
                              py::arg("empirical") = f.empirical, py::arg("empirical_se") = f.empirical_se,
                              py::arg("limit") = f.limit));
        return py::dict(py::arg("conditional") = rep.conditional, py::arg("mean_abs_gap") = rep.mean_abs_gap,
                        py::arg("mean_abs_gap_se") = rep.mean_abs_gap_se, py::arg("outers") = outers,
                        py::arg("functionals") = fns);
      },
      py::arg("spec"), py::arg("n"), py::arg("theta"), py::arg("k") = 2, py::arg("communities") = std::vector<int>{0, 1},
      py::arg("functions") = std::vector<std::string>{"proj:1", "proj:1"}, py::arg("inner") = 200,
      py::arg("outer") = 5, py::arg("tuples") = 1, py::arg("mode") = "auto", py::arg("seed") = 1,
      py::arg("threads") = 0);

  m.def("sum_tail_bound", &sum_tail_bound, py::arg("eps"), py::arg("mu"), py::arg("nu"), py::arg("H"));
  m.def("ratio_tail_bound", &ratio_tail_bound, py::arg("eps"), py::arg("mu"), py::arg("nu"), py::arg("H"));
  m.def(
      "concentration_check",
      [](std::vector<std::string> counts, std::vector<std::string> weights, std::vector<std::string> values,
         std::vector<double> eps, double H, int replications, std::uint64_t seed) {
        ConcentrationCase c;
        c.name = "python";
        c.H = H;
        for (const auto& t : counts) c.counts.push_back(CountLaw::parse(t));
        c.weights = parse_laws(weights);
        c.values = parse_laws(values);
        c.eps = std::move(eps);
        std::vector<ConcentrationRow> rows;
        {
          py::gil_scoped_release release;
          rows = concentration_check(c, replications, seed);
        }
        py::list out;
        for (const auto& r : rows)
          out.append(py::dict(py::arg("check") = r.check, py::arg("eps") = r.eps, py::arg("empirical") = r.empirical,
                              py::arg("stderr") = r.se, py::arg("bound") = r.bound,
                              py::arg("bound_informative") = r.bound_informative, py::arg("pass") = r.pass));
        return out;
      },
      py::arg("counts"), py::arg("weights"), py::arg("values"), py::arg("eps"), py::arg("H") = 1.0,
      py::arg("replications") = 100000, py::arg("seed") = 1);

  m.def(
      "estimate_a_s",
      [](const ModelSpec& spec, int r, int s, double theta, std::vector<std::string> leaves, int replications,
         std::uint64_t seed, int threads) {
        const KMatrix q = offspring_means(spec.kappa, spec.pi, theta);
        const std::vector<ScalarDist> laws = parse_laws(leaves);
        const KMatrix Mb = build_breve_M(spec.pi, spec.kappa, weight_moments(spec).beta);
        MonteCarloEstimate e;
        {
          py::gil_scoped_release release;
          e = estimate_a_s(r, s, q, spec, laws, Mb, replications, seed, threads);
        }
        return py::make_tuple(e.mean, e.se);
      },
      py::arg("spec"), py::arg("root_type"), py::arg("s"), py::arg("theta"), py::arg("leaves"),
      py::arg("replications") = 10000, py::arg("seed") = 1, py::arg("threads") = 0,
      "Monte Carlo a_s for a root of the given type; returns (mean, stderr).");
  m.def(
      "tree_likeness",
      [](const ModelSpec& spec, int n, double theta, int depth, int graphs, int vertices, std::uint64_t seed) {
        TreeLikenessRow row;
        {
          py::gil_scoped_release release;
          row = tree_likeness(spec, n, theta, depth, graphs, vertices, seed);
        }
        return row.non_tree_fraction;
      },
      py::arg("spec"), py::arg("n"), py::arg("theta"), py::arg("depth") = 2, py::arg("graphs") = 5,
      py::arg("vertices") = 200, py::arg("seed") = 1);
  m.def("bound_checks_performed", &bound_checks_performed);
}
