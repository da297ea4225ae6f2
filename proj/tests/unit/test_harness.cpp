#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oplab/harness.hpp"

using namespace oplab;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(
experiment = error
seed = 7
[model]
K = 1
ell = 1
pi = 1
kappa = 1
c = 0.3
d = 0.2
[grid]
n = 50, 100
theta = log:2
)";

const char* kThreeBlock = R"(
# three communities, two topics
experiment = chaos
seed = 11
threads = 2
[model]
K = 3
ell = 2
pi = 0.2, 0.3, 0.5
kappa = 1, 0.5, 0; 0.5, 2, 1; 0, 1, 3
c = 0.25
d = 0.35
H = 2
weights = uniform(0,2)
weights.1.3 = point(0.5)
beliefs = uniform(-1,1)
beliefs.2 = uniform(0,1)
signals = uniform(-1,1); uniform(-0.5,0.5); point(0.3)
signal_belief_weight = 0, 0.5, 0
initial = belief
labels = fixed
[grid]
n = 100, 200, 400
theta = pow:0.5
[run]
inner = 4
outer = 2
k_max = 6
[chaos]
k = 3
communities = 1, 3
functions = proj:2; poly:1:0,0.5,0.5
)";

ExperimentConfig tiny(ExperimentKind kind, const std::string& out) {
  ExperimentConfig c = parse_config(kMinimal);
  c.kind = kind;
  c.out_dir = out;
  c.n_grid = {60};
  c.inner = 3;
  c.outer = 2;
  c.k_max = 5;
  c.chaos_communities = {0, 0};
  c.chaos_limit_samples = 500;
  c.stationary_samples = 500;
  c.conc_replications = 2000;
  c.tree_replications = 300;
  c.tree_graphs = 2;
  c.tree_vertices = 60;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("oplab_test_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string joined_errors(const SpecError& e) {
  std::string s;
  for (const auto& v : e.violations()) s += v + "\n";
  return s;
}

}  // namespace

TEST_CASE("minimal config") {
  const ExperimentConfig c = parse_config(kMinimal);
  CHECK(c.kind == ExperimentKind::kError);
  CHECK(c.seed == 7);
  CHECK(c.spec.K == 1);
  CHECK(c.n_grid == std::vector<int>{50, 100});
  CHECK(c.theta(100) == doctest::Approx(2.0 * std::log(100.0)));
  CHECK(c.spec.weight(0, 0).to_string() == ScalarDist::point(1).to_string());
}

TEST_CASE("pi that does not sum to one is reported by key") {
  std::string text = kMinimal;
  text.replace(text.find("pi = 1"), 6, "pi = 0.7");
  try {
    parse_config(text);
    FAIL("expected SpecError");
  } catch (const SpecError& e) {
    CHECK(joined_errors(e).find("model.pi") != std::string::npos);
  }
}

TEST_CASE("every error is collected") {
  std::string text = std::string(kMinimal) + "[run]\ninner = 0\nbogus = 3\n";
  text.replace(text.find("c = 0.3"), 7, "c = 0.9");
  try {
    parse_config(text);
    FAIL("expected SpecError");
  } catch (const SpecError& e) {
    const std::string all = joined_errors(e);
    CHECK(all.find("run.inner") != std::string::npos);
    CHECK(all.find("run.bogus") != std::string::npos);
    CHECK(all.find("model.") != std::string::npos);
  }
}

TEST_CASE("round trip of a three-community config") {
  const ExperimentConfig a = parse_config(kThreeBlock);
  CHECK(a.spec.K == 3);
  CHECK(a.spec.weight(0, 2).to_string() == "point(0.5)");
  CHECK(a.spec.weight(1, 1).to_string() == ScalarDist::uniform(0, 2).to_string());
  CHECK(a.spec.signals[1].belief_weight == 0.5);
  CHECK(a.spec.initial == InitialLaw::kBelief);
  CHECK(a.spec.label_mode == LabelMode::kFixed);
  CHECK(a.chaos_communities == std::vector<int>{0, 2});
  const std::string text = serialize_config(a);
  const ExperimentConfig b = parse_config(text);
  CHECK(serialize_config(b) == text);
  CHECK(config_hash(a) == config_hash(b));
  CHECK(b.spec.kappa == a.spec.kappa);
  CHECK(b.spec.weights == a.spec.weights);
  CHECK(b.spec.beliefs == a.spec.beliefs);
  CHECK(b.spec.signals == a.spec.signals);
  CHECK(config_hash(a).size() == 16);
  ExperimentConfig other = a;
  other.seed = 12;
  CHECK(config_hash(other) != config_hash(a));
}

TEST_CASE("grid errors") {
  std::string text = kMinimal;
  text.replace(text.find("n = 50, 100"), 11, "n =");
  CHECK_THROWS_AS(parse_config(text), SpecError);
  std::string no_theta = kMinimal;
  no_theta.replace(no_theta.find("theta = log:2"), 13, "");
  CHECK_THROWS_AS(parse_config(no_theta), SpecError);
  std::string bad_rule = kMinimal;
  bad_rule.replace(bad_rule.find("theta = log:2"), 13, "theta = cube:2");
  CHECK_THROWS_AS(parse_config(bad_rule), SpecError);
}

TEST_CASE("theta rules") {
  CHECK(ThetaRule::parse("const:3")(1000) == 3.0);
  CHECK(ThetaRule::parse("pow:0.5")(400) == doctest::Approx(20.0));
  CHECK(ThetaRule::parse("loglog:2")(1000) == doctest::Approx(2.0 * std::log(std::log(1000.0))));
  CHECK(ThetaRule::parse("linear:0.1")(500) == doctest::Approx(50.0));
  for (const char* r : {"const:3", "log:1.5", "loglog:2", "pow:0.8", "linear:0.1"})
    CHECK(ThetaRule::parse(ThetaRule::parse(r).to_string()).to_string() == ThetaRule::parse(r).to_string());
  CHECK_THROWS(ThetaRule::parse("pow"));
  CHECK_THROWS(ThetaRule::parse("nope:1"));
}

TEST_CASE("JSON and key-value inputs agree") {
  const char* json = R"({
    "experiment": "error", "seed": 7,
    "model": {"K": 1, "ell": 1, "pi": [1], "kappa": [[1]], "c": 0.3, "d": 0.2},
    "grid": {"n": [50, 100], "theta": "log:2"}
  })";
  CHECK(serialize_config(parse_config_any(json)) == serialize_config(parse_config(kMinimal)));
  CHECK(serialize_config(parse_config_any(kMinimal)) == serialize_config(parse_config(kMinimal)));
  CHECK_THROWS_AS(parse_config_any(R"({"experiment": "error", "mystery": 1})"), SpecError);
}

TEST_CASE("unknown and duplicate keys are rejected") {
  CHECK_THROWS_AS(parse_config(std::string(kMinimal) + "[model]\nkapa = 1\n"), SpecError);
  CHECK_THROWS_AS(parse_config(std::string(kMinimal) + "[grid]\nn = 3\n"), SpecError);
  CHECK_THROWS_AS(parse_config("experiment = teleport\n[model]\n[grid]\nn = 5\ntheta = const:1\n"), SpecError);
}

TEST_CASE("load_config reports missing files") {
  CHECK_THROWS(load_config("/nonexistent/oplab.cfg"));
}

#ifdef OPLAB_SOURCE_DIR
TEST_CASE("shipped configs parse and round trip") {
  int seen = 0;
  for (const auto& e : std::filesystem::directory_iterator(std::string(OPLAB_SOURCE_DIR) + "/configs")) {
    CAPTURE(e.path().string());
    const ExperimentConfig a = load_config(e.path().string());
    const ExperimentConfig b = parse_config(serialize_config(a));
    CHECK(serialize_config(b) == serialize_config(a));
    CHECK(config_hash(b) == config_hash(a));
    ++seen;
  }
  CHECK(seen >= 9);
}
#endif

TEST_CASE("every experiment runs and is byte-reproducible") {
  for (auto kind : {ExperimentKind::kSimulate, ExperimentKind::kMeanfield, ExperimentKind::kError,
                    ExperimentKind::kChaos, ExperimentKind::kStationary, ExperimentKind::kConcentration,
                    ExperimentKind::kTree}) {
    CAPTURE(kind_name(kind));
    const fs::path d1 = scratch(std::string(kind_name(kind)) + "_a");
    const fs::path d2 = scratch(std::string(kind_name(kind)) + "_b");
    ExperimentConfig c1 = tiny(kind, d1.string());
    c1.threads = 1;
    ExperimentConfig c2 = tiny(kind, d2.string());
    c2.threads = 2;
    const RunSummary s1 = run(c1);
    const RunSummary s2 = run(c2);
    REQUIRE(s1.files == s2.files);
    CHECK(std::find(s1.files.begin(), s1.files.end(), "manifest.json") != s1.files.end());
    for (const auto& f : s1.files) {
      REQUIRE(fs::exists(d1 / f));
      if (f == "manifest.json") continue;
      CHECK_MESSAGE(slurp(d1 / f) == slurp(d2 / f), f);
    }
    const std::string manifest = slurp(d1 / "manifest.json");
    CHECK(manifest.find(config_hash(c1)) != std::string::npos);
    CHECK(manifest.find("wall_time_seconds") != std::string::npos);
    fs::remove_all(d1);
    fs::remove_all(d2);
  }
}

TEST_CASE("output directory failures are reported") {
  const fs::path blocker = scratch("blocker");
  { std::ofstream(blocker) << "x"; }
  ExperimentConfig c = tiny(ExperimentKind::kMeanfield, (blocker / "sub").string());
  CHECK_THROWS_AS(run(c), std::runtime_error);
  fs::remove_all(blocker);
}

TEST_CASE("smoke run finishes quickly") {
  const fs::path d = scratch("smoke");
  ExperimentConfig c = parse_config(kMinimal);
  c.out_dir = d.string();
  c.n_grid = {200};
  c.inner = 3;
  c.outer = 1;
  const auto t0 = std::chrono::steady_clock::now();
  const RunSummary s = run(c);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 60.0);
  CHECK(s.metrics.count("error.inf.n200") == 1);
  fs::remove_all(d);
}
