#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oplab/metrics.hpp"
#include "oplab/model_spec.hpp"
#include "oplab/types.hpp"

namespace oplab {

inline constexpr const char* kVersion = "0.1.0";

enum class ExperimentKind { kSimulate, kMeanfield, kError, kChaos, kStationary, kConcentration, kTree };
const char* kind_name(ExperimentKind k);
ExperimentKind parse_kind(const std::string& s);

// theta as a function of n.
struct ThetaRule {
  enum class Kind { kConst, kLog, kLogLog, kPow, kLinear };
  Kind kind = Kind::kConst;
  double x = 1.0;

  // "const:x", "log:x" (x log n), "loglog:x" (x log log n), "pow:a" (n^a),
  // "linear:x" (x n).
  static ThetaRule parse(const std::string& text);
  std::string to_string() const;
  double operator()(int n) const;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kError;
  ModelSpec spec;
  std::vector<int> n_grid;
  ThetaRule theta;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int threads = 0;

  // [run]
  int k_max = 0;  // 0: automatic
  double tol = 1e-4;
  int inner = 20;
  int outer = 5;
  bool plugin_moments = false;

  // [simulate] trajectories are dumped for vertices 0..sim_vertices-1
  int sim_vertices = 10;

  // [chaos]
  int chaos_k = 2;
  std::vector<int> chaos_communities{0, 1};  // 0-based
  std::vector<std::string> chaos_functions{"proj:1", "proj:1"};
  int chaos_tuples = 1;  // 0: as many disjoint tuples as fit
  int chaos_limit_samples = 20000;
  std::string chaos_mode = "auto";

  // [stationary]
  int stationary_samples = 20000;

  // [concentration]
  double conc_H = 1.0;
  std::vector<std::string> conc_counts{"poisson(50)"};
  std::vector<std::string> conc_weights{"uniform(0,1)"};
  std::vector<std::string> conc_values{"uniform(-1,1)"};
  std::vector<double> conc_eps{0.05, 0.1, 0.2, 0.4};
  int conc_replications = 100000;

  // [tree]
  int tree_s_max = 3;
  int tree_replications = 10000;
  std::vector<std::string> tree_leaves{"uniform(-1,1)"};
  int tree_depth = 2;
  int tree_graphs = 5;
  int tree_vertices = 200;
};

// Key paths are "section.key" with optional 1-based indices appended
// ("model.weights.1.2"). Throws SpecError listing every problem found.
ExperimentConfig parse_config(const std::string& text);
// Accepts either the key-value format or a JSON object of the same shape.
ExperimentConfig parse_config_any(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Canonical key-value text; parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const ExperimentConfig& c);

// 64-bit FNV-1a of the canonical serialisation, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

struct RunSummary {
  std::vector<std::string> files;
  double wall_seconds = 0.0;
  std::map<std::string, double> metrics;
};

// Runs the configured experiment, writes its CSV files and manifest.json into
// c.out_dir. I/O failures throw std::runtime_error naming the path.
RunSummary run(const ExperimentConfig& c);

}  // namespace oplab
