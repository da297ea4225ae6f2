#include "oplab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "oplab/dynamics.hpp"
#include "oplab/graph.hpp"
#include "oplab/gwtree.hpp"
#include "oplab/meanfield.hpp"
#include "oplab/parallel.hpp"

namespace oplab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char ch : s) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == sep && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

std::string fmt(double x) {
  for (int prec = 15; prec <= 17; ++prec) {
    std::ostringstream os;
    os << std::setprecision(prec) << x;
    if (prec == 17 || std::stod(os.str()) == x) return os.str();
  }
  return {};
}

template <class T, class F>
std::string join(const std::vector<T>& v, const std::string& sep, F&& f) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + f(v[i]);
  return s;
}

// Flat key-path view of a configuration document with error collection.
class Reader {
 public:
  explicit Reader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  std::vector<std::string> errors;

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::optional<std::string> raw(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  void error(const std::string& key, const std::string& msg) { errors.push_back(key + ": " + msg); }

  template <class T>
  void number(const std::string& key, T& dst) {
    auto v = raw(key);
    if (!v) return;
    try {
      std::size_t used = 0;
      if constexpr (std::is_same_v<T, int>) {
        const long long x = std::stoll(*v, &used);
        if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
          throw std::out_of_range("range");
        dst = static_cast<int>(x);
      } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (!v->empty() && (*v)[0] == '-') throw std::invalid_argument("negative");
        dst = std::stoull(*v, &used);
      } else {
        dst = std::stod(*v, &used);
      }
      if (used != v->size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      error(key, "expected a number, got '" + *v + "'");
    }
  }

  void boolean(const std::string& key, bool& dst) {
    auto v = raw(key);
    if (!v) return;
    if (*v == "true" || *v == "1") dst = true;
    else if (*v == "false" || *v == "0") dst = false;
    else error(key, "expected true or false");
  }

  void text(const std::string& key, std::string& dst) {
    if (auto v = raw(key)) dst = *v;
  }

  template <class T>
  bool numbers(const std::string& key, std::vector<T>& dst) {
    auto v = raw(key);
    if (!v) return false;
    std::vector<T> out;
    for (const auto& item : split(*v, ',')) {
      try {
        std::size_t used = 0;
        if constexpr (std::is_same_v<T, int>) out.push_back(std::stoi(item, &used));
        else out.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        error(key, "expected a comma-separated list of numbers, got '" + *v + "'");
        return false;
      }
    }
    dst = std::move(out);
    return true;
  }

  bool list(const std::string& key, std::vector<std::string>& dst) {
    auto v = raw(key);
    if (!v) return false;
    dst = split(*v, ';');
    return true;
  }

  // Keys under `prefix.` that were not consumed as plain keys.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : kv_)
      if (k.rfind(prefix + ".", 0) == 0) out.push_back(k);
    return out;
  }

  void check_unknown() {
    for (const auto& [k, v] : kv_)
      if (!used_.count(k)) error(k, "unknown key");
  }

 private:
  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

std::map<std::string, std::string> flatten_kv(const std::string& text, std::vector<std::string>& errors) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        errors.push_back("line " + std::to_string(lineno) + ": malformed section header");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string full = section.empty() ? key : section + "." + key;
    if (key.empty()) {
      errors.push_back("line " + std::to_string(lineno) + ": empty key");
      continue;
    }
    if (!kv.emplace(full, trim(line.substr(eq + 1))).second) errors.push_back(full + ": duplicate key");
  }
  return kv;
}

std::string json_scalar(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>() ? "true" : "false";
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  if (j.is_number_unsigned()) return std::to_string(j.get<unsigned long long>());
  if (j.is_number()) return fmt(j.get<double>());
  throw std::invalid_argument("unsupported JSON value");
}

void flatten_json(const nlohmann::json& j, const std::string& prefix, std::map<std::string, std::string>& kv,
                  std::vector<std::string>& errors) {
  const std::string key = prefix.empty() ? "<root>" : prefix;
  try {
    if (j.is_object()) {
      for (auto it = j.begin(); it != j.end(); ++it)
        flatten_json(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), kv, errors);
    } else if (j.is_array()) {
      std::string s;
      for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& e = j[i];
        if (e.is_array()) {
          std::string row;
          for (std::size_t t = 0; t < e.size(); ++t) row += (t ? ", " : "") + json_scalar(e[t]);
          s += (i ? "; " : "") + row;
        } else {
          s += (i ? (e.is_string() ? "; " : ", ") : "") + json_scalar(e);
        }
      }
      kv[prefix] = s;
    } else {
      kv[prefix] = json_scalar(j);
    }
  } catch (const std::exception& e) {
    errors.push_back(key + ": " + e.what());
  }
}

// Parses one or more 1-based indices after `prefix.`.
bool parse_indices(const std::string& key, const std::string& prefix, std::vector<int>& idx) {
  idx.clear();
  std::string rest = key.substr(prefix.size() + 1);
  for (const auto& part : split(rest, '.')) {
    if (part.empty() || !std::all_of(part.begin(), part.end(), ::isdigit)) return false;
    idx.push_back(std::stoi(part) - 1);
  }
  return true;
}

ModelSpec read_model(Reader& rd) {
  ModelSpec spec;
  rd.number("model.K", spec.K);
  rd.number("model.ell", spec.ell);
  const int K = spec.K, ell = spec.ell;
  if (K < 1 || ell < 1) {
    if (K < 1) rd.error("model.K", "must be at least 1");
    if (ell < 1) rd.error("model.ell", "must be at least 1");
    return spec;
  }
  spec.pi.assign(static_cast<std::size_t>(K), 1.0 / K);
  rd.numbers("model.pi", spec.pi);
  spec.kappa = KMatrix::Ones(K, K);
  if (auto v = rd.raw("model.kappa")) {
    const auto rows = split(*v, ';');
    bool ok = true;
    std::vector<std::vector<double>> vals;
    for (const auto& row : rows) {
      std::vector<double> r;
      for (const auto& item : split(row, ',')) {
        try {
          std::size_t used = 0;
          r.push_back(std::stod(item, &used));
          if (used != item.size()) ok = false;
        } catch (const std::exception&) {
          ok = false;
        }
      }
      vals.push_back(r);
    }
    if (!ok) {
      rd.error("model.kappa", "expected rows of numbers separated by ';'");
    } else if (vals.size() == 1 && vals[0].size() == 1) {
      spec.kappa = KMatrix::Constant(K, K, vals[0][0]);
    } else if (static_cast<int>(vals.size()) != K ||
               std::any_of(vals.begin(), vals.end(), [&](const auto& r) { return static_cast<int>(r.size()) != K; })) {
      rd.error("model.kappa", "expected a " + std::to_string(K) + "x" + std::to_string(K) + " matrix");
    } else {
      for (int r = 0; r < K; ++r)
        for (int s = 0; s < K; ++s) spec.kappa(r, s) = vals[r][s];
    }
  }
  rd.number("model.c", spec.c);
  rd.number("model.d", spec.d);
  rd.number("model.H", spec.H);

  auto scalar = [&](const std::string& key, const std::string& text, ScalarDist& dst) {
    try {
      dst = ScalarDist::parse(text);
    } catch (const std::exception& e) {
      rd.error(key, e.what());
    }
  };
  auto vector_law = [&](const std::string& key, const std::string& text, VectorDist& dst) {
    try {
      dst = VectorDist::parse(text, ell);
    } catch (const std::exception& e) {
      rd.error(key, e.what());
    }
  };

  spec.weights.assign(static_cast<std::size_t>(K * K), ScalarDist::point(1.0));
  std::vector<std::string> items;
  if (rd.list("model.weights", items)) {
    if (items.size() == 1) {
      ScalarDist w;
      scalar("model.weights", items[0], w);
      spec.weights.assign(static_cast<std::size_t>(K * K), w);
    } else if (static_cast<int>(items.size()) == K * K) {
      for (int i = 0; i < K * K; ++i)
        scalar("model.weights." + std::to_string(i / K + 1) + "." + std::to_string(i % K + 1), items[i],
               spec.weights[i]);
    } else {
      rd.error("model.weights", "expected 1 or K*K laws separated by ';'");
    }
  }
  const ScalarDist uni = ScalarDist::uniform(-1.0, 1.0);
  spec.beliefs.assign(static_cast<std::size_t>(K), VectorDist::broadcast(uni, ell));
  spec.signals.assign(static_cast<std::size_t>(K), SignalLaw{VectorDist::broadcast(uni, ell)});
  for (const char* name : {"beliefs", "signals"}) {
    const std::string key = std::string("model.") + name;
    if (!rd.list(key, items)) continue;
    if (items.size() != 1 && static_cast<int>(items.size()) != K) {
      rd.error(key, "expected 1 or K laws separated by ';'");
      continue;
    }
    for (int r = 0; r < K; ++r) {
      const std::string& t = items[items.size() == 1 ? 0 : r];
      const std::string sub = items.size() == 1 ? key : key + "." + std::to_string(r + 1);
      if (name[0] == 'b') vector_law(sub, t, spec.beliefs[r]);
      else vector_law(sub, t, spec.signals[r].media);
    }
  }
  // Indexed overrides such as model.weights.1.2 or model.beliefs.2.
  std::vector<int> idx;
  for (const auto& key : rd.keys_with_prefix("model.weights")) {
    if (!parse_indices(key, "model.weights", idx) || idx.size() != 2 || idx[0] < 0 || idx[0] >= K || idx[1] < 0 ||
        idx[1] >= K)
      continue;
    scalar(key, *rd.raw(key), spec.weights[idx[0] * K + idx[1]]);
  }
  for (const char* name : {"beliefs", "signals"}) {
    const std::string prefix = std::string("model.") + name;
    for (const auto& key : rd.keys_with_prefix(prefix)) {
      if (!parse_indices(key, prefix, idx) || idx.size() != 1 || idx[0] < 0 || idx[0] >= K) continue;
      if (name[0] == 'b') vector_law(key, *rd.raw(key), spec.beliefs[idx[0]]);
      else vector_law(key, *rd.raw(key), spec.signals[idx[0]].media);
    }
  }
  std::vector<double> rho;
  if (rd.numbers("model.signal_belief_weight", rho)) {
    if (rho.size() != 1 && static_cast<int>(rho.size()) != K)
      rd.error("model.signal_belief_weight", "expected 1 or K values");
    else
      for (int r = 0; r < K; ++r) spec.signals[r].belief_weight = rho[rho.size() == 1 ? 0 : r];
  }
  std::string s;
  if (auto v = rd.raw("model.initial")) {
    if (*v == "uniform") spec.initial = InitialLaw::kUniform;
    else if (*v == "belief") spec.initial = InitialLaw::kBelief;
    else rd.error("model.initial", "expected uniform or belief");
  }
  if (auto v = rd.raw("model.labels")) {
    if (*v == "iid") spec.label_mode = LabelMode::kIid;
    else if (*v == "fixed") spec.label_mode = LabelMode::kFixed;
    else rd.error("model.labels", "expected iid or fixed");
  }
  for (const auto& v : spec.violations()) rd.errors.push_back("model." + v);
  return spec;
}

ExperimentConfig read_config(std::map<std::string, std::string> kv, std::vector<std::string> errors) {
  Reader rd(std::move(kv));
  rd.errors = std::move(errors);
  ExperimentConfig c;
  if (auto v = rd.raw("experiment")) {
    try {
      c.kind = parse_kind(*v);
    } catch (const std::exception& e) {
      rd.error("experiment", e.what());
    }
  }
  rd.number("seed", c.seed);
  rd.text("out", c.out_dir);
  rd.number("threads", c.threads);
  if (c.threads < 0) rd.error("threads", "must be nonnegative");

  c.spec = read_model(rd);

  if (!rd.numbers("grid.n", c.n_grid) && !rd.has("grid.n")) rd.error("grid.n", "missing");
  if (c.n_grid.empty()) rd.error("grid.n", "the n grid must not be empty");
  for (int n : c.n_grid)
    if (n < 2) rd.error("grid.n", "every n must be at least 2");
  if (auto v = rd.raw("grid.theta")) {
    try {
      c.theta = ThetaRule::parse(*v);
      for (int n : c.n_grid) {
        const double t = c.theta(n);
        if (!(t > 0.0) || !std::isfinite(t))
          rd.error("grid.theta", "rule " + *v + " gives theta = " + fmt(t) + " at n = " + std::to_string(n));
      }
    } catch (const std::exception& e) {
      rd.error("grid.theta", e.what());
    }
  } else {
    rd.error("grid.theta", "missing");
  }

  rd.number("run.k_max", c.k_max);
  rd.number("run.tol", c.tol);
  rd.number("run.inner", c.inner);
  rd.number("run.outer", c.outer);
  rd.boolean("run.plugin_moments", c.plugin_moments);
  if (c.k_max < 0) rd.error("run.k_max", "must be nonnegative");
  if (!(c.tol > 0.0 && c.tol < 1.0)) rd.error("run.tol", "must lie in (0, 1)");
  if (c.inner < 1) rd.error("run.inner", "must be at least 1");
  if (c.outer < 1) rd.error("run.outer", "must be at least 1");

  rd.number("simulate.vertices", c.sim_vertices);
  if (c.sim_vertices < 0) rd.error("simulate.vertices", "must be nonnegative");

  rd.number("chaos.k", c.chaos_k);
  if (c.chaos_k < 0) rd.error("chaos.k", "must be nonnegative");
  std::vector<int> comm;
  if (rd.numbers("chaos.communities", comm)) {
    c.chaos_communities.clear();
    for (int r : comm) c.chaos_communities.push_back(r - 1);
  }
  rd.list("chaos.functions", c.chaos_functions);
  const bool chaos = c.kind == ExperimentKind::kChaos;
  for (int r : c.chaos_communities)
    if (chaos && (r < 0 || r >= c.spec.K))
      rd.error("chaos.communities", "community " + std::to_string(r + 1) + " out of range");
  if (c.chaos_functions.size() != c.chaos_communities.size())
    rd.error("chaos.functions", "one function per community entry is required");
  for (const auto& f : c.chaos_functions) {
    try {
      const TestFunction tf = TestFunction::parse(f);
      if (chaos && tf.kind != TestFunction::Kind::kOne && std::max(tf.topic, tf.topic2) >= c.spec.ell)
        rd.error("chaos.functions", f + " refers to a topic beyond ell");
    } catch (const std::exception& e) {
      rd.error("chaos.functions", e.what());
    }
  }
  rd.number("chaos.tuples", c.chaos_tuples);
  if (c.chaos_tuples < 0) rd.error("chaos.tuples", "must be nonnegative");
  rd.number("chaos.limit_samples", c.chaos_limit_samples);
  if (c.chaos_limit_samples < 2) rd.error("chaos.limit_samples", "must be at least 2");
  rd.text("chaos.mode", c.chaos_mode);
  if (c.chaos_mode != "auto" && c.chaos_mode != "simulate" && c.chaos_mode != "conditional")
    rd.error("chaos.mode", "expected auto, simulate or conditional");

  rd.number("stationary.samples", c.stationary_samples);
  if (c.stationary_samples < 2) rd.error("stationary.samples", "must be at least 2");

  rd.number("concentration.H", c.conc_H);
  rd.list("concentration.counts", c.conc_counts);
  rd.list("concentration.weights", c.conc_weights);
  rd.list("concentration.values", c.conc_values);
  rd.numbers("concentration.eps", c.conc_eps);
  rd.number("concentration.replications", c.conc_replications);
  if (c.conc_replications < 1) rd.error("concentration.replications", "must be at least 1");
  if (c.kind == ExperimentKind::kConcentration) {
    const std::size_t types = c.conc_counts.size();
    if (c.conc_weights.size() != types && c.conc_weights.size() != 1)
      rd.error("concentration.weights", "expected 1 law or one per count law");
    if (c.conc_values.size() != types && c.conc_values.size() != 1)
      rd.error("concentration.values", "expected 1 law or one per count law");
    for (const auto& t : c.conc_counts) try {
        CountLaw::parse(t);
      } catch (const std::exception& e) {
        rd.error("concentration.counts", e.what());
      }
    for (const auto* lst : {&c.conc_weights, &c.conc_values})
      for (const auto& t : *lst) try {
          ScalarDist::parse(t);
        } catch (const std::exception& e) {
          rd.error(lst == &c.conc_weights ? "concentration.weights" : "concentration.values", e.what());
        }
  }

  rd.number("tree.s_max", c.tree_s_max);
  rd.number("tree.replications", c.tree_replications);
  rd.list("tree.leaves", c.tree_leaves);
  rd.number("tree.depth", c.tree_depth);
  rd.number("tree.graphs", c.tree_graphs);
  rd.number("tree.vertices", c.tree_vertices);
  if (c.tree_s_max < 1) rd.error("tree.s_max", "must be at least 1");
  if (c.tree_replications < 1) rd.error("tree.replications", "must be at least 1");
  if (c.tree_depth < 0) rd.error("tree.depth", "must be nonnegative");
  if (c.tree_graphs < 1) rd.error("tree.graphs", "must be at least 1");
  if (c.tree_leaves.size() != 1 && static_cast<int>(c.tree_leaves.size()) != c.spec.K)
    rd.error("tree.leaves", "expected 1 or K laws");
  for (const auto& t : c.tree_leaves) try {
      ScalarDist::parse(t);
    } catch (const std::exception& e) {
      rd.error("tree.leaves", e.what());
    }

  rd.check_unknown();
  if (!rd.errors.empty()) throw SpecError(rd.errors);
  return c;
}

std::vector<ScalarDist> parse_laws(const std::vector<std::string>& texts, std::size_t count) {
  std::vector<ScalarDist> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(ScalarDist::parse(texts[texts.size() == 1 ? 0 : i]));
  return out;
}

// ---------------------------------------------------------------------------

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + p.string() + " for writing");
  f.precision(10);
  return f;
}

void close_out(std::ofstream& f, const std::filesystem::path& p) {
  f.close();
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

// Removes the header line of every block after the first.
std::string body_of(const std::string& csv) {
  const auto nl = csv.find('\n');
  return nl == std::string::npos ? std::string{} : csv.substr(nl + 1);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string nkey(const std::string& base, int n) { return base + ".n" + std::to_string(n); }

}  // namespace

const char* kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kSimulate: return "simulate";
    case ExperimentKind::kMeanfield: return "meanfield";
    case ExperimentKind::kError: return "error";
    case ExperimentKind::kChaos: return "chaos";
    case ExperimentKind::kStationary: return "stationary";
    case ExperimentKind::kConcentration: return "concentration";
    case ExperimentKind::kTree: return "tree";
  }
  return "";
}

ExperimentKind parse_kind(const std::string& s) {
  for (auto k : {ExperimentKind::kSimulate, ExperimentKind::kMeanfield, ExperimentKind::kError,
                 ExperimentKind::kChaos, ExperimentKind::kStationary, ExperimentKind::kConcentration,
                 ExperimentKind::kTree})
    if (s == kind_name(k)) return k;
  throw std::invalid_argument("unknown experiment '" + s + "'");
}

ThetaRule ThetaRule::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("theta rule '" + text + "': expected kind:value");
  const std::string kind = trim(text.substr(0, colon)), val = trim(text.substr(colon + 1));
  ThetaRule r;
  if (kind == "const") r.kind = Kind::kConst;
  else if (kind == "log") r.kind = Kind::kLog;
  else if (kind == "loglog") r.kind = Kind::kLogLog;
  else if (kind == "pow") r.kind = Kind::kPow;
  else if (kind == "linear") r.kind = Kind::kLinear;
  else throw std::invalid_argument("theta rule '" + text + "': unknown kind '" + kind + "'");
  std::size_t used = 0;
  try {
    r.x = std::stod(val, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != val.size()) throw std::invalid_argument("theta rule '" + text + "': bad number");
  return r;
}

std::string ThetaRule::to_string() const {
  static const char* names[] = {"const", "log", "loglog", "pow", "linear"};
  return std::string(names[static_cast<int>(kind)]) + ":" + fmt(x);
}

double ThetaRule::operator()(int n) const {
  const double nn = n;
  switch (kind) {
    case Kind::kConst: return x;
    case Kind::kLog: return x * std::log(nn);
    case Kind::kLogLog: return x * std::log(std::log(nn));
    case Kind::kPow: return std::pow(nn, x);
    case Kind::kLinear: return x * nn;
  }
  return 0.0;
}

ExperimentConfig parse_config(const std::string& text) {
  std::vector<std::string> errors;
  auto kv = flatten_kv(text, errors);
  return read_config(std::move(kv), std::move(errors));
}

ExperimentConfig parse_config_any(const std::string& text) {
  const std::string t = trim(text);
  if (!t.empty() && t.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(t);
    } catch (const std::exception& e) {
      throw SpecError({std::string("<json>: ") + e.what()});
    }
    std::vector<std::string> errors;
    std::map<std::string, std::string> kv;
    flatten_json(j, "", kv, errors);
    return read_config(std::move(kv), std::move(errors));
  }
  return parse_config(text);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpecError({"cannot read config " + path});
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_any(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  const ModelSpec& m = c.spec;
  const int K = m.K;
  std::ostringstream os;
  auto dfmt = [](double x) { return fmt(x); };
  auto ifmt = [](int x) { return std::to_string(x); };
  auto sfmt = [](const std::string& s) { return s; };
  os << "experiment = " << kind_name(c.kind) << "\n";
  os << "seed = " << c.seed << "\n";
  os << "out = " << c.out_dir << "\n";
  os << "threads = " << c.threads << "\n\n";
  os << "[model]\n";
  os << "K = " << K << "\n";
  os << "ell = " << m.ell << "\n";
  os << "pi = " << join(m.pi, ", ", dfmt) << "\n";
  os << "kappa = ";
  for (int r = 0; r < K; ++r) {
    if (r) os << "; ";
    for (int s = 0; s < K; ++s) os << (s ? ", " : "") << fmt(m.kappa(r, s));
  }
  os << "\n";
  os << "c = " << fmt(m.c) << "\n";
  os << "d = " << fmt(m.d) << "\n";
  os << "H = " << fmt(m.H) << "\n";
  os << "weights = " << join(m.weights, "; ", [](const ScalarDist& w) { return w.to_string(); }) << "\n";
  os << "beliefs = " << join(m.beliefs, "; ", [](const VectorDist& w) { return w.to_string(); }) << "\n";
  os << "signals = " << join(m.signals, "; ", [](const SignalLaw& w) { return w.media.to_string(); }) << "\n";
  os << "signal_belief_weight = "
     << join(m.signals, ", ", [](const SignalLaw& w) { return fmt(w.belief_weight); }) << "\n";
  os << "initial = " << (m.initial == InitialLaw::kUniform ? "uniform" : "belief") << "\n";
  os << "labels = " << (m.label_mode == LabelMode::kIid ? "iid" : "fixed") << "\n\n";
  os << "[grid]\n";
  os << "n = " << join(c.n_grid, ", ", ifmt) << "\n";
  os << "theta = " << c.theta.to_string() << "\n\n";
  os << "[run]\n";
  os << "k_max = " << c.k_max << "\n";
  os << "tol = " << fmt(c.tol) << "\n";
  os << "inner = " << c.inner << "\n";
  os << "outer = " << c.outer << "\n";
  os << "plugin_moments = " << (c.plugin_moments ? "true" : "false") << "\n\n";
  os << "[simulate]\n";
  os << "vertices = " << c.sim_vertices << "\n\n";
  os << "[chaos]\n";
  os << "k = " << c.chaos_k << "\n";
  os << "communities = " << join(c.chaos_communities, ", ", [](int r) { return std::to_string(r + 1); }) << "\n";
  os << "functions = " << join(c.chaos_functions, "; ", sfmt) << "\n";
  os << "tuples = " << c.chaos_tuples << "\n";
  os << "limit_samples = " << c.chaos_limit_samples << "\n";
  os << "mode = " << c.chaos_mode << "\n\n";
  os << "[stationary]\n";
  os << "samples = " << c.stationary_samples << "\n\n";
  os << "[concentration]\n";
  os << "H = " << fmt(c.conc_H) << "\n";
  os << "counts = " << join(c.conc_counts, "; ", sfmt) << "\n";
  os << "weights = " << join(c.conc_weights, "; ", sfmt) << "\n";
  os << "values = " << join(c.conc_values, "; ", sfmt) << "\n";
  os << "eps = " << join(c.conc_eps, ", ", dfmt) << "\n";
  os << "replications = " << c.conc_replications << "\n\n";
  os << "[tree]\n";
  os << "s_max = " << c.tree_s_max << "\n";
  os << "replications = " << c.tree_replications << "\n";
  os << "leaves = " << join(c.tree_leaves, "; ", sfmt) << "\n";
  os << "depth = " << c.tree_depth << "\n";
  os << "graphs = " << c.tree_graphs << "\n";
  os << "vertices = " << c.tree_vertices << "\n";
  return os.str();
}

std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

RunSummary run(const ExperimentConfig& c) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  c.spec.validate();
  if (c.n_grid.empty()) throw SpecError({"grid.n: the n grid must not be empty"});
  const fs::path dir(c.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());

  RunSummary summary;
  const ModelSpec& spec = c.spec;
  const int threads = c.threads;
  auto emit = [&](const std::string& name, const std::string& content) {
    const fs::path p = dir / name;
    auto f = open_out(p);
    f << content;
    close_out(f, p);
    summary.files.push_back(name);
  };
  std::vector<double> thetas;
  for (int n : c.n_grid) thetas.push_back(c.theta(n));

  switch (c.kind) {
    case ExperimentKind::kSimulate: {
      const int k_max = c.k_max > 0 ? c.k_max : contraction_horizon(spec.d, 0.01);
      for (std::size_t pt = 0; pt < c.n_grid.size(); ++pt) {
        const int n = c.n_grid[pt];
        std::vector<int> sel;
        for (int v = 0; v < std::min(n, c.sim_vertices); ++v) sel.push_back(v);
        const auto labels = sample_labels(spec, n, derive_seed(c.seed, Stream::kLabels, {pt}));
        const auto blocks = parallel_map(c.inner, threads, [&](int rep) {
          const std::uint64_t rseed = derive_seed(c.seed, Stream::kMisc, {pt, static_cast<std::uint64_t>(rep)});
          const GraphSample g = sample_graph(spec, labels, thetas[pt], rseed);
          const SimulationResult res = simulate(spec, g, normalize_weights(g), k_max, rseed, sel);
          std::ostringstream os;
          write_trajectory_rows(os, rep, g, res);
          return os.str();
        });
        std::string body = std::string(kTrajectoryHeader) + "\n";
        for (const auto& b : blocks) body += b;
        emit("trajectories_n" + std::to_string(n) + ".csv", body);
      }
      summary.metrics["simulate.k_max"] = k_max;
      break;
    }
    case ExperimentKind::kMeanfield: {
      const int k_max = c.k_max > 0 ? c.k_max : contraction_horizon(spec.d, 0.01);
      std::ostringstream csv;
      csv.precision(10);
      csv << "n,theta,k,community,topic,mean\n";
      const double b = 1.0 - spec.c - spec.d;
      for (std::size_t pt = 0; pt < c.n_grid.size(); ++pt) {
        const int n = c.n_grid[pt];
        const auto labels = sample_labels(spec, n, derive_seed(c.seed, Stream::kLabels, {pt}));
        const MeanFieldModel model = build_model(spec, empirical_shares(labels, spec.K), n, thetas[pt]);
        std::ostringstream js;
        write_model_report(js, model);
        emit("model_n" + std::to_string(n) + ".json", js.str());
        const DriftTable drift(model.M, model.W_bar, model.R_bar, spec.c, spec.d, k_max);
        double geo = 0.0;
        for (int k = 0; k <= k_max; ++k) {
          const KMatrix mean = geo * model.W_bar + drift.at(k) + std::pow(b, k) * model.R_bar;
          for (int r = 0; r < spec.K; ++r)
            for (int t = 0; t < spec.ell; ++t)
              csv << n << ',' << thetas[pt] << ',' << k << ',' << r + 1 << ',' << t + 1 << ',' << mean(r, t) << '\n';
          geo = geo * b + 1.0;
        }
        summary.metrics[nkey("meanfield.E_n", n)] = model.stats.E_n;
      }
      emit("meanfield.csv", csv.str());
      break;
    }
    case ExperimentKind::kError: {
      ErrorParams p;
      p.spec = spec;
      p.n_list = c.n_grid;
      p.thetas = thetas;
      p.k_max = c.k_max;
      p.inner = c.inner;
      p.outer = c.outer;
      p.seed = c.seed;
      p.threads = threads;
      p.plugin_moments = c.plugin_moments;
      const ErrorCurve curve = error_experiment(p);
      std::ostringstream a, b2, s;
      write_error_curve(a, curve);
      write_error_curve_per_outer(b2, curve);
      write_error_summary(s, curve);
      emit("error_curve.csv", a.str());
      emit("error_curve_per_outer.csv", b2.str());
      emit("error_summary.csv", s.str());
      summary.metrics["error.k_max"] = curve.k_max;
      std::vector<double> x, y;
      for (std::size_t pt = 0; pt < c.n_grid.size(); ++pt) {
        const int n = c.n_grid[pt];
        const double e = curve.summary(n, NormType::kInf).sup_estimate;
        summary.metrics[nkey("error.inf", n)] = e;
        summary.metrics[nkey("error.row_l1", n)] = curve.summary(n, NormType::kRowL1).sup_estimate;
        if (e > 0.0) {
          x.push_back(0.5 * std::log(std::log(static_cast<double>(n)) / thetas[pt]));
          y.push_back(std::log(e));
        }
      }
      if (x.size() >= 2) try {
          summary.metrics["error.inf.slope"] = fit_line(x, y).slope;
        } catch (const std::invalid_argument&) {
        }
      break;
    }
    case ExperimentKind::kChaos: {
      std::vector<TestFunction> fns;
      for (const auto& f : c.chaos_functions) fns.push_back(TestFunction::parse(f));
      std::string chaos, functionals;
      for (std::size_t pt = 0; pt < c.n_grid.size(); ++pt) {
        ChaosParams p;
        p.spec = spec;
        p.n = c.n_grid[pt];
        p.theta = thetas[pt];
        p.k = c.chaos_k;
        p.communities = c.chaos_communities;
        p.functions = fns;
        p.inner = c.inner;
        p.outer = c.outer;
        p.limit_samples = c.chaos_limit_samples;
        p.tuples = c.chaos_tuples;
        p.seed = derive_seed(c.seed, Stream::kMisc, {pt});
        p.threads = threads;
        p.mode = c.chaos_mode == "simulate"      ? ChaosParams::Mode::kSimulate
                 : c.chaos_mode == "conditional" ? ChaosParams::Mode::kConditional
                                                 : ChaosParams::Mode::kAuto;
        const ChaosReport rep = chaos_experiment(p);
        std::ostringstream a, b2;
        write_chaos(a, rep, fns);
        write_functionals(b2, rep);
        chaos += pt == 0 ? a.str() : body_of(a.str());
        functionals += pt == 0 ? b2.str() : body_of(b2.str());
        summary.metrics[nkey("chaos.mean_abs_gap", p.n)] = rep.mean_abs_gap;
        summary.metrics[nkey("chaos.mean_abs_gap_se", p.n)] = rep.mean_abs_gap_se;
      }
      emit("chaos.csv", chaos);
      emit("functionals.csv", functionals);
      break;
    }
    case ExperimentKind::kStationary: {
      std::string out;
      for (std::size_t pt = 0; pt < c.n_grid.size(); ++pt) {
        StationarityParams p;
        p.spec = spec;
        p.n = c.n_grid[pt];
        p.theta = thetas[pt];
        p.tol = c.tol;
        p.replications = c.inner;
        p.stationary_samples = c.stationary_samples;
        p.seed = derive_seed(c.seed, Stream::kMisc, {pt});
        p.threads = threads;
        const StationarityReport rep = stationarity_experiment(p);
        std::ostringstream a;
        write_stationarity(a, rep);
        out += pt == 0 ? a.str() : body_of(a.str());
        double worst = 0.0;
        for (const auto& r : rep.rows)
          if (r.combined_se > 0.0) worst = std::max(worst, r.gap / r.combined_se);
          else worst = std::max(worst, r.gap > 0.0 ? HUGE_VAL : 0.0);
        summary.metrics[nkey("stationary.max_z", p.n)] = worst;
      }
      emit("stationarity.csv", out);
      break;
    }
    case ExperimentKind::kConcentration: {
      ConcentrationCase cc;
      cc.name = "K" + std::to_string(c.conc_counts.size());
      cc.H = c.conc_H;
      for (const auto& t : c.conc_counts) cc.counts.push_back(CountLaw::parse(t));
      cc.weights = parse_laws(c.conc_weights, cc.counts.size());
      cc.values = parse_laws(c.conc_values, cc.counts.size());
      cc.eps = c.conc_eps;
      const auto rows = concentration_check(cc, c.conc_replications, c.seed, threads);
      std::ostringstream a;
      write_concentration(a, rows);
      emit("concentration.csv", a.str());
      summary.metrics["concentration.failures"] =
          static_cast<double>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.pass; }));
      break;
    }
    case ExperimentKind::kTree: {
      const std::vector<ScalarDist> leaves = parse_laws(c.tree_leaves, static_cast<std::size_t>(spec.K));
      const KMatrix M = build_M(spec.pi, spec.kappa, weight_moments(spec).beta);
      std::ostringstream a, diag;
      a.precision(10);
      diag.precision(10);
      a << "n,theta,s,type,estimate,stderr,replications\n";
      diag << kTreeDiagnosticHeader << '\n';
      for (std::size_t pt = 0; pt < c.n_grid.size(); ++pt) {
        const int n = c.n_grid[pt];
        const KMatrix q = offspring_means(spec.kappa, spec.pi, thetas[pt]);
        for (int r = 0; r < spec.K; ++r)
          for (int s = 1; s <= c.tree_s_max; ++s) {
            const auto est = estimate_a_s(r, s, q, spec, leaves, M, c.tree_replications,
                                          derive_seed(c.seed, Stream::kTree, {pt}), threads);
            a << n << ',' << thetas[pt] << ',' << s << ',' << r + 1 << ',' << est.mean << ',' << est.se << ','
              << est.replications << '\n';
            summary.metrics["tree.a_s.n" + std::to_string(n) + ".r" + std::to_string(r + 1) + ".s" +
                            std::to_string(s)] = est.mean;
          }
        const TreeLikenessRow row = tree_likeness(spec, n, thetas[pt], c.tree_depth, c.tree_graphs, c.tree_vertices,
                                                  derive_seed(c.seed, Stream::kMisc, {pt}), threads);
        diag << row.n << ',' << row.theta << ',' << row.depth << ',' << row.vertex_count_checked << ','
             << row.non_tree_fraction << '\n';
        summary.metrics[nkey("tree.non_tree_fraction", n)] = row.non_tree_fraction;
      }
      emit("tree_a_s.csv", a.str());
      emit("tree_diagnostic.csv", diag.str());
      break;
    }
  }

  summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json man;
  man["tool"] = "oplab";
  man["version"] = kVersion;
  man["experiment"] = kind_name(c.kind);
  man["seed"] = c.seed;
  man["config_hash"] = config_hash(c);
  man["config"] = serialize_config(c);
  man["files"] = summary.files;
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [k, v] : summary.metrics) metrics[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json();
  man["summary"] = metrics;
  man["wall_time_seconds"] = summary.wall_seconds;
  man["timestamp"] = utc_now();
  emit("manifest.json", man.dump(2) + "\n");
  return summary;
}

}  // namespace oplab
