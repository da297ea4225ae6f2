#include "oplab/distributions.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace oplab {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view s) {
  s = trim(s);
  std::string tmp(s);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tmp, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number, got '" + tmp + "'");
  }
  if (used != tmp.size()) throw std::invalid_argument("expected a number, got '" + tmp + "'");
  return v;
}

// Splits "a, b(c, d), e" at top-level commas.
std::vector<std::string_view> split_top_level(std::string_view s) {
  std::vector<std::string_view> out;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '(') ++depth;
    if (s[i] == ')') --depth;
    if (s[i] == ',' && depth == 0) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  auto last = trim(s.substr(start));
  if (!last.empty() || !out.empty()) out.push_back(last);
  return out;
}

// "name(args)" -> (name, args)
std::pair<std::string_view, std::string_view> split_call(std::string_view s) {
  s = trim(s);
  auto open = s.find('(');
  if (open == std::string_view::npos || s.back() != ')')
    throw std::invalid_argument("malformed distribution descriptor '" + std::string(s) + "'");
  return {trim(s.substr(0, open)), s.substr(open + 1, s.size() - open - 2)};
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

ScalarDist ScalarDist::point(double value) {
  ScalarDist d;
  d.kind_ = Kind::kPoint;
  d.a_ = value;
  return d;
}

ScalarDist ScalarDist::uniform(double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("uniform: lo must not exceed hi");
  ScalarDist d;
  d.kind_ = Kind::kUniform;
  d.lo_ = lo;
  d.hi_ = hi;
  return d;
}

ScalarDist ScalarDist::beta(double alpha, double beta, double lo, double hi) {
  if (!(alpha > 0.0 && beta > 0.0)) throw std::invalid_argument("beta: shape parameters must be positive");
  if (!(lo <= hi)) throw std::invalid_argument("beta: lo must not exceed hi");
  ScalarDist d;
  d.kind_ = Kind::kBeta;
  d.a_ = alpha;
  d.b_ = beta;
  d.lo_ = lo;
  d.hi_ = hi;
  return d;
}

ScalarDist ScalarDist::mixture(std::vector<double> weights, std::vector<ScalarDist> parts) {
  if (weights.empty() || weights.size() != parts.size())
    throw std::invalid_argument("mixture: need one weight per component");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("mixture: weights must be nonnegative");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("mixture: weights must not all be zero");
  for (double& w : weights) w /= total;
  ScalarDist d;
  d.kind_ = Kind::kMixture;
  d.weights_ = std::move(weights);
  d.parts_ = std::move(parts);
  return d;
}

ScalarDist ScalarDist::parse(std::string_view text) {
  auto [name, body] = split_call(text);
  auto args = split_top_level(body);
  auto need = [&](std::size_t k) {
    if (args.size() != k)
      throw std::invalid_argument(std::string(name) + ": expected " + std::to_string(k) + " arguments");
  };
  if (name == "point") {
    need(1);
    return point(parse_number(args[0]));
  }
  if (name == "uniform") {
    need(2);
    return uniform(parse_number(args[0]), parse_number(args[1]));
  }
  if (name == "beta") {
    if (args.size() == 2) return beta(parse_number(args[0]), parse_number(args[1]), 0.0, 1.0);
    need(4);
    return beta(parse_number(args[0]), parse_number(args[1]), parse_number(args[2]), parse_number(args[3]));
  }
  if (name == "mixture") {
    std::vector<double> w;
    std::vector<ScalarDist> parts;
    for (auto arg : args) {
      auto colon = arg.find(':');
      if (colon == std::string_view::npos)
        throw std::invalid_argument("mixture: components are written weight:descriptor");
      w.push_back(parse_number(arg.substr(0, colon)));
      parts.push_back(parse(arg.substr(colon + 1)));
    }
    return mixture(std::move(w), std::move(parts));
  }
  throw std::invalid_argument("unknown distribution '" + std::string(name) + "'");
}

double ScalarDist::lower() const {
  switch (kind_) {
    case Kind::kPoint: return a_;
    case Kind::kUniform:
    case Kind::kBeta: return lo_;
    case Kind::kMixture: {
      double lo = parts_[0].lower();
      for (std::size_t i = 0; i < parts_.size(); ++i)
        if (weights_[i] > 0.0) lo = std::min(lo, parts_[i].lower());
      return lo;
    }
  }
  return 0.0;
}

double ScalarDist::upper() const {
  switch (kind_) {
    case Kind::kPoint: return a_;
    case Kind::kUniform:
    case Kind::kBeta: return hi_;
    case Kind::kMixture: {
      double hi = parts_[0].upper();
      for (std::size_t i = 0; i < parts_.size(); ++i)
        if (weights_[i] > 0.0) hi = std::max(hi, parts_[i].upper());
      return hi;
    }
  }
  return 0.0;
}

double ScalarDist::mean() const {
  switch (kind_) {
    case Kind::kPoint: return a_;
    case Kind::kUniform: return 0.5 * (lo_ + hi_);
    case Kind::kBeta: return lo_ + (hi_ - lo_) * a_ / (a_ + b_);
    case Kind::kMixture: {
      double m = 0.0;
      for (std::size_t i = 0; i < parts_.size(); ++i) m += weights_[i] * parts_[i].mean();
      return m;
    }
  }
  return 0.0;
}

double ScalarDist::second_moment() const {
  switch (kind_) {
    case Kind::kPoint: return a_ * a_;
    case Kind::kUniform: return (lo_ * lo_ + lo_ * hi_ + hi_ * hi_) / 3.0;
    case Kind::kBeta: {
      const double w = hi_ - lo_;
      const double ey = a_ / (a_ + b_);
      const double ey2 = a_ * (a_ + 1.0) / ((a_ + b_) * (a_ + b_ + 1.0));
      return lo_ * lo_ + 2.0 * lo_ * w * ey + w * w * ey2;
    }
    case Kind::kMixture: {
      double m = 0.0;
      for (std::size_t i = 0; i < parts_.size(); ++i) m += weights_[i] * parts_[i].second_moment();
      return m;
    }
  }
  return 0.0;
}

double ScalarDist::sample(Engine& rng) const {
  switch (kind_) {
    case Kind::kPoint: return a_;
    case Kind::kUniform: return lo_ + (hi_ - lo_) * uniform01(rng);
    case Kind::kBeta: {
      const double x = std::gamma_distribution<double>(a_, 1.0)(rng);
      const double y = std::gamma_distribution<double>(b_, 1.0)(rng);
      const double s = x + y;
      const double u = s > 0.0 ? x / s : 0.5;
      return lo_ + (hi_ - lo_) * u;
    }
    case Kind::kMixture: {
      double u = uniform01(rng);
      for (std::size_t i = 0; i + 1 < parts_.size(); ++i) {
        if (u < weights_[i]) return parts_[i].sample(rng);
        u -= weights_[i];
      }
      return parts_.back().sample(rng);
    }
  }
  return 0.0;
}

double ScalarDist::sample_sum(std::size_t count, Engine& rng) const {
  if (count == 0) return 0.0;
  if (kind_ == Kind::kPoint) return a_ * static_cast<double>(count);
  if (kind_ == Kind::kMixture && parts_.size() == 2 && parts_[0].is_point() && parts_[1].is_point()) {
    std::size_t k = 0;
    if (weights_[0] == 0.5) {
      // Binomial(count, 1/2) as the number of set bits in count fair bits.
      std::size_t left = count;
      for (; left >= 64; left -= 64) k += static_cast<std::size_t>(std::popcount(static_cast<std::uint64_t>(rng())));
      if (left > 0) k += static_cast<std::size_t>(std::popcount(static_cast<std::uint64_t>(rng()) >> (64 - left)));
    } else {
      k = std::binomial_distribution<std::size_t>(count, weights_[0])(rng);
    }
    return parts_[0].a_ * static_cast<double>(k) + parts_[1].a_ * static_cast<double>(count - k);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) s += sample(rng);
  return s;
}

std::string ScalarDist::to_string() const {
  switch (kind_) {
    case Kind::kPoint: return "point(" + fmt(a_) + ")";
    case Kind::kUniform: return "uniform(" + fmt(lo_) + "," + fmt(hi_) + ")";
    case Kind::kBeta:
      return "beta(" + fmt(a_) + "," + fmt(b_) + "," + fmt(lo_) + "," + fmt(hi_) + ")";
    case Kind::kMixture: {
      std::string s = "mixture(";
      for (std::size_t i = 0; i < parts_.size(); ++i) {
        if (i) s += ",";
        s += fmt(weights_[i]) + ":" + parts_[i].to_string();
      }
      return s + ")";
    }
  }
  return {};
}

bool operator==(const ScalarDist& x, const ScalarDist& y) {
  return x.kind_ == y.kind_ && x.a_ == y.a_ && x.b_ == y.b_ && x.lo_ == y.lo_ && x.hi_ == y.hi_ &&
         x.weights_ == y.weights_ && x.parts_ == y.parts_;
}

VectorDist VectorDist::parse(std::string_view text, int ell) {
  text = trim(text);
  if (text.substr(0, 8) == "product(") {
    auto [name, body] = split_call(text);
    (void)name;
    std::vector<ScalarDist> coords;
    for (auto arg : split_top_level(body)) coords.push_back(ScalarDist::parse(arg));
    if (static_cast<int>(coords.size()) != ell)
      throw std::invalid_argument("product law has " + std::to_string(coords.size()) +
                                  " coordinates, expected ell = " + std::to_string(ell));
    return VectorDist(std::move(coords));
  }
  return broadcast(ScalarDist::parse(text), ell);
}

double VectorDist::lower() const {
  double lo = 0.0;
  for (std::size_t i = 0; i < coords_.size(); ++i) lo = i ? std::min(lo, coords_[i].lower()) : coords_[i].lower();
  return lo;
}

double VectorDist::upper() const {
  double hi = 0.0;
  for (std::size_t i = 0; i < coords_.size(); ++i) hi = i ? std::max(hi, coords_[i].upper()) : coords_[i].upper();
  return hi;
}

std::string VectorDist::to_string() const {
  if (!coords_.empty() &&
      std::all_of(coords_.begin(), coords_.end(), [&](const ScalarDist& d) { return d == coords_[0]; }))
    return coords_[0].to_string();
  std::string s = "product(";
  for (std::size_t i = 0; i < coords_.size(); ++i) {
    if (i) s += ",";
    s += coords_[i].to_string();
  }
  return s + ")";
}

}  // namespace oplab
