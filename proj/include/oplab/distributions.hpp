#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "oplab/rng.hpp"

namespace oplab {

// Closed family of laws on a bounded interval: point mass, uniform, scaled
// Beta and finite mixtures of these. All moments used by the mean-field
// construction are available in closed form.
class ScalarDist {
 public:
  enum class Kind { kPoint, kUniform, kBeta, kMixture };

  ScalarDist() = default;  // point mass at 0

  static ScalarDist point(double value);
  static ScalarDist uniform(double lo, double hi);
  static ScalarDist beta(double alpha, double beta, double lo, double hi);
  static ScalarDist mixture(std::vector<double> weights, std::vector<ScalarDist> parts);

  // Parses descriptors such as "point(1)", "uniform(-1,1)", "beta(2,3,0,1)"
  // and "mixture(0.5:point(-1), 0.5:point(1))". Throws std::invalid_argument.
  static ScalarDist parse(std::string_view text);

  Kind kind() const { return kind_; }
  bool is_point() const { return kind_ == Kind::kPoint; }

  double lower() const;
  double upper() const;
  double mean() const;
  double second_moment() const;
  double variance() const { return second_moment() - mean() * mean(); }

  double sample(Engine& rng) const;

  // Sum of `count` independent draws. Point masses and two-atom mixtures are
  // summed in O(1) through the binomial law; everything else draws one by one.
  double sample_sum(std::size_t count, Engine& rng) const;

  std::string to_string() const;

  friend bool operator==(const ScalarDist& a, const ScalarDist& b);

 private:
  Kind kind_ = Kind::kPoint;
  double a_ = 0.0, b_ = 0.0, lo_ = 0.0, hi_ = 0.0;
  std::vector<double> weights_;
  std::vector<ScalarDist> parts_;
};

// Law on [-1,1]^ell with independent coordinates.
class VectorDist {
 public:
  VectorDist() = default;
  explicit VectorDist(std::vector<ScalarDist> coords) : coords_(std::move(coords)) {}
  static VectorDist broadcast(const ScalarDist& d, int ell) {
    return VectorDist(std::vector<ScalarDist>(static_cast<std::size_t>(ell), d));
  }

  // "product(d1, d2, ...)" or a single scalar descriptor broadcast to ell
  // coordinates.
  static VectorDist parse(std::string_view text, int ell);

  int dim() const { return static_cast<int>(coords_.size()); }
  const ScalarDist& operator[](int j) const { return coords_[static_cast<std::size_t>(j)]; }
  const std::vector<ScalarDist>& coords() const { return coords_; }

  double lower() const;
  double upper() const;

  template <typename Row>
  void sample_into(Row&& row, Engine& rng) const {
    for (int j = 0; j < dim(); ++j) row[j] = coords_[static_cast<std::size_t>(j)].sample(rng);
  }

  std::string to_string() const;

  friend bool operator==(const VectorDist& a, const VectorDist& b) { return a.coords_ == b.coords_; }

 private:
  std::vector<ScalarDist> coords_;
};

}  // namespace oplab
