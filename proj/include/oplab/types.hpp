#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace oplab {

// n x ell opinion/signal matrices are stored row-major: the dynamics gathers
// whole rows of in-neighbours.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
// Small K x K / K x ell community-level matrices.
using KMatrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Invalid model or experiment configuration. Carries every violation found,
// each prefixed with the offending key path.
class SpecError : public std::invalid_argument {
 public:
  explicit SpecError(std::vector<std::string> violations)
      : std::invalid_argument(join(violations)), violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : "; ") + x;
    return s;
  }
  std::vector<std::string> violations_;
};

// A computation would exceed its configured resource budget.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An opinion entry left [-1, 1] beyond round-off.
class BoundsViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace oplab
