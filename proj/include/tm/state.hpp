#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace tmatch {

// Row-major sample matrix: one sample per row.
using Samples = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A point of the chain: a flat vector of dimension d viewed as `tokens`
// tokens of dimension d / tokens.
class State {
 public:
  State() = default;
  State(std::vector<double> values, int tokens);
  static State zeros(int dim, int tokens);
  static State reshape(std::span<const double> flat, int tokens);

  int dim() const { return static_cast<int>(values_.size()); }
  int tokens() const { return tokens_; }
  int token_dim() const { return dim() / tokens_; }

  std::span<const double> token(int i) const;
  std::span<double> token(int i);
  std::span<const double> flat() const { return values_; }
  std::span<double> flat() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  bool same_shape(const State& other) const {
    return tokens_ == other.tokens_ && values_.size() == other.values_.size();
  }

  friend bool operator==(const State&, const State&) = default;

 private:
  std::vector<double> values_;
  int tokens_ = 1;
};

// Throws ShapeError unless a and b have identical shape.
void require_same_shape(const State& a, const State& b, const char* what);

}  // namespace tmatch
