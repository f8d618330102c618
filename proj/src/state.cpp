#include "tm/state.hpp"

#include <cmath>
#include <string>

#include "tm/errors.hpp"

namespace tmatch {

State::State(std::vector<double> values, int tokens) : values_(std::move(values)), tokens_(tokens) {
  if (tokens_ < 1) throw ShapeError("state needs at least one token");
  if (values_.empty() || values_.size() % static_cast<std::size_t>(tokens_) != 0) {
    throw ShapeError("state dimension " + std::to_string(values_.size()) +
                     " is not a positive multiple of token count " + std::to_string(tokens_));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw NumericError("non-finite state entry");
  }
}

State State::zeros(int dim, int tokens) {
  return State(std::vector<double>(static_cast<std::size_t>(dim), 0.0), tokens);
}

State State::reshape(std::span<const double> flat, int tokens) {
  return State(std::vector<double>(flat.begin(), flat.end()), tokens);
}

std::span<const double> State::token(int i) const {
  if (i < 0 || i >= tokens_) throw RangeError("token index out of range");
  const auto w = static_cast<std::size_t>(token_dim());
  return std::span<const double>(values_).subspan(static_cast<std::size_t>(i) * w, w);
}

std::span<double> State::token(int i) {
  if (i < 0 || i >= tokens_) throw RangeError("token index out of range");
  const auto w = static_cast<std::size_t>(token_dim());
  return std::span<double>(values_).subspan(static_cast<std::size_t>(i) * w, w);
}

void require_same_shape(const State& a, const State& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.dim()) + "/" +
                     std::to_string(a.tokens()) + " vs " + std::to_string(b.dim()) + "/" +
                     std::to_string(b.tokens()) + ")");
  }
}

}  // namespace tmatch
