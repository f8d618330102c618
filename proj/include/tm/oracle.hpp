#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "tm/rng.hpp"
#include "tm/state.hpp"
#include "tm/toy_data.hpp"

namespace tmatch {

struct GmmComponent {
  double weight = 1.0;
  std::vector<double> mean;
  std::vector<double> variance;  // diagonal
};

// Gaussian mixture target with diagonal covariances.
class GmmTarget {
 public:
  GmmTarget(std::vector<GmmComponent> components);
  static GmmTarget gaussian(std::vector<double> mean, std::vector<double> variance);
  // Mixture equal to a toy dataset where one exists (gmm8, gauss1d).
  static GmmTarget from_dataset(const DatasetSpec& spec);

  int dimension() const { return dim_; }
  const std::vector<GmmComponent>& components() const { return components_; }
  bool single() const { return components_.size() == 1; }
  std::vector<double> mean() const;

  Samples sample(std::size_t count, Rng& rng) const;

 private:
  std::vector<GmmComponent> components_;
  int dim_ = 0;
};

// E[X_T - X_0 | X_r = x] for X_r = (1 - r) X_0 + r X_T, X_0 ~ N(0, I),
// X_T ~ target. Requires 0 <= r < 1.
std::vector<double> gmm_marginal_velocity(const GmmTarget& target, std::span<const double> x, double r);

// Exact draw of Y = X_T - X_0 given X_r = x for a single Gaussian target,
// 0 <= r <= 1.
std::vector<double> gaussian_posterior_sample(const GmmTarget& target, std::span<const double> x,
                                              double r, Rng& rng);

// Same law with X_T restricted to the box |X_T - mu|_inf <= bound_sigmas * sigma
// by rejection. Requires r < 1.
std::vector<double> bounded_gaussian_posterior_sample(const GmmTarget& target, std::span<const double> x,
                                                      double r, double bound_sigmas, Rng& rng);

using TargetSampler = std::function<Samples(std::size_t, Rng&)>;

struct McEstimate {
  std::vector<double> value;
  std::vector<double> stderr_;
  double effective_samples = 0.0;
};

// Nadaraya-Watson estimate of E[X_T - X_0 | X_r = x] from `count` simulated
// (X_0, X_T) pairs with a Gaussian kernel of width `bandwidth`. The standard
// error comes from a 200-replicate Poisson bootstrap.
McEstimate mc_conditional_expectation(const TargetSampler& sampler, std::span<const double> x, double r,
                                      double bandwidth, std::size_t count, Rng& rng,
                                      int bootstrap_resamples = 200);

}  // namespace tmatch
