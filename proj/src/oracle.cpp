#include "tm/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "tm/errors.hpp"

namespace tmatch {

GmmTarget::GmmTarget(std::vector<GmmComponent> components) : components_(std::move(components)) {
  if (components_.empty()) throw ConfigError("mixture needs at least one component");
  dim_ = static_cast<int>(components_.front().mean.size());
  double total = 0.0;
  for (const auto& c : components_) {
    if (static_cast<int>(c.mean.size()) != dim_ || static_cast<int>(c.variance.size()) != dim_) {
      throw ShapeError("mixture components disagree on dimension");
    }
    if (!(c.weight > 0.0)) throw ConfigError("mixture weights must be positive");
    for (double v : c.variance) {
      if (!(v > 0.0)) throw ConfigError("mixture variances must be positive");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");
}

GmmTarget GmmTarget::gaussian(std::vector<double> mean, std::vector<double> variance) {
  return GmmTarget({GmmComponent{1.0, std::move(mean), std::move(variance)}});
}

GmmTarget GmmTarget::from_dataset(const DatasetSpec& spec) {
  switch (spec.name) {
    case DatasetName::gauss1d:
      return gaussian({spec.mean}, {spec.stddev * spec.stddev});
    case DatasetName::gmm8: {
      std::vector<GmmComponent> comps;
      for (int k = 0; k < 8; ++k) {
        const double angle = 2.0 * std::numbers::pi * k / 8.0;
        comps.push_back({1.0 / 8.0, {2.0 * std::cos(angle), 2.0 * std::sin(angle)}, {0.01, 0.01}});
      }
      return GmmTarget(std::move(comps));
    }
    default:
      throw UnsupportedError("dataset " + to_string(spec) + " is not a Gaussian mixture");
  }
}

std::vector<double> GmmTarget::mean() const {
  std::vector<double> m(static_cast<std::size_t>(dim_), 0.0);
  for (const auto& c : components_) {
    for (int j = 0; j < dim_; ++j) m[static_cast<std::size_t>(j)] += c.weight * c.mean[static_cast<std::size_t>(j)];
  }
  return m;
}

Samples GmmTarget::sample(std::size_t count, Rng& rng) const {
  Samples out(static_cast<Eigen::Index>(count), dim_);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    double u = rng.uniform();
    std::size_t k = 0;
    while (k + 1 < components_.size() && u >= components_[k].weight) {
      u -= components_[k].weight;
      ++k;
    }
    const auto& c = components_[k];
    for (int j = 0; j < dim_; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      out(i, j) = c.mean[jj] + std::sqrt(c.variance[jj]) * rng.normal();
    }
  }
  return out;
}

std::vector<double> gmm_marginal_velocity(const GmmTarget& target, std::span<const double> x, double r) {
  if (!(r >= 0.0 && r < 1.0)) throw DomainError("marginal velocity needs 0 <= r < 1");
  const int d = target.dimension();
  if (static_cast<int>(x.size()) != d) throw ShapeError("velocity probe has wrong dimension");
  const auto& comps = target.components();

  // Per component: X_r ~ N(r mu, (1-r)^2 + r^2 var) per axis, and
  // Cov(Y, X_r) = r var - (1 - r).
  std::vector<double> log_resp(comps.size());
  std::vector<std::vector<double>> cond_mean(comps.size(), std::vector<double>(static_cast<std::size_t>(d)));
  for (std::size_t k = 0; k < comps.size(); ++k) {
    double lp = std::log(comps[k].weight);
    for (int j = 0; j < d; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      const double var = comps[k].variance[jj];
      const double mu = comps[k].mean[jj];
      const double v = (1.0 - r) * (1.0 - r) + r * r * var;
      const double dev = x[jj] - r * mu;
      lp += -0.5 * (dev * dev / v + std::log(2.0 * std::numbers::pi * v));
      cond_mean[k][jj] = mu + (r * var - (1.0 - r)) / v * dev;
    }
    log_resp[k] = lp;
  }
  const double top = *std::max_element(log_resp.begin(), log_resp.end());
  double norm = 0.0;
  for (double& lp : log_resp) {
    lp = std::exp(lp - top);
    norm += lp;
  }
  std::vector<double> u(static_cast<std::size_t>(d), 0.0);
  for (std::size_t k = 0; k < comps.size(); ++k) {
    for (std::size_t j = 0; j < u.size(); ++j) u[j] += log_resp[k] / norm * cond_mean[k][j];
  }
  return u;
}

namespace {

const GmmComponent& single_component(const GmmTarget& target, std::span<const double> x) {
  if (!target.single()) throw UnsupportedError("posterior sampling needs a single Gaussian target");
  if (static_cast<int>(x.size()) != target.dimension()) throw ShapeError("posterior probe has wrong dimension");
  return target.components().front();
}

}  // namespace

std::vector<double> gaussian_posterior_sample(const GmmTarget& target, std::span<const double> x, double r,
                                              Rng& rng) {
  const auto& c = single_component(target, x);
  if (!(r >= 0.0 && r <= 1.0)) throw DomainError("posterior needs 0 <= r <= 1");
  std::vector<double> y(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double var = c.variance[j];
    const double v = (1.0 - r) * (1.0 - r) + r * r * var;
    const double cov = r * var - (1.0 - r);
    const double mean = c.mean[j] + cov / v * (x[j] - r * c.mean[j]);
    const double cond_var = std::max(var + 1.0 - cov * cov / v, 0.0);
    y[j] = mean + std::sqrt(cond_var) * rng.normal();
  }
  return y;
}

std::vector<double> bounded_gaussian_posterior_sample(const GmmTarget& target, std::span<const double> x,
                                                      double r, double bound_sigmas, Rng& rng) {
  const auto& c = single_component(target, x);
  if (!(r >= 0.0 && r < 1.0)) throw DomainError("bounded posterior needs 0 <= r < 1");
  // Draw X_T | X_r = x per axis, reject outside the box, then recover X_0 from
  // the interpolation constraint.
  std::vector<double> y(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double var = c.variance[j];
    const double mu = c.mean[j];
    const double v = (1.0 - r) * (1.0 - r) + r * r * var;
    const double mean_T = mu + r * var / v * (x[j] - r * mu);
    const double sd_T = std::sqrt(std::max(var - r * r * var * var / v, 0.0));
    const double limit = bound_sigmas * std::sqrt(var);
    double xT = 0.0;
    for (int attempt = 0;; ++attempt) {
      xT = mean_T + sd_T * rng.normal();
      if (std::abs(xT - mu) <= limit) break;
      if (attempt > 1000000) throw NumericError("bounded posterior rejection did not terminate");
    }
    const double x0 = (x[j] - r * xT) / (1.0 - r);
    y[j] = xT - x0;
  }
  return y;
}

McEstimate mc_conditional_expectation(const TargetSampler& sampler, std::span<const double> x, double r,
                                      double bandwidth, std::size_t count, Rng& rng, int bootstrap_resamples) {
  if (!(bandwidth > 0.0)) throw RangeError("bandwidth must be positive");
  if (count < 1000) throw RangeError("mc_conditional_expectation needs N >= 1000");
  if (!(r >= 0.0 && r <= 1.0)) throw DomainError("ratio outside [0, 1]");
  const std::size_t d = x.size();

  // Only pairs within 8 bandwidths carry weight above e^-32; keep those.
  constexpr std::size_t kChunk = 1 << 16;
  const double cutoff = 64.0 * bandwidth * bandwidth;
  std::vector<double> weights;
  std::vector<double> latents;
  std::size_t remaining = count;
  while (remaining > 0) {
    const std::size_t m = std::min(remaining, kChunk);
    remaining -= m;
    Samples xT = sampler(m, rng);
    if (static_cast<std::size_t>(xT.cols()) != d) throw ShapeError("sampler dimension does not match probe");
    for (Eigen::Index i = 0; i < xT.rows(); ++i) {
      double dist2 = 0.0;
      double y[16];
      if (d > 16) throw UnsupportedError("mc_conditional_expectation supports d <= 16");
      for (std::size_t j = 0; j < d; ++j) {
        const double x0 = rng.normal();
        const double xt = (1.0 - r) * x0 + r * xT(i, static_cast<Eigen::Index>(j));
        y[j] = xT(i, static_cast<Eigen::Index>(j)) - x0;
        dist2 += (xt - x[j]) * (xt - x[j]);
      }
      if (dist2 > cutoff) continue;
      weights.push_back(std::exp(-0.5 * dist2 / (bandwidth * bandwidth)));
      latents.insert(latents.end(), y, y + d);
    }
  }

  auto estimate = [&](const std::vector<double>& mult, std::vector<double>& out) {
    double wsum = 0.0;
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t k = 0; k < weights.size(); ++k) {
      const double w = weights[k] * mult[k];
      wsum += w;
      for (std::size_t j = 0; j < d; ++j) out[j] += w * latents[k * d + j];
    }
    for (double& v : out) v /= wsum;
    return wsum;
  };

  double sum_w = 0.0;
  double sum_w2 = 0.0;
  for (double w : weights) {
    sum_w += w;
    sum_w2 += w * w;
  }
  const double ess = sum_w2 > 0.0 ? sum_w * sum_w / sum_w2 : 0.0;
  if (ess < 50.0) {
    throw InsufficientDataError("effective sample size " + std::to_string(ess) + " below 50");
  }

  McEstimate result;
  result.effective_samples = ess;
  result.value.assign(d, 0.0);
  std::vector<double> ones(weights.size(), 1.0);
  estimate(ones, result.value);

  // Poisson(1) bootstrap multiplicities, drawn by inversion.
  std::vector<double> sum(d, 0.0), sum2(d, 0.0), rep(d, 0.0), mult(weights.size());
  Rng boot = rng.split(0xb0075);
  for (int b = 0; b < bootstrap_resamples; ++b) {
    for (double& m : mult) {
      double u = boot.uniform();
      double p = std::exp(-1.0);
      int k = 0;
      while (u >= p) {
        u -= p;
        ++k;
        p /= k;
      }
      m = k;
    }
    estimate(mult, rep);
    for (std::size_t j = 0; j < d; ++j) {
      sum[j] += rep[j];
      sum2[j] += rep[j] * rep[j];
    }
  }
  result.stderr_.resize(d);
  const double nb = bootstrap_resamples;
  for (std::size_t j = 0; j < d; ++j) {
    const double mean = sum[j] / nb;
    result.stderr_[j] = std::sqrt(std::max(sum2[j] / nb - mean * mean, 0.0) * nb / (nb - 1.0));
  }
  return result;
}

}  // namespace tmatch
