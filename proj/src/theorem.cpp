#include "tm/theorem.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "tm/errors.hpp"

namespace tmatch {

namespace {

void require_single(const GmmTarget& target) {
  if (!target.single()) throw UnsupportedError("theorem harness needs a single Gaussian target");
}

void require_point(const GmmTarget& target, std::span<const double> x) {
  if (static_cast<int>(x.size()) != target.dimension()) throw ShapeError("probe point dimension mismatch");
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

int k_inverse_sqrt(double h) {
  if (!(h > 0.0)) throw ConfigError("h must be positive");
  return static_cast<int>(std::ceil(1.0 / std::sqrt(h) - 1e-12));
}

std::vector<double> f0(const GmmTarget& target, std::span<const double> x) {
  require_point(target, x);
  std::vector<double> out = target.mean();
  for (std::size_t c = 0; c < out.size(); ++c) out[c] -= x[c];
  return out;
}

std::vector<double> run_dtm_chain(const GmmTarget& target, std::span<const double> x, double h, int k, Rng& rng,
                                  double bound_sigmas) {
  require_single(target);
  require_point(target, x);
  if (!(h > 0.0) || k < 1) throw ConfigError("chain needs h > 0 and k >= 1");
  if (static_cast<double>(k) * h > 0.5 + 1e-12) throw ConfigError("chain requires k h <= 1/2");
  std::vector<double> state(x.begin(), x.end());
  for (int j = 0; j < k; ++j) {
    const double r = static_cast<double>(j) * h;
    const std::vector<double> y = bounded_gaussian_posterior_sample(target, state, r, bound_sigmas, rng);
    for (std::size_t c = 0; c < state.size(); ++c) state[c] += h * y[c];
  }
  return state;
}

ConvergenceRun convergence_curve(const GmmTarget& target, std::span<const double> x, const std::vector<double>& hs,
                                 const KRule& k_rule, std::size_t N, Rng& rng, int resamples) {
  require_single(target);
  require_point(target, x);
  if (hs.empty()) throw ConfigError("empty h list");
  for (std::size_t i = 1; i < hs.size(); ++i)
    if (!(hs[i] < hs[i - 1])) throw ConfigError("h list must be strictly decreasing");
  if (N < 2) throw ConfigError("need at least two chains");
  ConvergenceRun run;
  run.x.assign(x.begin(), x.end());
  run.f0 = f0(target, x);
  run.chains = N;
  for (double h : hs) {
    const int k = k_rule(h);
    if (k < 1) throw ConfigError("k rule returned k < 1");
    const double kh = static_cast<double>(k) * h;
    if (kh > 0.5 + 1e-12) throw ConfigError("k rule violates k h <= 1/2");
    std::vector<double> err(N);
    for (std::size_t n = 0; n < N; ++n) {
      const std::vector<double> end = run_dtm_chain(target, x, h, k, rng);
      double e = 0.0;
      for (std::size_t c = 0; c < end.size(); ++c) {
        const double d = (end[c] - x[c]) / kh - run.f0[c];
        e += d * d;
      }
      if (!std::isfinite(e)) throw NumericError("non-finite chain error", static_cast<long>(n));
      err[n] = e;
    }
    ConvergenceRow row;
    row.h = h;
    row.k = k;
    row.kh = kh;
    double s = 0.0, s2 = 0.0;
    for (double e : err) {
      s += e;
      s2 += e * e;
    }
    const double dn = static_cast<double>(N);
    row.mse = s / dn;
    row.stderr_ = std::sqrt(std::max(0.0, s2 / dn - row.mse * row.mse) / (dn - 1.0));
    std::vector<double> reps(static_cast<std::size_t>(resamples));
    for (auto& rep : reps) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += err[rng.below(N)];
      rep = acc / dn;
    }
    row.ci_lo = percentile(reps, 0.025);
    row.ci_hi = percentile(reps, 0.975);
    run.rows.push_back(row);
  }
  return run;
}

void write_convergence_csv(std::ostream& out, const ConvergenceRun& run) {
  out << "h,k,kh,mse,ci_lo,ci_hi\n";
  for (const auto& r : run.rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g,%.17g,%.17g\n", r.h, r.k, r.kh, r.mse, r.ci_lo, r.ci_hi);
    out << buf;
  }
}

double lipschitz_estimate(const GmmTarget& target, double lo, double hi, int grid, const std::vector<double>& ratios,
                          double delta) {
  if (grid < 2 || !(hi > lo)) throw ConfigError("lipschitz grid needs hi > lo and at least two points");
  const int d = target.dimension();
  double best = 0.0;
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  std::vector<double> x(static_cast<std::size_t>(d));
  const double step = (hi - lo) / (grid - 1);
  for (;;) {
    for (int c = 0; c < d; ++c) x[static_cast<std::size_t>(c)] = lo + step * idx[static_cast<std::size_t>(c)];
    for (double r : ratios) {
      const std::vector<double> u = gmm_marginal_velocity(target, x, r);
      for (int c = 0; c < d; ++c) {
        std::vector<double> xp = x;
        xp[static_cast<std::size_t>(c)] += delta;
        const std::vector<double> up = gmm_marginal_velocity(target, xp, r);
        double diff = 0.0;
        for (int o = 0; o < d; ++o) diff += std::pow(up[static_cast<std::size_t>(o)] - u[static_cast<std::size_t>(o)], 2);
        best = std::max(best, std::sqrt(diff) / delta);
      }
    }
    int c = 0;
    while (c < d && ++idx[static_cast<std::size_t>(c)] == grid) idx[static_cast<std::size_t>(c++)] = 0;
    if (c == d) break;
  }
  return best;
}

double gaussian_lipschitz_bound(const GmmTarget& target, double r_max) {
  require_single(target);
  if (!(r_max >= 0.0 && r_max < 1.0)) throw RangeError("r_max must lie in [0, 1)");
  double best = 0.0;
  for (double var : target.components()[0].variance) {
    for (int i = 0; i <= 1000; ++i) {
      const double r = r_max * i / 1000.0;
      const double v = (1 - r) * (1 - r) + r * r * var;
      best = std::max(best, std::abs((r * var - (1 - r)) / v));
    }
  }
  return best;
}

SecondMomentCheck second_moment_check(const GmmTarget& target, std::span<const double> x, double h, int k,
                                      std::size_t N, Rng& rng) {
  require_single(target);
  require_point(target, x);
  if (static_cast<double>(k) * h > 0.5 + 1e-12) throw ConfigError("chain requires k h <= 1/2");
  const auto& comp = target.components()[0];
  const std::size_t d = x.size();
  std::vector<double> y_moment(static_cast<std::size_t>(k), 0.0), x_moment(static_cast<std::size_t>(k), 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> state(x.begin(), x.end());
    for (int j = 0; j < k; ++j) {
      const double r = static_cast<double>(j) * h;
      double xm = 0.0;
      for (std::size_t c = 0; c < d; ++c) xm += std::pow(state[c] - comp.mean[c], 2);
      x_moment[static_cast<std::size_t>(j)] += xm;
      const std::vector<double> y = bounded_gaussian_posterior_sample(target, state, r, 6.0, rng);
      double ym = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        ym += y[c] * y[c];
        state[c] += h * y[c];
      }
      y_moment[static_cast<std::size_t>(j)] += ym;
    }
  }
  const double var_max = *std::max_element(comp.variance.begin(), comp.variance.end());
  SecondMomentCheck out;
  double x_max = 0.0;
  for (int j = 0; j < k; ++j) {
    out.max_moment = std::max(out.max_moment, y_moment[static_cast<std::size_t>(j)] / static_cast<double>(N));
    x_max = std::max(x_max, x_moment[static_cast<std::size_t>(j)] / static_cast<double>(N));
  }
  const double kh = static_cast<double>(k) * h;
  out.bound = 2.0 * (36.0 * var_max * static_cast<double>(d) + x_max) / ((1.0 - kh) * (1.0 - kh));
  return out;
}

TaylorCheck euler_taylor_check(const GmmTarget& target, std::span<const double> x, double h, int k) {
  require_point(target, x);
  if (static_cast<double>(k) * h > 0.5 + 1e-12) throw ConfigError("chain requires k h <= 1/2");
  std::vector<double> state(x.begin(), x.end());
  for (int j = 0; j < k; ++j) {
    const std::vector<double> u = gmm_marginal_velocity(target, state, static_cast<double>(j) * h);
    for (std::size_t c = 0; c < state.size(); ++c) state[c] += h * u[c];
  }
  const std::vector<double> f = f0(target, x);
  TaylorCheck out;
  out.kh = static_cast<double>(k) * h;
  double s = 0.0;
  for (std::size_t c = 0; c < state.size(); ++c) s += std::pow(state[c] - (x[c] + out.kh * f[c]), 2);
  out.residual = std::sqrt(s);
  return out;
}

}  // namespace tmatch
