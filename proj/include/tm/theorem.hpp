#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "tm/oracle.hpp"
#include "tm/rng.hpp"

namespace tmatch {

// h -> number of chain steps k.
using KRule = std::function<int(double)>;

// k(h) = ceil(h^{-1/2}).
int k_inverse_sqrt(double h);

// f0(x) = E[X_T - X_0 | X_0 = x] = mu - x.
std::vector<double> f0(const GmmTarget& target, std::span<const double> x);

// X_0 = x, then k steps X_{t+h} = X_t + h Y_t with Y_t drawn from the exact
// posterior at ratio t (target restricted to |X_T - mu| <= bound_sigmas sigma).
// Requires k h <= 1/2.
std::vector<double> run_dtm_chain(const GmmTarget& target, std::span<const double> x, double h, int k, Rng& rng,
                                  double bound_sigmas = 6.0);

struct ConvergenceRow {
  double h = 0.0;
  int k = 0;
  double kh = 0.0;
  double mse = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double stderr_ = 0.0;
};

struct ConvergenceRun {
  std::vector<double> x;
  std::vector<double> f0;
  std::size_t chains = 0;
  std::vector<ConvergenceRow> rows;
};

// Per h, the Monte-Carlo estimate of E|(X_{kh} - X_0)/(kh) - f0(x)|^2 over N
// chains with a 95% percentile bootstrap interval (200 resamples).
ConvergenceRun convergence_curve(const GmmTarget& target, std::span<const double> x, const std::vector<double>& hs,
                                 const KRule& k_rule, std::size_t N, Rng& rng, int resamples = 200);

// Header: h,k,kh,mse,ci_lo,ci_hi
void write_convergence_csv(std::ostream& out, const ConvergenceRun& run);

// Largest finite-difference slope |u(x + d) - u(x)| / |d| of the marginal
// velocity over a grid of the box [lo, hi]^d at ratios `ratios`.
double lipschitz_estimate(const GmmTarget& target, double lo, double hi, int grid, const std::vector<double>& ratios,
                          double delta = 1e-4);

// Sup of |du/dx| for a single Gaussian over r in [0, r_max]: the closed-form
// slope (r sigma^2 - (1 - r)) / ((1 - r)^2 + r^2 sigma^2) per coordinate.
double gaussian_lipschitz_bound(const GmmTarget& target, double r_max);

struct SecondMomentCheck {
  double max_moment = 0.0;  // max over steps of E|Y_t|^2
  double bound = 0.0;       // c(x)
  bool holds() const { return max_moment <= bound; }
};

// E|Y_t|^2 along N bounded chains, against c(x) = 2 (36 sigma_max^2 d + max_t
// E|X_t - mu|^2) / (1 - kh)^2, which follows from Y = (X_T - X_t) / (1 - r)
// and the truncation |X_T - mu| <= 6 sigma.
SecondMomentCheck second_moment_check(const GmmTarget& target, std::span<const double> x, double h, int k,
                                      std::size_t N, Rng& rng);

struct TaylorCheck {
  double kh = 0.0;
  double residual = 0.0;  // |x_k - (x + kh f0(x))|
};

// Deterministic Euler chain with the exact marginal velocity.
TaylorCheck euler_taylor_check(const GmmTarget& target, std::span<const double> x, double h, int k);

}  // namespace tmatch
