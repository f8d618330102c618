#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "tm/net.hpp"

namespace tmatch {

struct Assertion {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SuiteResult {
  std::string suite;
  std::vector<Assertion> assertions;
  double seconds = 0.0;

  bool passed() const;
  void check(std::string name, bool pass, std::string detail = {});
};

struct SuiteOptions {
  std::uint64_t seed = 1;
  // Acceptance-size sample counts; otherwise smaller, faster settings.
  bool full = false;
};

using MaskBuilder = std::function<AttentionMask(MaskMode, int, int)>;

// Analytic CFM gradients against central differences (64-bit, eps 1e-5) for
// every parameter tensor, every mask mode and both output kinds.
SuiteResult run_gradcheck_suite(const SuiteOptions& opts);

// Closed-form marginal velocity against the kernel Monte-Carlo estimator at 20
// (x, r) probes on 1-D and 2-D Gaussians and mixtures, plus the posterior
// sample mean identity.
SuiteResult run_oracle_suite(const SuiteOptions& opts);

// Convergence of the exact-posterior DTM chain to f0 on N(1, 0.5^2).
SuiteResult run_theorem1_suite(const SuiteOptions& opts);

// Dependent vs independent x_t marginals on gmm8, with the 2x noise negative
// control.
SuiteResult run_marginals_suite(const SuiteOptions& opts);

// Mask semantics and FHTM joint-vs-separate losses. Every mask reaching the
// backbone comes from `builder`; with the default builder the suite also runs
// a corrupted-mask negative control.
SuiteResult run_masks_suite(const SuiteOptions& opts, const MaskBuilder& builder = {});

// Dispatch by name: gradcheck, oracle, theorem1, marginals, masks.
SuiteResult run_suite(const std::string& name, const SuiteOptions& opts);

// One "PASS|FAIL suite: name  detail" line per assertion and a summary line.
void print_suite(std::ostream& out, const SuiteResult& result);

// Largest gradcheck relative error per parameter tensor; exposed for tests.
struct GradcheckRow {
  std::string tensor;
  double max_rel_error = 0.0;
  int probes = 0;
};
std::vector<GradcheckRow> gradcheck(const VelocityModel<double>& model, const Batch<double>& batch, Rng& rng,
                                    int probes_per_tensor = 10, double eps = 1e-5);

// Relative error |a - f| / max(|a|, |f|, 1e-6).
double gradcheck_relative_error(double analytic, double numeric);

}  // namespace tmatch
