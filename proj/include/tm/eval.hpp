#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tm/net.hpp"
#include "tm/oracle.hpp"
#include "tm/processes.hpp"
#include "tm/rng.hpp"
#include "tm/state.hpp"
#include "tm/variants.hpp"

namespace tmatch {

// unbiased: within-set means over i != j (U-statistic); plugin: over all pairs.
enum class EdEstimator { unbiased, plugin };

// 2 mean|a - b| - mean|a - a'| - mean|b - b'|, possibly negative.
double energy_distance_raw(const Samples& a, const Samples& b, EdEstimator est = EdEstimator::unbiased);
// Same, clamped at zero.
double energy_distance(const Samples& a, const Samples& b, EdEstimator est = EdEstimator::unbiased);

struct EdStats {
  double value = 0.0;  // clamped
  double raw = 0.0;
  double stderr_ = 0.0;
};

// Energy distance with a bootstrap standard error. Each replicate resamples the
// per-point influence values of both sets, so a replicate costs O(n).
EdStats energy_distance_stats(const Samples& a, const Samples& b, Rng& rng, int resamples = 200);

// One-dimensional W1: sorted differences for equal sizes, quantile coupling
// otherwise. Both inputs must have one column.
double wasserstein1_1d(const Samples& a, const Samples& b);

// Linear-interpolated empirical quantile, q in [0, 1].
double quantile(std::vector<double> values, double q);

// Energy distance between two fresh same-law draws of sizes n_a and n_b,
// repeated `resamples` times; returns the `q` quantile.
double null_threshold(const TargetSampler& sampler, std::size_t n_a, std::size_t n_b, Rng& rng,
                      int resamples = 200, double q = 0.95);

struct MetricReport {
  std::string metric;
  double value = 0.0;
  double stderr_ = 0.0;
  long n_a = 0;
  long n_b = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// FNV-1a 64 of a canonical config text, as 16 hex digits.
std::string fingerprint(const std::string& text);

// Header: metric,value,stderr,n_a,n_b,seed,config_hash
void write_metric_header(std::ostream& out);
void write_metric_row(std::ostream& out, const MetricReport& report);
void write_metric_csv(std::ostream& out, const std::vector<MetricReport>& reports);

struct MarginalRow {
  int t = 0;
  double ratio = 0.0;
  MetricReport distance;
  double threshold = 0.0;
  bool pass = false;
};

struct MarginalReport {
  std::vector<MarginalRow> rows;
  bool all_pass() const;
  std::vector<MetricReport> reports() const;
};

// At every grid level t, N draws of x_t from the dependent process and N from
// the independent one (separate data and noise), compared by energy distance
// against the 95% quantile of `resamples` same-law dependent-vs-dependent
// replicates. `independent_noise_scale` != 1 corrupts the independent
// process's noise (negative control).
MarginalReport marginal_consistency_report(const TargetSampler& target, const Scheduler& sched, std::size_t N,
                                           std::uint64_t seed, int resamples = 200,
                                           double independent_noise_scale = 1.0,
                                           const std::string& config_hash = {});

// One report per noise scale; the dependent draws and null thresholds are
// shared, so each entry equals the single-scale report.
std::vector<MarginalReport> marginal_consistency_reports(const TargetSampler& target, const Scheduler& sched,
                                                         std::size_t N, std::uint64_t seed, int resamples,
                                                         const std::vector<double>& independent_noise_scales,
                                                         const std::string& config_hash = {});

struct SweepCell {
  VariantKind kind = VariantKind::dtm;
  int T = 0;
  int head_steps = 0;
  MetricReport quality;
  double wall_seconds = 0.0;
  double backbone_per_sample = 0.0;
  double head_per_sample = 0.0;
};

struct SweepSpec {
  std::vector<int> dtm_T{4, 8, 16, 32, 64};
  std::vector<int> head_steps{1, 2, 4, 8, 64};
  std::vector<int> fm_steps{4, 8, 16, 32, 64};
  std::size_t N = 2000;
  std::uint64_t seed = 0;
};

// Energy distance to `reference` for each (T, head_steps) DTM cell and each
// Euler-step FM cell. Every cell draws from the same rng stream, so initial
// noise is shared across cells. Either model may be null to skip its cells.
std::vector<SweepCell> efficiency_sweep(const VelocityModel<float>* dtm_model, const VariantConfig& dtm_base,
                                        const VelocityModel<float>* fm_model, const VariantConfig& fm_base,
                                        const Samples& reference, const SweepSpec& spec,
                                        const std::string& config_hash = {});

// Header: variant,T,head_steps,energy_distance,stderr,wall_seconds,backbone_nfe,head_nfe,n,seed,config_hash
void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells);

}  // namespace tmatch
