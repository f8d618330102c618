#include "tm/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "tm/errors.hpp"

namespace tmatch {

namespace {

// Column-wise copy: one contiguous array per coordinate.
std::vector<Eigen::ArrayXd> columns(const Samples& m) {
  std::vector<Eigen::ArrayXd> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(c)] = m.col(c).array();
  return out;
}

struct EdParts {
  std::vector<double> ab;  // per a_i: sum_j |a_i - b_j|
  std::vector<double> ba;  // per b_j: sum_i |a_i - b_j|
  std::vector<double> aa;  // per a_i: sum_i' |a_i - a_i'|
  std::vector<double> bb;
};

// Sums of |x - y| over one-dimensional sets via sorting: per point of `x`.
std::vector<double> sorted_sums(const Samples& x, const Samples& y) {
  std::vector<double> sorted(y.data(), y.data() + y.rows());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> prefix(sorted.size() + 1, 0.0);
  for (std::size_t j = 0; j < sorted.size(); ++j) prefix[j + 1] = prefix[j] + sorted[j];
  const double total = prefix.back();
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double v = x(i, 0);
    const auto below = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
    const double lo = prefix[below];
    out[static_cast<std::size_t>(i)] =
        v * static_cast<double>(below) - lo + (total - lo) - v * static_cast<double>(sorted.size() - below);
  }
  return out;
}

// Row and column sums of the cross distance matrix in one pass.
void cross_sums(const Samples& a, const Samples& b, std::vector<double>& rows, std::vector<double>& cols) {
  const auto bc = columns(b);
  Eigen::ArrayXd acc(b.rows()), colsum = Eigen::ArrayXd::Zero(b.rows());
  rows.assign(static_cast<std::size_t>(a.rows()), 0.0);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    acc = (bc[0] - a(i, 0)).square();
    for (Eigen::Index c = 1; c < a.cols(); ++c) acc += (bc[static_cast<std::size_t>(c)] - a(i, c)).square();
    acc = acc.sqrt();
    rows[static_cast<std::size_t>(i)] = acc.sum();
    colsum += acc;
  }
  cols.assign(colsum.data(), colsum.data() + colsum.size());
}

// Per-point sums of within-set distances, visiting each pair once.
std::vector<double> self_sums(const Samples& a) {
  const Eigen::Index n = a.rows();
  const auto ac = columns(a);
  Eigen::ArrayXd total = Eigen::ArrayXd::Zero(n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const Eigen::Index m = n - i - 1;
    Eigen::ArrayXd acc = (ac[0].tail(m) - a(i, 0)).square();
    for (Eigen::Index c = 1; c < a.cols(); ++c) acc += (ac[static_cast<std::size_t>(c)].tail(m) - a(i, c)).square();
    acc = acc.sqrt();
    total(i) += acc.sum();
    total.tail(m) += acc;
  }
  return std::vector<double>(total.data(), total.data() + n);
}

EdParts ed_parts(const Samples& a, const Samples& b) {
  if (a.cols() != b.cols()) throw ShapeError("energy distance: dimension mismatch");
  if (a.rows() < 1 || b.rows() < 1) throw ShapeError("energy distance: empty sample set");
  EdParts p;
  if (a.cols() == 1) {
    p.ab = sorted_sums(a, b);
    p.ba = sorted_sums(b, a);
    p.aa = sorted_sums(a, a);
    p.bb = sorted_sums(b, b);
    return p;
  }
  cross_sums(a, b, p.ab, p.ba);
  p.aa = self_sums(a);
  p.bb = self_sums(b);
  return p;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

double ed_from_parts(const EdParts& p, double na, double nb, EdEstimator est) {
  const double within_a = est == EdEstimator::unbiased ? na * (na - 1.0) : na * na;
  const double within_b = est == EdEstimator::unbiased ? nb * (nb - 1.0) : nb * nb;
  return 2.0 * sum(p.ab) / (na * nb) - sum(p.aa) / within_a - sum(p.bb) / within_b;
}

void check_sizes(const Samples& a, const Samples& b, EdEstimator est) {
  if (est == EdEstimator::unbiased && (a.rows() < 2 || b.rows() < 2))
    throw ShapeError("unbiased energy distance needs at least two samples per set");
}

}  // namespace

double energy_distance_raw(const Samples& a, const Samples& b, EdEstimator est) {
  check_sizes(a, b, est);
  const EdParts p = ed_parts(a, b);
  return ed_from_parts(p, static_cast<double>(a.rows()), static_cast<double>(b.rows()), est);
}

double energy_distance(const Samples& a, const Samples& b, EdEstimator est) {
  return std::max(0.0, energy_distance_raw(a, b, est));
}

EdStats energy_distance_stats(const Samples& a, const Samples& b, Rng& rng, int resamples) {
  check_sizes(a, b, EdEstimator::unbiased);
  if (resamples < 2) throw RangeError("need at least two bootstrap resamples");
  const EdParts p = ed_parts(a, b);
  const double na = static_cast<double>(a.rows());
  const double nb = static_cast<double>(b.rows());
  EdStats out;
  out.raw = ed_from_parts(p, na, nb, EdEstimator::unbiased);
  out.value = std::max(0.0, out.raw);
  // First-order influence of each point on the statistic.
  std::vector<double> phi_a(p.ab.size()), phi_b(p.ba.size());
  for (std::size_t i = 0; i < phi_a.size(); ++i) phi_a[i] = 2.0 * p.ab[i] / nb - 2.0 * p.aa[i] / (na - 1.0);
  for (std::size_t j = 0; j < phi_b.size(); ++j) phi_b[j] = 2.0 * p.ba[j] / na - 2.0 * p.bb[j] / (nb - 1.0);
  std::vector<double> reps(static_cast<std::size_t>(resamples));
  for (auto& r : reps) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < phi_a.size(); ++i) sa += phi_a[rng.below(phi_a.size())];
    for (std::size_t j = 0; j < phi_b.size(); ++j) sb += phi_b[rng.below(phi_b.size())];
    r = sa / na + sb / nb;
  }
  const double mean = sum(reps) / static_cast<double>(resamples);
  double var = 0.0;
  for (double r : reps) var += (r - mean) * (r - mean);
  out.stderr_ = std::sqrt(var / static_cast<double>(resamples - 1));
  return out;
}

double wasserstein1_1d(const Samples& a, const Samples& b) {
  if (a.cols() != 1 || b.cols() != 1) throw ShapeError("wasserstein1_1d takes one-dimensional samples");
  if (a.rows() < 1 || b.rows() < 1) throw ShapeError("wasserstein1_1d: empty sample set");
  std::vector<double> x(a.data(), a.data() + a.rows());
  std::vector<double> y(b.data(), b.data() + b.rows());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  if (x.size() == y.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
    return s / static_cast<double>(x.size());
  }
  // Integrate |F^-1(u) - G^-1(u)| over the merged breakpoints of both step
  // quantile functions.
  const double nx = static_cast<double>(x.size());
  const double ny = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double u = 0.0, s = 0.0;
  while (i < x.size() && j < y.size()) {
    const double next = std::min(static_cast<double>(i + 1) / nx, static_cast<double>(j + 1) / ny);
    s += (next - u) * std::abs(x[i] - y[j]);
    u = next;
    if (static_cast<double>(i + 1) / nx <= next) ++i;
    if (static_cast<double>(j + 1) / ny <= next) ++j;
  }
  return s;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ShapeError("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw RangeError("quantile level outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double null_threshold(const TargetSampler& sampler, std::size_t n_a, std::size_t n_b, Rng& rng, int resamples,
                      double q) {
  if (resamples < 1) throw RangeError("need at least one null replicate");
  std::vector<double> reps;
  reps.reserve(static_cast<std::size_t>(resamples));
  for (int k = 0; k < resamples; ++k) {
    const Samples a = sampler(n_a, rng);
    const Samples b = sampler(n_b, rng);
    reps.push_back(energy_distance(a, b));
  }
  return quantile(std::move(reps), q);
}

std::string fingerprint(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

void write_metric_header(std::ostream& out) { out << "metric,value,stderr,n_a,n_b,seed,config_hash\n"; }

void write_metric_row(std::ostream& out, const MetricReport& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%ld,%ld,%" PRIu64 ",", r.value, r.stderr_, r.n_a, r.n_b, r.seed);
  out << r.metric << buf << r.config_hash << '\n';
}

void write_metric_csv(std::ostream& out, const std::vector<MetricReport>& reports) {
  write_metric_header(out);
  for (const auto& r : reports) write_metric_row(out, r);
}

bool MarginalReport::all_pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const MarginalRow& r) { return r.pass; });
}

std::vector<MetricReport> MarginalReport::reports() const {
  std::vector<MetricReport> out;
  for (const auto& row : rows) {
    out.push_back(row.distance);
    MetricReport thr = row.distance;
    thr.metric = "marginal_null_q95[t=" + std::to_string(row.t) + "]";
    thr.value = row.threshold;
    thr.stderr_ = 0.0;
    out.push_back(thr);
  }
  return out;
}

namespace {

// N draws of x_t; data rows come from `target`, noise from `rng`.
Samples dependent_population(const TargetSampler& target, const Scheduler& sched, int t, std::size_t N, Rng& rng) {
  const Samples data = target(N, rng);
  Samples out(data.rows(), data.cols());
  for (Eigen::Index e = 0; e < data.rows(); ++e) {
    const State xT(std::vector<double>(data.row(e).data(), data.row(e).data() + data.cols()), 1);
    if (t == sched.T) {
      out.row(e) = data.row(e);
      continue;
    }
    const LinearTriple tr = linear_pair(xT, t, sched, rng);
    for (Eigen::Index c = 0; c < data.cols(); ++c) out(e, c) = tr.x_t[static_cast<std::size_t>(c)];
  }
  return out;
}

Samples independent_population(const TargetSampler& target, const Scheduler& sched, int t, std::size_t N,
                               double noise_scale, Rng& rng) {
  const Samples data = target(N, rng);
  Samples out(data.rows(), data.cols());
  const double r = sched.ratio(t);
  for (Eigen::Index e = 0; e < data.rows(); ++e) {
    const State xT(std::vector<double>(data.row(e).data(), data.row(e).data() + data.cols()), 1);
    if (t == sched.T) {
      out.row(e) = data.row(e);
      continue;
    }
    const IndependentPair pr = independent_linear_pair(xT, t, sched, rng);
    for (Eigen::Index c = 0; c < data.cols(); ++c)
      out(e, c) = pr.x_t[static_cast<std::size_t>(c)] + (1.0 - r) * (noise_scale - 1.0) * pr.noise_t[static_cast<std::size_t>(c)];
  }
  return out;
}

}  // namespace

std::vector<MarginalReport> marginal_consistency_reports(const TargetSampler& target, const Scheduler& sched,
                                                         std::size_t N, std::uint64_t seed, int resamples,
                                                         const std::vector<double>& independent_noise_scales,
                                                         const std::string& config_hash) {
  if (N < 2) throw RangeError("marginal consistency needs N >= 2");
  std::vector<MarginalReport> reports(independent_noise_scales.size());
  for (int t = 0; t <= sched.T; ++t) {
    Rng dep_rng = Rng::stream(seed, 3 * static_cast<std::uint64_t>(t));
    Rng null_rng = Rng::stream(seed, 3 * static_cast<std::uint64_t>(t) + 2);
    const Samples dep = dependent_population(target, sched, t, N, dep_rng);
    const TargetSampler same_law = [&](std::size_t n, Rng& g) { return dependent_population(target, sched, t, n, g); };
    const double threshold = null_threshold(same_law, N, N, null_rng, resamples, 0.95);
    for (std::size_t s = 0; s < independent_noise_scales.size(); ++s) {
      Rng ind_rng = Rng::stream(seed, 3 * static_cast<std::uint64_t>(t) + 1);
      const Samples ind = independent_population(target, sched, t, N, independent_noise_scales[s], ind_rng);
      MarginalRow row;
      row.t = t;
      row.ratio = sched.ratio(t);
      const EdStats ed = energy_distance_stats(dep, ind, ind_rng);
      row.distance = MetricReport{"marginal_ed[t=" + std::to_string(t) + "]", ed.value, ed.stderr_,
                                  static_cast<long>(N), static_cast<long>(N), seed, config_hash};
      row.threshold = threshold;
      row.pass = ed.value <= threshold;
      reports[s].rows.push_back(std::move(row));
    }
  }
  return reports;
}

MarginalReport marginal_consistency_report(const TargetSampler& target, const Scheduler& sched, std::size_t N,
                                           std::uint64_t seed, int resamples, double independent_noise_scale,
                                           const std::string& config_hash) {
  return marginal_consistency_reports(target, sched, N, seed, resamples, {independent_noise_scale}, config_hash)
      .front();
}

std::vector<SweepCell> efficiency_sweep(const VelocityModel<float>* dtm_model, const VariantConfig& dtm_base,
                                        const VelocityModel<float>* fm_model, const VariantConfig& fm_base,
                                        const Samples& reference, const SweepSpec& spec,
                                        const std::string& config_hash) {
  using clock = std::chrono::steady_clock;
  const int dim = static_cast<int>(reference.cols());
  const int count = static_cast<int>(spec.N);
  std::vector<SweepCell> cells;
  auto measure = [&](SweepCell cell, const VariantConfig& v, const VelocityModel<float>& model) {
    Rng rng = Rng::stream(spec.seed, 0);
    SampleStats stats;
    const auto t0 = clock::now();
    const Samples x = sample(model, v, dim, count, rng, &stats);
    cell.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    Rng boot = Rng::stream(spec.seed, 1);
    const EdStats ed = energy_distance_stats(x, reference, boot);
    cell.quality = MetricReport{"energy_distance[" + to_string(v.kind) + " T=" + std::to_string(v.T) +
                                    " head=" + std::to_string(cell.head_steps) + "]",
                                ed.value, ed.stderr_, count, static_cast<long>(reference.rows()), spec.seed,
                                config_hash};
    cell.backbone_per_sample = static_cast<double>(stats.backbone_calls);
    cell.head_per_sample = static_cast<double>(stats.head_calls);
    cells.push_back(std::move(cell));
  };
  if (dtm_model) {
    for (int T : spec.dtm_T) {
      for (int h : spec.head_steps) {
        VariantConfig v = dtm_base;
        v.T = T;
        v.head_steps = h;
        measure(SweepCell{VariantKind::dtm, T, h, {}, 0.0, 0.0, 0.0}, v, *dtm_model);
      }
    }
  }
  if (fm_model) {
    for (int T : spec.fm_steps) {
      VariantConfig v = fm_base;
      v.T = T;
      measure(SweepCell{VariantKind::fm, T, 0, {}, 0.0, 0.0, 0.0}, v, *fm_model);
    }
  }
  return cells;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells) {
  out << "variant,T,head_steps,energy_distance,stderr,wall_seconds,backbone_nfe,head_nfe,n,seed,config_hash\n";
  for (const auto& c : cells) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%.17g,%.17g,%.6f,%.17g,%.17g,%ld,%" PRIu64 ",", to_string(c.kind).c_str(),
                  c.T, c.head_steps, c.quality.value, c.quality.stderr_, c.wall_seconds, c.backbone_per_sample,
                  c.head_per_sample, c.quality.n_a, c.quality.seed);
    out << buf << c.quality.config_hash << '\n';
  }
}

}  // namespace tmatch
