#include "tm/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <ostream>

#include "tm/errors.hpp"
#include "tm/eval.hpp"
#include "tm/oracle.hpp"
#include "tm/theorem.hpp"
#include "tm/toy_data.hpp"
#include "tm/variants.hpp"

namespace tmatch {

bool SuiteResult::passed() const {
  return !assertions.empty() &&
         std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.pass; });
}

void SuiteResult::check(std::string name, bool pass, std::string detail) {
  assertions.push_back({std::move(name), pass, std::move(detail)});
}

void print_suite(std::ostream& out, const SuiteResult& r) {
  for (const auto& a : r.assertions) {
    out << (a.pass ? "PASS " : "FAIL ") << r.suite << ": " << a.name;
    if (!a.detail.empty()) out << "  (" << a.detail << ')';
    out << '\n';
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s %s: %zu assertions, %.1f s\n", r.passed() ? "PASS" : "FAIL", r.suite.c_str(),
                r.assertions.size(), r.seconds);
  out << buf;
}

namespace {

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt2(const char* f, double a, double b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

template <typename Fn>
SuiteResult timed(const std::string& name, Fn&& body) {
  SuiteResult r;
  r.suite = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const Error& e) {
    r.check("suite completed without error", false, e.what());
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Random batch with one query per position.
template <typename S>
Batch<S> random_batch(const ModelConfig& cfg, int count, int length, MaskMode mode, int prefix, Rng& rng) {
  Batch<S> b;
  b.seq.count = count;
  b.seq.length = length;
  b.seq.mode = mode;
  b.seq.visible_prefix = prefix;
  b.seq.tokens.resize(static_cast<Eigen::Index>(count) * length, cfg.token_dim);
  for (Eigen::Index i = 0; i < b.seq.tokens.size(); ++i) b.seq.tokens.data()[i] = static_cast<S>(rng.normal());
  for (int e = 0; e < count; ++e) b.seq.time.push_back(static_cast<S>(rng.uniform()));
  for (int e = 0; e < count; ++e) {
    for (int l = 0; l < length; ++l) {
      b.rows.push_back(e * length + l);
      b.outer.push_back(b.seq.time[static_cast<std::size_t>(e)]);
      b.s.push_back(static_cast<S>(rng.uniform()));
    }
  }
  const auto q = static_cast<Eigen::Index>(b.rows.size());
  b.target.resize(q, cfg.token_dim);
  b.noise.resize(q, cfg.token_dim);
  for (Eigen::Index i = 0; i < b.target.size(); ++i) {
    b.target.data()[i] = static_cast<S>(rng.normal());
    b.noise.data()[i] = static_cast<S>(rng.normal());
  }
  return b;
}

}  // namespace

double gradcheck_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

std::vector<GradcheckRow> gradcheck(const VelocityModel<double>& model_in, const Batch<double>& batch, Rng& rng,
                                    int probes_per_tensor, double eps) {
  VelocityModel<double> model = model_in;
  const LossResult<double> res = cfm_loss(model, batch);
  std::vector<GradcheckRow> out;
  auto& params = model.params();
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& tensor = params.tensors[t];
    GradcheckRow row;
    row.tensor = params.names[t];
    const Eigen::Index size = tensor.size();
    std::vector<Eigen::Index> idx;
    if (probes_per_tensor <= 0 || size <= probes_per_tensor) {
      idx.resize(static_cast<std::size_t>(size));
      std::iota(idx.begin(), idx.end(), 0);
    } else {
      for (int k = 0; k < probes_per_tensor; ++k)
        idx.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size))));
    }
    for (Eigen::Index k : idx) {
      double* p = tensor.data() + k;
      const double old = *p;
      *p = old + eps;
      const double lp = cfm_loss_value(model, batch);
      *p = old - eps;
      const double lm = cfm_loss_value(model, batch);
      *p = old;
      const double numeric = (lp - lm) / (2.0 * eps);
      row.max_rel_error =
          std::max(row.max_rel_error, gradcheck_relative_error(res.grads.tensors[t].data()[k], numeric));
      ++row.probes;
    }
    out.push_back(row);
  }
  return out;
}

SuiteResult run_gradcheck_suite(const SuiteOptions& opts) {
  return timed("gradcheck", [&](SuiteResult& r) {
    Rng rng = Rng::stream(opts.seed, 100);
    struct Case {
      const char* name;
      OutputKind output;
      MaskMode mode;
      int length, prefix;
      bool randomized;
    };
    const Case cases[] = {
        {"fresh init, full", OutputKind::head, MaskMode::full, 3, 0, false},
        {"full", OutputKind::head, MaskMode::full, 3, 0, true},
        {"artm_causal", OutputKind::head, MaskMode::artm_causal, 5, 3, true},
        {"fh_causal", OutputKind::head, MaskMode::fh_causal, 5, 0, true},
        {"fresh init, direct", OutputKind::direct, MaskMode::full, 3, 0, false},
        {"direct", OutputKind::direct, MaskMode::full, 3, 0, true},
    };
    for (const Case& c : cases) {
      ModelConfig cfg;
      cfg.token_dim = 2;
      cfg.width = 8;
      cfg.head_hidden = 8;
      cfg.time_dim = 4;
      cfg.max_len = 8;
      cfg.output = c.output;
      VelocityModel<double> model(cfg, rng);
      if (c.randomized) model.randomize(rng, 0.5);
      const Batch<double> batch = random_batch<double>(cfg, 3, c.length, c.mode, c.prefix, rng);
      const auto rows = gradcheck(model, batch, rng, opts.full ? 0 : 10);
      for (const auto& row : rows) {
        r.check(std::string(c.name) + ": " + row.tensor, row.max_rel_error < 1e-4,
                fmt("max rel err %.3g", row.max_rel_error));
      }
    }
  });
}

SuiteResult run_oracle_suite(const SuiteOptions& opts) {
  return timed("oracle", [&](SuiteResult& r) {
    struct Probe {
      std::vector<double> x;
      double r;
    };
    struct Case {
      const char* name;
      GmmTarget target;
      double bandwidth;
      std::vector<Probe> probes;
    };
    const std::vector<Case> cases = {
        {"1-D gaussian", GmmTarget::gaussian({1.0}, {0.25}), 0.02,
         {{{0.1}, 0.2}, {{-0.5}, 0.4}, {{0.8}, 0.5}, {{1.2}, 0.7}, {{0.5}, 0.9}}},
        {"1-D mixture", GmmTarget({{0.3, {-1.5}, {0.2}}, {0.7, {1.0}, {0.3}}}), 0.02,
         {{{0.0}, 0.25}, {{-0.8}, 0.5}, {{0.6}, 0.5}, {{-1.2}, 0.75}, {{0.9}, 0.8}}},
        {"2-D gaussian", GmmTarget::gaussian({0.5, -1.0}, {0.3, 0.8}), 0.05,
         {{{0.0, 0.0}, 0.2}, {{0.3, -0.5}, 0.5}, {{-0.5, 0.5}, 0.3}, {{0.4, -0.9}, 0.8}, {{1.0, -1.0}, 0.6}}},
        {"2-D mixture", GmmTarget({{0.5, {-1.0, 1.0}, {0.2, 0.2}}, {0.5, {1.0, -0.5}, {0.3, 0.1}}}), 0.05,
         {{{0.0, 0.0}, 0.3}, {{-0.7, 0.7}, 0.6}, {{0.8, -0.4}, 0.7}, {{0.2, 0.1}, 0.5}, {{-0.3, -0.2}, 0.2}}},
    };
    const std::size_t mc_n = opts.full ? 1000000 : 200000;
    const std::size_t post_n = opts.full ? 100000 : 20000;
    std::uint64_t stream = 200;
    for (const Case& c : cases) {
      const GmmTarget& target = c.target;
      const TargetSampler sampler = [&target](std::size_t n, Rng& g) { return target.sample(n, g); };
      for (const Probe& p : c.probes) {
        Rng rng = Rng::stream(opts.seed, stream++);
        const std::vector<double> exact = gmm_marginal_velocity(target, p.x, p.r);
        const McEstimate mc = mc_conditional_expectation(sampler, p.x, p.r, c.bandwidth, mc_n, rng);
        double worst = 0.0;
        for (std::size_t k = 0; k < exact.size(); ++k)
          worst = std::max(worst, std::abs(exact[k] - mc.value[k]) / mc.stderr_[k]);
        char label[96];
        std::snprintf(label, sizeof label, "%s closed form vs kernel MC at x0=%.2f r=%.2f", c.name, p.x[0], p.r);
        r.check(label, worst <= 3.0, fmt2("max |diff|/stderr %.2f, ESS %.0f", worst, mc.effective_samples));
        if (!target.single()) continue;
        std::vector<double> sum(exact.size(), 0.0), sum2(exact.size(), 0.0);
        for (std::size_t n = 0; n < post_n; ++n) {
          const std::vector<double> y = gaussian_posterior_sample(target, p.x, p.r, rng);
          for (std::size_t k = 0; k < y.size(); ++k) {
            sum[k] += y[k];
            sum2[k] += y[k] * y[k];
          }
        }
        double worst_post = 0.0;
        for (std::size_t k = 0; k < exact.size(); ++k) {
          const double dn = static_cast<double>(post_n);
          const double mean = sum[k] / dn;
          const double se = std::sqrt((sum2[k] / dn - mean * mean) / (dn - 1.0));
          worst_post = std::max(worst_post, std::abs(mean - exact[k]) / se);
        }
        std::snprintf(label, sizeof label, "%s posterior sample mean at x0=%.2f r=%.2f", c.name, p.x[0], p.r);
        r.check(label, worst_post <= 3.0, fmt("max |diff|/stderr %.2f", worst_post));
      }
      if (!target.single()) {
        bool threw = false;
        Rng rng = Rng::stream(opts.seed, stream++);
        try {
          gaussian_posterior_sample(target, c.probes[0].x, 0.5, rng);
        } catch (const UnsupportedError&) {
          threw = true;
        }
        r.check(std::string(c.name) + ": posterior sampler rejects mixtures", threw);
      }
    }
  });
}

SuiteResult run_theorem1_suite(const SuiteOptions& opts) {
  return timed("theorem1", [&](SuiteResult& r) {
    const GmmTarget target = GmmTarget::gaussian({1.0}, {0.25});
    std::vector<double> hs;
    for (int e = 4; e <= 10; ++e) hs.push_back(std::ldexp(1.0, -e));
    const std::size_t N = opts.full ? 20000 : 4000;
    std::uint64_t stream = 300;
    for (double x0 : {-1.0, 0.0, 2.0}) {
      Rng rng = Rng::stream(opts.seed, stream++);
      const std::vector<double> x{x0};
      const ConvergenceRun run = convergence_curve(target, x, hs, k_inverse_sqrt, N, rng);
      const std::string at = "x=" + fmt("%g", x0) + ": ";
      bool monotone = true;
      std::string mono_detail;
      for (std::size_t i = 1; i < run.rows.size(); ++i) {
        const auto& a = run.rows[i - 1];
        const auto& b = run.rows[i];
        const double noise = 2.0 * std::sqrt(a.stderr_ * a.stderr_ + b.stderr_ * b.stderr_);
        if (b.mse > a.mse + noise) {
          monotone = false;
          mono_detail = fmt2("mse rises %.4g -> %.4g", a.mse, b.mse);
        }
      }
      r.check(at + "error weakly decreasing in h", monotone, mono_detail);
      const double f0sq = run.f0[0] * run.f0[0];
      const double final_mse = run.rows.back().mse;
      const double limit = 0.05 * f0sq + 1e-3;
      r.check(at + "final mse below 0.05 |f0|^2 + 1e-3", final_mse < limit, fmt2("%.4g < %.4g", final_mse, limit));
      for (std::size_t i = 0; i + 2 < run.rows.size(); ++i) {
        const double ratio = run.rows[i].mse / run.rows[i + 2].mse;
        r.check(at + "quartering h=" + fmt("%g", run.rows[i].h) + " ratio in [1.5, 3]", ratio >= 1.5 && ratio <= 3.0,
                fmt("ratio %.3f", ratio));
      }
      const SecondMomentCheck sm = second_moment_check(target, x, hs.back(), k_inverse_sqrt(hs.back()),
                                                       opts.full ? 5000 : 1000, rng);
      r.check(at + "second moment of Y bounded", sm.holds(), fmt2("E|Y|^2 %.4g <= c(x) %.4g", sm.max_moment, sm.bound));
      const TaylorCheck first = euler_taylor_check(target, x, hs.front(), k_inverse_sqrt(hs.front()));
      const TaylorCheck last = euler_taylor_check(target, x, hs.back(), k_inverse_sqrt(hs.back()));
      // Residual / (kh)^2 must not grow as kh shrinks. At the median of X_0
      // the exact flow is a straight line and both residuals are round-off.
      const double c_first = first.residual / (first.kh * first.kh);
      const double c_last = last.residual / (last.kh * last.kh);
      r.check(at + "Euler chain residual is O((kh)^2)", c_last <= 2.0 * c_first + 1e-9,
              fmt2("residual/(kh)^2 %.4g -> %.4g", c_first, c_last));
    }
    const double lip = lipschitz_estimate(target, -3.0, 3.0, 61, {0.0, 0.125, 0.25, 0.375, 0.5});
    const double bound = gaussian_lipschitz_bound(target, 0.5);
    r.check("marginal velocity Lipschitz on the probe box", std::isfinite(lip) && lip <= bound * (1.0 + 1e-3),
            fmt2("estimate %.4g, closed-form bound %.4g", lip, bound));
  });
}

SuiteResult run_marginals_suite(const SuiteOptions& opts) {
  return timed("marginals", [&](SuiteResult& r) {
    const DatasetSpec ds;
    const TargetSampler sampler = [&ds](std::size_t n, Rng& g) { return sample_dataset(ds, n, g); };
    const Scheduler sched{SchedulerKind::uniform, 4};
    const std::size_t N = opts.full ? 10000 : 2000;
    const int resamples = 200;
    const std::vector<MarginalReport> both = marginal_consistency_reports(sampler, sched, N, opts.seed, resamples, {1.0, 2.0});
    const MarginalReport& rep = both[0];
    for (const auto& row : rep.rows)
      r.check("t=" + std::to_string(row.t) + " dependent vs independent below null q95", row.pass,
              fmt2("ED %.3g, threshold %.3g", row.distance.value, row.threshold));
    const MarginalReport& bad = both[1];
    int failing = 0;
    for (const auto& row : bad.rows) failing += row.pass ? 0 : 1;
    r.check("2x noise corruption is detected", !bad.all_pass(),
            std::to_string(failing) + " of " + std::to_string(bad.rows.size()) + " levels fail");
  });
}

namespace {

template <typename S>
Mat<S> hidden_of(const VelocityModel<S>& model, const Mat<S>& tokens, MaskMode mode, int prefix, S time,
                 const MaskBuilder& builder) {
  SequenceBatch<S> seq;
  seq.count = 1;
  seq.length = static_cast<int>(tokens.rows());
  seq.tokens = tokens;
  seq.time = {time};
  seq.mode = mode;
  seq.visible_prefix = prefix;
  seq.mask_override = builder(mode, seq.length, prefix);
  return backbone_forward(model, seq);
}

template <typename S>
bool rows_identical(const Mat<S>& a, const Mat<S>& b, int row) {
  return std::memcmp(a.row(row).data(), b.row(row).data(), sizeof(S) * static_cast<std::size_t>(a.cols())) == 0;
}

void mask_checks(SuiteResult& r, const SuiteOptions& opts, const MaskBuilder& builder) {
  Rng rng = Rng::stream(opts.seed, 400);
  ModelConfig cfg;
  cfg.token_dim = 1;
  cfg.width = 16;
  cfg.head_hidden = 16;
  cfg.time_dim = 4;
  cfg.max_len = 16;
  VelocityModel<float> model(cfg, rng);
  model.randomize(rng, 0.3f);

  bool table_ok = true;
  for (int L = 1; L <= 8; ++L) {
    for (int prefix = 0; prefix <= L; ++prefix) {
      const AttentionMask full = builder(MaskMode::full, L, prefix);
      const AttentionMask ar = builder(MaskMode::artm_causal, L, prefix);
      const AttentionMask fh = builder(MaskMode::fh_causal, L, prefix);
      for (int q = 0; q < L; ++q) {
        for (int k = 0; k < L; ++k) {
          table_ok = table_ok && full(q, k) && ar(q, k) == (k < prefix || k <= q) && fh(q, k) == (k <= q);
        }
      }
    }
  }
  r.check("mask tables match their definitions", table_ok);

  // fh_causal: perturbing position j leaves every earlier output bit-identical.
  const int L = 7;
  Mat<float> tokens(L, 1);
  for (int i = 0; i < L; ++i) tokens(i, 0) = static_cast<float>(rng.normal());
  const Mat<float> base = hidden_of(model, tokens, MaskMode::fh_causal, 0, 0.0f, builder);
  bool causal = true;
  for (int j = 0; j < L; ++j) {
    Mat<float> pert = tokens;
    pert(j, 0) += 1.0f;
    const Mat<float> h = hidden_of(model, pert, MaskMode::fh_causal, 0, 0.0f, builder);
    for (int i = 0; i < j; ++i) causal = causal && rows_identical(base, h, i);
  }
  r.check("fh_causal: outputs before a perturbed position are bit-identical", causal);
  const Mat<float> other_time = hidden_of(model, tokens, MaskMode::fh_causal, 0, 0.7f, builder);
  r.check("fh_causal: backbone ignores the outer time", other_time == base);
  {
    Mat<float> y(1, 1), h = base.row(L - 1);
    y(0, 0) = 0.3f;
    const Mat<float> a = head_velocity(model, y, {0.4f}, {0.1f}, h, true);
    const Mat<float> b = head_velocity(model, y, {0.4f}, {0.9f}, h, true);
    r.check("fh_causal: head receives no outer-time feature", a == b);
  }

  // artm_causal: the x_t block reaches every output; the x_{t+1} prefix is causal.
  const int n = 3;
  const int La = 2 * n - 1;
  Mat<float> at(La, 1);
  for (int i = 0; i < La; ++i) at(i, 0) = static_cast<float>(rng.normal());
  const Mat<float> abase = hidden_of(model, at, MaskMode::artm_causal, n, 0.3f, builder);
  bool reaches = true, prefix_causal = true;
  for (int j = 0; j < La; ++j) {
    Mat<float> pert = at;
    pert(j, 0) += 1.0f;
    const Mat<float> h = hidden_of(model, pert, MaskMode::artm_causal, n, 0.3f, builder);
    if (j < n) {
      for (int i = 0; i < La; ++i) reaches = reaches && !rows_identical(abase, h, i);
    } else {
      for (int i = 0; i < j; ++i) prefix_causal = prefix_causal && rows_identical(abase, h, i);
    }
  }
  r.check("artm_causal: perturbing any x_t token changes every output", reaches);
  r.check("artm_causal: x_{t+1} prefix is strictly causal", prefix_causal);

  // full, positions off: permutation equivariance.
  {
    ModelConfig pc = cfg;
    pc.positions = false;
    VelocityModel<double> pm(pc, rng);
    pm.randomize(rng, 0.3);
    const int Lp = 5;
    Mat<double> tk(Lp, 1);
    for (int i = 0; i < Lp; ++i) tk(i, 0) = rng.normal();
    const std::vector<int> perm{3, 0, 4, 1, 2};
    Mat<double> tp(Lp, 1);
    for (int i = 0; i < Lp; ++i) tp.row(i) = tk.row(perm[static_cast<std::size_t>(i)]);
    const Mat<double> h = hidden_of(pm, tk, MaskMode::full, 0, 0.5, builder);
    const Mat<double> hp = hidden_of(pm, tp, MaskMode::full, 0, 0.5, builder);
    double worst = 0.0;
    for (int i = 0; i < Lp; ++i)
      worst = std::max(worst, (hp.row(i) - h.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff());
    r.check("full: permutation equivariant with positions off", worst <= 1e-12, fmt("max diff %.3g", worst));
  }

  // FHTM: joint teacher-forced losses equal separate per-position passes.
  {
    VariantConfig v;
    v.kind = VariantKind::fhtm;
    v.T = 3;
    v.tokens = 2;
    ModelConfig fc = model_config_for(v, 2, cfg);
    VelocityModel<float> fm(fc, rng);
    fm.randomize(rng, 0.3f);
    Rng data_rng = Rng::stream(opts.seed, 401);
    const Samples data = sample_dataset(DatasetSpec{}, 4, data_rng);
    Batch<float> joint = fhtm_batch(v, data, data_rng);
    joint.seq.mask_override = builder(MaskMode::fh_causal, joint.seq.length, 0);
    const LossResult<float> res = cfm_loss(fm, joint);
    double worst = 0.0;
    for (std::size_t q = 0; q < joint.rows.size(); ++q) {
      const int e = joint.rows[q] / joint.seq.length;
      const int pos = joint.rows[q] % joint.seq.length + 1;
      Batch<float> one;
      one.seq.count = 1;
      one.seq.length = pos;
      one.seq.tokens = joint.seq.tokens.middleRows(static_cast<Eigen::Index>(e) * joint.seq.length, pos);
      one.seq.time = {0.0f};
      one.seq.mode = MaskMode::fh_causal;
      one.seq.mask_override = builder(MaskMode::fh_causal, pos, 0);
      one.rows = {pos - 1};
      one.target = joint.target.row(static_cast<Eigen::Index>(q));
      one.noise = joint.noise.row(static_cast<Eigen::Index>(q));
      one.s = {joint.s[q]};
      one.outer = {joint.outer[q]};
      const double sep = cfm_loss_value(fm, one);
      worst = std::max(worst, std::abs(sep - res.per_query[q]) / std::max(1.0, std::abs(sep)));
    }
    r.check("fhtm: joint per-position losses match separate passes", worst <= 1e-6, fmt("max diff %.3g", worst));
  }
}

}  // namespace

SuiteResult run_masks_suite(const SuiteOptions& opts, const MaskBuilder& builder) {
  return timed("masks", [&](SuiteResult& r) {
    const MaskBuilder use = builder ? builder : MaskBuilder(build_attention_mask);
    mask_checks(r, opts, use);
    if (builder) return;
    // Negative control: one future position leaks into fh_causal.
    const MaskBuilder corrupt = [](MaskMode mode, int length, int prefix) {
      AttentionMask m = build_attention_mask(mode, length, prefix);
      if (mode == MaskMode::fh_causal && length > 3) m.set(2, 3, true);
      return m;
    };
    SuiteResult control;
    control.suite = "masks";
    mask_checks(control, opts, corrupt);
    r.check("corrupted mask is detected by the suite", !control.passed());
  });
}

SuiteResult run_suite(const std::string& name, const SuiteOptions& opts) {
  if (name == "gradcheck") return run_gradcheck_suite(opts);
  if (name == "oracle") return run_oracle_suite(opts);
  if (name == "theorem1") return run_theorem1_suite(opts);
  if (name == "marginals") return run_marginals_suite(opts);
  if (name == "masks") return run_masks_suite(opts);
  throw ConfigError("unknown suite '" + name + "' (gradcheck, oracle, theorem1, marginals, masks)");
}

}  // namespace tmatch
