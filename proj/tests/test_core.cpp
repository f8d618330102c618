#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "tm/errors.hpp"
#include "tm/eval.hpp"
#include "tm/parameterizations.hpp"
#include "tm/processes.hpp"
#include "tm/rng.hpp"
#include "tm/toy_data.hpp"

using namespace tmatch;

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a = Rng::stream(42, 7), b = Rng::stream(42, 7), c = Rng::stream(42, 8);
  std::set<std::uint64_t> seen;
  bool all_same = true, any_diff = false;
  for (int i = 0; i < 10000; ++i) {
    const auto x = a.next(), y = b.next(), z = c.next();
    all_same = all_same && x == y;
    any_diff = any_diff || x != z;
    seen.insert(x);
    seen.insert(z);
  }
  CHECK(all_same);
  CHECK(any_diff);
  CHECK(seen.size() == 20000);
}

TEST_CASE("rng normal moments") {
  Rng r = rng_stream(3, 0);
  const std::size_t N = 1000000;
  std::vector<double> v(N);
  for (auto& x : v) x = r.normal();
  const auto m = testing::moments(v);
  CHECK(std::abs(m.mean) < 5.0 / std::sqrt(static_cast<double>(N)));
  CHECK(std::abs(m.var - 1.0) < 5.0 * std::sqrt(2.0 / static_cast<double>(N)));
  Rng u = rng_stream(3, 1);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
    REQUIRE(u.below(5) < 5);
  }
}

TEST_CASE("scheduler ratios") {
  CHECK(scheduler_ratio(Scheduler{SchedulerKind::uniform, 32}, 16) == 0.5);
  CHECK(scheduler_ratio(Scheduler{SchedulerKind::exponential, 3}, 2) == 0.75);
  CHECK(scheduler_ratio(Scheduler{SchedulerKind::exponential, 3}, 1) == 0.5);
  CHECK(scheduler_ratio(Scheduler{SchedulerKind::exponential, 3}, 3) == 1.0);
  for (auto kind : {SchedulerKind::uniform, SchedulerKind::exponential})
    for (int T : {1, 2, 3, 7, 54}) {
      const Scheduler s{kind, T};
      CHECK(s.ratio(0) == 0.0);
      CHECK(s.ratio(T) == 1.0);
      for (int i = 0; i < T; ++i) CHECK(s.ratio(i) < s.ratio(i + 1));
    }
  CHECK_THROWS_AS(scheduler_ratio(Scheduler{SchedulerKind::uniform, 4}, 5), RangeError);
  CHECK_THROWS_AS(scheduler_ratio(Scheduler{SchedulerKind::exponential, 55}, 1), RangeError);
  CHECK(scheduler_ratio(Scheduler{SchedulerKind::uniform, 4096}, 1) > 0.0);
  CHECK_THROWS_AS(scheduler_ratio(Scheduler{SchedulerKind::uniform, 4}, -1), RangeError);
}

TEST_CASE("linear pair") {
  const Scheduler s{SchedulerKind::uniform, 2};
  const State xT({2.0}, 1);
  const LinearTriple tr = linear_pair_with_noise(xT, 1, s, State({0.0}, 1));
  CHECK(tr.x_t[0] == 1.0);
  CHECK(tr.x_next[0] == 2.0);

  Rng rng = rng_stream(1, 0);
  const Scheduler e{SchedulerKind::exponential, 5};
  const State big({0.3, -1.2, 4.0, 2.5}, 2);
  for (int t = 0; t < e.T; ++t) {
    const LinearTriple p = linear_pair(big, t, e, rng);
    if (t == 0) CHECK(p.x_t == p.x0);
    for (int c = 0; c < big.dim(); ++c)
      CHECK(p.x_next[c] - p.x_t[c] == doctest::Approx(e.step(t) * (big[c] - p.x0[c])).epsilon(1e-14));
  }
}

TEST_CASE("independent linear pair") {
  const Scheduler s{SchedulerKind::uniform, 4};
  Rng rng = rng_stream(2, 0);
  const State xT({1.5, -0.5}, 2);
  const IndependentPair last = independent_linear_pair(xT, 3, s, rng);
  CHECK(last.x_next == xT);

  const std::size_t N = 100000;
  double sxy = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const IndependentPair p = independent_linear_pair(xT, 1, s, rng);
    const double x = p.noise_t[0], y = p.noise_next[0];
    sx += x, sy += y, sxy += x * y, sxx += x * x, syy += y * y;
  }
  const double n = static_cast<double>(N);
  const double cov = sxy / n - sx / n * sy / n;
  const double corr = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
  CHECK(std::abs(corr) < 4.0 / std::sqrt(n));
}

TEST_CASE("independent and dependent marginals agree") {
  const DatasetSpec ds;
  const Scheduler s{SchedulerKind::uniform, 4};
  const std::size_t N = 2000;
  Rng rng = rng_stream(5, 0);
  const Samples data = sample_dataset(ds, 2 * N, rng);
  Samples dep(N, 2), ind(N, 2);
  for (std::size_t i = 0; i < N; ++i) {
    const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(N + i);
    const LinearTriple p = linear_pair(State({data(a, 0), data(a, 1)}, 2), 2, s, rng);
    const IndependentPair q = independent_linear_pair(State({data(b, 0), data(b, 1)}, 2), 2, s, rng);
    dep.row(a) << p.x_t[0], p.x_t[1];
    ind.row(a) << q.x_t[0], q.x_t[1];
  }
  Rng boot = rng_stream(5, 1);
  const EdStats ed = energy_distance_stats(dep, ind, boot);
  const TargetSampler same = [&](std::size_t n, Rng& g) {
    const Samples d = sample_dataset(ds, n, g);
    Samples out(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      const LinearTriple p = linear_pair(State({d(i, 0), d(i, 1)}, 2), 2, s, g);
      out.row(i) << p.x_t[0], p.x_t[1];
    }
    return out;
  };
  Rng null_rng = rng_stream(5, 2);
  CHECK(ed.value <= null_threshold(same, N, N, null_rng, 100, 0.99));
}

TEST_CASE("full history") {
  const Scheduler s{SchedulerKind::uniform, 3};
  const State xT({0.7, -0.1}, 2);
  Rng rng = rng_stream(4, 0);
  const auto h = full_history_sample(xT, s, rng);
  CHECK(h.size() == 4);
  CHECK(h.back() == xT);

  const std::size_t N = 10000;
  Samples first(N, 2), fresh(N, 2);
  for (std::size_t i = 0; i < N; ++i) {
    const auto hist = full_history_sample(xT, s, rng);
    first.row(static_cast<Eigen::Index>(i)) << hist[0][0], hist[0][1];
    fresh.row(static_cast<Eigen::Index>(i)) << rng.normal(), rng.normal();
  }
  Rng boot = rng_stream(4, 1);
  const EdStats ed = energy_distance_stats(first, fresh, boot);
  CHECK(ed.value <= 3.0 * ed.stderr_ + 1e-12);
}

TEST_CASE("process samples") {
  const Scheduler s{SchedulerKind::uniform, 4};
  const State xT({1.0, 2.0}, 2);
  Rng rng = rng_stream(6, 0);
  for (auto kind : {ProcessKind::dependent, ProcessKind::independent, ProcessKind::full_history}) {
    const ProcessSample p = draw_process_sample(kind, xT, s, false, rng);
    CHECK(p.t >= 0);
    CHECK(p.t < s.T);
    CHECK(p.y.same_shape(p.x_t));
    if (kind == ProcessKind::full_history) {
      REQUIRE(p.history.has_value());
      CHECK(p.history->size() == static_cast<std::size_t>(p.t + 1));
    }
  }
  const ProcessSample c = draw_process_sample(ProcessKind::dependent, xT, s, true, rng);
  CHECK(c.ratio >= 0.0);
  CHECK(c.ratio < 1.0);
}

TEST_CASE("difference latent and reconstruction") {
  const State x0({0.0, 1.0}, 2), xT({2.0, 1.0}, 2);
  CHECK(difference_latent(xT, xT) == State::zeros(2, 2));
  CHECK(difference_latent(x0, xT) == State({2.0, 0.0}, 2));
  CHECK(dtm_reconstruct(x0, difference_latent(x0, xT), Scheduler{SchedulerKind::uniform, 1}, 0) == xT);
  CHECK(dtm_reconstruct(State({1.0}, 1), State({0.5}, 1), Scheduler{SchedulerKind::uniform, 2}, 0)[0] == 1.25);
  CHECK(dtm_reconstruct(x0, State::zeros(2, 2), Scheduler{SchedulerKind::uniform, 8}, 3) == x0);
  CHECK_THROWS_AS(difference_latent(State({1.0}, 1), xT), ShapeError);

  const State c({5.0, -3.0}, 2);
  State x0c = x0, xTc = xT;
  for (int i = 0; i < 2; ++i) x0c[i] += c[i], xTc[i] += c[i];
  CHECK(difference_latent(x0c, xTc) == difference_latent(x0, xT));

  const State a({0.25, -1.0, 3.0, 0.0}, 4), b({1.0, 0.5, -2.0, 0.125}, 4);
  const Scheduler u{SchedulerKind::uniform, 8};
  State x = a;
  for (int t = 0; t < u.T; ++t) x = dtm_reconstruct(x, difference_latent(a, b), u, t);
  CHECK(x == b);
}

TEST_CASE("dtm reconstruction reproduces the dependent process") {
  Rng rng = rng_stream(8, 0);
  for (auto kind : {SchedulerKind::uniform, SchedulerKind::exponential}) {
    const Scheduler s{kind, 6};
    const State xT({0.4, -2.0}, 2);
    for (int t = 0; t < s.T; ++t) {
      const LinearTriple p = linear_pair(xT, t, s, rng);
      const State rec = dtm_reconstruct(p.x_t, difference_latent(p.x0, xT), s, t);
      for (int c = 0; c < 2; ++c) CHECK(rec[c] == doctest::Approx(p.x_next[c]).epsilon(1e-14));
    }
  }
}

TEST_CASE("next state latent") {
  const State x({1.0, 2.0, 3.0}, 3);
  CHECK(next_state_latent(x) == x);
  CHECK(next_state_reconstruct(State({9.0, 9.0, 9.0}, 3), x) == x);
  Rng rng = rng_stream(9, 0);
  const IndependentPair p = independent_linear_pair(x, 0, Scheduler{SchedulerKind::uniform, 3}, rng);
  CHECK(next_state_reconstruct(p.x_t, next_state_latent(p.x_next)) == p.x_next);
  CHECK(compatible(LatentKind::difference, ProcessKind::dependent));
  CHECK_FALSE(compatible(LatentKind::difference, ProcessKind::independent));
  CHECK(compatible(LatentKind::next_state, ProcessKind::independent));
  CHECK(compatible(LatentKind::next_state, ProcessKind::full_history));
  CHECK_FALSE(compatible(LatentKind::next_state, ProcessKind::dependent));
}

TEST_CASE("toy datasets") {
  Rng a = rng_stream(10, 0), b = rng_stream(10, 0);
  const DatasetSpec gmm8;
  const Samples x = sample_dataset(gmm8, 1000, a);
  CHECK(testing::bit_equal(x, sample_dataset(gmm8, 1000, b)));
  CHECK(x.rowwise().norm().maxCoeff() <= 2.0 + 6 * 0.1);

  const std::size_t N = 100000;
  const Samples big = sample_dataset(gmm8, N, a);
  for (int c = 0; c < 2; ++c) {
    const Eigen::ArrayXd col = big.col(c).array();
    const double mean = col.mean();
    const double se = std::sqrt((col - mean).square().sum() / static_cast<double>(N - 1) / static_cast<double>(N));
    CHECK(std::abs(mean) < 3.0 * se);
  }
  for (const char* name : {"gmm8", "two_moons", "checkerboard", "ring", "gauss1d(1,0.5)"}) {
    const DatasetSpec spec = parse_dataset(name);
    CHECK(to_string(spec) == name);
    const Samples s = sample_dataset(spec, 5000, a);
    CHECK(s.cols() == spec.dimension());
    CHECK(s.allFinite());
    CHECK(s.rowwise().norm().maxCoeff() <= spec.support_radius());
  }
  CHECK_THROWS_AS(parse_dataset("spiral"), ConfigError);
  CHECK_THROWS_AS(sample_dataset(gmm8, 0, a), Error);

  std::stringstream csv;
  write_samples_csv(csv, x);
  CHECK(csv.str().rfind("dim_0,dim_1\n", 0) == 0);
  CHECK(testing::bit_equal(read_samples_csv(csv), x));
}
