#include <doctest.h>

#include "helpers.hpp"
#include "tm/errors.hpp"
#include "tm/oracle.hpp"
#include "tm/toy_data.hpp"

using namespace tmatch;

namespace {

GmmTarget standard() { return GmmTarget::gaussian({0.0}, {1.0}); }

TargetSampler sampler_of(const GmmTarget& g) {
  return [g](std::size_t n, Rng& rng) { return g.sample(n, rng); };
}

}  // namespace

TEST_CASE("closed-form velocity") {
  const GmmTarget g = standard();
  for (double x : {-3.0, -0.5, 0.0, 2.0}) {
    const double xs[] = {x};
    CHECK(gmm_marginal_velocity(g, xs, 0.5)[0] == doctest::Approx(0.0).epsilon(1e-15));
    const double r = 0.3;
    CHECK(gmm_marginal_velocity(g, xs, r)[0] ==
          doctest::Approx((2 * r - 1) * x / ((1 - r) * (1 - r) + r * r)).epsilon(1e-12));
  }
  const double one[] = {1.0};
  CHECK(gmm_marginal_velocity(g, one, 0.75)[0] == doctest::Approx(0.8).epsilon(1e-12));

  const GmmTarget m({{0.3, {1.0, -1.0}, {0.2, 0.5}}, {0.7, {-2.0, 0.5}, {0.1, 0.3}}});
  const double p[] = {0.4, -0.2};
  const auto u0 = gmm_marginal_velocity(m, p, 0.0);
  const auto mean = m.mean();
  CHECK(u0[0] == doctest::Approx(mean[0] - p[0]).epsilon(1e-12));
  CHECK(u0[1] == doctest::Approx(mean[1] - p[1]).epsilon(1e-12));
  CHECK_THROWS_AS(gmm_marginal_velocity(g, one, 1.0), DomainError);
}

TEST_CASE("closed-form velocity matches Monte Carlo") {
  const GmmTarget g = GmmTarget::gaussian({1.0}, {0.25});
  Rng rng = rng_stream(11, 0);
  for (double r : {0.2, 0.6}) {
    const double x[] = {0.5};
    const McEstimate mc = mc_conditional_expectation(sampler_of(g), x, r, 0.05, 400000, rng);
    CHECK(std::abs(mc.value[0] - gmm_marginal_velocity(g, x, r)[0]) < 3.0 * mc.stderr_[0]);
  }
}

TEST_CASE("posterior sampler") {
  const GmmTarget g = GmmTarget::gaussian({1.0, -2.0}, {0.5, 2.0});
  Rng rng = rng_stream(12, 0);
  const double x[] = {0.3, 0.9};
  const std::size_t N = 100000;
  for (double r : {0.0, 0.4, 0.9}) {
    std::vector<double> a(N), b(N);
    for (std::size_t i = 0; i < N; ++i) {
      const auto y = gaussian_posterior_sample(g, x, r, rng);
      a[i] = y[0];
      b[i] = y[1];
    }
    const auto u = gmm_marginal_velocity(g, x, r);
    const auto ma = testing::moments(a), mb = testing::moments(b);
    CHECK(std::abs(ma.mean - u[0]) < 3.0 * std::sqrt(ma.var / N));
    CHECK(std::abs(mb.mean - u[1]) < 3.0 * std::sqrt(mb.var / N));
    if (r == 0.0) {
      CHECK(ma.var == doctest::Approx(0.5).epsilon(0.03));
      CHECK(mb.var == doctest::Approx(2.0).epsilon(0.03));
    }
  }
  std::vector<double> v(N);
  for (auto& y : v) y = gaussian_posterior_sample(g, x, 1.0, rng)[0];
  const auto m1 = testing::moments(v);
  CHECK(std::abs(m1.mean - x[0]) < 3.0 * std::sqrt(1.0 / N));
  CHECK(m1.var == doctest::Approx(1.0).epsilon(0.03));

  const GmmTarget mix({{0.5, {1.0}, {0.1}}, {0.5, {-1.0}, {0.1}}});
  const double p[] = {0.0};
  CHECK_THROWS_AS(gaussian_posterior_sample(mix, p, 0.5, rng), UnsupportedError);
}

TEST_CASE("Monte Carlo estimator") {
  const GmmTarget sym({{0.5, {1.5}, {0.2}}, {0.5, {-1.5}, {0.2}}});
  Rng rng = rng_stream(13, 0);
  const double zero[] = {0.0};
  const McEstimate e = mc_conditional_expectation(sampler_of(sym), zero, 0.6, 0.05, 200000, rng);
  CHECK(std::abs(e.value[0]) < 3.0 * e.stderr_[0]);

  const GmmTarget g = standard();
  const double x[] = {0.7};
  const McEstimate small = mc_conditional_expectation(sampler_of(g), x, 0.5, 0.05, 100000, rng);
  const McEstimate large = mc_conditional_expectation(sampler_of(g), x, 0.5, 0.05, 200000, rng);
  const double ratio = small.stderr_[0] / large.stderr_[0];
  CHECK(ratio == doctest::Approx(std::sqrt(2.0)).epsilon(0.2));

  const double far[] = {40.0};
  CHECK_THROWS_AS(mc_conditional_expectation(sampler_of(g), far, 0.5, 0.01, 1000, rng), InsufficientDataError);
  CHECK_THROWS_AS(mc_conditional_expectation(sampler_of(g), x, 0.5, 0.0, 1000, rng), Error);
}

TEST_CASE("gmm target from datasets") {
  const GmmTarget g = GmmTarget::from_dataset(DatasetSpec{});
  CHECK(g.components().size() == 8);
  double w = 0.0;
  for (const auto& c : g.components()) w += c.weight;
  CHECK(w == doctest::Approx(1.0));
  const GmmTarget h = GmmTarget::from_dataset(parse_dataset("gauss1d(1,0.5)"));
  CHECK(h.single());
  CHECK(h.components()[0].variance[0] == doctest::Approx(0.25));
  CHECK_THROWS(GmmTarget({{-1.0, {0.0}, {1.0}}}));
  CHECK_THROWS(GmmTarget({{1.0, {0.0}, {0.0}}}));
}
