#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "tm/errors.hpp"
#include "tm/net.hpp"
#include "tm/optim.hpp"
#include "tm/rng.hpp"
#include "tm/toy_data.hpp"
#include "tm/verify.hpp"

using namespace tmatch;

namespace {

ModelConfig tiny(OutputKind output = OutputKind::head) {
  ModelConfig c;
  c.token_dim = 2;
  c.width = 8;
  c.head_hidden = 8;
  c.time_dim = 4;
  c.max_len = 16;
  c.output = output;
  return c;
}

template <typename S>
SequenceBatch<S> random_sequence(const ModelConfig& cfg, int length, MaskMode mode, int prefix, Rng& rng) {
  SequenceBatch<S> b;
  b.count = 1;
  b.length = length;
  b.mode = mode;
  b.visible_prefix = prefix;
  b.tokens.resize(length, cfg.token_dim);
  for (Eigen::Index i = 0; i < b.tokens.size(); ++i) b.tokens.data()[i] = static_cast<S>(rng.normal());
  b.time = {static_cast<S>(0.3)};
  return b;
}

template <typename S>
Batch<S> random_batch(const ModelConfig& cfg, int length, MaskMode mode, int prefix, Rng& rng) {
  Batch<S> b;
  b.seq = random_sequence<S>(cfg, length, mode, prefix, rng);
  for (int l = 0; l < length; ++l) {
    b.rows.push_back(l);
    b.outer.push_back(b.seq.time[0]);
    b.s.push_back(static_cast<S>(rng.uniform()));
  }
  b.target.resize(length, cfg.token_dim);
  b.noise.resize(length, cfg.token_dim);
  for (Eigen::Index i = 0; i < b.target.size(); ++i) {
    b.target.data()[i] = static_cast<S>(rng.normal());
    b.noise.data()[i] = static_cast<S>(rng.normal());
  }
  return b;
}

bool rows_equal(const Mat<float>& a, const Mat<float>& b, int row) {
  return std::memcmp(a.row(row).data(), b.row(row).data(), sizeof(float) * static_cast<std::size_t>(a.cols())) == 0;
}

}  // namespace

TEST_CASE("attention masks") {
  const AttentionMask full = build_attention_mask(MaskMode::full, 5, 0);
  const AttentionMask ar = build_attention_mask(MaskMode::artm_causal, 5, 3);
  const AttentionMask fh = build_attention_mask(MaskMode::fh_causal, 5, 0);
  for (int q = 0; q < 5; ++q)
    for (int k = 0; k < 5; ++k) {
      CHECK(full(q, k));
      CHECK(ar(q, k) == (k < 3 || k <= q));
      CHECK(fh(q, k) == (k <= q));
    }
  CHECK(mask_mode_from_string(to_string(MaskMode::artm_causal)) == MaskMode::artm_causal);
}

TEST_CASE("fh_causal backbone is causal bit for bit") {
  Rng rng = rng_stream(20, 0);
  VelocityModel<float> model(tiny(), rng);
  model.randomize(rng, 0.3f);
  const SequenceBatch<float> base = random_sequence<float>(model.config(), 7, MaskMode::fh_causal, 0, rng);
  const Mat<float> h = backbone_forward(model, base);
  for (int j = 1; j < 7; ++j) {
    SequenceBatch<float> pert = base;
    pert.tokens(j, 0) += 1.5f;
    const Mat<float> hp = backbone_forward(model, pert);
    for (int i = 0; i < j; ++i) CHECK(rows_equal(h, hp, i));
    CHECK_FALSE(rows_equal(h, hp, j));
  }
  SequenceBatch<float> shifted = base;
  shifted.time = {0.9f};
  CHECK(h == backbone_forward(model, shifted));
}

TEST_CASE("artm_causal: x_t block reaches every output") {
  Rng rng = rng_stream(21, 0);
  VelocityModel<float> model(tiny(), rng);
  model.randomize(rng, 0.3f);
  const SequenceBatch<float> base = random_sequence<float>(model.config(), 6, MaskMode::artm_causal, 3, rng);
  const Mat<float> h = backbone_forward(model, base);
  for (int j = 0; j < 3; ++j) {
    SequenceBatch<float> pert = base;
    pert.tokens(j, 1) -= 0.7f;
    const Mat<float> hp = backbone_forward(model, pert);
    for (int i = 0; i < 6; ++i) CHECK_FALSE(rows_equal(h, hp, i));
  }
  SequenceBatch<float> pert = base;
  pert.tokens(5, 0) += 1.0f;
  const Mat<float> hp = backbone_forward(model, pert);
  for (int i = 0; i < 5; ++i) CHECK(rows_equal(h, hp, i));
}

TEST_CASE("full mask is permutation equivariant without positions") {
  ModelConfig cfg = tiny();
  cfg.positions = false;
  Rng rng = rng_stream(22, 0);
  VelocityModel<double> model(cfg, rng);
  model.randomize(rng, 0.3);
  const SequenceBatch<double> base = random_sequence<double>(cfg, 5, MaskMode::full, 0, rng);
  const int perm[] = {3, 0, 4, 1, 2};
  SequenceBatch<double> p = base;
  for (int i = 0; i < 5; ++i) p.tokens.row(i) = base.tokens.row(perm[i]);
  const Mat<double> h = backbone_forward(model, base);
  const Mat<double> hp = backbone_forward(model, p);
  for (int i = 0; i < 5; ++i) CHECK((hp.row(i) - h.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backbone rejects bad lengths") {
  Rng rng = rng_stream(23, 0);
  VelocityModel<float> model(tiny(), rng);
  const SequenceBatch<float> too_long = random_sequence<float>(model.config(), 17, MaskMode::full, 0, rng);
  CHECK_THROWS_AS(backbone_forward(model, too_long), ShapeError);
  SequenceBatch<float> bad = random_sequence<float>(model.config(), 4, MaskMode::artm_causal, 5, rng);
  CHECK_THROWS_AS(backbone_forward(model, bad), ShapeError);
}

TEST_CASE("flow head") {
  Rng rng = rng_stream(24, 0);
  VelocityModel<float> model(tiny(), rng);
  CHECK(model.head_param_count() < model.backbone_param_count());
  CHECK(VelocityModel<float>(ModelConfig{}, rng).head_param_count() * 4 < VelocityModel<float>(ModelConfig{}, rng).backbone_param_count());
  Mat<float> y = Mat<float>::Random(3, 2), hidden = Mat<float>::Random(3, 8);
  const std::vector<float> s{0.1f, 0.5f, 0.9f}, outer{0.2f, 0.4f, 0.6f};
  CHECK(head_velocity(model, y, s, outer, hidden).cwiseAbs().maxCoeff() == 0.0f);

  model.randomize(rng, 0.3f);
  const Mat<float> v = head_velocity(model, y, s, outer, hidden);
  CHECK(v.allFinite());
  CHECK(v == head_velocity(model, y, s, outer, hidden));
  Mat<float> h2 = hidden;
  h2(1, 3) += 0.5f;
  const Mat<float> v2 = head_velocity(model, y, s, outer, h2);
  CHECK_FALSE(rows_equal(v, v2, 1));
  CHECK(rows_equal(v, v2, 0));

  const std::vector<float> other{0.9f, 0.9f, 0.9f};
  CHECK(head_velocity(model, y, s, outer, hidden, true) == head_velocity(model, y, s, other, hidden, true));
  CHECK_FALSE(head_velocity(model, y, s, outer, hidden) == head_velocity(model, y, s, other, hidden));
}

TEST_CASE("cfm loss") {
  Rng rng = rng_stream(25, 0);
  VelocityModel<double> model(tiny(), rng);
  Batch<double> b = random_batch<double>(model.config(), 4, MaskMode::full, 0, rng);
  b.target = b.noise;
  CHECK(cfm_loss(model, b).loss == 0.0);

  Batch<double> c = random_batch<double>(model.config(), 4, MaskMode::full, 0, rng);
  const double expect = (c.target - c.noise).rowwise().squaredNorm().mean();
  CHECK(cfm_loss(model, c).loss == doctest::Approx(expect).epsilon(1e-12));

  model.randomize(rng, 0.3);
  const LossResult<double> r = cfm_loss(model, c);
  CHECK(r.loss > 0.0);
  CHECK(r.loss == doctest::Approx(cfm_loss_value(model, c)).epsilon(1e-12));
  for (double q : r.per_query) CHECK(q >= 0.0);

  Batch<double> nan = c;
  nan.seq.tokens(2, 1) = std::nan("");
  CHECK_THROWS_AS(cfm_loss(model, nan), NumericError);
}

TEST_CASE("gradients match finite differences") {
  Rng rng = rng_stream(26, 0);
  for (auto output : {OutputKind::head, OutputKind::direct}) {
    for (auto mode : {MaskMode::full, MaskMode::artm_causal, MaskMode::fh_causal}) {
      VelocityModel<double> model(tiny(output), rng);
      model.randomize(rng, 0.3);
      const Batch<double> b = random_batch<double>(model.config(), 5, mode, mode == MaskMode::artm_causal ? 3 : 0, rng);
      for (const auto& row : gradcheck(model, b, rng, 10, 1e-5)) {
        INFO(row.tensor);
        CHECK(row.max_rel_error < 1e-4);
      }
    }
  }
  CHECK(gradcheck_relative_error(1.0, 1.0) == 0.0);
  CHECK(gradcheck_relative_error(0.0, 1e-9) < 1e-2);
}

TEST_CASE("ode integration") {
  using M = Mat<double>;
  const M b0 = (M(2, 1) << 1.0, -0.5).finished();
  const auto constant = [](const M& b, double) -> M { return M::Constant(b.rows(), b.cols(), 0.75); };
  const auto zero = [](const M& b, double) -> M { return M::Zero(b.rows(), b.cols()); };
  for (auto solver : {Solver::euler, Solver::midpoint})
    for (int steps : {1, 3, 10}) {
      CHECK((integrate_ode<double>(constant, b0, steps, solver) - (b0.array() + 0.75).matrix()).cwiseAbs().maxCoeff() <
            1e-14);
      CHECK(integrate_ode<double>(zero, b0, steps, solver) == b0);
    }
  const auto decay = [](const M& b, double) -> M { return -b; };
  const M one = M::Constant(1, 1, 1.0);
  for (auto solver : {Solver::euler, Solver::midpoint}) {
    std::vector<double> err;
    for (int steps : {16, 32, 64, 128, 256}) err.push_back(std::abs(integrate_ode<double>(decay, one, steps, solver)(0, 0) - std::exp(-1.0)));
    const double slope = std::log(err.back() / err.front()) / std::log(16.0);
    CHECK(slope == doctest::Approx(solver == Solver::euler ? -1.0 : -2.0).epsilon(0.3 / (solver == Solver::euler ? 1.0 : 2.0)));
    if (solver == Solver::euler)
      for (std::size_t i = 0; i + 1 < err.size(); ++i) CHECK(err[i] / err[i + 1] == doctest::Approx(2.0).epsilon(0.1));
  }
  CHECK_THROWS(integrate_ode<double>(decay, one, 0, Solver::euler));
  const auto blowup = [](const M& b, double) -> M { return M::Constant(b.rows(), b.cols(), std::nan("")); };
  CHECK_THROWS_AS(integrate_ode<double>(blowup, one, 4, Solver::euler), NumericError);
}

TEST_CASE("ode sample from the zero head returns its source draw") {
  Rng init = rng_stream(27, 0);
  VelocityModel<float> model(tiny(), init);
  const Mat<float> hidden = Mat<float>::Random(4, 8);
  Rng a = rng_stream(27, 1), b = rng_stream(27, 1);
  long calls = 0;
  const Mat<float> y = ode_sample(model, hidden, std::vector<float>(4, 0.5f), 3, Solver::euler, a, false, &calls);
  CHECK(calls == 3);
  CHECK(y == ode_sample(model, hidden, std::vector<float>(4, 0.5f), 3, Solver::euler, b));
  Mat<float> src(4, 2);
  Rng c = rng_stream(27, 1);
  for (Eigen::Index i = 0; i < src.size(); ++i) src.data()[i] = static_cast<float>(c.normal());
  CHECK(y == src);
}

TEST_CASE("adam") {
  ParamSet<double> p;
  p.add("w", 2, 2);
  p.tensors[0] << 1.0, -2.0, 0.5, 3.0;
  ParamSet<double> g = p.zeros_like();
  AdamState<double> st = AdamState<double>::for_params(p);
  const ParamSet<double> before = p;
  for (int i = 0; i < 5; ++i) optimizer_step(p, g, st, AdamConfig{});
  CHECK(p.tensors[0] == before.tensors[0]);

  g.tensors[0] << 0.1, -0.3, 2.0, 0.0;
  ParamSet<double> p1 = p, p2 = p;
  AdamState<double> s1 = st, s2 = st;
  optimizer_step(p1, g, s1, AdamConfig{});
  optimizer_step(p2, g, s2, AdamConfig{});
  CHECK(p1.tensors[0] == p2.tensors[0]);
  CHECK(s1.m.tensors[0] == s2.m.tensors[0]);

  ParamSet<double> theta;
  theta.add("theta", 1, 1);
  theta.tensors[0](0, 0) = 1.0;
  AdamState<double> ts = AdamState<double>::for_params(theta);
  AdamConfig cfg;
  cfg.lr = 1e-2;
  double prev = 1.0;
  for (int i = 0; i < 90; ++i) {
    ParamSet<double> grad = theta.zeros_like();
    grad.tensors[0](0, 0) = 2.0 * theta.tensors[0](0, 0);
    optimizer_step(theta, grad, ts, cfg);
    const double now = std::abs(theta.tensors[0](0, 0));
    REQUIRE(now < prev);
    prev = now;
  }
}

TEST_CASE("time features") {
  std::vector<double> a(8), b(8);
  time_features<double>(0.25, 8, a.data());
  time_features<double>(0.25, 8, b.data());
  CHECK(a == b);
  for (double v : a) CHECK(std::abs(v) <= 1.0);
  time_features<double>(0.75, 8, b.data());
  CHECK(a != b);
}
