#include "tm/variants.hpp"

#include <cmath>
#include <numbers>

#include "tm/errors.hpp"
#include "tm/parameterizations.hpp"

namespace tmatch {

std::string to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::dtm: return "dtm";
    case VariantKind::artm: return "artm";
    case VariantKind::fhtm: return "fhtm";
    case VariantKind::fm: return "fm";
  }
  return "?";
}

VariantKind variant_kind_from_string(const std::string& name) {
  if (name == "dtm") return VariantKind::dtm;
  if (name == "artm") return VariantKind::artm;
  if (name == "fhtm") return VariantKind::fhtm;
  if (name == "fm") return VariantKind::fm;
  throw ConfigError("unknown variant '" + name + "'");
}

ProcessKind VariantConfig::default_process() const {
  switch (kind) {
    case VariantKind::artm: return ProcessKind::independent;
    case VariantKind::fhtm: return ProcessKind::full_history;
    default: return ProcessKind::dependent;
  }
}

int VariantConfig::max_sequence_length() const {
  switch (kind) {
    case VariantKind::artm: return 2 * tokens - 1;
    case VariantKind::fhtm: return (T + 1) * tokens - 1;
    default: return tokens;
  }
}

void VariantConfig::validate(int dim) const {
  if (T < 1) throw ConfigError("T must be at least 1");
  if (scheduler == SchedulerKind::exponential && T > kMaxExponentialT)
    throw ConfigError("exponential scheduler needs T <= " + std::to_string(kMaxExponentialT));
  if (tokens < 1) throw ConfigError("tokens must be at least 1");
  if (dim < 1 || dim % tokens != 0) throw ConfigError("dimension must be a positive multiple of tokens");
  if (head_steps < 1) throw ConfigError("head_steps must be at least 1");
  if (continuous_time && kind != VariantKind::dtm) throw ConfigError("continuous_time applies to dtm only");
  const ProcessKind p = effective_process();
  if (p == default_process()) return;
  if (kind == VariantKind::fhtm && p == ProcessKind::independent) return;
  switch (kind) {
    case VariantKind::dtm:
    case VariantKind::fm:
      // The difference latent is only defined on the shared-noise path.
      throw ConfigError(to_string(kind) + " requires the dependent process");
    case VariantKind::artm:
      if (p != ProcessKind::dependent) throw ConfigError("artm takes the independent or dependent process");
      break;
    case VariantKind::fhtm:
      if (p != ProcessKind::dependent) throw ConfigError("fhtm takes the full_history or dependent process");
      break;
  }
  if (!allow_process_override)
    throw ConfigError(to_string(kind) + " with the " + to_string(p) + " process needs allow_process_override");
}

ModelConfig model_config_for(const VariantConfig& variant, int dim, ModelConfig base) {
  variant.validate(dim);
  base.token_dim = dim / variant.tokens;
  base.output = variant.kind == VariantKind::fm ? OutputKind::direct : OutputKind::head;
  if (base.max_len < variant.max_sequence_length()) base.max_len = variant.max_sequence_length();
  base.validate();
  return base;
}

double OptimConfig::lr_at(long step) const {
  if (warmup > 0 && step < warmup) return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (!cosine) return lr;
  const double span = static_cast<double>(std::max(1L, steps - warmup));
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  return lr * (min_lr_ratio + (1.0 - min_lr_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

void LossHistory::push(float loss) {
  if (capacity_ == 0) return;
  if (values_.size() < capacity_) {
    values_.push_back(loss);
  } else {
    values_[head_] = loss;
    head_ = (head_ + 1) % capacity_;
  }
}

std::vector<float> LossHistory::values() const {
  std::vector<float> out;
  out.reserve(values_.size());
  for (std::size_t i = 0; i < values_.size(); ++i) out.push_back(values_[(head_ + i) % values_.size()]);
  return out;
}

double LossHistory::mean_last(std::size_t count) const {
  const auto all = values();
  count = std::min(count, all.size());
  if (count == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = all.size() - count; i < all.size(); ++i) sum += all[i];
  return sum / static_cast<double>(count);
}

TrainState make_train_state(const VariantConfig& variant, int dim, const OptimConfig& optim, std::uint64_t seed,
                            const ModelConfig& base) {
  const ModelConfig cfg = model_config_for(variant, dim, base);
  if (optim.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(optim.lr > 0.0)) throw ConfigError("lr must be positive");
  Rng init = Rng::stream(seed, 0);
  VelocityModel<float> model(cfg, init);
  auto opt = AdamState<float>::for_params(model.params());
  AdamConfig adam;
  adam.lr = optim.lr;
  return TrainState{variant, optim, adam, std::move(model), std::move(opt), 0, seed, Rng::stream(seed, 1), LossHistory{}};
}

namespace {

void check_data(const VariantConfig& v, const Samples& data) {
  if (data.rows() < 1) throw ShapeError("empty data batch");
  v.validate(static_cast<int>(data.cols()));
}

State row_state(const Samples& data, Eigen::Index e, int tokens) {
  return State(std::vector<double>(data.row(e).data(), data.row(e).data() + data.cols()), tokens);
}

template <typename Src>
void copy_token(const Src& src, Eigen::Index dst_row, Mat<float>& dst) {
  for (std::size_t c = 0; c < src.size(); ++c) dst(dst_row, static_cast<Eigen::Index>(c)) = static_cast<float>(src[c]);
}

void fill_normal(Mat<float>& m, Eigen::Index row, Rng& rng) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) m(row, c) = static_cast<float>(rng.normal());
}

void allocate(Batch<float>& b, int count, int length, int queries, int p) {
  b.seq.count = count;
  b.seq.length = length;
  b.seq.tokens.resize(static_cast<Eigen::Index>(count) * length, p);
  b.seq.time.assign(static_cast<std::size_t>(count), 0.0f);
  b.rows.resize(static_cast<std::size_t>(queries));
  b.target.resize(queries, p);
  b.noise.resize(queries, p);
  b.s.resize(static_cast<std::size_t>(queries));
  b.outer.resize(static_cast<std::size_t>(queries));
}

}  // namespace

Batch<float> dtm_batch(const VariantConfig& v, const Samples& data, Rng& rng) {
  check_data(v, data);
  const int E = static_cast<int>(data.rows());
  const int n = v.tokens;
  const int p = static_cast<int>(data.cols()) / n;
  const Scheduler sched = v.sched();
  Batch<float> b;
  allocate(b, E, n, E * n, p);
  b.seq.mode = MaskMode::full;
  for (int e = 0; e < E; ++e) {
    const ProcessSample ps = draw_process_sample(ProcessKind::dependent, row_state(data, e, n), sched,
                                                 v.continuous_time, rng);
    b.seq.time[static_cast<std::size_t>(e)] = static_cast<float>(ps.ratio);
    for (int i = 0; i < n; ++i) {
      const int q = e * n + i;
      copy_token(ps.x_t.token(i), q, b.seq.tokens);
      b.rows[static_cast<std::size_t>(q)] = q;
      copy_token(ps.y.token(i), q, b.target);
      fill_normal(b.noise, q, rng);
      b.s[static_cast<std::size_t>(q)] = static_cast<float>(rng.uniform());
      b.outer[static_cast<std::size_t>(q)] = static_cast<float>(ps.ratio);
    }
  }
  return b;
}

Batch<float> fm_batch(const VariantConfig& v, const Samples& data, Rng& rng) {
  check_data(v, data);
  const int E = static_cast<int>(data.rows());
  const int n = v.tokens;
  const int p = static_cast<int>(data.cols()) / n;
  const Scheduler sched = v.sched();
  Batch<float> b;
  allocate(b, E, n, E * n, p);
  b.seq.mode = MaskMode::full;
  b.noise.setZero();
  for (int e = 0; e < E; ++e) {
    // Continuous ratio so one model serves every Euler grid.
    const ProcessSample ps = draw_process_sample(ProcessKind::dependent, row_state(data, e, n), sched, true, rng);
    b.seq.time[static_cast<std::size_t>(e)] = static_cast<float>(ps.ratio);
    for (int i = 0; i < n; ++i) {
      const int q = e * n + i;
      copy_token(ps.x_t.token(i), q, b.seq.tokens);
      b.rows[static_cast<std::size_t>(q)] = q;
      copy_token(ps.y.token(i), q, b.target);
      b.s[static_cast<std::size_t>(q)] = 0.0f;
      b.outer[static_cast<std::size_t>(q)] = static_cast<float>(ps.ratio);
    }
  }
  return b;
}

Batch<float> artm_batch(const VariantConfig& v, const Samples& data, Rng& rng) {
  check_data(v, data);
  const int E = static_cast<int>(data.rows());
  const int n = v.tokens;
  const int p = static_cast<int>(data.cols()) / n;
  const int L = 2 * n - 1;
  const Scheduler sched = v.sched();
  const bool dependent = v.effective_process() == ProcessKind::dependent;
  Batch<float> b;
  allocate(b, E, L, E * n, p);
  b.seq.mode = MaskMode::artm_causal;
  b.seq.visible_prefix = n;
  for (int e = 0; e < E; ++e) {
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(v.T)));
    const State xT = row_state(data, e, n);
    State x_t, x_next;
    if (dependent) {
      LinearTriple tr = linear_pair(xT, t, sched, rng);
      x_t = std::move(tr.x_t);
      x_next = std::move(tr.x_next);
    } else {
      IndependentPair pr = independent_linear_pair(xT, t, sched, rng);
      x_t = std::move(pr.x_t);
      x_next = std::move(pr.x_next);
    }
    const float r = static_cast<float>(sched.ratio(t));
    b.seq.time[static_cast<std::size_t>(e)] = r;
    const Eigen::Index base = static_cast<Eigen::Index>(e) * L;
    for (int i = 0; i < n; ++i) copy_token(x_t.token(i), base + i, b.seq.tokens);
    for (int i = 0; i + 1 < n; ++i) copy_token(x_next.token(i), base + n + i, b.seq.tokens);
    for (int i = 0; i < n; ++i) {
      const int q = e * n + i;
      b.rows[static_cast<std::size_t>(q)] = static_cast<int>(base) + n - 1 + i;
      copy_token(x_next.token(i), q, b.target);
      fill_normal(b.noise, q, rng);
      b.s[static_cast<std::size_t>(q)] = static_cast<float>(rng.uniform());
      b.outer[static_cast<std::size_t>(q)] = r;
    }
  }
  return b;
}

Batch<float> fhtm_batch(const VariantConfig& v, const Samples& data, Rng& rng) {
  check_data(v, data);
  const int E = static_cast<int>(data.rows());
  const int n = v.tokens;
  const int T = v.T;
  const int p = static_cast<int>(data.cols()) / n;
  const int L = (T + 1) * n - 1;
  const Scheduler sched = v.sched();
  const bool dependent = v.effective_process() == ProcessKind::dependent;
  Batch<float> b;
  allocate(b, E, L, E * n * T, p);
  b.seq.mode = MaskMode::fh_causal;
  for (int e = 0; e < E; ++e) {
    const State xT = row_state(data, e, n);
    std::vector<State> history;
    if (dependent) {
      const State x0 = draw_noise(xT, rng);
      for (int t = 0; t <= T; ++t) history.push_back(t == T ? xT : interpolate(x0, xT, sched.ratio(t)));
    } else {
      history = full_history_sample(xT, sched, rng);
    }
    const Eigen::Index base = static_cast<Eigen::Index>(e) * L;
    for (int pos = 0; pos < L; ++pos) copy_token(history[static_cast<std::size_t>(pos / n)].token(pos % n), base + pos, b.seq.tokens);
    for (int t = 0; t < T; ++t) {
      const float r = static_cast<float>(sched.ratio(t));
      for (int i = 0; i < n; ++i) {
        const int q = (e * T + t) * n + i;
        const int pos = (t + 1) * n + i;
        b.rows[static_cast<std::size_t>(q)] = static_cast<int>(base) + pos - 1;
        copy_token(history[static_cast<std::size_t>(t + 1)].token(i), q, b.target);
        fill_normal(b.noise, q, rng);
        b.s[static_cast<std::size_t>(q)] = static_cast<float>(rng.uniform());
        b.outer[static_cast<std::size_t>(q)] = r;
      }
    }
  }
  return b;
}

Batch<float> make_batch(const VariantConfig& v, const Samples& data, Rng& rng) {
  switch (v.kind) {
    case VariantKind::dtm: return dtm_batch(v, data, rng);
    case VariantKind::artm: return artm_batch(v, data, rng);
    case VariantKind::fhtm: return fhtm_batch(v, data, rng);
    case VariantKind::fm: return fm_batch(v, data, rng);
  }
  throw ConfigError("unknown variant");
}

namespace {

float apply_step(TrainState& st, const Batch<float>& batch) {
  LossResult<float> res = cfm_loss(st.model, batch);
  if (!std::isfinite(res.loss)) throw NumericError("non-finite training loss", st.step);
  optimizer_step(st.model.params(), res.grads, st.opt, st.adam, st.optim.lr_at(st.step));
  if (!st.model.params().all_finite()) throw NumericError("non-finite parameter after optimizer step", st.step);
  ++st.step;
  st.history.push(res.loss);
  return res.loss;
}

void require_kind(const TrainState& st, VariantKind kind) {
  if (st.variant.kind != kind) throw ConfigError("train step does not match the configured variant");
}

}  // namespace

float dtm_train_step(TrainState& st, const Samples& data) {
  require_kind(st, VariantKind::dtm);
  return apply_step(st, dtm_batch(st.variant, data, st.rng));
}

float artm_train_step(TrainState& st, const Samples& data) {
  require_kind(st, VariantKind::artm);
  return apply_step(st, artm_batch(st.variant, data, st.rng));
}

float fhtm_train_step(TrainState& st, const Samples& data) {
  require_kind(st, VariantKind::fhtm);
  return apply_step(st, fhtm_batch(st.variant, data, st.rng));
}

float fm_train_step(TrainState& st, const Samples& data) {
  require_kind(st, VariantKind::fm);
  return apply_step(st, fm_batch(st.variant, data, st.rng));
}

float train_step(TrainState& st, const Samples& data) {
  return apply_step(st, make_batch(st.variant, data, st.rng));
}

namespace {

Samples normal_samples(int count, int dim, Rng& rng) {
  Samples x(count, dim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return x;
}

void check_model(const VelocityModel<float>& model, const VariantConfig& v, int dim, OutputKind output) {
  v.validate(dim);
  const ModelConfig& c = model.config();
  if (c.output != output) throw ConfigError("model output kind does not match the variant");
  if (c.token_dim * v.tokens != dim) throw ShapeError("model token size does not match the variant");
  if (c.max_len < v.max_sequence_length()) throw ShapeError("model max_len shorter than the variant's sequences");
}

void check_finite(const Samples& x, int t) {
  if (!x.allFinite()) throw NumericError("non-finite state in sampling chain", t);
}

// Rows of `hidden` at the last position of every sequence.
Mat<float> last_rows(const Mat<float>& hidden, int count, int length) {
  Mat<float> out(count, hidden.cols());
  for (int e = 0; e < count; ++e) out.row(e) = hidden.row(static_cast<Eigen::Index>(e) * length + length - 1);
  return out;
}

SequenceBatch<float> whole_state_sequence(const Samples& x, int tokens, double ratio) {
  SequenceBatch<float> seq;
  seq.count = static_cast<int>(x.rows());
  seq.length = tokens;
  const Eigen::Index p = x.cols() / tokens;
  seq.tokens = Eigen::Map<const Samples>(x.data(), x.rows() * tokens, p).cast<float>();
  seq.time.assign(static_cast<std::size_t>(seq.count), static_cast<float>(ratio));
  seq.mode = MaskMode::full;
  return seq;
}

Samples to_states(const Mat<float>& tokens, int count, int dim) {
  return Eigen::Map<const Mat<float>>(tokens.data(), count, dim).cast<double>();
}

}  // namespace

Samples dtm_posterior_sample(const VelocityModel<float>& model, const VariantConfig& v, const Samples& x,
                             double ratio, Rng& rng, SampleStats* stats) {
  const int dim = static_cast<int>(x.cols());
  check_model(model, v, dim, OutputKind::head);
  const int count = static_cast<int>(x.rows());
  const SequenceBatch<float> seq = whole_state_sequence(x, v.tokens, ratio);
  const Mat<float> hidden = backbone_forward(model, seq);
  long head_calls = 0;
  const std::vector<float> outer(static_cast<std::size_t>(count) * v.tokens, static_cast<float>(ratio));
  const Mat<float> y = ode_sample(model, hidden, outer, v.head_steps, v.solver, rng, false, &head_calls);
  if (stats) {
    stats->backbone_calls += 1;
    stats->head_calls += head_calls;
  }
  return to_states(y, count, dim);
}

Samples dtm_chain(const PosteriorFn& posterior, const Scheduler& sched, int dim, int count, Rng& rng) {
  Samples x = normal_samples(count, dim, rng);
  for (int t = 0; t < sched.T; ++t) {
    const Samples y = posterior(x, t, sched.ratio(t), rng);
    if (y.rows() != x.rows() || y.cols() != x.cols()) throw ShapeError("posterior returned the wrong shape");
    x += sched.step(t) * y;
    check_finite(x, t);
  }
  return x;
}

Samples dtm_sample(const VelocityModel<float>& model, const VariantConfig& v, int dim, int count, Rng& rng,
                   SampleStats* stats) {
  if (v.kind != VariantKind::dtm) throw ConfigError("dtm_sample needs a dtm config");
  check_model(model, v, dim, OutputKind::head);
  return dtm_chain(
      [&](const Samples& x, int, double r, Rng& g) { return dtm_posterior_sample(model, v, x, r, g, stats); },
      v.sched(), dim, count, rng);
}

Samples artm_sample(const VelocityModel<float>& model, const VariantConfig& v, int dim, int count, Rng& rng,
                    SampleStats* stats) {
  if (v.kind != VariantKind::artm) throw ConfigError("artm_sample needs an artm config");
  check_model(model, v, dim, OutputKind::head);
  const int n = v.tokens;
  const int p = dim / n;
  const Scheduler sched = v.sched();
  Samples x = normal_samples(count, dim, rng);
  for (int t = 0; t < sched.T; ++t) {
    const double r = sched.ratio(t);
    Samples next = Samples::Zero(count, dim);
    for (int i = 0; i < n; ++i) {
      SequenceBatch<float> seq;
      seq.count = count;
      seq.length = n + i;
      seq.tokens.resize(static_cast<Eigen::Index>(count) * seq.length, p);
      for (int e = 0; e < count; ++e) {
        const Eigen::Index base = static_cast<Eigen::Index>(e) * seq.length;
        for (int j = 0; j < n; ++j) seq.tokens.row(base + j) = x.row(e).segment(j * p, p).cast<float>();
        for (int j = 0; j < i; ++j) seq.tokens.row(base + n + j) = next.row(e).segment(j * p, p).cast<float>();
      }
      seq.time.assign(static_cast<std::size_t>(count), static_cast<float>(r));
      seq.mode = MaskMode::artm_causal;
      seq.visible_prefix = n;
      const Mat<float> hidden = last_rows(backbone_forward(model, seq), count, seq.length);
      long head_calls = 0;
      const std::vector<float> outer(static_cast<std::size_t>(count), static_cast<float>(r));
      const Mat<float> tok = ode_sample(model, hidden, outer, v.head_steps, v.solver, rng, false, &head_calls);
      if (stats) {
        stats->backbone_calls += 1;
        stats->head_calls += head_calls;
      }
      next.middleCols(i * p, p) = tok.cast<double>();
    }
    x = std::move(next);
    check_finite(x, t);
  }
  return x;
}

Samples fhtm_sample(const VelocityModel<float>& model, const VariantConfig& v, int dim, int count, Rng& rng,
                    SampleStats* stats) {
  if (v.kind != VariantKind::fhtm) throw ConfigError("fhtm_sample needs an fhtm config");
  check_model(model, v, dim, OutputKind::head);
  const int n = v.tokens;
  const int p = dim / n;
  const Scheduler sched = v.sched();
  std::vector<Samples> history{normal_samples(count, dim, rng)};
  for (int t = 0; t < sched.T; ++t) {
    const double r = sched.ratio(t);
    Samples next = Samples::Zero(count, dim);
    for (int i = 0; i < n; ++i) {
      SequenceBatch<float> seq;
      seq.count = count;
      seq.length = (t + 1) * n + i;
      seq.tokens.resize(static_cast<Eigen::Index>(count) * seq.length, p);
      for (int e = 0; e < count; ++e) {
        Eigen::Index row = static_cast<Eigen::Index>(e) * seq.length;
        for (const Samples& level : history)
          for (int j = 0; j < n; ++j) seq.tokens.row(row++) = level.row(e).segment(j * p, p).cast<float>();
        for (int j = 0; j < i; ++j) seq.tokens.row(row++) = next.row(e).segment(j * p, p).cast<float>();
      }
      seq.time.assign(static_cast<std::size_t>(count), 0.0f);
      seq.mode = MaskMode::fh_causal;
      const Mat<float> hidden = last_rows(backbone_forward(model, seq), count, seq.length);
      long head_calls = 0;
      const std::vector<float> outer(static_cast<std::size_t>(count), static_cast<float>(r));
      const Mat<float> tok = ode_sample(model, hidden, outer, v.head_steps, v.solver, rng, true, &head_calls);
      if (stats) {
        stats->backbone_calls += 1;
        stats->head_calls += head_calls;
      }
      next.middleCols(i * p, p) = tok.cast<double>();
    }
    check_finite(next, t);
    history.push_back(std::move(next));
  }
  return history.back();
}

Samples fm_velocity(const VelocityModel<float>& model, const VariantConfig& v, const Samples& x, double ratio) {
  const int dim = static_cast<int>(x.cols());
  check_model(model, v, dim, OutputKind::direct);
  const Mat<float> hidden = backbone_forward(model, whole_state_sequence(x, v.tokens, ratio));
  return to_states(direct_velocity(model, hidden), static_cast<int>(x.rows()), dim);
}

Samples euler_transport(const VelocityFn& velocity, const Scheduler& sched, int dim, int count, Rng& rng) {
  Samples x = normal_samples(count, dim, rng);
  for (int t = 0; t < sched.T; ++t) {
    const Samples u = velocity(x, sched.ratio(t));
    if (u.rows() != x.rows() || u.cols() != x.cols()) throw ShapeError("velocity returned the wrong shape");
    x += sched.step(t) * u;
    check_finite(x, t);
  }
  return x;
}

Samples fm_sample(const VelocityModel<float>& model, const VariantConfig& v, int dim, int count, Rng& rng,
                  SampleStats* stats) {
  if (v.kind != VariantKind::fm) throw ConfigError("fm_sample needs an fm config");
  check_model(model, v, dim, OutputKind::direct);
  return euler_transport(
      [&](const Samples& x, double r) {
        if (stats) stats->backbone_calls += 1;
        return fm_velocity(model, v, x, r);
      },
      v.sched(), dim, count, rng);
}

Samples sample(const VelocityModel<float>& model, const VariantConfig& v, int dim, int count, Rng& rng,
               SampleStats* stats) {
  switch (v.kind) {
    case VariantKind::dtm: return dtm_sample(model, v, dim, count, rng, stats);
    case VariantKind::artm: return artm_sample(model, v, dim, count, rng, stats);
    case VariantKind::fhtm: return fhtm_sample(model, v, dim, count, rng, stats);
    case VariantKind::fm: return fm_sample(model, v, dim, count, rng, stats);
  }
  throw ConfigError("unknown variant");
}

}  // namespace tmatch
