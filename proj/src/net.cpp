#include "tm/net.hpp"

#include <cmath>
#include <limits>

#include "tm/errors.hpp"

namespace tmatch {

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::full: return "full";
    case MaskMode::artm_causal: return "artm_causal";
    case MaskMode::fh_causal: return "fh_causal";
  }
  return "?";
}

MaskMode mask_mode_from_string(const std::string& name) {
  if (name == "full") return MaskMode::full;
  if (name == "artm_causal") return MaskMode::artm_causal;
  if (name == "fh_causal") return MaskMode::fh_causal;
  throw ConfigError("unknown mask mode '" + name + "'");
}

std::string to_string(Solver solver) { return solver == Solver::euler ? "euler" : "midpoint"; }

Solver solver_from_string(const std::string& name) {
  if (name == "euler") return Solver::euler;
  if (name == "midpoint") return Solver::midpoint;
  throw ConfigError("unknown solver '" + name + "'");
}

AttentionMask build_attention_mask(MaskMode mode, int length, int visible_prefix) {
  if (length < 1) throw ShapeError("attention over an empty sequence");
  AttentionMask mask;
  mask.length = length;
  mask.allowed.assign(static_cast<std::size_t>(length * length), 0);
  for (int q = 0; q < length; ++q) {
    for (int k = 0; k < length; ++k) {
      bool visible = true;
      switch (mode) {
        case MaskMode::full: visible = true; break;
        case MaskMode::artm_causal: visible = k < visible_prefix || k <= q; break;
        case MaskMode::fh_causal: visible = k <= q; break;
      }
      mask.set(q, k, visible);
    }
  }
  return mask;
}

void ModelConfig::validate() const {
  if (token_dim < 1) throw ConfigError("token_dim must be >= 1");
  if (width < 2) throw ConfigError("width must be >= 2");
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
  if (head_depth < 3 || head_depth > 6) throw ConfigError("head_depth must be in [3, 6]");
  if (head_hidden < 1) throw ConfigError("head_hidden must be >= 1");
  if (time_dim < 2 || time_dim % 2 != 0) throw ConfigError("time_dim must be even and >= 2");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
}

template <typename S>
void time_features(S ratio, int dim, S* out) {
  const int half = dim / 2;
  const double top = std::log(256.0);
  for (int k = 0; k < half; ++k) {
    const double freq = half > 1 ? std::exp(top * k / (half - 1)) : 1.0;
    const double arg = freq * static_cast<double>(ratio);
    out[k] = static_cast<S>(std::sin(arg));
    out[half + k] = static_cast<S>(std::cos(arg));
  }
}

// ---------------------------------------------------------------- ParamSet

template <typename S>
int ParamSet<S>::add(std::string name, int rows, int cols) {
  names.push_back(std::move(name));
  tensors.push_back(Mat<S>::Zero(rows, cols));
  return static_cast<int>(tensors.size()) - 1;
}

template <typename S>
int ParamSet<S>::find(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

template <typename S>
std::size_t ParamSet<S>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

template <typename S>
ParamSet<S> ParamSet<S>::zeros_like() const {
  ParamSet out;
  out.names = names;
  out.tensors.reserve(tensors.size());
  for (const auto& t : tensors) out.tensors.push_back(Mat<S>::Zero(t.rows(), t.cols()));
  return out;
}

template <typename S>
void ParamSet<S>::set_zero() {
  for (auto& t : tensors) t.setZero();
}

template <typename S>
bool ParamSet<S>::all_finite() const {
  for (const auto& t : tensors) {
    if (!t.allFinite()) return false;
  }
  return true;
}

// ---------------------------------------------------------------- model

template <typename S>
VelocityModel<S>::VelocityModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  build_layout();
}

template <typename S>
VelocityModel<S>::VelocityModel(const ModelConfig& config, Rng& init_rng) : VelocityModel(config) {
  auto truncated = [&init_rng]() {
    for (;;) {
      const double z = init_rng.normal();
      if (std::abs(z) <= 2.0) return static_cast<S>(0.02 * z);
    }
  };
  for (std::size_t i = 0; i < params_.tensors.size(); ++i) {
    const std::string& name = params_.names[i];
    auto& t = params_.tensors[i];
    const bool is_bias = name.ends_with(".bias");
    const bool is_gain = name.ends_with(".gain");
    if (is_gain) {
      t.setOnes();
    } else if (is_bias) {
      t.setZero();
    } else {
      for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = truncated();
    }
  }
  // Training starts from the zero velocity field.
  if (config_.output == OutputKind::head) {
    params_.tensors[static_cast<std::size_t>(index_.head_w.back())].setZero();
  } else {
    params_.tensors[static_cast<std::size_t>(index_.out_w)].setZero();
  }
}

template <typename S>
void VelocityModel<S>::build_layout() {
  const int p = config_.token_dim;
  const int w = config_.width;
  const int mw = config_.width * config_.mlp_ratio;
  auto& ps = params_;
  index_.in_w = ps.add("backbone.embed.weight", p, w);
  index_.in_b = ps.add("backbone.embed.bias", 1, w);
  if (config_.positions) index_.pos = ps.add("backbone.pos", config_.max_len, w);
  index_.time_w = ps.add("backbone.time.weight", config_.time_dim, w);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string pre = "backbone.layer" + std::to_string(l) + ".";
    LayerIndex li{};
    li.ln1_g = ps.add(pre + "ln1.gain", 1, w);
    li.ln1_b = ps.add(pre + "ln1.bias", 1, w);
    li.wq = ps.add(pre + "attn.q", w, w);
    li.wk = ps.add(pre + "attn.k", w, w);
    li.wv = ps.add(pre + "attn.v", w, w);
    li.wo = ps.add(pre + "attn.o", w, w);
    li.bo = ps.add(pre + "attn.o.bias", 1, w);
    li.ln2_g = ps.add(pre + "ln2.gain", 1, w);
    li.ln2_b = ps.add(pre + "ln2.bias", 1, w);
    li.w1 = ps.add(pre + "mlp.fc1.weight", w, mw);
    li.b1 = ps.add(pre + "mlp.fc1.bias", 1, mw);
    li.w2 = ps.add(pre + "mlp.fc2.weight", mw, w);
    li.b2 = ps.add(pre + "mlp.fc2.bias", 1, w);
    index_.layers.push_back(li);
  }
  index_.lnf_g = ps.add("backbone.ln_final.gain", 1, w);
  index_.lnf_b = ps.add("backbone.ln_final.bias", 1, w);
  if (config_.output == OutputKind::head) {
    int in = head_input_dim();
    for (int k = 0; k < config_.head_depth; ++k) {
      const int out = k + 1 == config_.head_depth ? p : config_.head_hidden;
      const std::string pre = "head.fc" + std::to_string(k) + ".";
      index_.head_w.push_back(ps.add(pre + "weight", in, out));
      index_.head_b.push_back(ps.add(pre + "bias", 1, out));
      in = out;
    }
  } else {
    index_.out_w = ps.add("out.weight", w, p);
    index_.out_b = ps.add("out.bias", 1, p);
  }
}

template <typename S>
std::size_t VelocityModel<S>::backbone_param_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < params_.names.size(); ++i) {
    if (params_.names[i].starts_with("backbone.")) n += static_cast<std::size_t>(params_.tensors[i].size());
  }
  return n;
}

template <typename S>
std::size_t VelocityModel<S>::head_param_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < params_.names.size(); ++i) {
    if (params_.names[i].starts_with("head.")) n += static_cast<std::size_t>(params_.tensors[i].size());
  }
  return n;
}

template <typename S>
void VelocityModel<S>::randomize(Rng& rng, S stddev) {
  for (auto& t : params_.tensors) {
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = static_cast<S>(stddev * rng.normal());
  }
}

template <typename S>
template <typename T>
VelocityModel<T> VelocityModel<S>::cast() const {
  VelocityModel<T> out(config_);
  for (std::size_t i = 0; i < params_.tensors.size(); ++i) {
    out.params().tensors[i] = params_.tensors[i].template cast<T>();
  }
  return out;
}

template <typename S>
AttentionMask SequenceBatch<S>::mask() const {
  if (mask_override) {
    if (mask_override->length != length) throw ShapeError("mask override length mismatch");
    return *mask_override;
  }
  return build_attention_mask(mode, length, visible_prefix);
}

// ---------------------------------------------------------------- kernels

namespace {

constexpr double kNormEps = 1e-5;

template <typename S>
S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

template <typename S>
void layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, Mat<S>& xhat, std::vector<S>& rstd,
                Mat<S>& y) {
  const Eigen::Index n = x.rows();
  const Eigen::Index w = x.cols();
  xhat.resize(n, w);
  y.resize(n, w);
  rstd.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mean = x.row(i).mean();
    const S var = (x.row(i).array() - mean).square().mean();
    const S r = S(1) / std::sqrt(var + static_cast<S>(kNormEps));
    rstd[static_cast<std::size_t>(i)] = r;
    xhat.row(i) = (x.row(i).array() - mean) * r;
    y.row(i) = xhat.row(i).cwiseProduct(gain) + bias;
  }
}

template <typename S>
void layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const std::vector<S>& rstd, const Mat<S>& gain,
                         Mat<S>& dx, Mat<S>& dgain, Mat<S>& dbias) {
  const Eigen::Index n = dy.rows();
  const Eigen::Index w = dy.cols();
  dx.resize(n, w);
  dgain += dy.cwiseProduct(xhat).colwise().sum();
  dbias += dy.colwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto dxhat = dy.row(i).cwiseProduct(gain);
    const S m1 = dxhat.mean();
    const S m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
    dx.row(i) = (dxhat.array() - m1 - xhat.row(i).array() * m2) * rstd[static_cast<std::size_t>(i)];
  }
}

template <typename S>
Mat<S> sigmoid_of(const Mat<S>& z) {
  return (S(1) + (-z.array()).exp()).inverse().matrix();
}

// In place: dz <- dz * silu'(z), with gate = sigmoid(z).
template <typename S>
void silu_backward(const Mat<S>& z, const Mat<S>& gate, Mat<S>& dz) {
  dz.array() *= gate.array() * (S(1) + z.array() * (S(1) - gate.array()));
}

// Masked softmax attention over `count` independent sequences of length L.
// Sequences are short, so this works row by row instead of through GEMM.
template <typename S>
void attention_forward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, const AttentionMask& mask, int count,
                       int L, S scale, Mat<S>& probs, Mat<S>& out) {
  std::vector<S> row(static_cast<std::size_t>(L));
  for (int e = 0; e < count; ++e) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(e) * L;
    for (int i = 0; i < L; ++i) {
      S top = -std::numeric_limits<S>::infinity();
      for (int j = 0; j < L; ++j) {
        if (!mask(i, j)) continue;
        const S sc = q.row(r0 + i).dot(k.row(r0 + j)) * scale;
        row[static_cast<std::size_t>(j)] = sc;
        top = std::max(top, sc);
      }
      S total = 0;
      for (int j = 0; j < L; ++j) {
        S p = 0;
        if (mask(i, j)) p = std::exp(row[static_cast<std::size_t>(j)] - top);
        row[static_cast<std::size_t>(j)] = p;
        total += p;
      }
      for (int j = 0; j < L; ++j) {
        const S p = row[static_cast<std::size_t>(j)] / total;
        probs(r0 + i, j) = p;
        if (p != S(0)) out.row(r0 + i) += p * v.row(r0 + j);
      }
    }
  }
}

template <typename S>
void attention_backward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, const Mat<S>& probs, const Mat<S>& d_out,
                        int count, int L, S scale, Mat<S>& dq, Mat<S>& dk, Mat<S>& dv) {
  dq.setZero(q.rows(), q.cols());
  dk.setZero(k.rows(), k.cols());
  dv.setZero(v.rows(), v.cols());
  std::vector<S> dp(static_cast<std::size_t>(L));
  for (int e = 0; e < count; ++e) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(e) * L;
    for (int i = 0; i < L; ++i) {
      S inner = 0;
      for (int j = 0; j < L; ++j) {
        const S p = probs(r0 + i, j);
        S g = 0;
        if (p != S(0)) {
          g = d_out.row(r0 + i).dot(v.row(r0 + j));
          dv.row(r0 + j) += p * d_out.row(r0 + i);
        }
        dp[static_cast<std::size_t>(j)] = g;
        inner += p * g;
      }
      for (int j = 0; j < L; ++j) {
        const S p = probs(r0 + i, j);
        if (p == S(0)) continue;
        const S ds = p * (dp[static_cast<std::size_t>(j)] - inner) * scale;
        dq.row(r0 + i) += ds * k.row(r0 + j);
        dk.row(r0 + j) += ds * q.row(r0 + i);
      }
    }
  }
}

}  // namespace

template <typename S>
struct BackboneTape {
  struct Layer {
    Mat<S> x_in, a_hat, a, q, k, v, probs, o, x_mid, b_hat, b, z, gate, m;
    std::vector<S> rstd1, rstd2;
  };
  Mat<S> time_feats;
  std::vector<Layer> layers;
  Mat<S> x_final, f_hat, h;
  std::vector<S> rstd_f;
  AttentionMask mask;
};

namespace {

template <typename S>
void check_sequence(const VelocityModel<S>& model, const SequenceBatch<S>& batch) {
  const auto& cfg = model.config();
  if (batch.count < 1 || batch.length < 1) throw ShapeError("empty sequence batch");
  if (batch.tokens.rows() != static_cast<Eigen::Index>(batch.count) * batch.length ||
      batch.tokens.cols() != cfg.token_dim) {
    throw ShapeError("sequence tokens are " + std::to_string(batch.tokens.rows()) + "x" +
                     std::to_string(batch.tokens.cols()) + ", expected " +
                     std::to_string(batch.count * batch.length) + "x" + std::to_string(cfg.token_dim));
  }
  if (static_cast<int>(batch.time.size()) != batch.count) throw ShapeError("one outer time per sequence required");
  if (cfg.positions && batch.length > cfg.max_len) {
    throw ShapeError("sequence length " + std::to_string(batch.length) + " exceeds max_len " +
                     std::to_string(cfg.max_len));
  }
  if (batch.mode == MaskMode::artm_causal && (batch.visible_prefix < 1 || batch.visible_prefix > batch.length)) {
    throw ShapeError("artm_causal needs 1 <= visible_prefix <= length");
  }
}

template <typename S>
Mat<S> run_backbone(const VelocityModel<S>& model, const SequenceBatch<S>& batch, BackboneTape<S>& tape) {
  check_sequence(model, batch);
  const auto& cfg = model.config();
  const auto& P = model.params().tensors;
  const auto& ix = model.index();
  const int L = batch.length;
  const int w = cfg.width;
  const S scale = S(1) / std::sqrt(static_cast<S>(w));

  tape.mask = batch.mask();
  tape.time_feats = Mat<S>::Zero(batch.count, cfg.time_dim);
  if (batch.mode != MaskMode::fh_causal) {
    for (int e = 0; e < batch.count; ++e) {
      time_features(batch.time[static_cast<std::size_t>(e)], cfg.time_dim, tape.time_feats.row(e).data());
    }
  }
  Mat<S> time_emb;
  time_emb.noalias() = tape.time_feats * P[ix.time_w];

  Mat<S> x;
  x.noalias() = batch.tokens * P[ix.in_w];
  x.rowwise() += P[ix.in_b].row(0);
  for (int e = 0; e < batch.count; ++e) {
    for (int l = 0; l < L; ++l) {
      auto row = x.row(static_cast<Eigen::Index>(e) * L + l);
      if (cfg.positions) row += P[ix.pos].row(l);
      row += time_emb.row(e);
    }
  }

  tape.layers.resize(ix.layers.size());
  for (std::size_t li = 0; li < ix.layers.size(); ++li) {
    const auto& id = ix.layers[li];
    auto& t = tape.layers[li];
    t.x_in = x;
    layer_norm(x, P[id.ln1_g], P[id.ln1_b], t.a_hat, t.rstd1, t.a);
    t.q.noalias() = t.a * P[id.wq];
    t.k.noalias() = t.a * P[id.wk];
    t.v.noalias() = t.a * P[id.wv];
    t.probs.resize(static_cast<Eigen::Index>(batch.count) * L, L);
    t.o.setZero(t.q.rows(), w);
    attention_forward(t.q, t.k, t.v, tape.mask, batch.count, L, scale, t.probs, t.o);
    x.noalias() += t.o * P[id.wo];
    x.rowwise() += P[id.bo].row(0);
    t.x_mid = x;
    layer_norm(x, P[id.ln2_g], P[id.ln2_b], t.b_hat, t.rstd2, t.b);
    t.z.noalias() = t.b * P[id.w1];
    t.z.rowwise() += P[id.b1].row(0);
    t.gate = sigmoid_of(t.z);
    t.m = t.z.cwiseProduct(t.gate);
    x.noalias() += t.m * P[id.w2];
    x.rowwise() += P[id.b2].row(0);
  }
  tape.x_final = x;
  layer_norm(x, P[ix.lnf_g], P[ix.lnf_b], tape.f_hat, tape.rstd_f, tape.h);
  return tape.h;
}

template <typename S>
void backbone_backward(const VelocityModel<S>& model, const SequenceBatch<S>& batch, const BackboneTape<S>& tape,
                       const Mat<S>& dh, ParamSet<S>& grads) {
  const auto& cfg = model.config();
  const auto& P = model.params().tensors;
  auto& G = grads.tensors;
  const auto& ix = model.index();
  const int L = batch.length;
  const S scale = S(1) / std::sqrt(static_cast<S>(cfg.width));

  Mat<S> dx;
  layer_norm_backward(dh, tape.f_hat, tape.rstd_f, P[ix.lnf_g], dx, G[ix.lnf_g], G[ix.lnf_b]);

  Mat<S> tmp;
  for (std::size_t li = ix.layers.size(); li-- > 0;) {
    const auto& id = ix.layers[li];
    const auto& t = tape.layers[li];
    // MLP branch
    G[id.w2].noalias() += t.m.transpose() * dx;
    G[id.b2] += dx.colwise().sum();
    Mat<S> dz;
    dz.noalias() = dx * P[id.w2].transpose();
    silu_backward(t.z, t.gate, dz);
    G[id.w1].noalias() += t.b.transpose() * dz;
    G[id.b1] += dz.colwise().sum();
    Mat<S> db;
    db.noalias() = dz * P[id.w1].transpose();
    layer_norm_backward(db, t.b_hat, t.rstd2, P[id.ln2_g], tmp, G[id.ln2_g], G[id.ln2_b]);
    dx += tmp;

    // attention branch
    G[id.wo].noalias() += t.o.transpose() * dx;
    G[id.bo] += dx.colwise().sum();
    Mat<S> d_o;
    d_o.noalias() = dx * P[id.wo].transpose();
    Mat<S> dq, dk, dv;
    attention_backward(t.q, t.k, t.v, t.probs, d_o, batch.count, L, scale, dq, dk, dv);
    G[id.wq].noalias() += t.a.transpose() * dq;
    G[id.wk].noalias() += t.a.transpose() * dk;
    G[id.wv].noalias() += t.a.transpose() * dv;
    Mat<S> da;
    da.noalias() = dq * P[id.wq].transpose();
    da.noalias() += dk * P[id.wk].transpose();
    da.noalias() += dv * P[id.wv].transpose();
    layer_norm_backward(da, t.a_hat, t.rstd1, P[id.ln1_g], tmp, G[id.ln1_g], G[id.ln1_b]);
    dx += tmp;
  }

  // embedding
  G[ix.in_w].noalias() += batch.tokens.transpose() * dx;
  G[ix.in_b] += dx.colwise().sum();
  Mat<S> per_seq = Mat<S>::Zero(batch.count, cfg.width);
  for (int e = 0; e < batch.count; ++e) {
    for (int l = 0; l < L; ++l) {
      const auto row = dx.row(static_cast<Eigen::Index>(e) * L + l);
      if (cfg.positions) G[ix.pos].row(l) += row;
      per_seq.row(e) += row;
    }
  }
  G[ix.time_w].noalias() += tape.time_feats.transpose() * per_seq;
}

template <typename S>
struct HeadTape {
  Mat<S> input;
  std::vector<Mat<S>> pre;   // pre-activation of each layer
  std::vector<Mat<S>> post;  // input of each layer (post[0] = input)
};

template <typename S>
Mat<S> run_head(const VelocityModel<S>& model, const Mat<S>& y, const std::vector<S>& s, const std::vector<S>& outer,
                const Mat<S>& hidden, bool zero_outer, HeadTape<S>* tape) {
  const auto& cfg = model.config();
  if (cfg.output != OutputKind::head) throw ConfigError("model has no flow head");
  const auto& P = model.params().tensors;
  const auto& ix = model.index();
  const Eigen::Index q = y.rows();
  if (y.cols() != cfg.token_dim || hidden.rows() != q || hidden.cols() != cfg.width ||
      static_cast<Eigen::Index>(s.size()) != q || static_cast<Eigen::Index>(outer.size()) != q) {
    throw ShapeError("head inputs disagree on query count or width");
  }
  const int p = cfg.token_dim;
  const int dt = cfg.time_dim;
  Mat<S> z(q, model.head_input_dim());
  z.leftCols(p) = y;
  z.block(0, p + dt, q, dt).setZero();
  for (Eigen::Index i = 0; i < q; ++i) {
    time_features(s[static_cast<std::size_t>(i)], dt, z.row(i).data() + p);
    if (!zero_outer) time_features(outer[static_cast<std::size_t>(i)], dt, z.row(i).data() + p + dt);
  }
  z.rightCols(cfg.width) = hidden;
  if (tape) {
    tape->pre.clear();
    tape->post.clear();
  }
  const int depth = static_cast<int>(ix.head_w.size());
  for (int k = 0; k < depth; ++k) {
    Mat<S> pre;
    pre.noalias() = z * P[ix.head_w[static_cast<std::size_t>(k)]];
    pre.rowwise() += P[ix.head_b[static_cast<std::size_t>(k)]].row(0);
    if (tape) {
      tape->post.push_back(z);
      tape->pre.push_back(pre);
    }
    if (k + 1 < depth) {
      z = pre.cwiseProduct(sigmoid_of(pre));
    } else {
      z = std::move(pre);
    }
  }
  return z;
}

// Returns d(loss)/d(hidden) for the head's queries.
template <typename S>
Mat<S> head_backward(const VelocityModel<S>& model, const HeadTape<S>& tape, const Mat<S>& dout, ParamSet<S>& grads) {
  const auto& cfg = model.config();
  const auto& P = model.params().tensors;
  auto& G = grads.tensors;
  const auto& ix = model.index();
  const int depth = static_cast<int>(ix.head_w.size());
  Mat<S> dpre = dout;
  Mat<S> dz;
  for (int k = depth - 1; k >= 0; --k) {
    const auto kk = static_cast<std::size_t>(k);
    G[ix.head_w[kk]].noalias() += tape.post[kk].transpose() * dpre;
    G[ix.head_b[kk]] += dpre.colwise().sum();
    dz.noalias() = dpre * P[ix.head_w[kk]].transpose();
    if (k > 0) {
      const Mat<S>& pre = tape.pre[kk - 1];
      silu_backward(pre, sigmoid_of(pre), dz);
      dpre = std::move(dz);
    }
  }
  return dz.rightCols(cfg.width);
}

}  // namespace

template <typename S>
Mat<S> backbone_forward(const VelocityModel<S>& model, const SequenceBatch<S>& batch) {
  BackboneTape<S> tape;
  return run_backbone(model, batch, tape);
}

template <typename S>
Mat<S> head_velocity(const VelocityModel<S>& model, const Mat<S>& y, const std::vector<S>& s,
                     const std::vector<S>& outer, const Mat<S>& hidden, bool zero_outer) {
  for (S v : s) {
    if (!(v >= S(0) && v <= S(1))) throw RangeError("inner time outside [0, 1]");
  }
  return run_head<S>(model, y, s, outer, hidden, zero_outer, nullptr);
}

template <typename S>
Mat<S> direct_velocity(const VelocityModel<S>& model, const Mat<S>& hidden) {
  if (model.config().output != OutputKind::direct) throw ConfigError("model has no direct read-out");
  const auto& P = model.params().tensors;
  Mat<S> out = hidden * P[model.index().out_w];
  out.rowwise() += P[model.index().out_b].row(0);
  return out;
}

template <typename S>
void Batch<S>::validate(const ModelConfig& config) const {
  const auto q = static_cast<Eigen::Index>(rows.size());
  if (q < 1) throw ShapeError("batch has no queries");
  if (target.rows() != q || noise.rows() != q || target.cols() != config.token_dim ||
      noise.cols() != config.token_dim || static_cast<Eigen::Index>(s.size()) != q ||
      static_cast<Eigen::Index>(outer.size()) != q) {
    throw ShapeError("batch query arrays disagree in length");
  }
  const Eigen::Index limit = static_cast<Eigen::Index>(seq.count) * seq.length;
  for (int r : rows) {
    if (r < 0 || r >= limit) throw ShapeError("query row outside the sequence batch");
  }
  for (S v : s) {
    if (!(v >= S(0) && v <= S(1))) throw RangeError("inner time outside [0, 1]");
  }
}

namespace {

template <typename S>
S forward_loss(const VelocityModel<S>& model, const Batch<S>& batch, BackboneTape<S>& btape, HeadTape<S>* htape,
               Mat<S>& resid, std::vector<S>& per_query) {
  batch.validate(model.config());
  const Mat<S> h = run_backbone(model, batch.seq, btape);
  const auto q = static_cast<Eigen::Index>(batch.rows.size());
  Mat<S> hq(q, h.cols());
  for (Eigen::Index i = 0; i < q; ++i) hq.row(i) = h.row(batch.rows[static_cast<std::size_t>(i)]);
  Mat<S> pred;
  if (model.config().output == OutputKind::head) {
    Mat<S> ys(q, batch.target.cols());
    for (Eigen::Index i = 0; i < q; ++i) {
      const S s = batch.s[static_cast<std::size_t>(i)];
      ys.row(i) = (S(1) - s) * batch.noise.row(i) + s * batch.target.row(i);
    }
    pred = run_head(model, ys, batch.s, batch.outer, hq, batch.seq.mode == MaskMode::fh_causal, htape);
  } else {
    pred = direct_velocity(model, hq);
    if (htape) htape->input = hq;
  }
  resid = pred - (batch.target - batch.noise);
  per_query.resize(static_cast<std::size_t>(q));
  S total = 0;
  for (Eigen::Index i = 0; i < q; ++i) {
    const S v = resid.row(i).squaredNorm();
    if (!std::isfinite(v)) throw NumericError("non-finite CFM residual", static_cast<long>(i));
    per_query[static_cast<std::size_t>(i)] = v;
    total += v;
  }
  return total / static_cast<S>(q);
}

}  // namespace

template <typename S>
LossResult<S> cfm_loss(const VelocityModel<S>& model, const Batch<S>& batch) {
  BackboneTape<S> btape;
  HeadTape<S> htape;
  Mat<S> resid;
  LossResult<S> out;
  out.loss = forward_loss(model, batch, btape, &htape, resid, out.per_query);
  out.grads = model.params().zeros_like();

  const auto q = static_cast<Eigen::Index>(batch.rows.size());
  const Mat<S> dpred = resid * (S(2) / static_cast<S>(q));
  Mat<S> dhq;
  if (model.config().output == OutputKind::head) {
    dhq = head_backward(model, htape, dpred, out.grads);
  } else {
    auto& G = out.grads.tensors;
    const auto& ix = model.index();
    G[ix.out_w].noalias() += htape.input.transpose() * dpred;
    G[ix.out_b] += dpred.colwise().sum();
    dhq = dpred * model.params().tensors[ix.out_w].transpose();
  }
  Mat<S> dh = Mat<S>::Zero(btape.h.rows(), btape.h.cols());
  for (Eigen::Index i = 0; i < q; ++i) dh.row(batch.rows[static_cast<std::size_t>(i)]) += dhq.row(i);
  backbone_backward(model, batch.seq, btape, dh, out.grads);
  return out;
}

template <typename S>
S cfm_loss_value(const VelocityModel<S>& model, const Batch<S>& batch) {
  BackboneTape<S> btape;
  Mat<S> resid;
  std::vector<S> per_query;
  return forward_loss<S>(model, batch, btape, nullptr, resid, per_query);
}

template <typename S>
Mat<S> integrate_ode(const std::function<Mat<S>(const Mat<S>&, S)>& field, Mat<S> b, int steps, Solver solver) {
  if (steps < 1) throw RangeError("ODE integration needs at least one step");
  const S ds = S(1) / static_cast<S>(steps);
  for (int k = 0; k < steps; ++k) {
    const S s = static_cast<S>(k) * ds;
    if (solver == Solver::euler) {
      b += ds * field(b, s);
    } else {
      const Mat<S> mid = b + (ds / S(2)) * field(b, s);
      b += ds * field(mid, s + ds / S(2));
    }
    if (!b.allFinite()) throw NumericError("non-finite ODE state", k);
  }
  return b;
}

template <typename S>
Mat<S> ode_sample(const VelocityModel<S>& model, const Mat<S>& hidden, const std::vector<S>& outer, int steps,
                  Solver solver, Rng& rng, bool zero_outer, long* head_calls) {
  const Eigen::Index q = hidden.rows();
  Mat<S> b0(q, model.config().token_dim);
  for (Eigen::Index k = 0; k < b0.size(); ++k) b0.data()[k] = static_cast<S>(rng.normal());
  std::vector<S> s_vec(static_cast<std::size_t>(q));
  auto field = [&](const Mat<S>& b, S s) {
    std::fill(s_vec.begin(), s_vec.end(), std::min(s, S(1)));
    if (head_calls) ++*head_calls;
    return run_head<S>(model, b, s_vec, outer, hidden, zero_outer, nullptr);
  };
  return integrate_ode<S>(field, std::move(b0), steps, solver);
}

#define TM_INSTANTIATE(S)                                                                                       \
  template void time_features<S>(S, int, S*);                                                                  \
  template struct ParamSet<S>;                                                                                  \
  template class VelocityModel<S>;                                                                              \
  template struct SequenceBatch<S>;                                                                             \
  template struct Batch<S>;                                                                                     \
  template Mat<S> backbone_forward<S>(const VelocityModel<S>&, const SequenceBatch<S>&);                        \
  template Mat<S> head_velocity<S>(const VelocityModel<S>&, const Mat<S>&, const std::vector<S>&,               \
                                   const std::vector<S>&, const Mat<S>&, bool);                                 \
  template Mat<S> direct_velocity<S>(const VelocityModel<S>&, const Mat<S>&);                                   \
  template LossResult<S> cfm_loss<S>(const VelocityModel<S>&, const Batch<S>&);                                 \
  template S cfm_loss_value<S>(const VelocityModel<S>&, const Batch<S>&);                                       \
  template Mat<S> integrate_ode<S>(const std::function<Mat<S>(const Mat<S>&, S)>&, Mat<S>, int, Solver);        \
  template Mat<S> ode_sample<S>(const VelocityModel<S>&, const Mat<S>&, const std::vector<S>&, int, Solver, Rng&, \
                                bool, long*);

TM_INSTANTIATE(float)
TM_INSTANTIATE(double)

template VelocityModel<double> VelocityModel<float>::cast<double>() const;
template VelocityModel<float> VelocityModel<double>::cast<float>() const;
template VelocityModel<float> VelocityModel<float>::cast<float>() const;
template VelocityModel<double> VelocityModel<double>::cast<double>() const;

}  // namespace tmatch
