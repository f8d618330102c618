#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tm/rng.hpp"

namespace tmatch {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Attention visibility over one sequence.
//   full        every position sees every position
//   artm_causal the first `visible_prefix` positions (the x_t block) are
//               visible to all; the rest is causal
//   fh_causal   strictly causal over the whole sequence
enum class MaskMode { full, artm_causal, fh_causal };

std::string to_string(MaskMode mode);
MaskMode mask_mode_from_string(const std::string& name);

struct AttentionMask {
  int length = 0;
  std::vector<std::uint8_t> allowed;  // row-major [query][key]

  bool operator()(int query, int key) const {
    return allowed[static_cast<std::size_t>(query * length + key)] != 0;
  }
  void set(int query, int key, bool visible) {
    allowed[static_cast<std::size_t>(query * length + key)] = visible ? 1 : 0;
  }
};

AttentionMask build_attention_mask(MaskMode mode, int length, int visible_prefix);

// How the backbone output becomes a velocity: a per-token flow head (TM
// variants) or a direct linear read-out (the flow-matching baseline).
enum class OutputKind { head, direct };

struct ModelConfig {
  int token_dim = 1;
  int width = 64;
  int layers = 2;
  int mlp_ratio = 2;
  int head_hidden = 64;
  int head_depth = 4;  // linear layers in the head
  int time_dim = 16;
  int max_len = 64;
  bool positions = true;
  OutputKind output = OutputKind::head;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Sinusoidal features of a ratio in [0, 1]; `dim` must be even.
template <typename S>
void time_features(S ratio, int dim, S* out);

// Named parameter tensors in a fixed order (the checkpoint order).
template <typename S>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Mat<S>> tensors;

  int add(std::string name, int rows, int cols);
  int find(const std::string& name) const;
  std::size_t scalar_count() const;
  ParamSet zeros_like() const;
  void set_zero();
  bool all_finite() const;
};

template <typename S>
class VelocityModel {
 public:
  struct LayerIndex {
    int ln1_g, ln1_b, wq, wk, wv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct Index {
    int in_w = -1, in_b = -1, pos = -1, time_w = -1;
    std::vector<LayerIndex> layers;
    int lnf_g = -1, lnf_b = -1;
    std::vector<int> head_w, head_b;
    int out_w = -1, out_b = -1;
  };

  // Allocates the parameter layout; weights drawn from a normal truncated at
  // two standard deviations (std 0.02), zero biases, unit norm gains, and a
  // zero final output layer.
  VelocityModel(const ModelConfig& config, Rng& init_rng);
  // Layout only, every tensor zero.
  explicit VelocityModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const Index& index() const { return index_; }
  ParamSet<S>& params() { return params_; }
  const ParamSet<S>& params() const { return params_; }

  std::size_t backbone_param_count() const;
  std::size_t head_param_count() const;
  int head_input_dim() const { return config_.token_dim + 2 * config_.time_dim + config_.width; }

  // Redraws every tensor (including gains and the final layer) from N(0, std^2).
  void randomize(Rng& rng, S stddev);

  template <typename T>
  VelocityModel<T> cast() const;

 private:
  void build_layout();

  ModelConfig config_;
  ParamSet<S> params_;
  Index index_;
};

// `count` sequences of `length` tokens each, stored row-major as
// (count * length) x token_dim.
template <typename S>
struct SequenceBatch {
  int count = 0;
  int length = 0;
  Mat<S> tokens;
  std::vector<S> time;  // outer time ratio per sequence
  MaskMode mode = MaskMode::full;
  int visible_prefix = 0;
  std::optional<AttentionMask> mask_override;

  AttentionMask mask() const;
};

template <typename S>
struct BackboneTape;

// Hidden tokens, (count * length) x width.
template <typename S>
Mat<S> backbone_forward(const VelocityModel<S>& model, const SequenceBatch<S>& batch);

// Velocity of the flow head for Q queries. `y` is Q x token_dim, `hidden`
// Q x width; `outer` is ignored (time channel zero) when `zero_outer` is set.
template <typename S>
Mat<S> head_velocity(const VelocityModel<S>& model, const Mat<S>& y, const std::vector<S>& s,
                     const std::vector<S>& outer, const Mat<S>& hidden, bool zero_outer = false);

// Direct read-out used by the flow-matching baseline: hidden -> token_dim.
template <typename S>
Mat<S> direct_velocity(const VelocityModel<S>& model, const Mat<S>& hidden);

// One CFM training batch: queries select backbone rows; each carries a
// target B, a source draw B0 and an inner time s, and B_s = (1-s) B0 + s B.
// For OutputKind::direct the flow lives in the sequence itself, so only
// B - B0 is used.
template <typename S>
struct Batch {
  SequenceBatch<S> seq;
  std::vector<int> rows;
  Mat<S> target;
  Mat<S> noise;
  std::vector<S> s;
  std::vector<S> outer;

  void validate(const ModelConfig& config) const;
};

template <typename S>
struct LossResult {
  S loss = 0;
  ParamSet<S> grads;
  std::vector<S> per_query;
};

// Mean over queries of |u(B_s) - (B - B0)|^2 and its exact gradient.
template <typename S>
LossResult<S> cfm_loss(const VelocityModel<S>& model, const Batch<S>& batch);

// Loss only, no backward pass.
template <typename S>
S cfm_loss_value(const VelocityModel<S>& model, const Batch<S>& batch);

enum class Solver { euler, midpoint };
std::string to_string(Solver solver);
Solver solver_from_string(const std::string& name);

// Integrates db/ds = field(b, s) from s = 0 to 1 on a uniform grid.
template <typename S>
Mat<S> integrate_ode(const std::function<Mat<S>(const Mat<S>&, S)>& field, Mat<S> b0, int steps, Solver solver);

// Draws B0 ~ N(0, I) per query and integrates the head's velocity field.
// Returns Q x token_dim; `head_calls` (if given) is incremented per head
// evaluation.
template <typename S>
Mat<S> ode_sample(const VelocityModel<S>& model, const Mat<S>& hidden, const std::vector<S>& outer, int steps,
                  Solver solver, Rng& rng, bool zero_outer = false, long* head_calls = nullptr);

}  // namespace tmatch
