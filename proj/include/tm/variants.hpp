#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tm/net.hpp"
#include "tm/optim.hpp"
#include "tm/processes.hpp"
#include "tm/rng.hpp"
#include "tm/state.hpp"

namespace tmatch {

enum class VariantKind { dtm, artm, fhtm, fm };
std::string to_string(VariantKind kind);
VariantKind variant_kind_from_string(const std::string& name);

struct VariantConfig {
  VariantKind kind = VariantKind::dtm;
  int T = 16;
  SchedulerKind scheduler = SchedulerKind::uniform;
  int tokens = 2;
  int head_steps = 4;
  Solver solver = Solver::euler;
  bool continuous_time = false;  // dtm only: train on r ~ U[0, 1)
  std::optional<ProcessKind> process;
  bool allow_process_override = false;

  Scheduler sched() const { return Scheduler{scheduler, T}; }
  // dtm/fm: dependent; artm: independent; fhtm: full_history.
  ProcessKind default_process() const;
  ProcessKind effective_process() const { return process.value_or(default_process()); }
  // Longest backbone sequence the variant produces.
  int max_sequence_length() const;
  // Throws ConfigError on inconsistent settings, including a variant paired
  // with the wrong supervising process unless the override is set.
  void validate(int dim) const;

  friend bool operator==(const VariantConfig&, const VariantConfig&) = default;
};

// Model layout matching a variant: token size, output kind and sequence length.
ModelConfig model_config_for(const VariantConfig& variant, int dim, ModelConfig base = {});

struct OptimConfig {
  double lr = 1e-3;
  int batch_size = 256;
  long steps = 20000;
  long warmup = 0;
  bool cosine = false;
  double min_lr_ratio = 0.1;

  double lr_at(long step) const;
  friend bool operator==(const OptimConfig&, const OptimConfig&) = default;
};

// Fixed-capacity ring of recent losses.
class LossHistory {
 public:
  explicit LossHistory(std::size_t capacity = 1024) : capacity_(capacity) {}
  void push(float loss);
  std::size_t size() const { return values_.size(); }
  // Oldest to newest.
  std::vector<float> values() const;
  double mean_last(std::size_t count) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<float> values_;
};

struct TrainState {
  VariantConfig variant;
  OptimConfig optim;
  AdamConfig adam;
  VelocityModel<float> model;
  AdamState<float> opt;
  long step = 0;
  std::uint64_t seed = 0;
  Rng rng;
  LossHistory history;
};

// Model initialized from stream 0 of `seed`; training randomness from stream 1.
TrainState make_train_state(const VariantConfig& variant, int dim, const OptimConfig& optim, std::uint64_t seed,
                            const ModelConfig& base = {});

// Training batches (exposed for tests). `data` holds one target sample per row.
Batch<float> dtm_batch(const VariantConfig& variant, const Samples& data, Rng& rng);
Batch<float> artm_batch(const VariantConfig& variant, const Samples& data, Rng& rng);
Batch<float> fhtm_batch(const VariantConfig& variant, const Samples& data, Rng& rng);
Batch<float> fm_batch(const VariantConfig& variant, const Samples& data, Rng& rng);
Batch<float> make_batch(const VariantConfig& variant, const Samples& data, Rng& rng);

// One optimizer step of the configured variant; returns the batch loss.
float dtm_train_step(TrainState& state, const Samples& data);
float artm_train_step(TrainState& state, const Samples& data);
float fhtm_train_step(TrainState& state, const Samples& data);
float fm_train_step(TrainState& state, const Samples& data);
float train_step(TrainState& state, const Samples& data);

struct SampleStats {
  long backbone_calls = 0;
  long head_calls = 0;
};

// Y ~ p(Y | X_t = x) for each row of x: one backbone pass, then the flow head
// per token.
Samples dtm_posterior_sample(const VelocityModel<float>& model, const VariantConfig& variant, const Samples& x,
                             double ratio, Rng& rng, SampleStats* stats = nullptr);

// Draw `count` samples; each returns count x dim.
Samples dtm_sample(const VelocityModel<float>& model, const VariantConfig& variant, int dim, int count, Rng& rng,
                   SampleStats* stats = nullptr);
Samples artm_sample(const VelocityModel<float>& model, const VariantConfig& variant, int dim, int count, Rng& rng,
                    SampleStats* stats = nullptr);
Samples fhtm_sample(const VelocityModel<float>& model, const VariantConfig& variant, int dim, int count, Rng& rng,
                    SampleStats* stats = nullptr);
Samples fm_sample(const VelocityModel<float>& model, const VariantConfig& variant, int dim, int count, Rng& rng,
                  SampleStats* stats = nullptr);
Samples sample(const VelocityModel<float>& model, const VariantConfig& variant, int dim, int count, Rng& rng,
               SampleStats* stats = nullptr);

// DTM chain with an arbitrary posterior: posterior(x_t, t, r_t, rng) -> Y.
using PosteriorFn = std::function<Samples(const Samples&, int, double, Rng&)>;
Samples dtm_chain(const PosteriorFn& posterior, const Scheduler& sched, int dim, int count, Rng& rng);

// Euler transport x += (r_{t+1} - r_t) u(x, r_t) from N(0, I).
using VelocityFn = std::function<Samples(const Samples&, double)>;
Samples euler_transport(const VelocityFn& velocity, const Scheduler& sched, int dim, int count, Rng& rng);

// Direct velocity of a trained FM model at ratio r for each row of x.
Samples fm_velocity(const VelocityModel<float>& model, const VariantConfig& variant, const Samples& x, double ratio);

}  // namespace tmatch
