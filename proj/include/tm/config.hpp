#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tm/net.hpp"
#include "tm/toy_data.hpp"
#include "tm/variants.hpp"

namespace tmatch {

struct EvalConfig {
  long cadence = 1000;  // optimizer steps between checkpoints
  int samples = 2000;   // draws for evaluation metrics

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct SweepConfig {
  std::string dtm_checkpoint;
  std::string fm_checkpoint;
  std::vector<int> dtm_T{4, 8, 16, 32, 64};
  std::vector<int> head_steps{1, 2, 4, 8, 64};
  std::vector<int> fm_steps{4, 8, 16, 32, 64};
  int samples = 2000;

  friend bool operator==(const SweepConfig&, const SweepConfig&) = default;
};

// Sectioned key = value text:
//
//   [run]      seed, out_dir
//   [dataset]  name
//   [variant]  kind, T, scheduler, tokens, head_steps, solver,
//              continuous_time, process, allow_process_override
//   [model]    width, layers, mlp_ratio, head_hidden, head_depth, time_dim,
//              max_len, positions
//   [optim]    lr, batch_size, steps, warmup, cosine, min_lr_ratio
//   [eval]     cadence, samples
//   [sweep]    dtm_checkpoint, fm_checkpoint, dtm_T, head_steps, fm_steps,
//              samples
//
// '#' starts a comment. Unknown sections or keys are errors.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  DatasetSpec dataset;
  VariantConfig variant;
  ModelConfig model;
  OptimConfig optim;
  EvalConfig eval;
  SweepConfig sweep;

  // Checks every value, including the variant against the dataset dimension.
  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical text; parse_run_config(serialize(c)) == c bit-exactly.
std::string serialize(const RunConfig& config);

// out_dir, replaced by $TM_OUT_DIR when that is set and non-empty.
std::filesystem::path resolve_out_dir(const RunConfig& config);

}  // namespace tmatch

namespace tmatch {

// Key/value codecs shared by the config file and the checkpoint manifest.
std::string format_double(double value);
double parse_double(const std::string& key, const std::string& value);
long parse_long(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues variant_keys(const VariantConfig& v);
// Returns false when `key` is not a variant key.
bool apply_variant_key(VariantConfig& v, const std::string& key, const std::string& value);

KeyValues model_keys(const ModelConfig& m);
bool apply_model_key(ModelConfig& m, const std::string& key, const std::string& value);

}  // namespace tmatch
