#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tm/net.hpp"
#include "tm/toy_data.hpp"
#include "tm/variants.hpp"

namespace tmatch {

// A checkpoint directory holds manifest.txt (key = value lines, then one
// "param <name> <rows> <cols>" line per tensor) and params.f32, the tensors as
// little-endian 32-bit floats concatenated in manifest order.
struct Checkpoint {
  VariantConfig variant;
  DatasetSpec dataset;
  int dim = 0;
  std::uint64_t seed = 0;
  long step = 0;
  VelocityModel<float> model{ModelConfig{}};
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
// Throws ConfigError on a missing or malformed checkpoint.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace tmatch
