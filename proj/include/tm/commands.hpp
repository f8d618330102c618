#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace tmatch {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumeric = 3, kExitVerify = 4 };

// Writes into the run's output directory:
//   config.txt               canonical copy of the config
//   loss.csv                 one row per checkpoint (steps / cadence + 1 rows)
//   train_steps.csv          one row per optimizer step
//   checkpoints/step_<n>/    every cadence, including step 0
//   checkpoint/              the final model
int cmd_train(const std::filesystem::path& config, std::ostream& log,
              std::optional<std::uint64_t> seed_override = std::nullopt);

int cmd_sample(const std::filesystem::path& checkpoint, int count, std::uint64_t seed,
               const std::filesystem::path& out, std::ostream& log);

// metric: energy_distance (with its same-law null q95 row) or wasserstein1
// (one-dimensional datasets). An empty dataset uses the checkpoint's.
int cmd_eval(const std::filesystem::path& checkpoint, const std::string& dataset, const std::string& metric,
             std::uint64_t seed, int count, const std::filesystem::path& out, std::ostream& log);

int cmd_verify(const std::string& suite, bool full, std::uint64_t seed, std::ostream& log);

// Loads [sweep] dtm_checkpoint / fm_checkpoint (relative to the config file)
// and writes sweep.csv to the output directory.
int cmd_sweep(const std::filesystem::path& config, std::ostream& log);

}  // namespace tmatch
