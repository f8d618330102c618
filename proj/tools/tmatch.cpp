// tmatch: train, sample, eval, verify and sweep transition-matching models.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "tm/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Transition matching toy experiments"};
  app.require_subcommand(1);

  std::string config, checkpoint, out, dataset, metric = "energy_distance", suite;
  std::uint64_t seed = 0, verify_seed = 1;
  int count = 2000;
  bool full = false;

  auto* train = app.add_subcommand("train", "Train the configured variant");
  train->add_option("--config", config, "Run config file")->required();
  auto* train_seed = train->add_option("--seed", seed, "Override the config seed");

  auto* sample = app.add_subcommand("sample", "Draw samples from a checkpoint");
  sample->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  sample->add_option("--count", count, "Number of samples");
  sample->add_option("--seed", seed, "Sampling seed");
  sample->add_option("--out", out, "Output CSV")->required();

  auto* eval = app.add_subcommand("eval", "Score a checkpoint against its dataset");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  eval->add_option("--dataset", dataset, "Dataset (default: the checkpoint's)");
  eval->add_option("--metric", metric, "energy_distance or wasserstein1");
  eval->add_option("--count", count, "Samples per side");
  eval->add_option("--seed", seed, "Evaluation seed");
  eval->add_option("--out", out, "Metric CSV (optional)");

  auto* verify = app.add_subcommand("verify", "Run a property suite");
  verify->add_option("--suite", suite, "gradcheck, oracle, theorem1, marginals or masks")->required();
  verify->add_option("--seed", verify_seed, "Suite seed");
  verify->add_flag("--full", full, "Acceptance-size sample counts");

  auto* sweep = app.add_subcommand("sweep", "Efficiency sweep over TM steps and head steps");
  sweep->add_option("--config", config, "Run config file with a [sweep] section")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : tmatch::kExitConfig;
  }

  if (*train) {
    return tmatch::cmd_train(config, std::cerr, *train_seed ? std::optional<std::uint64_t>(seed) : std::nullopt);
  }
  if (*sample) return tmatch::cmd_sample(checkpoint, count, seed, out, std::cerr);
  if (*eval) return tmatch::cmd_eval(checkpoint, dataset, metric, seed, count, out, std::cout);
  if (*verify) return tmatch::cmd_verify(suite, full, verify_seed, std::cout);
  if (*sweep) return tmatch::cmd_sweep(config, std::cout);
  return tmatch::kExitConfig;
}
