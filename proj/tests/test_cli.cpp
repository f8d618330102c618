#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "helpers.hpp"
#include "tm/checkpoint.hpp"
#include "tm/commands.hpp"
#include "tm/config.hpp"
#include "tm/errors.hpp"
#include "tm/verify.hpp"

using namespace tmatch;
namespace fs = std::filesystem;

namespace {

std::string small_config(const fs::path& out, const std::string& kind = "dtm", long steps = 40, long cadence = 10) {
  std::ostringstream s;
  s << "# tiny run\n"
    << "[run]\nseed = 11\nout_dir = " << out.string() << "\n"
    << "[dataset]\nname = gmm8\n"
    << "[variant]\nkind = " << kind << "\nT = 3\ntokens = 2\nhead_steps = 2\n"
    << "[model]\nwidth = 16\nhead_hidden = 16\ntime_dim = 4\n"
    << "[optim]\nlr = 0.002\nbatch_size = 32\nsteps = " << steps << "\n"
    << "[eval]\ncadence = " << cadence << "\nsamples = 200\n";
  return s.str();
}

fs::path write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("config parsing and round trip") {
  const RunConfig c = parse_run_config(small_config("/tmp/x"));
  CHECK(c.seed == 11);
  CHECK(c.variant.T == 3);
  CHECK(c.model.width == 16);
  CHECK(c.optim.steps == 40);
  CHECK(c.eval.cadence == 10);
  CHECK(parse_run_config(serialize(c)) == c);

  RunConfig d = c;
  d.optim.lr = 0.1 + 0.2;
  d.optim.min_lr_ratio = 1.0 / 3.0;
  d.variant.process = ProcessKind::dependent;
  d.variant.allow_process_override = true;
  d.variant.kind = VariantKind::artm;
  d.sweep.dtm_T = {3, 5};
  d.dataset = parse_dataset("gauss1d(0.1,0.7)");
  d.variant.tokens = 1;
  CHECK(parse_run_config(serialize(d)) == d);
  CHECK(serialize(parse_run_config(serialize(d))) == serialize(d));

  CHECK_THROWS_AS(parse_run_config("[run]\nseed = 1\nbogus = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[nowhere]\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[optim]\nlr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(small_config("/tmp/x", "dtm", 45, 10)), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[variant]\nkind = artm\nprocess = dependent\n"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), ConfigError);
}

TEST_CASE("output directory override") {
  RunConfig c;
  c.out_dir = "from_config";
  ::unsetenv("TM_OUT_DIR");
  CHECK(resolve_out_dir(c) == fs::path("from_config"));
  ::setenv("TM_OUT_DIR", "/tmp/override", 1);
  CHECK(resolve_out_dir(c) == fs::path("/tmp/override"));
  ::unsetenv("TM_OUT_DIR");
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = testing::temp_dir("ckpt");
  Checkpoint c;
  c.variant.kind = VariantKind::fhtm;
  c.variant.T = 3;
  c.dim = 2;
  c.seed = 99;
  c.step = 1234;
  c.dataset = parse_dataset("ring");
  ModelConfig m;
  m.width = 16;
  m.head_hidden = 8;
  m.time_dim = 4;
  Rng rng = rng_stream(50, 0);
  c.model = VelocityModel<float>(model_config_for(c.variant, 2, m), rng);
  c.model.randomize(rng, 0.7f);
  save_checkpoint(dir / "a", c);
  const Checkpoint back = load_checkpoint(dir / "a");
  CHECK(back.variant == c.variant);
  CHECK(back.dataset == c.dataset);
  CHECK(back.seed == 99);
  CHECK(back.step == 1234);
  CHECK(back.model.config() == c.model.config());
  REQUIRE(back.model.params().tensors.size() == c.model.params().tensors.size());
  for (std::size_t t = 0; t < c.model.params().tensors.size(); ++t) {
    const auto& x = c.model.params().tensors[t];
    const auto& y = back.model.params().tensors[t];
    CHECK(std::memcmp(x.data(), y.data(), sizeof(float) * static_cast<std::size_t>(x.size())) == 0);
  }
  save_checkpoint(dir / "b", back);
  CHECK(testing::slurp(dir / "a" / "params.f32") == testing::slurp(dir / "b" / "params.f32"));
  CHECK(testing::slurp(dir / "a" / "manifest.txt") == testing::slurp(dir / "b" / "manifest.txt"));

  const std::string raw = testing::slurp(dir / "a" / "params.f32");
  std::ofstream(dir / "a" / "params.f32", std::ios::binary) << raw.substr(0, raw.size() - 4);
  CHECK_THROWS_AS(load_checkpoint(dir / "a"), ConfigError);
  std::ofstream(dir / "a" / "params.f32", std::ios::binary) << raw << "xxxx";
  CHECK_THROWS_AS(load_checkpoint(dir / "a"), ConfigError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), ConfigError);
}

TEST_CASE("train command") {
  const fs::path dir = testing::temp_dir("train");
  std::ostringstream log;
  CHECK(cmd_train(dir / "absent.cfg", log) == kExitConfig);
  CHECK(fs::is_empty(dir));

  const fs::path bad_out = dir / "bad_out";
  write_file(dir / "bad.cfg", small_config(bad_out, "dtm", 45, 10));
  CHECK(cmd_train(dir / "bad.cfg", log) == kExitConfig);
  CHECK_FALSE(fs::exists(bad_out));

  const fs::path out = dir / "run";
  const fs::path cfg = write_file(dir / "run.cfg", small_config(out));
  REQUIRE(cmd_train(cfg, log) == kExitOk);
  const std::string loss = testing::slurp(out / "loss.csv");
  CHECK(loss.rfind("step,train_loss,eval_loss,lr,checkpoint\n", 0) == 0);
  CHECK(line_count(loss) == 1 + 40 / 10 + 1);
  CHECK(line_count(testing::slurp(out / "train_steps.csv")) == 1 + 40);
  CHECK(fs::exists(out / "checkpoint" / "manifest.txt"));
  CHECK(fs::exists(out / "checkpoints" / "step_0000000" / "params.f32"));
  CHECK(fs::exists(out / "checkpoints" / "step_0000040" / "params.f32"));
  CHECK(load_checkpoint(out / "checkpoint").step == 40);
  const std::string first_params = testing::slurp(out / "checkpoint" / "params.f32");

  REQUIRE(cmd_train(cfg, log) == kExitOk);
  CHECK(testing::slurp(out / "loss.csv") == loss);
  CHECK(testing::slurp(out / "checkpoint" / "params.f32") == first_params);

  REQUIRE(cmd_train(cfg, log, 12) == kExitOk);
  CHECK(testing::slurp(out / "loss.csv") != loss);

  ::setenv("TM_OUT_DIR", (dir / "env").c_str(), 1);
  REQUIRE(cmd_train(cfg, log) == kExitOk);
  ::unsetenv("TM_OUT_DIR");
  CHECK(testing::slurp(dir / "env" / "loss.csv") == loss);
}

TEST_CASE("sample, eval and verify commands") {
  const fs::path dir = testing::temp_dir("sample");
  std::ostringstream log;
  const fs::path out = dir / "run";
  const fs::path cfg = write_file(dir / "run.cfg", small_config(out, "artm", 10, 10));
  REQUIRE(cmd_train(cfg, log) == kExitOk);

  CHECK(cmd_sample(out / "checkpoint", 50, 3, dir / "a.csv", log) == kExitOk);
  CHECK(cmd_sample(out / "checkpoint", 50, 3, dir / "b.csv", log) == kExitOk);
  CHECK(cmd_sample(out / "checkpoint", 50, 4, dir / "c.csv", log) == kExitOk);
  const std::string a = testing::slurp(dir / "a.csv");
  CHECK(a == testing::slurp(dir / "b.csv"));
  CHECK(a != testing::slurp(dir / "c.csv"));
  CHECK(line_count(a) == 51);
  CHECK(a.rfind("dim_0,dim_1\n", 0) == 0);
  CHECK(cmd_sample(dir / "nothing", 50, 3, dir / "d.csv", log) == kExitConfig);
  CHECK(cmd_sample(out / "checkpoint", 0, 3, dir / "d.csv", log) == kExitConfig);

  std::ostringstream eval_log;
  CHECK(cmd_eval(out / "checkpoint", "", "energy_distance", 5, 200, dir / "m.csv", eval_log) == kExitOk);
  const std::string m = testing::slurp(dir / "m.csv");
  CHECK(m.rfind("metric,value,stderr,n_a,n_b,seed,config_hash\n", 0) == 0);
  CHECK(line_count(m) == 3);
  CHECK(m.find("energy_distance_null_q95") != std::string::npos);
  std::ostringstream again;
  CHECK(cmd_eval(out / "checkpoint", "", "energy_distance", 5, 200, dir / "m2.csv", again) == kExitOk);
  CHECK(testing::slurp(dir / "m2.csv") == m);
  CHECK(cmd_eval(out / "checkpoint", "", "wasserstein1", 5, 200, dir / "w.csv", eval_log) == kExitConfig);
  CHECK(cmd_eval(out / "checkpoint", "", "fid", 5, 200, dir / "w.csv", eval_log) == kExitConfig);

  std::ostringstream v;
  CHECK(cmd_verify("gradcheck", false, 1, v) == kExitOk);
  CHECK(v.str().find("FAIL") == std::string::npos);
  CHECK(cmd_verify("nonsense", false, 1, v) == kExitConfig);
}

TEST_CASE("masks suite and its negative control") {
  CHECK(run_masks_suite(SuiteOptions{}).passed());
  const MaskBuilder leaky = [](MaskMode mode, int length, int prefix) {
    AttentionMask m = build_attention_mask(mode, length, prefix);
    if (mode == MaskMode::fh_causal && length > 3) m.set(1, 3, true);
    return m;
  };
  CHECK_FALSE(run_masks_suite(SuiteOptions{}, leaky).passed());
}
