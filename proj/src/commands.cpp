#include "tm/commands.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "tm/checkpoint.hpp"
#include "tm/config.hpp"
#include "tm/errors.hpp"
#include "tm/eval.hpp"
#include "tm/toy_data.hpp"
#include "tm/variants.hpp"
#include "tm/verify.hpp"

namespace tmatch {

namespace fs = std::filesystem;

namespace {

template <typename Fn>
int guarded(std::ostream& log, Fn&& body) {
  try {
    return body();
  } catch (const NumericError& e) {
    log << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    log << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, std::ios::out | mode);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  return out;
}

std::string fmt_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string step_dir(long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%07ld", step);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int cmd_train(const fs::path& config_path, std::ostream& log, std::optional<std::uint64_t> seed_override) {
  return guarded(log, [&] {
    RunConfig cfg = load_run_config(config_path);
    if (seed_override) cfg.seed = *seed_override;
    const fs::path out = resolve_out_dir(cfg);
    const int dim = cfg.dataset.dimension();
    TrainState st = make_train_state(cfg.variant, dim, cfg.optim, cfg.seed, cfg.model);

    fs::create_directories(out);
    fs::remove_all(out / "checkpoints");
    fs::remove_all(out / "checkpoint");
    open_out(out / "config.txt") << serialize(cfg);
    std::ofstream loss = open_out(out / "loss.csv");
    std::ofstream steps = open_out(out / "train_steps.csv");
    loss << "step,train_loss,eval_loss,lr,checkpoint\n";
    steps << "step,loss,lr\n";

    Rng data_rng = Rng::stream(cfg.seed, 2);
    Rng eval_data_rng = Rng::stream(cfg.seed, 3);
    Rng eval_batch_rng = Rng::stream(cfg.seed, 4);
    const Batch<float> eval_batch =
        make_batch(cfg.variant, sample_dataset(cfg.dataset, static_cast<std::size_t>(cfg.optim.batch_size), eval_data_rng),
                   eval_batch_rng);

    Checkpoint ck;
    ck.variant = cfg.variant;
    ck.dataset = cfg.dataset;
    ck.dim = dim;
    ck.seed = cfg.seed;
    double window = 0.0;
    long window_count = 0;
    auto record = [&] {
      const double eval_loss = cfm_loss_value(st.model, eval_batch);
      if (!std::isfinite(eval_loss)) throw NumericError("non-finite evaluation loss", st.step);
      const std::string name = step_dir(st.step);
      ck.step = st.step;
      ck.model = st.model;
      save_checkpoint(out / "checkpoints" / name, ck);
      const std::string train_loss = window_count ? fmt_float(window / static_cast<double>(window_count)) : "nan";
      loss << st.step << ',' << train_loss << ',' << fmt_float(eval_loss) << ','
           << fmt_float(cfg.optim.lr_at(st.step)) << ",checkpoints/" << name << '\n';
      loss.flush();
      log << "step " << st.step << "  train " << train_loss << "  eval " << fmt_float(eval_loss) << '\n';
      window = 0.0;
      window_count = 0;
    };
    record();
    while (st.step < cfg.optim.steps) {
      const Samples data = sample_dataset(cfg.dataset, static_cast<std::size_t>(cfg.optim.batch_size), data_rng);
      const double lr = cfg.optim.lr_at(st.step);
      const float l = train_step(st, data);
      steps << st.step << ',' << fmt_float(l) << ',' << fmt_float(lr) << '\n';
      window += l;
      ++window_count;
      if (st.step % cfg.eval.cadence == 0) record();
    }
    ck.step = st.step;
    ck.model = st.model;
    save_checkpoint(out / "checkpoint", ck);
    if (!loss || !steps) throw ConfigError("failed writing training logs");
    return static_cast<int>(kExitOk);
  });
}

int cmd_sample(const fs::path& checkpoint, int count, std::uint64_t seed, const fs::path& out, std::ostream& log) {
  return guarded(log, [&] {
    if (count < 1) throw ConfigError("--count must be at least 1");
    if (out.empty()) throw ConfigError("--out is required");
    const Checkpoint ck = load_checkpoint(checkpoint);
    Rng rng = Rng::stream(seed, 0);
    SampleStats stats;
    const Samples x = sample(ck.model, ck.variant, ck.dim, count, rng, &stats);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f = open_out(out);
    write_samples_csv(f, x);
    log << "wrote " << count << " samples to " << out.string() << " (backbone NFE " << stats.backbone_calls
        << ", head NFE " << stats.head_calls << ")\n";
    return static_cast<int>(kExitOk);
  });
}

int cmd_eval(const fs::path& checkpoint, const std::string& dataset, const std::string& metric, std::uint64_t seed,
             int count, const fs::path& out, std::ostream& log) {
  return guarded(log, [&] {
    if (count < 2) throw ConfigError("--count must be at least 2");
    if (metric != "energy_distance" && metric != "wasserstein1")
      throw ConfigError("unknown metric '" + metric + "' (energy_distance, wasserstein1)");
    const Checkpoint ck = load_checkpoint(checkpoint);
    const DatasetSpec ds = dataset.empty() ? ck.dataset : parse_dataset(dataset);
    if (ds.dimension() != ck.dim) throw ConfigError("dataset dimension does not match the checkpoint");
    if (metric == "wasserstein1" && ck.dim != 1) throw ConfigError("wasserstein1 needs a one-dimensional dataset");
    const std::string hash = fingerprint(read_text(checkpoint / "manifest.txt") + to_string(ds));
    Rng sample_rng = Rng::stream(seed, 0);
    Rng ref_rng = Rng::stream(seed, 1);
    Rng boot_rng = Rng::stream(seed, 2);
    const Samples x = sample(ck.model, ck.variant, ck.dim, count, sample_rng);
    const Samples ref = sample_dataset(ds, static_cast<std::size_t>(count), ref_rng);
    std::vector<MetricReport> reports;
    if (metric == "energy_distance") {
      const EdStats ed = energy_distance_stats(x, ref, boot_rng);
      reports.push_back({"energy_distance", ed.value, ed.stderr_, count, count, seed, hash});
      const TargetSampler same_law = [&ds](std::size_t n, Rng& g) { return sample_dataset(ds, n, g); };
      Rng null_rng = Rng::stream(seed, 3);
      reports.push_back({"energy_distance_null_q95", null_threshold(same_law, static_cast<std::size_t>(count),
                                                                    static_cast<std::size_t>(count), null_rng),
                         0.0, count, count, seed, hash});
    } else {
      reports.push_back({"wasserstein1", wasserstein1_1d(x, ref), 0.0, count, count, seed, hash});
    }
    write_metric_csv(log, reports);
    if (!out.empty()) {
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      std::ofstream f = open_out(out);
      write_metric_csv(f, reports);
    }
    return static_cast<int>(kExitOk);
  });
}

int cmd_verify(const std::string& suite, bool full, std::uint64_t seed, std::ostream& log) {
  return guarded(log, [&] {
    SuiteOptions opts;
    opts.full = full;
    opts.seed = seed;
    const SuiteResult r = run_suite(suite, opts);
    print_suite(log, r);
    return static_cast<int>(r.passed() ? kExitOk : kExitVerify);
  });
}

int cmd_sweep(const fs::path& config_path, std::ostream& log) {
  return guarded(log, [&] {
    const RunConfig cfg = load_run_config(config_path);
    if (cfg.sweep.dtm_checkpoint.empty() && cfg.sweep.fm_checkpoint.empty())
      throw ConfigError("sweep needs sweep.dtm_checkpoint and/or sweep.fm_checkpoint");
    const fs::path base = config_path.parent_path();
    auto load = [&](const std::string& p, VariantKind kind) -> std::optional<Checkpoint> {
      if (p.empty()) return std::nullopt;
      Checkpoint ck = load_checkpoint(fs::path(p).is_absolute() ? fs::path(p) : base / p);
      if (ck.variant.kind != kind) throw ConfigError("checkpoint '" + p + "' is not a " + to_string(kind) + " model");
      if (ck.dim != cfg.dataset.dimension()) throw ConfigError("checkpoint '" + p + "' does not match the dataset");
      return ck;
    };
    const auto dtm = load(cfg.sweep.dtm_checkpoint, VariantKind::dtm);
    const auto fm = load(cfg.sweep.fm_checkpoint, VariantKind::fm);
    const fs::path out = resolve_out_dir(cfg);
    Rng ref_rng = Rng::stream(cfg.seed, 5);
    const Samples ref = sample_dataset(cfg.dataset, static_cast<std::size_t>(cfg.sweep.samples), ref_rng);
    SweepSpec spec;
    spec.dtm_T = cfg.sweep.dtm_T;
    spec.head_steps = cfg.sweep.head_steps;
    spec.fm_steps = cfg.sweep.fm_steps;
    spec.N = static_cast<std::size_t>(cfg.sweep.samples);
    spec.seed = cfg.seed;
    const std::vector<SweepCell> cells =
        efficiency_sweep(dtm ? &dtm->model : nullptr, dtm ? dtm->variant : VariantConfig{}, fm ? &fm->model : nullptr,
                         fm ? fm->variant : VariantConfig{}, ref, spec, fingerprint(serialize(cfg)));
    fs::create_directories(out);
    std::ofstream f = open_out(out / "sweep.csv");
    write_sweep_csv(f, cells);
    write_sweep_csv(log, cells);
    return static_cast<int>(kExitOk);
  });
}

}  // namespace tmatch
