#include "tm/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "tm/errors.hpp"

namespace tmatch {

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

double parse_double(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const double out = std::strtod(value.c_str(), &end);
  if (value.empty() || *end != '\0' || errno == ERANGE) throw ConfigError(key + ": not a number: '" + value + "'");
  return out;
}

long parse_long(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const long out = std::strtol(value.c_str(), &end, 10);
  if (value.empty() || *end != '\0' || errno == ERANGE) throw ConfigError(key + ": not an integer: '" + value + "'");
  return out;
}

namespace {

int parse_int(const std::string& key, const std::string& value) {
  const long v = parse_long(key, value);
  if (v < -2147483647L || v > 2147483647L) throw ConfigError(key + ": out of range");
  return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  if (value.empty() || value[0] == '-') throw ConfigError(key + ": not an unsigned integer: '" + value + "'");
  const unsigned long long out = std::strtoull(value.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) throw ConfigError(key + ": not an unsigned integer: '" + value + "'");
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError(key + ": empty list item");
    out.push_back(parse_int(key, item.substr(b, e - b + 1)));
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string b2s(bool b) { return b ? "true" : "false"; }

template <typename F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

KeyValues variant_keys(const VariantConfig& v) {
  return {{"kind", to_string(v.kind)},
          {"T", std::to_string(v.T)},
          {"scheduler", to_string(v.scheduler)},
          {"tokens", std::to_string(v.tokens)},
          {"head_steps", std::to_string(v.head_steps)},
          {"solver", to_string(v.solver)},
          {"continuous_time", b2s(v.continuous_time)},
          {"process", v.process ? to_string(*v.process) : "default"},
          {"allow_process_override", b2s(v.allow_process_override)}};
}

bool apply_variant_key(VariantConfig& v, const std::string& key, const std::string& value) {
  if (key == "kind") v.kind = wrap(key, [&] { return variant_kind_from_string(value); });
  else if (key == "T") v.T = parse_int(key, value);
  else if (key == "scheduler") v.scheduler = wrap(key, [&] { return scheduler_kind_from_string(value); });
  else if (key == "tokens") v.tokens = parse_int(key, value);
  else if (key == "head_steps") v.head_steps = parse_int(key, value);
  else if (key == "solver") v.solver = wrap(key, [&] { return solver_from_string(value); });
  else if (key == "continuous_time") v.continuous_time = parse_bool(key, value);
  else if (key == "process") {
    if (value == "default") v.process.reset();
    else v.process = wrap(key, [&] { return process_kind_from_string(value); });
  } else if (key == "allow_process_override") v.allow_process_override = parse_bool(key, value);
  else return false;
  return true;
}

KeyValues model_keys(const ModelConfig& m) {
  return {{"width", std::to_string(m.width)},
          {"layers", std::to_string(m.layers)},
          {"mlp_ratio", std::to_string(m.mlp_ratio)},
          {"head_hidden", std::to_string(m.head_hidden)},
          {"head_depth", std::to_string(m.head_depth)},
          {"time_dim", std::to_string(m.time_dim)},
          {"max_len", std::to_string(m.max_len)},
          {"positions", b2s(m.positions)}};
}

bool apply_model_key(ModelConfig& m, const std::string& key, const std::string& value) {
  if (key == "width") m.width = parse_int(key, value);
  else if (key == "layers") m.layers = parse_int(key, value);
  else if (key == "mlp_ratio") m.mlp_ratio = parse_int(key, value);
  else if (key == "head_hidden") m.head_hidden = parse_int(key, value);
  else if (key == "head_depth") m.head_depth = parse_int(key, value);
  else if (key == "time_dim") m.time_dim = parse_int(key, value);
  else if (key == "max_len") m.max_len = parse_int(key, value);
  else if (key == "positions") m.positions = parse_bool(key, value);
  else return false;
  return true;
}

void RunConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("run.out_dir must not be empty");
  const int dim = dataset.dimension();
  wrap("variant", [&] { variant.validate(dim); return 0; });
  wrap("model", [&] { model_config_for(variant, dim, model); return 0; });
  if (!(optim.lr > 0.0) || !std::isfinite(optim.lr)) throw ConfigError("optim.lr must be positive");
  if (optim.batch_size < 1) throw ConfigError("optim.batch_size must be at least 1");
  if (optim.steps < 0) throw ConfigError("optim.steps must be non-negative");
  if (optim.warmup < 0) throw ConfigError("optim.warmup must be non-negative");
  if (!(optim.min_lr_ratio >= 0.0 && optim.min_lr_ratio <= 1.0)) throw ConfigError("optim.min_lr_ratio must lie in [0, 1]");
  if (eval.cadence < 1) throw ConfigError("eval.cadence must be at least 1");
  if (optim.steps % eval.cadence != 0) throw ConfigError("optim.steps must be a multiple of eval.cadence");
  if (eval.samples < 2) throw ConfigError("eval.samples must be at least 2");
  if (sweep.samples < 2) throw ConfigError("sweep.samples must be at least 2");
  for (int v : sweep.dtm_T) if (v < 1) throw ConfigError("sweep.dtm_T entries must be positive");
  for (int v : sweep.head_steps) if (v < 1) throw ConfigError("sweep.head_steps entries must be positive");
  for (int v : sweep.fm_steps) if (v < 1) throw ConfigError("sweep.fm_steps entries must be positive");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    line = line.substr(b, line.find_last_not_of(" \t\r") - b + 1);
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = line.substr(1, line.size() - 2);
      static const char* const known[] = {"run", "dataset", "variant", "model", "optim", "eval", "sweep"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known))
        throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    auto trim = [](std::string s) {
      const auto x = s.find_first_not_of(" \t");
      if (x == std::string::npos) return std::string{};
      return s.substr(x, s.find_last_not_of(" \t") - x + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string full = section + "." + key;
    bool ok = true;
    try {
      if (section == "run") {
        if (key == "seed") c.seed = parse_u64(full, value);
        else if (key == "out_dir") c.out_dir = value;
        else ok = false;
      } else if (section == "dataset") {
        if (key == "name") c.dataset = wrap(full, [&] { return parse_dataset(value); });
        else ok = false;
      } else if (section == "variant") {
        ok = apply_variant_key(c.variant, key, value);
      } else if (section == "model") {
        ok = apply_model_key(c.model, key, value);
      } else if (section == "optim") {
        if (key == "lr") c.optim.lr = parse_double(full, value);
        else if (key == "batch_size") c.optim.batch_size = parse_int(full, value);
        else if (key == "steps") c.optim.steps = parse_long(full, value);
        else if (key == "warmup") c.optim.warmup = parse_long(full, value);
        else if (key == "cosine") c.optim.cosine = parse_bool(full, value);
        else if (key == "min_lr_ratio") c.optim.min_lr_ratio = parse_double(full, value);
        else ok = false;
      } else if (section == "eval") {
        if (key == "cadence") c.eval.cadence = parse_long(full, value);
        else if (key == "samples") c.eval.samples = parse_int(full, value);
        else ok = false;
      } else if (section == "sweep") {
        if (key == "dtm_checkpoint") c.sweep.dtm_checkpoint = value;
        else if (key == "fm_checkpoint") c.sweep.fm_checkpoint = value;
        else if (key == "dtm_T") c.sweep.dtm_T = parse_int_list(full, value);
        else if (key == "head_steps") c.sweep.head_steps = parse_int_list(full, value);
        else if (key == "fm_steps") c.sweep.fm_steps = parse_int_list(full, value);
        else if (key == "samples") c.sweep.samples = parse_int(full, value);
        else ok = false;
      } else {
        throw ConfigError("unknown section [" + section + "]");
      }
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
    if (!ok) throw ConfigError(where + "unknown key '" + full + "'");
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize(const RunConfig& c) {
  std::ostringstream out;
  auto section = [&](const char* name, const KeyValues& kv) {
    out << '[' << name << "]\n";
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
    out << '\n';
  };
  section("run", {{"seed", std::to_string(c.seed)}, {"out_dir", c.out_dir}});
  section("dataset", {{"name", to_string(c.dataset)}});
  section("variant", variant_keys(c.variant));
  section("model", model_keys(c.model));
  section("optim", {{"lr", format_double(c.optim.lr)},
                    {"batch_size", std::to_string(c.optim.batch_size)},
                    {"steps", std::to_string(c.optim.steps)},
                    {"warmup", std::to_string(c.optim.warmup)},
                    {"cosine", b2s(c.optim.cosine)},
                    {"min_lr_ratio", format_double(c.optim.min_lr_ratio)}});
  section("eval", {{"cadence", std::to_string(c.eval.cadence)}, {"samples", std::to_string(c.eval.samples)}});
  section("sweep", {{"dtm_checkpoint", c.sweep.dtm_checkpoint},
                    {"fm_checkpoint", c.sweep.fm_checkpoint},
                    {"dtm_T", join(c.sweep.dtm_T)},
                    {"head_steps", join(c.sweep.head_steps)},
                    {"fm_steps", join(c.sweep.fm_steps)},
                    {"samples", std::to_string(c.sweep.samples)}});
  return out.str();
}

std::filesystem::path resolve_out_dir(const RunConfig& config) {
  if (const char* env = std::getenv("TM_OUT_DIR"); env && *env) return env;
  return config.out_dir;
}

}  // namespace tmatch
