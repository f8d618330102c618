#include "tm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tm/config.hpp"
#include "tm/errors.hpp"

namespace tmatch {

namespace fs = std::filesystem;

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir);
  const auto& params = ckpt.model.params();
  std::ostringstream manifest;
  manifest << "version = " << kCheckpointVersion << '\n';
  manifest << "dataset = " << to_string(ckpt.dataset) << '\n';
  manifest << "dim = " << ckpt.dim << '\n';
  manifest << "seed = " << ckpt.seed << '\n';
  manifest << "step = " << ckpt.step << '\n';
  for (const auto& [k, v] : variant_keys(ckpt.variant)) manifest << "variant." << k << " = " << v << '\n';
  for (const auto& [k, v] : model_keys(ckpt.model.config())) manifest << "model." << k << " = " << v << '\n';
  for (std::size_t i = 0; i < params.names.size(); ++i)
    manifest << "param " << params.names[i] << ' ' << params.tensors[i].rows() << ' ' << params.tensors[i].cols() << '\n';

  std::ofstream bin(dir / "params.f32", std::ios::binary | std::ios::trunc);
  for (const auto& t : params.tensors) {
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      std::uint32_t bits;
      std::memcpy(&bits, t.data() + k, sizeof bits);
      bits = to_le(bits);
      bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!bin) throw Error("failed writing " + (dir / "params.f32").string());
  std::ofstream man(dir / "manifest.txt", std::ios::trunc);
  man << manifest.str();
  if (!man) throw Error("failed writing " + (dir / "manifest.txt").string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream man(dir / "manifest.txt");
  if (!man) throw ConfigError("no checkpoint manifest in '" + dir.string() + "'");
  Checkpoint ck;
  ModelConfig mc;
  struct Entry {
    std::string name;
    long rows, cols;
  };
  std::vector<Entry> entries;
  bool have_version = false;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    if (line.rfind("param ", 0) == 0) {
      std::istringstream ss(line.substr(6));
      Entry e;
      if (!(ss >> e.name >> e.rows >> e.cols)) throw ConfigError("malformed manifest line: " + line);
      entries.push_back(e);
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ConfigError("malformed manifest line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    if (key == "version") {
      if (parse_long(key, value) != kCheckpointVersion) throw ConfigError("unsupported checkpoint version " + value);
      have_version = true;
    } else if (key == "dataset") {
      ck.dataset = parse_dataset(value);
    } else if (key == "dim") {
      ck.dim = static_cast<int>(parse_long(key, value));
    } else if (key == "seed") {
      ck.seed = std::stoull(value);
    } else if (key == "step") {
      ck.step = parse_long(key, value);
    } else if (key.rfind("variant.", 0) == 0) {
      if (!apply_variant_key(ck.variant, key.substr(8), value)) throw ConfigError("unknown manifest key " + key);
    } else if (key.rfind("model.", 0) == 0) {
      if (!apply_model_key(mc, key.substr(6), value)) throw ConfigError("unknown manifest key " + key);
    } else {
      throw ConfigError("unknown manifest key " + key);
    }
  }
  if (!have_version) throw ConfigError("checkpoint manifest lacks a version");
  mc = model_config_for(ck.variant, ck.dim, mc);
  ck.model = VelocityModel<float>(mc);
  auto& params = ck.model.params();
  if (entries.size() != params.names.size()) throw ConfigError("checkpoint tensor count does not match the model");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name != params.names[i] || entries[i].rows != params.tensors[i].rows() ||
        entries[i].cols != params.tensors[i].cols())
      throw ConfigError("checkpoint tensor '" + entries[i].name + "' does not match the model layout");
  }
  std::ifstream bin(dir / "params.f32", std::ios::binary);
  if (!bin) throw ConfigError("no params.f32 in '" + dir.string() + "'");
  for (auto& t : params.tensors) {
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      std::uint32_t bits;
      if (!bin.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw ConfigError("checkpoint data truncated");
      bits = to_le(bits);
      std::memcpy(t.data() + k, &bits, sizeof bits);
    }
  }
  if (bin.peek() != std::char_traits<char>::eof()) throw ConfigError("checkpoint data has trailing bytes");
  if (!params.all_finite()) throw NumericError("checkpoint holds non-finite parameters");
  return ck;
}

}  // namespace tmatch
