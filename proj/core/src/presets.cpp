#include "prefillsim/presets.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "prefillsim/errors.hpp"

#ifndef PREFILLSIM_DEFAULT_PRESET_DIR
#define PREFILLSIM_DEFAULT_PRESET_DIR "presets"
#endif

namespace prefillsim {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::filesystem::path resolve(const std::string& name_or_path, const std::string& kind) {
  const std::filesystem::path direct(name_or_path);
  if (direct.has_extension() && std::filesystem::exists(direct)) return direct;
  auto candidate = preset_dir() / kind / (name_or_path + ".preset");
  if (!std::filesystem::exists(candidate)) {
    throw ConfigError(fmt::format("unknown {} preset '{}' (looked in {})", kind, name_or_path,
                                  (preset_dir() / kind).string()));
  }
  return candidate;
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
  KeyValueFile kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", origin, lineno));
    }
    std::string key = trim(std::string_view(stripped).substr(0, eq));
    std::string value = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", origin, lineno));
    if (!kv.values_.emplace(key, std::move(value)).second) {
      throw ConfigError(fmt::format("{}:{}: duplicate key '{}'", origin, lineno, key));
    }
  }
  return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open preset {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const std::string& KeyValueFile::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(fmt::format("{}: missing key '{}'", origin_, key));
  return it->second;
}

std::string KeyValueFile::get_or(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueFile::get_double(const std::string& key) const {
  const std::string& raw = get(key);
  char* end = nullptr;
  const double value = std::strtod(raw.c_str(), &end);
  if (end == raw.c_str() || *end != '\0') {
    throw ConfigError(fmt::format("{}: '{}' is not a number: '{}'", origin_, key, raw));
  }
  return value;
}

std::uint64_t KeyValueFile::get_u64(const std::string& key) const {
  const std::string& raw = get(key);
  char* end = nullptr;
  const unsigned long long value = std::strtoull(raw.c_str(), &end, 10);
  if (raw.empty() || raw[0] == '-' || end == raw.c_str() || *end != '\0') {
    throw ConfigError(fmt::format("{}: '{}' is not a nonnegative integer: '{}'", origin_, key, raw));
  }
  return value;
}

bool KeyValueFile::get_bool(const std::string& key) const {
  std::string raw = get(key);
  std::transform(raw.begin(), raw.end(), raw.begin(), [](unsigned char c) { return std::tolower(c); });
  if (raw == "true" || raw == "1" || raw == "yes") return true;
  if (raw == "false" || raw == "0" || raw == "no") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean: '{}'", origin_, key, raw));
}

std::filesystem::path preset_dir() {
  if (const char* env = std::getenv("PREFILLSIM_PRESETS"); env != nullptr && *env != '\0') {
    return env;
  }
  return PREFILLSIM_DEFAULT_PRESET_DIR;
}

ModelPreset model_preset_from(const KeyValueFile& kv) {
  ModelPreset p;
  auto& g = p.geometry;
  g.name = kv.get("name");
  g.num_layers = kv.get_u64("num_layers");
  g.hidden_size = kv.get_u64("hidden_size");
  g.num_kv_heads = kv.get_u64("num_kv_heads");
  g.head_dim = kv.get_u64("head_dim");
  g.intermediate_size = kv.get_u64("intermediate_size");
  g.weight_bytes = kv.get_u64("weight_bytes");
  g.kv_dtype_bytes = static_cast<std::uint32_t>(kv.get_u64("kv_dtype_bytes"));
  g.act_dtype_bytes = static_cast<std::uint32_t>(kv.get_u64("act_dtype_bytes"));
  g.act_overhead_factor = kv.get_double("act_overhead_factor");
  g.validate();
  p.source = kv.get_or("source", "");
  return p;
}

GpuPreset gpu_preset_from(const KeyValueFile& kv) {
  GpuPreset p;
  auto& g = p.gpu;
  g.name = kv.get("name");
  g.total_memory = kv.get_u64("total_memory");
  g.linear_rate = kv.get_double("linear_rate");
  g.attn_rate = kv.get_double("attn_rate");
  g.fixed_overhead = kv.get_double("fixed_overhead");
  g.link_bandwidth = kv.get_double("link_bandwidth");
  g.has_nvlink = kv.get_bool("has_nvlink");
  g.validate();

  auto& k = p.knobs;
  if (kv.contains("chunk_penalty_k")) k.chunk_penalty_k = kv.get_double("chunk_penalty_k");
  if (kv.contains("pp_bubble_fraction")) k.pp_bubble_fraction = kv.get_double("pp_bubble_fraction");
  if (kv.contains("c_linear")) k.c_linear = kv.get_double("c_linear");
  if (kv.contains("c_attn")) k.c_attn = kv.get_double("c_attn");
  if (kv.contains("c_fixed")) k.c_fixed = kv.get_double("c_fixed");
  if (kv.contains("comm_bytes_per_token_per_layer")) {
    k.comm_bytes_per_token_per_layer = kv.get_double("comm_bytes_per_token_per_layer");
  }
  p.paired_model = kv.get_or("paired_model", "");
  if (kv.contains("mil_anchor")) p.mil_anchor = kv.get_u64("mil_anchor");
  return p;
}

ModelPreset load_model_preset(const std::string& name_or_path) {
  return model_preset_from(KeyValueFile::load(resolve(name_or_path, "models")));
}

GpuPreset load_gpu_preset(const std::string& name_or_path) {
  return gpu_preset_from(KeyValueFile::load(resolve(name_or_path, "gpus")));
}

std::vector<std::string> list_presets(const std::string& kind) {
  std::vector<std::string> names;
  const auto dir = preset_dir() / kind;
  if (!std::filesystem::is_directory(dir)) return names;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".preset") names.push_back(entry.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace prefillsim
