#pragma once

// Preset files are UTF-8 text with one `key = value` pair per line; `#`
// starts a comment. Model presets live under <dir>/models/<name>.preset and
// GPU presets (device numbers plus cost-model knobs) under
// <dir>/gpus/<name>.preset. <dir> is $PREFILLSIM_PRESETS when set, otherwise
// the directory baked in at build time.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "prefillsim/exec_model.hpp"
#include "prefillsim/model_geometry.hpp"

namespace prefillsim {

class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text, const std::string& origin = "<memory>");
  static KeyValueFile load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
};

struct GpuPreset {
  GpuSpec gpu;
  CostKnobs knobs;
  // Model this device was calibrated against, and that model's full-prefill MIL anchor.
  std::string paired_model;
  Tokens mil_anchor = 0;
};

struct ModelPreset {
  ModelGeometry geometry;
  std::string source;
};

std::filesystem::path preset_dir();

ModelPreset model_preset_from(const KeyValueFile& kv);
GpuPreset gpu_preset_from(const KeyValueFile& kv);

// `name_or_path` is a preset name or a path to a preset file.
ModelPreset load_model_preset(const std::string& name_or_path);
GpuPreset load_gpu_preset(const std::string& name_or_path);

std::vector<std::string> list_presets(const std::string& kind);

}  // namespace prefillsim
