#pragma once

#include <string>
#include <vector>

#include "prefillsim/exec_model.hpp"
#include "prefillsim/presets.hpp"
#include "prefillsim/rng.hpp"
#include "prefillsim/sim.hpp"
#include "prefillsim/workload.hpp"

namespace prefillsim::testing {

struct Setup {
  ModelGeometry geom;
  GpuSpec gpu;
  CostParams params;
};

inline Setup load_setup(const std::string& model, const std::string& gpu) {
  const auto m = load_model_preset(model);
  const auto g = load_gpu_preset(gpu);
  return {m.geometry, g.gpu, derive_cost_params(m.geometry, g.gpu, g.knobs)};
}

inline Setup l4_llama() { return load_setup("llama-3.1-8b", "l4"); }
inline Setup a100_qwen() { return load_setup("qwen-32b-fp8", "a100-40gb"); }
inline Setup h100_llama70() { return load_setup("llama-3.3-70b-fp8", "h100-pcie"); }

inline const std::vector<std::pair<std::string, std::string>>& paired_presets() {
  static const std::vector<std::pair<std::string, std::string>> pairs{
      {"llama-3.1-8b", "l4"}, {"qwen-32b-fp8", "a100-40gb"}, {"llama-3.3-70b-fp8", "h100-pcie"}};
  return pairs;
}

inline std::vector<Token> distinct_tokens(std::uint64_t tag, std::size_t count) {
  std::vector<Token> t(count);
  for (std::size_t i = 0; i < count; ++i) t[i] = static_cast<Token>(rng::mix(0x7465737400ULL, tag, i));
  return t;
}

inline std::vector<Token> concat(std::vector<Token> a, const std::vector<Token>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Four requests arriving together: A=3000, B=3400, C=3200, D=3600 tokens.
// D extends A; B and C share a 2000-token prefix. With 16-token blocks a
// 3000-token cache holds one request's worth of blocks.
inline constexpr Tokens kWorkedCacheTokens = 3000;

inline Trace worked_example_trace() {
  const auto a = distinct_tokens(1, 3000);
  const auto shared_bc = distinct_tokens(2, 2000);
  Trace t;
  t.name = "worked-example";
  t.requests.push_back(make_request_with_tokens(0, 0, a, 3000));
  t.requests.push_back(make_request_with_tokens(1, 1, concat(shared_bc, distinct_tokens(3, 1400)), 2000));
  t.requests.push_back(make_request_with_tokens(2, 2, concat(shared_bc, distinct_tokens(4, 1200)), 2000));
  t.requests.push_back(make_request_with_tokens(3, 3, concat(a, distinct_tokens(5, 600)), 3000));
  return t;
}

inline SimConfig worked_example_config(const Policy& p) {
  const auto s = a100_qwen();
  SimConfig cfg;
  cfg.num_instances = 1;
  cfg.variant = variant::PrefillOnlyHybrid{};
  cfg.policy = p;
  cfg.geometry = s.geom;
  cfg.gpu = s.gpu;
  cfg.cost_params = s.params;
  cfg.cache_capacity_tokens = kWorkedCacheTokens;
  return cfg;
}

inline SimConfig default_config(const Setup& s, const EngineVariant& v, const Policy& p, std::size_t instances = 1) {
  SimConfig cfg;
  cfg.num_instances = instances;
  cfg.variant = v;
  cfg.policy = p;
  cfg.geometry = s.geom;
  cfg.gpu = s.gpu;
  cfg.cost_params = s.params;
  return cfg;
}

}  // namespace prefillsim::testing
