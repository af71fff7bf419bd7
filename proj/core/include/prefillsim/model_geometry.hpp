#pragma once

// Byte arithmetic over transformer shapes: KV cache size, the MLP
// intermediate-tensor spike, peak prefill memory per execution mode, maximum
// input length (MIL) and the prefix-cache capacity left over after reserving
// room for the longest request.

#include <cstdint>
#include <string>
#include <variant>

namespace prefillsim {

using Tokens = std::uint64_t;
using Bytes = std::uint64_t;

struct ModelGeometry {
  std::string name;
  std::uint64_t num_layers = 0;
  std::uint64_t hidden_size = 0;
  std::uint64_t num_kv_heads = 0;
  std::uint64_t head_dim = 0;
  std::uint64_t intermediate_size = 0;
  Bytes weight_bytes = 0;
  std::uint32_t kv_dtype_bytes = 2;
  std::uint32_t act_dtype_bytes = 2;
  // Multiplier over the gate/up spike covering other live temporaries.
  double act_overhead_factor = 1.0;

  // Throws ConfigError on a violated invariant.
  void validate() const;
};

struct GpuSpec {
  std::string name;
  Bytes total_memory = 0;
  // Effective dense-linear throughput, FLOP/s.
  double linear_rate = 0.0;
  // Effective attention throughput, FLOP/s.
  double attn_rate = 0.0;
  double fixed_overhead = 0.0;  // seconds per request
  double link_bandwidth = 0.0;  // bytes/s, all-reduce bus bandwidth between peers
  bool has_nvlink = false;

  void validate() const;
};

namespace mode {
struct Full {};
struct KvDiscard {};
struct Chunked {
  Tokens chunk_size;
};
struct Hybrid {
  Tokens chunk_size;
};
}  // namespace mode

using PrefillMode = std::variant<mode::Full, mode::KvDiscard, mode::Chunked, mode::Hybrid>;

inline constexpr Tokens kDefaultHybridChunk = 8192;
inline constexpr Tokens kDefaultChunkedPrefillChunk = 2048;

std::string to_string(const PrefillMode& m);

struct KvBytesPerToken {
  Bytes per_layer;
  Bytes total;
};

KvBytesPerToken kv_bytes_per_token(const ModelGeometry& geom);

// Concatenated gate/up projection output for one token, in bytes.
Bytes intermediate_bytes_per_token(const ModelGeometry& geom);

// Weights plus the mode's live KV and activation terms. Rejects n_tokens == 0.
Bytes peak_prefill_memory(const ModelGeometry& geom, Tokens n_tokens, const PrefillMode& m);

// Largest n with peak_prefill_memory(n) <= gpu.total_memory, 0 if none.
// Rejects budgets below the weight size.
Tokens max_input_length(const ModelGeometry& geom, const GpuSpec& gpu, const PrefillMode& m);

// Tokens of KV that fit next to a user_mil-token request run in `m`
// (Hybrid with the default chunk unless told otherwise).
Tokens prefix_cache_capacity(const ModelGeometry& geom, const GpuSpec& gpu, Tokens user_mil,
                             const PrefillMode& m = mode::Hybrid{kDefaultHybridChunk});

// Dense linear FLOPs per token (attention projections + MLP, no embeddings or LM head).
double linear_flops_per_token(const ModelGeometry& geom);

// Attention FLOPs per (query, key) pair across all layers.
double attention_flops_per_pair(const ModelGeometry& geom);

// Solves for the act_overhead_factor that places MIL(Full) at `target_mil` on `gpu`.
double calibrate_act_overhead(const ModelGeometry& geom, const GpuSpec& gpu, Tokens target_mil);

}  // namespace prefillsim
