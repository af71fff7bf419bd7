#pragma once

// Latency cost models for PrefillOnly (hybrid prefilling) and the four
// baseline engines. All variants share the same base cost
//
//   base = c_fixed + c_linear * miss + c_attn * (n^2 - n_cached^2) / 2
//
// and differ in how attention is penalized, how work is split across GPUs,
// and which memory mode bounds their maximum input length.

#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "prefillsim/model_geometry.hpp"

namespace prefillsim {

namespace variant {
struct PrefillOnlyHybrid {
  Tokens chunk = kDefaultHybridChunk;
};
struct PagedAttention {};
struct ChunkedPrefill {
  Tokens chunk = kDefaultChunkedPrefillChunk;
};
struct TensorParallel {
  std::uint32_t degree = 2;
};
struct PipelineParallel {
  std::uint32_t degree = 2;
};
}  // namespace variant

using EngineVariant = std::variant<variant::PrefillOnlyHybrid, variant::PagedAttention,
                                   variant::ChunkedPrefill, variant::TensorParallel,
                                   variant::PipelineParallel>;

// "prefillonly", "paged", "chunked[:chunk]", "tp[:degree]", "pp[:degree]".
EngineVariant parse_variant(std::string_view text);
std::string to_string(const EngineVariant& v);
void validate(const EngineVariant& v);

bool is_prefill_only(const EngineVariant& v);
// GPUs one engine instance occupies.
std::uint32_t gpus_per_instance(const EngineVariant& v);
// Memory mode that bounds the variant's input length.
PrefillMode memory_mode(const EngineVariant& v);
// Device the memory mode is evaluated on; parallel variants pool their GPUs.
GpuSpec memory_device(const EngineVariant& v, const GpuSpec& gpu);
Tokens variant_max_input_length(const EngineVariant& v, const ModelGeometry& geom, const GpuSpec& gpu);

struct CostParams {
  double c_linear = 0.0;  // seconds per miss token
  double c_attn = 0.0;    // seconds per causal (query, key) pair
  double c_fixed = 0.0;   // seconds per request
  // Chunked attention penalty is 1 + chunk_penalty_k / chunk.
  double chunk_penalty_k = 0.0;
  double comm_bytes_per_token_per_layer = 0.0;
  double pp_bubble_fraction = 0.15;

  double chunk_attn_penalty(Tokens chunk, Tokens n_input) const;
  void validate() const;
};

// Knobs carried by GPU preset files. Unset overrides are derived from the
// model shape and the device rates.
struct CostKnobs {
  double chunk_penalty_k = 0.0;
  double pp_bubble_fraction = 0.15;
  std::optional<double> c_linear;
  std::optional<double> c_attn;
  std::optional<double> c_fixed;
  std::optional<double> comm_bytes_per_token_per_layer;
};

CostParams derive_cost_params(const ModelGeometry& geom, const GpuSpec& gpu, const CostKnobs& knobs = {});

double execute_time(const EngineVariant& v, const ModelGeometry& geom, const GpuSpec& gpu,
                    const CostParams& params, Tokens n_input, Tokens n_cached);

// Solves chunk_penalty_k so ChunkedPrefill(chunk) loses `throughput_loss` of
// PagedAttention throughput at n_input tokens with nothing cached.
double calibrate_chunk_penalty(const CostParams& params, Tokens n_input, Tokens chunk,
                               double throughput_loss);

// Variant, shapes and costs bound together with the MIL precomputed.
class ExecModel {
 public:
  ExecModel(EngineVariant v, ModelGeometry geom, GpuSpec gpu, CostParams params);

  const EngineVariant& variant() const noexcept { return variant_; }
  const ModelGeometry& geometry() const noexcept { return geom_; }
  const GpuSpec& gpu() const noexcept { return gpu_; }
  const CostParams& params() const noexcept { return params_; }
  Tokens max_input_length() const noexcept { return mil_; }
  bool servable(Tokens n_input) const noexcept { return n_input <= mil_; }

  // Request latency. Throws CapacityError beyond the MIL.
  double execute_time(Tokens n_input, Tokens n_cached) const;

  // Time until the instance can admit its next request. Equals execute_time
  // except for pipeline parallelism, whose stages overlap consecutive
  // requests at a rate reduced by the bubble fraction.
  double admission_interval(Tokens n_input, Tokens n_cached, double bubble_fraction) const;

 private:
  EngineVariant variant_;
  ModelGeometry geom_;
  GpuSpec gpu_;
  CostParams params_;
  Tokens mil_;
};

}  // namespace prefillsim
