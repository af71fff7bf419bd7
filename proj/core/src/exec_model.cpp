#include "prefillsim/exec_model.hpp"

#include <charconv>
#include <cmath>
#include <fmt/format.h>

#include "prefillsim/errors.hpp"

namespace prefillsim {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

std::uint64_t parse_suffix(std::string_view text, std::string_view what) {
  std::uint64_t value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || value == 0) {
    throw ConfigError(fmt::format("invalid {} '{}'", what, text));
  }
  return value;
}

double causal_pairs(Tokens n_input, Tokens n_cached) {
  const double n = static_cast<double>(n_input);
  const double c = static_cast<double>(n_cached);
  return (n * n - c * c) / 2.0;
}

}  // namespace

EngineVariant parse_variant(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  const std::string_view arg = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  EngineVariant v;
  if (head == "prefillonly") {
    v = variant::PrefillOnlyHybrid{arg.empty() ? kDefaultHybridChunk : parse_suffix(arg, "chunk")};
  } else if (head == "paged") {
    if (!arg.empty()) throw ConfigError("paged takes no argument");
    v = variant::PagedAttention{};
  } else if (head == "chunked") {
    v = variant::ChunkedPrefill{arg.empty() ? kDefaultChunkedPrefillChunk : parse_suffix(arg, "chunk")};
  } else if (head == "tp") {
    v = variant::TensorParallel{static_cast<std::uint32_t>(arg.empty() ? 2 : parse_suffix(arg, "degree"))};
  } else if (head == "pp") {
    v = variant::PipelineParallel{static_cast<std::uint32_t>(arg.empty() ? 2 : parse_suffix(arg, "degree"))};
  } else {
    throw ConfigError(fmt::format("unknown variant '{}'", text));
  }
  validate(v);
  return v;
}

std::string to_string(const EngineVariant& v) {
  return std::visit(Overloaded{
                        [](const variant::PrefillOnlyHybrid&) { return std::string("prefillonly"); },
                        [](const variant::PagedAttention&) { return std::string("paged"); },
                        [](const variant::ChunkedPrefill& c) { return fmt::format("chunked:{}", c.chunk); },
                        [](const variant::TensorParallel& t) { return fmt::format("tp:{}", t.degree); },
                        [](const variant::PipelineParallel& p) { return fmt::format("pp:{}", p.degree); },
                    },
                    v);
}

void validate(const EngineVariant& v) {
  std::visit(Overloaded{
                 [](const variant::PrefillOnlyHybrid& h) {
                   if (h.chunk == 0) throw ConfigError("hybrid chunk must be >= 1");
                 },
                 [](const variant::PagedAttention&) {},
                 [](const variant::ChunkedPrefill& c) {
                   if (c.chunk == 0) throw ConfigError("chunked prefill chunk must be >= 1");
                 },
                 [](const variant::TensorParallel& t) {
                   if (t.degree < 2) throw ConfigError("tensor parallel degree must be >= 2");
                 },
                 [](const variant::PipelineParallel& p) {
                   if (p.degree < 2) throw ConfigError("pipeline parallel degree must be >= 2");
                 },
             },
             v);
}

bool is_prefill_only(const EngineVariant& v) {
  return std::holds_alternative<variant::PrefillOnlyHybrid>(v);
}

std::uint32_t gpus_per_instance(const EngineVariant& v) {
  if (const auto* tp = std::get_if<variant::TensorParallel>(&v)) return tp->degree;
  if (const auto* pp = std::get_if<variant::PipelineParallel>(&v)) return pp->degree;
  return 1;
}

PrefillMode memory_mode(const EngineVariant& v) {
  return std::visit(Overloaded{
                        [](const variant::PrefillOnlyHybrid& h) -> PrefillMode { return mode::Hybrid{h.chunk}; },
                        [](const variant::PagedAttention&) -> PrefillMode { return mode::Full{}; },
                        [](const variant::ChunkedPrefill& c) -> PrefillMode { return mode::Chunked{c.chunk}; },
                        [](const variant::TensorParallel&) -> PrefillMode { return mode::Full{}; },
                        [](const variant::PipelineParallel&) -> PrefillMode { return mode::Full{}; },
                    },
                    v);
}

GpuSpec memory_device(const EngineVariant& v, const GpuSpec& gpu) {
  GpuSpec pooled = gpu;
  pooled.total_memory = gpu.total_memory * gpus_per_instance(v);
  return pooled;
}

Tokens variant_max_input_length(const EngineVariant& v, const ModelGeometry& geom, const GpuSpec& gpu) {
  return max_input_length(geom, memory_device(v, gpu), memory_mode(v));
}

double CostParams::chunk_attn_penalty(Tokens chunk, Tokens n_input) const {
  if (chunk == 0) throw ConfigError("chunk must be >= 1");
  if (chunk >= n_input) return 1.0;
  return 1.0 + chunk_penalty_k / static_cast<double>(chunk);
}

void CostParams::validate() const {
  if (!(c_linear >= 0.0) || !(c_attn >= 0.0) || !(c_fixed >= 0.0) || !(chunk_penalty_k >= 0.0) ||
      !(comm_bytes_per_token_per_layer >= 0.0)) {
    throw ConfigError("cost parameters must be nonnegative");
  }
  if (!(pp_bubble_fraction >= 0.0 && pp_bubble_fraction < 1.0)) {
    throw ConfigError("pp_bubble_fraction must lie in [0, 1)");
  }
}

CostParams derive_cost_params(const ModelGeometry& geom, const GpuSpec& gpu, const CostKnobs& knobs) {
  CostParams p;
  p.c_linear = knobs.c_linear.value_or(linear_flops_per_token(geom) / gpu.linear_rate);
  p.c_attn = knobs.c_attn.value_or(attention_flops_per_pair(geom) / gpu.attn_rate);
  p.c_fixed = knobs.c_fixed.value_or(gpu.fixed_overhead);
  p.chunk_penalty_k = knobs.chunk_penalty_k;
  // Two all-reduces of the hidden state per layer (attention out-proj, MLP down-proj).
  p.comm_bytes_per_token_per_layer = knobs.comm_bytes_per_token_per_layer.value_or(
      2.0 * static_cast<double>(geom.hidden_size * geom.act_dtype_bytes));
  p.pp_bubble_fraction = knobs.pp_bubble_fraction;
  p.validate();
  return p;
}

namespace {

double latency_unchecked(const EngineVariant& v, const ModelGeometry& geom, const GpuSpec& gpu,
                         const CostParams& params, Tokens n_input, Tokens n_cached) {
  if (n_cached > n_input) throw ConfigError("n_cached exceeds n_input");
  const double miss = static_cast<double>(n_input - n_cached);
  const double linear = params.c_linear * miss;
  const double attn = params.c_attn * causal_pairs(n_input, n_cached);
  const double base = params.c_fixed + linear + attn;

  return std::visit(
      Overloaded{
          [&](const variant::PrefillOnlyHybrid&) { return base; },
          [&](const variant::PagedAttention&) { return base; },
          [&](const variant::ChunkedPrefill& c) {
            return params.c_fixed + linear + params.chunk_attn_penalty(c.chunk, n_input) * attn;
          },
          [&](const variant::TensorParallel& t) {
            const double p = t.degree;
            // Ring all-reduce moves 2 (P-1)/P of each buffer per rank.
            const double comm = static_cast<double>(geom.num_layers) * 2.0 *
                                params.comm_bytes_per_token_per_layer * miss * (p - 1.0) /
                                (p * gpu.link_bandwidth);
            return params.c_fixed + (base - params.c_fixed) / p + comm;
          },
          [&](const variant::PipelineParallel&) { return base; },
      },
      v);
}

}  // namespace

double execute_time(const EngineVariant& v, const ModelGeometry& geom, const GpuSpec& gpu,
                    const CostParams& params, Tokens n_input, Tokens n_cached) {
  const Tokens mil = variant_max_input_length(v, geom, gpu);
  if (n_input > mil) {
    throw CapacityError(fmt::format("{} tokens exceed the {} MIL of {} on {}", n_input, to_string(v),
                                    mil, gpu.name));
  }
  return latency_unchecked(v, geom, gpu, params, n_input, n_cached);
}

double calibrate_chunk_penalty(const CostParams& params, Tokens n_input, Tokens chunk, double throughput_loss) {
  if (!(throughput_loss > 0.0 && throughput_loss < 1.0)) throw ConfigError("throughput_loss must lie in (0, 1)");
  if (chunk == 0 || chunk >= n_input) throw ConfigError("calibration chunk must be in [1, n_input)");
  const double attn = params.c_attn * causal_pairs(n_input, 0);
  if (!(attn > 0.0)) throw ConfigError("attention cost must be positive to calibrate a chunk penalty");
  const double paged = params.c_fixed + params.c_linear * static_cast<double>(n_input) + attn;
  // chunked = paged / (1 - loss) and chunked - paged = (k / chunk) * attn.
  const double extra = paged * throughput_loss / (1.0 - throughput_loss);
  return extra / attn * static_cast<double>(chunk);
}

ExecModel::ExecModel(EngineVariant v, ModelGeometry geom, GpuSpec gpu, CostParams params)
    : variant_(std::move(v)), geom_(std::move(geom)), gpu_(std::move(gpu)), params_(params) {
  prefillsim::validate(variant_);
  geom_.validate();
  gpu_.validate();
  params_.validate();
  mil_ = variant_max_input_length(variant_, geom_, gpu_);
}

double ExecModel::execute_time(Tokens n_input, Tokens n_cached) const {
  if (n_input > mil_) {
    throw CapacityError(fmt::format("{} tokens exceed the {} MIL of {} on {}", n_input,
                                    to_string(variant_), mil_, gpu_.name));
  }
  return latency_unchecked(variant_, geom_, gpu_, params_, n_input, n_cached);
}

double ExecModel::admission_interval(Tokens n_input, Tokens n_cached, double bubble_fraction) const {
  const double latency = execute_time(n_input, n_cached);
  if (const auto* pp = std::get_if<variant::PipelineParallel>(&variant_)) {
    if (!(bubble_fraction >= 0.0 && bubble_fraction < 1.0)) {
      throw ConfigError("bubble fraction must lie in [0, 1)");
    }
    return latency / (static_cast<double>(pp->degree) * (1.0 - bubble_fraction));
  }
  return latency;
}

}  // namespace prefillsim
