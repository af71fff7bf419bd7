#include "prefillsim/model_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "prefillsim/errors.hpp"

namespace prefillsim {

namespace {

bool valid_dtype(std::uint32_t b) { return b == 1 || b == 2 || b == 4; }

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

Bytes activation_bytes(const ModelGeometry& geom, Tokens live_tokens) {
  const double spike = geom.act_overhead_factor *
                       static_cast<double>(intermediate_bytes_per_token(geom)) *
                       static_cast<double>(live_tokens);
  return static_cast<Bytes>(std::ceil(spike));
}

}  // namespace

void ModelGeometry::validate() const {
  if (num_layers == 0 || hidden_size == 0 || num_kv_heads == 0 || head_dim == 0 ||
      intermediate_size == 0 || weight_bytes == 0) {
    throw ConfigError(fmt::format("model '{}': all shape counts must be positive", name));
  }
  if (!valid_dtype(kv_dtype_bytes) || !valid_dtype(act_dtype_bytes)) {
    throw ConfigError(fmt::format("model '{}': dtype bytes must be 1, 2 or 4", name));
  }
  if (intermediate_size < hidden_size) {
    throw ConfigError(fmt::format("model '{}': intermediate_size < hidden_size", name));
  }
  if (!(act_overhead_factor >= 1.0)) {
    throw ConfigError(fmt::format("model '{}': act_overhead_factor must be >= 1", name));
  }
}

void GpuSpec::validate() const {
  if (total_memory == 0) throw ConfigError(fmt::format("gpu '{}': total_memory must be > 0", name));
  if (!(linear_rate > 0.0) || !(attn_rate > 0.0) || !(link_bandwidth > 0.0)) {
    throw ConfigError(fmt::format("gpu '{}': rates must be > 0", name));
  }
  if (!(fixed_overhead >= 0.0)) {
    throw ConfigError(fmt::format("gpu '{}': fixed_overhead must be >= 0", name));
  }
}

std::string to_string(const PrefillMode& m) {
  return std::visit(Overloaded{
                        [](const mode::Full&) { return std::string("full"); },
                        [](const mode::KvDiscard&) { return std::string("kv-discard"); },
                        [](const mode::Chunked& c) { return fmt::format("chunked({})", c.chunk_size); },
                        [](const mode::Hybrid& c) { return fmt::format("hybrid({})", c.chunk_size); },
                    },
                    m);
}

KvBytesPerToken kv_bytes_per_token(const ModelGeometry& geom) {
  const Bytes per_layer = 2 * geom.num_kv_heads * geom.head_dim * geom.kv_dtype_bytes;
  return {per_layer, per_layer * geom.num_layers};
}

Bytes intermediate_bytes_per_token(const ModelGeometry& geom) {
  return 2 * geom.intermediate_size * geom.act_dtype_bytes;
}

Bytes peak_prefill_memory(const ModelGeometry& geom, Tokens n_tokens, const PrefillMode& m) {
  if (n_tokens == 0) throw ConfigError("peak_prefill_memory: n_tokens must be > 0");
  const auto kv = kv_bytes_per_token(geom);
  return std::visit(
      Overloaded{
          [&](const mode::Full&) {
            return geom.weight_bytes + kv.total * n_tokens + activation_bytes(geom, n_tokens);
          },
          [&](const mode::KvDiscard&) {
            return geom.weight_bytes + kv.per_layer * n_tokens + activation_bytes(geom, n_tokens);
          },
          [&](const mode::Chunked& c) {
            if (c.chunk_size == 0) throw ConfigError("chunk_size must be > 0");
            return geom.weight_bytes + kv.total * n_tokens +
                   activation_bytes(geom, std::min(n_tokens, c.chunk_size));
          },
          [&](const mode::Hybrid& c) {
            if (c.chunk_size == 0) throw ConfigError("chunk_size must be > 0");
            return geom.weight_bytes + kv.per_layer * n_tokens +
                   activation_bytes(geom, std::min(n_tokens, c.chunk_size));
          },
      },
      m);
}

Tokens max_input_length(const ModelGeometry& geom, const GpuSpec& gpu, const PrefillMode& m) {
  if (gpu.total_memory < geom.weight_bytes) {
    throw ConfigError(fmt::format("gpu '{}' has less memory than the weights of '{}'", gpu.name,
                                  geom.name));
  }
  auto fits = [&](Tokens n) { return peak_prefill_memory(geom, n, m) <= gpu.total_memory; };
  if (!fits(1)) return 0;

  // Every mode stores at least one layer of KV per token, which bounds n.
  const Bytes headroom = gpu.total_memory - geom.weight_bytes;
  Tokens lo = 1;
  Tokens hi = headroom / kv_bytes_per_token(geom).per_layer + 1;
  while (hi - lo > 1) {
    const Tokens mid = lo + (hi - lo) / 2;
    (fits(mid) ? lo : hi) = mid;
  }
  return lo;
}

Tokens prefix_cache_capacity(const ModelGeometry& geom, const GpuSpec& gpu, Tokens user_mil,
                             const PrefillMode& m) {
  const Tokens limit = max_input_length(geom, gpu, m);
  if (user_mil > limit) {
    throw ConfigError(fmt::format("user MIL {} exceeds the {} MIL {} on {}", user_mil,
                                  to_string(m), limit, gpu.name));
  }
  if (user_mil == 0) return (gpu.total_memory - geom.weight_bytes) / kv_bytes_per_token(geom).total;
  const Bytes used = peak_prefill_memory(geom, user_mil, m);
  return (gpu.total_memory - used) / kv_bytes_per_token(geom).total;
}

double linear_flops_per_token(const ModelGeometry& geom) {
  const double h = static_cast<double>(geom.hidden_size);
  const double kv_width = static_cast<double>(geom.num_kv_heads * geom.head_dim);
  const double inter = static_cast<double>(geom.intermediate_size);
  const double params_per_layer = h * (h + 2.0 * kv_width) + h * h + 3.0 * h * inter;
  return 2.0 * params_per_layer * static_cast<double>(geom.num_layers);
}

double attention_flops_per_pair(const ModelGeometry& geom) {
  // QK^T and PV, each a multiply-add over the query width.
  return 4.0 * static_cast<double>(geom.hidden_size) * static_cast<double>(geom.num_layers);
}

double calibrate_act_overhead(const ModelGeometry& geom, const GpuSpec& gpu, Tokens target_mil) {
  if (target_mil == 0) throw ConfigError("calibration target must be > 0");
  if (gpu.total_memory <= geom.weight_bytes) throw ConfigError("no headroom above the weights");
  const double headroom = static_cast<double>(gpu.total_memory - geom.weight_bytes);
  const double per_token = headroom / static_cast<double>(target_mil);
  const double kv_total = static_cast<double>(kv_bytes_per_token(geom).total);
  const double factor = (per_token - kv_total) / static_cast<double>(intermediate_bytes_per_token(geom));
  if (!(factor >= 1.0)) {
    throw ConfigError(fmt::format("calibrated act_overhead_factor {} < 1 for '{}' on '{}'", factor,
                                  geom.name, gpu.name));
  }
  return factor;
}

}  // namespace prefillsim
