#pragma once

// Discrete-event simulation of N engine instances behind a sticky
// user-id round-robin router. Each instance owns a waiting queue, a prefix
// cache and a cost model, and runs requests one at a time (pipeline-parallel
// instances overlap requests across their stages).
//
// Events at equal timestamps are handled completions first, then pipeline
// slot releases, then arrivals; idle instances are then dispatched in index
// order. A request's KV enters the cache when it completes.

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "prefillsim/exec_model.hpp"
#include "prefillsim/jct.hpp"
#include "prefillsim/scheduler.hpp"
#include "prefillsim/workload.hpp"

namespace prefillsim {

class Router {
 public:
  explicit Router(std::size_t num_instances);

  // The user's instance; first-seen users are assigned round-robin.
  std::size_t route(const Request& request);
  std::size_t route_user(std::uint64_t user_id);

  const std::unordered_map<std::uint64_t, std::size_t>& assignments() const noexcept { return assignments_; }

 private:
  std::size_t num_instances_;
  std::size_t next_rr_ = 0;
  std::unordered_map<std::uint64_t, std::size_t> assignments_;
};

struct SimConfig {
  std::size_t num_instances = 1;
  EngineVariant variant = variant::PrefillOnlyHybrid{};
  Policy policy = policy::SrjfCalibrated{};
  ModelGeometry geometry;
  GpuSpec gpu;
  CostParams cost_params;
  Tokens block_tokens = kDefaultBlockTokens;
  // Cache capacity per instance. Unset: what is left next to a user_mil-token
  // request in the variant's memory mode.
  std::optional<Tokens> cache_capacity_tokens;
  // Longest request the memory plan reserves room for. Unset: the trace maximum.
  std::optional<Tokens> user_mil;
  // Unset: 0 for traces of equal-length requests, else cost_params.pp_bubble_fraction.
  std::optional<double> pp_bubble_fraction;
  // Needed by profile scoring; fitted from the instance cost model when unset.
  std::optional<JctProfile> jct_profile;
  // Seeds arrival processes in sweeps.
  std::uint64_t seed = 0;
  ArrivalOptions arrivals;

  void validate() const;
};

struct RequestRecord {
  std::uint64_t id = 0;
  std::uint64_t user_id = 0;
  std::size_t instance = 0;
  double arrival = 0.0;
  double start = 0.0;
  double completion = 0.0;
  Tokens n_input = 0;
  Tokens n_cached = 0;

  double latency() const noexcept { return completion - arrival; }
  double service_time() const noexcept { return completion - start; }
};

struct SimReport {
  std::vector<RequestRecord> requests;  // ordered by id
  double mean_latency = 0.0;
  double p99_latency = 0.0;
  double throughput = 0.0;  // requests per second over the makespan
  double makespan = 0.0;    // last completion minus first arrival
  Tokens cache_hit_tokens = 0;
  std::size_t cache_hit_requests = 0;
  std::vector<double> utilization;  // busy fraction of the makespan, per instance
  Tokens cache_capacity_tokens = 0;

  double mean_utilization() const noexcept;
};

// Nearest-rank percentile, q in (0, 1]. 0 for an empty sample.
double percentile_nearest_rank(std::vector<double> values, double q);

// Throws CapacityError naming every request above the variant's MIL.
SimReport run(const Trace& trace, const SimConfig& config);

// The policy each engine ships with: srjf-calibrated for PrefillOnly, fifo otherwise.
Policy native_policy(const EngineVariant& v);

// Requests per second with the whole trace arriving at 0, under the variant's
// native policy on `num_instances` instances.
double saturation_throughput(const EngineVariant& v, const ModelGeometry& geom, const GpuSpec& gpu,
                             const CostParams& params, const Trace& trace, std::size_t num_instances = 1);

struct SweepPoint {
  double multiplier = 0.0;
  double qps = 0.0;
  SimReport report;
};

inline const std::vector<double> kDefaultMultipliers{0.25, 0.5, 1.0, 2.0, 3.0, 4.0};

// Reference rate x: saturation throughput of PrefillOnly on the same number
// of GPUs as `config` occupies.
double reference_qps(const Trace& trace, const SimConfig& config);

// Runs the trace with Poisson arrivals at m * x for each multiplier. x is
// reference_qps unless given.
std::vector<SweepPoint> sweep_qps(const Trace& trace, const SimConfig& config, const std::vector<double>& multipliers,
                                  std::optional<double> base_qps = std::nullopt);

std::string report_csv_header();
std::string report_csv_row(const SimConfig& config, double qps, const SimReport& report);

}  // namespace prefillsim
