#include "prefillsim/sim.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <tuple>

#include <fmt/format.h>

#include "prefillsim/errors.hpp"

namespace prefillsim {

namespace {

enum EventKind : int { kCompletion = 0, kSlotFree = 1, kArrival = 2 };

struct Event {
  double t;
  int kind;
  std::uint64_t seq;
  std::size_t instance;
  std::size_t request;

  bool operator>(const Event& o) const { return std::tie(t, kind, seq) > std::tie(o.t, o.kind, o.seq); }
};

struct Instance {
  explicit Instance(CacheConfig cfg) : cache(cfg) {}

  PrefixCache cache;
  std::vector<WaitingRequest> queue;
  std::vector<std::size_t> queue_index;  // trace index per queue entry
  bool slot_free = true;
  std::size_t in_flight = 0;
  double busy_since = 0.0;
  double busy_total = 0.0;
};

bool needs_profile(const Policy& p) {
  if (const auto* s = std::get_if<policy::SrjfStatic>(&p)) return s->scoring == Scoring::kProfile;
  if (const auto* c = std::get_if<policy::SrjfCalibrated>(&p)) return c->scoring == Scoring::kProfile;
  return false;
}

std::optional<Scoring> static_scoring(const Policy& p) {
  if (const auto* s = std::get_if<policy::SrjfStatic>(&p)) return s->scoring;
  return std::nullopt;
}

}  // namespace

Router::Router(std::size_t num_instances) : num_instances_(num_instances) {
  if (num_instances == 0) throw ConfigError("router needs at least one instance");
}

std::size_t Router::route(const Request& request) { return route_user(request.user_id); }

std::size_t Router::route_user(std::uint64_t user_id) {
  const auto [it, inserted] = assignments_.try_emplace(user_id, next_rr_);
  if (inserted) next_rr_ = (next_rr_ + 1) % num_instances_;
  return it->second;
}

void SimConfig::validate() const {
  if (num_instances == 0) throw ConfigError("num_instances must be >= 1");
  if (block_tokens == 0) throw ConfigError("block_tokens must be >= 1");
  prefillsim::validate(variant);
  prefillsim::validate(policy);
  geometry.validate();
  gpu.validate();
  cost_params.validate();
  if (pp_bubble_fraction && !(*pp_bubble_fraction >= 0.0 && *pp_bubble_fraction < 1.0)) {
    throw ConfigError("pp_bubble_fraction must lie in [0, 1)");
  }
}

double SimReport::mean_utilization() const noexcept {
  if (utilization.empty()) return 0.0;
  double s = 0.0;
  for (const double u : utilization) s += u;
  return s / static_cast<double>(utilization.size());
}

double percentile_nearest_rank(std::vector<double> values, double q) {
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("percentile must lie in (0, 1]");
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

SimReport run(const Trace& trace, const SimConfig& config) {
  config.validate();
  trace.validate();
  SimReport report;
  report.utilization.assign(config.num_instances, 0.0);

  const ExecModel exec(config.variant, config.geometry, config.gpu, config.cost_params);
  std::vector<std::uint64_t> offenders;
  for (const auto& r : trace.requests) {
    if (!exec.servable(r.n_input())) offenders.push_back(r.id);
  }
  if (!offenders.empty()) {
    std::sort(offenders.begin(), offenders.end());
    std::string ids;
    for (std::size_t i = 0; i < offenders.size(); ++i) ids += (i ? "," : "") + std::to_string(offenders[i]);
    const std::string what = fmt::format("{} of {} requests exceed the {} MIL of {} tokens on {}: ids {}",
                                         offenders.size(), trace.requests.size(), to_string(config.variant),
                                         exec.max_input_length(), config.gpu.name, ids);
    throw CapacityError(what, std::move(offenders));
  }
  if (trace.requests.empty()) return report;

  const Tokens user_mil = config.user_mil.value_or(trace.max_length());
  const Tokens capacity = config.cache_capacity_tokens.value_or(prefix_cache_capacity(
      config.geometry, memory_device(config.variant, config.gpu), user_mil, memory_mode(config.variant)));
  report.cache_capacity_tokens = capacity;
  const double bubble =
      config.pp_bubble_fraction.value_or(trace.uniform_lengths() ? 0.0 : config.cost_params.pp_bubble_fraction);

  std::optional<JctProfile> profile = config.jct_profile;
  if (!profile && needs_profile(config.policy)) profile = profile_from_model(exec);
  const JctProfile* profile_ptr = profile ? &*profile : nullptr;
  const auto freeze_scoring = static_scoring(config.policy);

  const std::size_t n = trace.requests.size();
  std::vector<std::vector<BlockHash>> chains(n);
  for (std::size_t i = 0; i < n; ++i) chains[i] = block_chain(*trace.requests[i].tokens, config.block_tokens);

  std::vector<Instance> instances;
  instances.reserve(config.num_instances);
  for (std::size_t i = 0; i < config.num_instances; ++i) instances.emplace_back(CacheConfig{config.block_tokens, capacity});

  std::vector<RequestRecord> records(n);
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
  std::uint64_t seq = 0;
  Router router(config.num_instances);
  for (std::size_t i = 0; i < n; ++i) {
    events.push({trace.requests[i].arrival, kArrival, seq++, 0, i});
  }

  while (!events.empty()) {
    const double now = events.top().t;
    while (!events.empty() && events.top().t == now) {
      const Event e = events.top();
      events.pop();
      if (e.kind == kArrival) {
        const Request& r = trace.requests[e.request];
        const std::size_t inst_id = router.route(r);
        Instance& inst = instances[inst_id];
        WaitingRequest w{r.id, r.arrival, r.n_input(), chains[e.request], 0.0};
        if (freeze_scoring) freeze_jct(w, inst.cache, profile_ptr, *freeze_scoring);
        inst.queue.push_back(w);
        inst.queue_index.push_back(e.request);
        auto& rec = records[e.request];
        rec.id = r.id;
        rec.user_id = r.user_id;
        rec.instance = inst_id;
        rec.arrival = r.arrival;
        rec.n_input = r.n_input();
      } else if (e.kind == kCompletion) {
        Instance& inst = instances[e.instance];
        inst.cache.insert_chain(chains[e.request], now);
        records[e.request].completion = now;
        if (--inst.in_flight == 0) inst.busy_total += now - inst.busy_since;
      } else {
        instances[e.instance].slot_free = true;
      }
    }

    for (std::size_t i = 0; i < instances.size(); ++i) {
      Instance& inst = instances[i];
      while (inst.slot_free && !inst.queue.empty()) {
        const std::size_t pick = schedule_next(inst.queue, inst.cache, profile_ptr, config.policy, now);
        const std::size_t idx = inst.queue_index[pick];
        inst.queue.erase(inst.queue.begin() + static_cast<std::ptrdiff_t>(pick));
        inst.queue_index.erase(inst.queue_index.begin() + static_cast<std::ptrdiff_t>(pick));

        const Request& r = trace.requests[idx];
        const Tokens cached = std::min(inst.cache.match_chain(chains[idx]), r.n_input());
        const double latency = exec.execute_time(r.n_input(), cached);
        const double interval = exec.admission_interval(r.n_input(), cached, bubble);
        records[idx].start = now;
        records[idx].n_cached = cached;
        if (inst.in_flight++ == 0) inst.busy_since = now;
        inst.slot_free = false;
        events.push({now + latency, kCompletion, seq++, i, idx});
        events.push({now + interval, kSlotFree, seq++, i, idx});
      }
    }
  }

  std::sort(records.begin(), records.end(), [](const RequestRecord& a, const RequestRecord& b) { return a.id < b.id; });
  double first_arrival = records.front().arrival;
  double last_completion = records.front().completion;
  double latency_sum = 0.0;
  std::vector<double> latencies;
  latencies.reserve(n);
  for (const auto& rec : records) {
    first_arrival = std::min(first_arrival, rec.arrival);
    last_completion = std::max(last_completion, rec.completion);
    latency_sum += rec.latency();
    latencies.push_back(rec.latency());
    report.cache_hit_tokens += rec.n_cached;
    if (rec.n_cached > 0) ++report.cache_hit_requests;
  }
  report.mean_latency = latency_sum / static_cast<double>(n);
  report.p99_latency = percentile_nearest_rank(std::move(latencies), 0.99);
  report.makespan = last_completion - first_arrival;
  report.throughput = report.makespan > 0.0 ? static_cast<double>(n) / report.makespan : 0.0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    report.utilization[i] = report.makespan > 0.0 ? instances[i].busy_total / report.makespan : 0.0;
  }
  report.requests = std::move(records);
  return report;
}

Policy native_policy(const EngineVariant& v) {
  if (is_prefill_only(v)) return policy::SrjfCalibrated{};
  return policy::Fifo{};
}

double saturation_throughput(const EngineVariant& v, const ModelGeometry& geom, const GpuSpec& gpu,
                             const CostParams& params, const Trace& trace, std::size_t num_instances) {
  SimConfig cfg;
  cfg.num_instances = num_instances;
  cfg.variant = v;
  cfg.policy = native_policy(v);
  cfg.geometry = geom;
  cfg.gpu = gpu;
  cfg.cost_params = params;
  return run(all_at_once(trace), cfg).throughput;
}

double reference_qps(const Trace& trace, const SimConfig& config) {
  const std::size_t gpus = config.num_instances * gpus_per_instance(config.variant);
  return saturation_throughput(variant::PrefillOnlyHybrid{}, config.geometry, config.gpu, config.cost_params, trace,
                               gpus);
}

std::vector<SweepPoint> sweep_qps(const Trace& trace, const SimConfig& config, const std::vector<double>& multipliers,
                                  std::optional<double> base_qps) {
  for (const double m : multipliers) {
    if (!(m > 0.0) || !std::isfinite(m)) throw ConfigError(fmt::format("QPS multiplier must be > 0, got {}", m));
  }
  config.validate();
  const double x = base_qps.value_or(multipliers.empty() ? 0.0 : reference_qps(trace, config));
  if (!multipliers.empty() && !(x > 0.0)) throw ConfigError("reference QPS must be > 0");
  std::vector<SweepPoint> points;
  points.reserve(multipliers.size());
  for (const double m : multipliers) {
    const double qps = m * x;
    const Trace arrivals = poisson_arrivals(trace, qps, config.seed, config.arrivals);
    points.push_back({m, qps, run(arrivals, config)});
  }
  return points;
}

std::string report_csv_header() {
  return "variant,policy,lambda,qps,mean_latency_s,p99_latency_s,throughput_rps,cache_hit_requests,"
         "cache_hit_tokens,utilization";
}

std::string report_csv_row(const SimConfig& config, double qps, const SimReport& report) {
  return fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{},{},{:.9g}", to_string(config.variant),
                     to_string(config.policy), policy_lambda(config.policy), qps, report.mean_latency,
                     report.p99_latency, report.throughput, report.cache_hit_requests, report.cache_hit_tokens,
                     report.mean_utilization());
}

}  // namespace prefillsim
