#pragma once

// Request selection for one engine instance. Exactly one request is picked
// per step; the caller removes it from the queue.
//
//   Fifo            earliest arrival
//   SrjfStatic      smallest JCT estimated once at arrival
//   SrjfCalibrated  smallest jct(n_input, n_cached now) - lambda * waited
//
// Ties go to the earlier arrival, then the smaller request id.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>

#include "prefillsim/jct.hpp"
#include "prefillsim/prefix_cache.hpp"

namespace prefillsim {

enum class Scoring {
  kProxy,    // cache-miss tokens
  kProfile,  // fitted JctProfile, seconds
};

// Lambda carries the unit of the score per second of waiting: tokens/s under
// proxy scoring, s/s under profile scoring.
inline constexpr double kDefaultLambdaProxy = 500.0;
inline constexpr double kDefaultLambdaProfile = 0.5;

double default_lambda(Scoring scoring) noexcept;

namespace policy {
struct Fifo {};
struct SrjfStatic {
  Scoring scoring = Scoring::kProxy;
};
struct SrjfCalibrated {
  double lambda = kDefaultLambdaProxy;
  Scoring scoring = Scoring::kProxy;
};
}  // namespace policy

using Policy = std::variant<policy::Fifo, policy::SrjfStatic, policy::SrjfCalibrated>;

// "fifo", "srjf", "srjf-calibrated"; lambda defaults per scoring mode.
Policy make_policy(std::string_view name, Scoring scoring, std::optional<double> lambda = std::nullopt);
Scoring parse_scoring(std::string_view text);
std::string to_string(const Policy& p);
std::string to_string(Scoring s);
// Lambda of a calibrated policy, 0 otherwise.
double policy_lambda(const Policy& p) noexcept;
void validate(const Policy& p);

struct WaitingRequest {
  std::uint64_t id = 0;
  double arrival = 0.0;
  Tokens n_input = 0;
  // Block keys of the request's tokens, for cache probes.
  std::span<const BlockHash> chain;
  double frozen_jct = 0.0;
};

// JCT under the scoring mode. Profile scoring needs a profile (ConfigError otherwise).
double estimate_jct(Scoring scoring, const JctProfile* profile, Tokens n_input, Tokens n_cached);

// Sets frozen_jct from the current cache state; used when a request arrives.
void freeze_jct(WaitingRequest& request, const PrefixCache& cache, const JctProfile* profile, Scoring scoring);

// estimate_jct - lambda * (now - arrival). Throws ConfigError if now < arrival.
double score(const WaitingRequest& request, Tokens n_cached, const policy::SrjfCalibrated& policy,
             const JctProfile* profile, double now);

// Index of the selected request. Throws ConfigError on an empty queue.
std::size_t schedule_next(std::span<const WaitingRequest> queue, const PrefixCache& cache,
                          const JctProfile* profile, const Policy& policy, double now);

}  // namespace prefillsim
