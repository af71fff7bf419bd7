#include "prefillsim/scheduler.hpp"

#include <cmath>
#include <limits>
#include <tuple>

#include <fmt/format.h>

#include "prefillsim/errors.hpp"

namespace prefillsim {

double default_lambda(Scoring scoring) noexcept {
  return scoring == Scoring::kProxy ? kDefaultLambdaProxy : kDefaultLambdaProfile;
}

Scoring parse_scoring(std::string_view text) {
  if (text == "proxy") return Scoring::kProxy;
  if (text == "profile") return Scoring::kProfile;
  throw ConfigError(fmt::format("unknown scoring '{}' (expected proxy or profile)", text));
}

std::string to_string(Scoring s) { return s == Scoring::kProxy ? "proxy" : "profile"; }

Policy make_policy(std::string_view name, Scoring scoring, std::optional<double> lambda) {
  Policy p;
  if (name == "fifo") {
    p = policy::Fifo{};
  } else if (name == "srjf") {
    p = policy::SrjfStatic{scoring};
  } else if (name == "srjf-calibrated") {
    p = policy::SrjfCalibrated{lambda.value_or(default_lambda(scoring)), scoring};
  } else {
    throw ConfigError(fmt::format("unknown policy '{}' (expected fifo, srjf or srjf-calibrated)", name));
  }
  validate(p);
  return p;
}

std::string to_string(const Policy& p) {
  if (std::holds_alternative<policy::Fifo>(p)) return "fifo";
  if (std::holds_alternative<policy::SrjfStatic>(p)) return "srjf";
  return "srjf-calibrated";
}

double policy_lambda(const Policy& p) noexcept {
  if (const auto* c = std::get_if<policy::SrjfCalibrated>(&p)) return c->lambda;
  return 0.0;
}

void validate(const Policy& p) {
  if (const auto* c = std::get_if<policy::SrjfCalibrated>(&p)) {
    if (!(c->lambda >= 0.0) || !std::isfinite(c->lambda)) throw ConfigError("lambda must be finite and >= 0");
  }
}

double estimate_jct(Scoring scoring, const JctProfile* profile, Tokens n_input, Tokens n_cached) {
  if (scoring == Scoring::kProxy) return static_cast<double>(proxy_miss(n_input, n_cached));
  if (profile == nullptr) throw ConfigError("profile scoring requires a JCT profile");
  return get_jct(*profile, n_input, n_cached);
}

void freeze_jct(WaitingRequest& request, const PrefixCache& cache, const JctProfile* profile, Scoring scoring) {
  const Tokens cached = std::min(cache.match_chain(request.chain), request.n_input);
  request.frozen_jct = estimate_jct(scoring, profile, request.n_input, cached);
}

double score(const WaitingRequest& request, Tokens n_cached, const policy::SrjfCalibrated& policy,
             const JctProfile* profile, double now) {
  if (now < request.arrival) {
    throw ConfigError(fmt::format("request {} scored at {} before its arrival at {}", request.id, now,
                                  request.arrival));
  }
  return estimate_jct(policy.scoring, profile, request.n_input, n_cached) - policy.lambda * (now - request.arrival);
}

std::size_t schedule_next(std::span<const WaitingRequest> queue, const PrefixCache& cache,
                          const JctProfile* profile, const Policy& policy, double now) {
  if (queue.empty()) throw ConfigError("schedule_next on an empty queue");
  auto key = [&](const WaitingRequest& r) -> double {
    if (std::holds_alternative<policy::Fifo>(policy)) return 0.0;
    if (std::holds_alternative<policy::SrjfStatic>(policy)) return r.frozen_jct;
    const auto& cal = std::get<policy::SrjfCalibrated>(policy);
    const Tokens cached = std::min(cache.match_chain(r.chain), r.n_input);
    return score(r, cached, cal, profile, now);
  };
  std::size_t best = 0;
  auto best_key = std::make_tuple(key(queue[0]), queue[0].arrival, queue[0].id);
  for (std::size_t i = 1; i < queue.size(); ++i) {
    const auto k = std::make_tuple(key(queue[i]), queue[i].arrival, queue[i].id);
    if (k < best_key) {
      best_key = k;
      best = i;
    }
  }
  return best;
}

}  // namespace prefillsim
