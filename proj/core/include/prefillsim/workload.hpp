#pragma once

// Synthetic prefill-only traces. A request is a user profile prefix followed
// by a request-specific suffix; token ids are pure functions of
// (seed, user, position) and (seed, request id, position), so requests of one
// user share their profile prefix token-for-token and a trace file only needs
// lengths and the seed to be rebuilt.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "prefillsim/prefix_cache.hpp"

namespace prefillsim {

struct Request {
  std::uint64_t id = 0;
  std::uint64_t user_id = 0;
  double arrival = 0.0;
  Tokens profile_len = 0;
  Tokens total_len = 0;
  std::uint64_t seed = 0;
  std::shared_ptr<const std::vector<Token>> tokens;

  Tokens n_input() const noexcept { return total_len; }
};

// Builds the request's tokens from its lengths and seed.
Request make_request(std::uint64_t id, std::uint64_t user_id, Tokens profile_len, Tokens total_len,
                     std::uint64_t seed, double arrival = 0.0);

// Request with caller-supplied tokens; profile_len is informational.
Request make_request_with_tokens(std::uint64_t id, std::uint64_t user_id, std::vector<Token> tokens,
                                 Tokens profile_len, double arrival = 0.0);

struct Trace {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<Request> requests;

  Tokens max_length() const noexcept;
  Tokens total_tokens() const noexcept;
  bool uniform_lengths() const noexcept;
  // Throws ConfigError if arrivals decrease or ids repeat.
  void validate() const;
};

inline constexpr std::size_t kPostRecUsers = 20;
inline constexpr std::size_t kPostRecRequestsPerUser = 50;
inline constexpr Tokens kPostRecSuffixTokens = 150;
inline constexpr double kPostRecProfileMean = 14000.0;
inline constexpr double kPostRecProfileStddev = 3000.0;
inline constexpr Tokens kPostRecProfileMin = 11000;
inline constexpr Tokens kPostRecProfileMax = 17000;

inline constexpr std::size_t kCreditUsers = 60;
inline constexpr Tokens kCreditMinTokens = 40000;
inline constexpr Tokens kCreditMaxTokens = 60000;

// 20 users x 50 requests; profile ~ Normal(14000, 3000) clamped to
// [11000, 17000], plus 150 suffix tokens per request. All arrivals at 0.
Trace gen_post_recommendation(std::uint64_t seed);

// 60 users x 1 request, length uniform on [40000, 60000]. All arrivals at 0.
Trace gen_credit_verification(std::uint64_t seed);

// "post-rec" or "credit".
Trace generate_trace(const std::string& name, std::uint64_t seed);

struct ArrivalOptions {
  // Shuffle requests individually instead of keeping each user's session together.
  bool interleave_users = false;
};

// Reorders requests by a seeded shuffle and assigns cumulative Exp(rate) gaps.
// Throws ConfigError unless rate > 0.
Trace poisson_arrivals(const Trace& trace, double rate, std::uint64_t seed, const ArrivalOptions& opts = {});

// All arrivals reset to 0, request order by id.
Trace all_at_once(const Trace& trace);

// CSV with header id,user_id,arrival_seconds,profile_len,total_len,seed.
void write_trace_csv(const Trace& trace, const std::filesystem::path& path);
std::string trace_csv(const Trace& trace);
Trace read_trace_csv(const std::filesystem::path& path);

// A generator name or a path to a trace CSV (which keeps its own seeds).
Trace load_trace(const std::string& name_or_path, std::uint64_t seed);

}  // namespace prefillsim
