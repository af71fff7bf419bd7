#include "prefillsim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "prefillsim/errors.hpp"
#include "prefillsim/rng.hpp"

namespace prefillsim {

namespace {

constexpr std::uint64_t kDomainProfileToken = 0x70726f66ULL;
constexpr std::uint64_t kDomainSuffixToken = 0x73756666ULL;
constexpr std::uint64_t kDomainPostRec = 0x706f7374ULL;
constexpr std::uint64_t kDomainCredit = 0x63726564ULL;
constexpr std::uint64_t kDomainArrivals = 0x61727276ULL;

constexpr const char* kCsvHeader = "id,user_id,arrival_seconds,profile_len,total_len,seed";

std::vector<Token> build_tokens(std::uint64_t id, std::uint64_t user_id, Tokens profile_len, Tokens total_len,
                                std::uint64_t seed) {
  std::vector<Token> tokens;
  tokens.reserve(total_len);
  for (Tokens p = 0; p < profile_len; ++p) {
    tokens.push_back(static_cast<Token>(rng::mix(kDomainProfileToken, seed, user_id, p)));
  }
  for (Tokens j = 0; j < total_len - profile_len; ++j) {
    tokens.push_back(static_cast<Token>(rng::mix(kDomainSuffixToken, seed, id, j)));
  }
  return tokens;
}

std::uint64_t parse_u64(const std::string& field, const std::string& what, const std::string& origin) {
  if (field.empty() || field[0] == '-') throw IoError(fmt::format("{}: bad {} '{}'", origin, what, field));
  char* end = nullptr;
  const auto v = std::strtoull(field.c_str(), &end, 10);
  if (*end != '\0') throw IoError(fmt::format("{}: bad {} '{}'", origin, what, field));
  return v;
}

}  // namespace

Request make_request(std::uint64_t id, std::uint64_t user_id, Tokens profile_len, Tokens total_len,
                     std::uint64_t seed, double arrival) {
  if (total_len == 0) throw ConfigError(fmt::format("request {} has no tokens", id));
  if (profile_len > total_len) throw ConfigError(fmt::format("request {} profile exceeds its length", id));
  Request r;
  r.id = id;
  r.user_id = user_id;
  r.arrival = arrival;
  r.profile_len = profile_len;
  r.total_len = total_len;
  r.seed = seed;
  r.tokens = std::make_shared<const std::vector<Token>>(build_tokens(id, user_id, profile_len, total_len, seed));
  return r;
}

Request make_request_with_tokens(std::uint64_t id, std::uint64_t user_id, std::vector<Token> tokens,
                                 Tokens profile_len, double arrival) {
  if (tokens.empty()) throw ConfigError(fmt::format("request {} has no tokens", id));
  Request r;
  r.id = id;
  r.user_id = user_id;
  r.arrival = arrival;
  r.total_len = tokens.size();
  r.profile_len = std::min<Tokens>(profile_len, r.total_len);
  r.tokens = std::make_shared<const std::vector<Token>>(std::move(tokens));
  return r;
}

Tokens Trace::max_length() const noexcept {
  Tokens m = 0;
  for (const auto& r : requests) m = std::max(m, r.total_len);
  return m;
}

Tokens Trace::total_tokens() const noexcept {
  Tokens t = 0;
  for (const auto& r : requests) t += r.total_len;
  return t;
}

bool Trace::uniform_lengths() const noexcept {
  return std::all_of(requests.begin(), requests.end(),
                     [&](const Request& r) { return r.total_len == requests.front().total_len; });
}

void Trace::validate() const {
  std::set<std::uint64_t> ids;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& r = requests[i];
    if (!std::isfinite(r.arrival) || r.arrival < 0.0) {
      throw ConfigError(fmt::format("request {} has invalid arrival {}", r.id, r.arrival));
    }
    if (i > 0 && r.arrival < requests[i - 1].arrival) {
      throw ConfigError(fmt::format("trace arrivals decrease at request {}", r.id));
    }
    if (!ids.insert(r.id).second) throw ConfigError(fmt::format("duplicate request id {}", r.id));
    if (!r.tokens || r.tokens->size() != r.total_len || r.total_len == 0) {
      throw ConfigError(fmt::format("request {} token buffer does not match its length", r.id));
    }
  }
}

Trace gen_post_recommendation(std::uint64_t seed) {
  Trace t;
  t.name = "post-rec";
  t.seed = seed;
  rng::Stream s(rng::mix(kDomainPostRec, seed));
  t.requests.reserve(kPostRecUsers * kPostRecRequestsPerUser);
  for (std::uint64_t u = 0; u < kPostRecUsers; ++u) {
    const double draw = std::round(s.normal(kPostRecProfileMean, kPostRecProfileStddev));
    const auto profile = static_cast<Tokens>(
        std::clamp(draw, static_cast<double>(kPostRecProfileMin), static_cast<double>(kPostRecProfileMax)));
    for (std::uint64_t k = 0; k < kPostRecRequestsPerUser; ++k) {
      t.requests.push_back(
          make_request(u * kPostRecRequestsPerUser + k, u, profile, profile + kPostRecSuffixTokens, seed));
    }
  }
  return t;
}

Trace gen_credit_verification(std::uint64_t seed) {
  Trace t;
  t.name = "credit";
  t.seed = seed;
  rng::Stream s(rng::mix(kDomainCredit, seed));
  for (std::uint64_t u = 0; u < kCreditUsers; ++u) {
    const auto len = static_cast<Tokens>(s.uniform_int(kCreditMinTokens, kCreditMaxTokens));
    t.requests.push_back(make_request(u, u, len, len, seed));
  }
  return t;
}

Trace generate_trace(const std::string& name, std::uint64_t seed) {
  if (name == "post-rec") return gen_post_recommendation(seed);
  if (name == "credit") return gen_credit_verification(seed);
  throw ConfigError(fmt::format("unknown trace '{}' (expected post-rec or credit)", name));
}

Trace poisson_arrivals(const Trace& trace, double rate, std::uint64_t seed, const ArrivalOptions& opts) {
  if (!(rate > 0.0)) throw ConfigError(fmt::format("arrival rate must be > 0, got {}", rate));
  std::vector<const Request*> by_id;
  by_id.reserve(trace.requests.size());
  for (const auto& r : trace.requests) by_id.push_back(&r);
  std::sort(by_id.begin(), by_id.end(), [](const Request* a, const Request* b) { return a->id < b->id; });

  rng::Stream s(rng::mix(kDomainArrivals, seed));
  std::vector<const Request*> order;
  if (opts.interleave_users) {
    order = by_id;
    s.shuffle(std::span(order));
  } else {
    std::map<std::uint64_t, std::vector<const Request*>> sessions;
    for (const auto* r : by_id) sessions[r->user_id].push_back(r);
    std::vector<std::uint64_t> users;
    for (const auto& [u, _] : sessions) users.push_back(u);
    s.shuffle(std::span(users));
    for (const auto u : users) {
      const auto& reqs = sessions[u];
      order.insert(order.end(), reqs.begin(), reqs.end());
    }
  }

  Trace out;
  out.name = trace.name;
  out.seed = trace.seed;
  out.requests.reserve(order.size());
  double t = 0.0;
  for (const auto* r : order) {
    t += s.exponential(rate);
    Request copy = *r;
    copy.arrival = t;
    out.requests.push_back(std::move(copy));
  }
  return out;
}

Trace all_at_once(const Trace& trace) {
  Trace out = trace;
  std::sort(out.requests.begin(), out.requests.end(), [](const Request& a, const Request& b) { return a.id < b.id; });
  for (auto& r : out.requests) r.arrival = 0.0;
  return out;
}

std::string trace_csv(const Trace& trace) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : trace.requests) {
    out += fmt::format("{},{},{:.17g},{},{},{}\n", r.id, r.user_id, r.arrival, r.profile_len, r.total_len, r.seed);
  }
  return out;
}

void write_trace_csv(const Trace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << trace_csv(trace);
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

Trace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open trace {}", path.string()));
  const std::string origin = path.string();
  std::string line;
  if (!std::getline(in, line)) throw IoError(fmt::format("{}: empty trace file", origin));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw IoError(fmt::format("{}: unexpected header '{}'", origin, line));

  Trace t;
  t.name = path.stem().string();
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    const std::string where = fmt::format("{}:{}", origin, lineno);
    if (fields.size() != 6) throw IoError(fmt::format("{}: expected 6 fields, got {}", where, fields.size()));
    char* end = nullptr;
    const double arrival = std::strtod(fields[2].c_str(), &end);
    if (fields[2].empty() || *end != '\0') throw IoError(fmt::format("{}: bad arrival '{}'", where, fields[2]));
    const auto seed = parse_u64(fields[5], "seed", where);
    try {
      t.requests.push_back(make_request(parse_u64(fields[0], "id", where), parse_u64(fields[1], "user_id", where),
                                        parse_u64(fields[3], "profile_len", where),
                                        parse_u64(fields[4], "total_len", where), seed, arrival));
    } catch (const ConfigError& e) {
      throw IoError(fmt::format("{}: {}", where, e.what()));
    }
    if (t.requests.size() == 1) t.seed = seed;
  }
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw IoError(fmt::format("{}: {}", origin, e.what()));
  }
  return t;
}

Trace load_trace(const std::string& name_or_path, std::uint64_t seed) {
  if (name_or_path == "post-rec" || name_or_path == "credit") return generate_trace(name_or_path, seed);
  if (std::filesystem::exists(name_or_path)) return read_trace_csv(name_or_path);
  throw ConfigError(fmt::format("unknown trace '{}' (expected post-rec, credit or a CSV file)", name_or_path));
}

}  // namespace prefillsim
