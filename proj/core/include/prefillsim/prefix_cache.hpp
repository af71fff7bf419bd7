#pragma once

// Block-granular prefix cache. Each full block of `block_tokens` tokens is
// keyed by a hash chained on its parent's key, so a key identifies the whole
// prefix ending at that block. Resident blocks form a forest closed under
// prefixes; only leaves are evictable, least recently used first, ties by
// admission order.
//
// Insertion keeps as much of a request's prefix as capacity allows and drops
// the rest of its blocks instead of evicting parts of the same request.

#include <cstdint>
#include <set>
#include <span>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "prefillsim/model_geometry.hpp"

namespace prefillsim {

using Token = std::uint32_t;
using BlockHash = std::uint64_t;

inline constexpr Tokens kDefaultBlockTokens = 16;

struct CacheConfig {
  Tokens block_tokens = kDefaultBlockTokens;
  Tokens capacity_tokens = 0;

  Tokens capacity_blocks() const noexcept { return capacity_tokens / block_tokens; }
  void validate() const;
};

// Keys of the sequence's full blocks; a trailing partial block is dropped.
std::vector<BlockHash> block_chain(std::span<const Token> tokens, Tokens block_tokens);

class PrefixCache {
 public:
  explicit PrefixCache(CacheConfig config);

  const CacheConfig& config() const noexcept { return config_; }
  Tokens block_tokens() const noexcept { return config_.block_tokens; }
  // Usable capacity, rounded down to whole blocks.
  Tokens capacity_tokens() const noexcept { return config_.capacity_blocks() * config_.block_tokens; }
  Tokens used_tokens() const noexcept { return static_cast<Tokens>(nodes_.size()) * config_.block_tokens; }
  Tokens headroom_tokens() const noexcept { return capacity_tokens() - used_tokens(); }
  std::size_t resident_blocks() const noexcept { return nodes_.size(); }
  bool contains(BlockHash key) const { return nodes_.count(key) != 0; }

  // Cached prefix length in tokens. Read-only: LRU state is untouched.
  Tokens match(std::span<const Token> tokens) const;
  Tokens match_chain(std::span<const BlockHash> chain) const;

  // Touches resident blocks along the path, admits missing ones while room
  // can be made without evicting the path itself, and discards the rest.
  // Returns the resident prefix length afterwards.
  Tokens insert(std::span<const Token> tokens, double now);
  Tokens insert_chain(std::span<const BlockHash> chain, double now);

  // Evicts LRU leaves not in `protect` until headroom >= needed_tokens.
  // Returns tokens freed. Throws CacheShortfall if protection prevents it
  // and ConfigError if needed_tokens exceeds capacity.
  Tokens evict_to(Tokens needed_tokens, std::span<const BlockHash> protect = {});

  // Walks the structure: prefix closure, child counts, leaf index, budget.
  bool check_invariants() const;

  void clear();

 private:
  struct Node {
    BlockHash parent;
    bool has_parent;
    std::uint32_t children;
    double last_use;
    std::uint64_t seq;
  };
  using LeafKey = std::tuple<double, std::uint64_t, BlockHash>;

  void touch(BlockHash key, Node& node, double now);
  void admit(BlockHash key, const BlockHash* parent, double now);
  void erase_leaf(BlockHash key);

  CacheConfig config_;
  std::unordered_map<BlockHash, Node> nodes_;
  std::set<LeafKey> leaves_;
  std::uint64_t next_seq_ = 0;
};

}  // namespace prefillsim
