#include "prefillsim/prefix_cache.hpp"

#include <algorithm>
#include <unordered_set>

#include <fmt/format.h>

#include "prefillsim/errors.hpp"
#include "prefillsim/rng.hpp"

namespace prefillsim {

namespace {
constexpr std::uint64_t kRootHash = 0x636163686520726fULL;
}

void CacheConfig::validate() const {
  if (block_tokens == 0) throw ConfigError("block_tokens must be >= 1");
}

std::vector<BlockHash> block_chain(std::span<const Token> tokens, Tokens block_tokens) {
  if (block_tokens == 0) throw ConfigError("block_tokens must be >= 1");
  const std::size_t blocks = tokens.size() / block_tokens;
  std::vector<BlockHash> chain;
  chain.reserve(blocks);
  BlockHash h = kRootHash;
  for (std::size_t b = 0; b < blocks; ++b) {
    std::uint64_t acc = rng::splitmix64(h);
    for (std::size_t t = b * block_tokens; t < (b + 1) * block_tokens; ++t) {
      acc = rng::splitmix64(acc ^ tokens[t]);
    }
    h = acc;
    chain.push_back(h);
  }
  return chain;
}

PrefixCache::PrefixCache(CacheConfig config) : config_(config) { config_.validate(); }

Tokens PrefixCache::match(std::span<const Token> tokens) const {
  return match_chain(block_chain(tokens, config_.block_tokens));
}

Tokens PrefixCache::match_chain(std::span<const BlockHash> chain) const {
  std::size_t hit = 0;
  while (hit < chain.size() && nodes_.count(chain[hit]) != 0) ++hit;
  return static_cast<Tokens>(hit) * config_.block_tokens;
}

Tokens PrefixCache::insert(std::span<const Token> tokens, double now) {
  return insert_chain(block_chain(tokens, config_.block_tokens), now);
}

Tokens PrefixCache::insert_chain(std::span<const BlockHash> chain, double now) {
  std::size_t i = 0;
  for (; i < chain.size(); ++i) {
    const auto it = nodes_.find(chain[i]);
    if (it != nodes_.end()) {
      touch(chain[i], it->second, now);
      continue;
    }
    if (headroom_tokens() < config_.block_tokens) {
      if (capacity_tokens() < config_.block_tokens) break;
      try {
        // Every earlier path block has a resident child, so only the deepest can be a leaf.
        evict_to(config_.block_tokens, i == 0 ? chain.first(0) : chain.subspan(i - 1, 1));
      } catch (const CacheShortfall&) {
        break;
      }
    }
    admit(chain[i], i == 0 ? nullptr : &chain[i - 1], now);
  }
  return static_cast<Tokens>(i) * config_.block_tokens;
}

Tokens PrefixCache::evict_to(Tokens needed_tokens, std::span<const BlockHash> protect) {
  if (needed_tokens > capacity_tokens()) {
    throw ConfigError(fmt::format("cannot make room for {} tokens in a {}-token cache", needed_tokens,
                                  capacity_tokens()));
  }
  const std::unordered_set<BlockHash> guarded(protect.begin(), protect.end());
  Tokens freed = 0;
  while (headroom_tokens() < needed_tokens) {
    auto victim = std::find_if(leaves_.begin(), leaves_.end(),
                               [&](const LeafKey& k) { return guarded.count(std::get<2>(k)) == 0; });
    if (victim == leaves_.end()) {
      throw CacheShortfall(fmt::format("protected blocks pin the cache: {} of {} tokens free",
                                       headroom_tokens(), needed_tokens),
                           needed_tokens - headroom_tokens());
    }
    const BlockHash key = std::get<2>(*victim);
    leaves_.erase(victim);
    const Node node = nodes_.at(key);
    nodes_.erase(key);
    freed += config_.block_tokens;
    if (node.has_parent) {
      Node& parent = nodes_.at(node.parent);
      if (--parent.children == 0) leaves_.emplace(parent.last_use, parent.seq, node.parent);
    }
  }
  return freed;
}

void PrefixCache::touch(BlockHash key, Node& node, double now) {
  if (node.last_use == now) return;
  if (node.children == 0) {
    leaves_.erase({node.last_use, node.seq, key});
    node.last_use = now;
    leaves_.emplace(node.last_use, node.seq, key);
  } else {
    node.last_use = now;
  }
}

void PrefixCache::admit(BlockHash key, const BlockHash* parent, double now) {
  Node node{parent != nullptr ? *parent : 0, parent != nullptr, 0, now, next_seq_++};
  if (parent != nullptr) {
    Node& p = nodes_.at(*parent);
    if (p.children++ == 0) erase_leaf(*parent);
  }
  nodes_.emplace(key, node);
  leaves_.emplace(node.last_use, node.seq, key);
}

void PrefixCache::erase_leaf(BlockHash key) {
  const Node& n = nodes_.at(key);
  leaves_.erase({n.last_use, n.seq, key});
}

bool PrefixCache::check_invariants() const {
  if (used_tokens() > capacity_tokens()) return false;
  std::unordered_map<BlockHash, std::uint32_t> children;
  for (const auto& [key, node] : nodes_) {
    if (node.has_parent) {
      if (nodes_.count(node.parent) == 0) return false;
      ++children[node.parent];
    }
  }
  std::size_t leaf_count = 0;
  for (const auto& [key, node] : nodes_) {
    const auto it = children.find(key);
    const std::uint32_t expected = it == children.end() ? 0 : it->second;
    if (node.children != expected) return false;
    const bool indexed = leaves_.count({node.last_use, node.seq, key}) != 0;
    if (indexed != (expected == 0)) return false;
    if (expected == 0) ++leaf_count;
  }
  return leaf_count == leaves_.size();
}

void PrefixCache::clear() {
  nodes_.clear();
  leaves_.clear();
}

}  // namespace prefillsim
