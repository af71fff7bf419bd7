#include <gtest/gtest.h>

#include <numeric>

#include "prefillsim/errors.hpp"
#include "prefillsim/prefix_cache.hpp"
#include "prefillsim/rng.hpp"
#include "support.hpp"

using namespace prefillsim;
using prefillsim::testing::concat;
using prefillsim::testing::distinct_tokens;

namespace {

std::vector<Token> iota_tokens(Token first, std::size_t count) {
  std::vector<Token> t(count);
  std::iota(t.begin(), t.end(), first);
  return t;
}

PrefixCache cache_of_blocks(Tokens blocks) { return PrefixCache(CacheConfig{16, blocks * 16}); }

}  // namespace

TEST(BlockChain, DropsPartialBlockAndChainsOnParent) {
  const auto a = iota_tokens(1, 40);
  const auto chain = block_chain(a, 16);
  ASSERT_EQ(chain.size(), 2u);
  auto b = a;
  b[0] = 999;  // first block differs, so every later key differs too
  const auto other = block_chain(b, 16);
  EXPECT_NE(chain[0], other[0]);
  EXPECT_NE(chain[1], other[1]);
  EXPECT_EQ(block_chain(iota_tokens(1, 15), 16).size(), 0u);
  EXPECT_THROW(block_chain(a, 0), ConfigError);
}

TEST(PrefixCache, EmptyMatchesNothing) {
  const auto c = cache_of_blocks(8);
  EXPECT_EQ(c.match(iota_tokens(1, 100)), 0u);
}

TEST(PrefixCache, MatchIsBlockAligned) {
  auto c = cache_of_blocks(8);
  EXPECT_EQ(c.insert(iota_tokens(1, 32), 0.0), 32u);
  EXPECT_EQ(c.match(iota_tokens(1, 40)), 32u);
  EXPECT_EQ(c.match(iota_tokens(1, 20)), 16u);
}

TEST(PrefixCache, DivergenceInFirstBlockMatchesNothing) {
  auto c = cache_of_blocks(8);
  c.insert(iota_tokens(1, 64), 0.0);
  auto probe = iota_tokens(1, 64);
  probe[5] = 0;
  EXPECT_EQ(c.match(probe), 0u);
}

TEST(PrefixCache, SuffixBeyondCapacityIsDiscarded) {
  auto c = cache_of_blocks(4);
  EXPECT_EQ(c.insert(iota_tokens(1, 6 * 16), 0.0), 64u);
  EXPECT_EQ(c.resident_blocks(), 4u);
  EXPECT_EQ(c.used_tokens(), 64u);
  EXPECT_TRUE(c.check_invariants());
}

TEST(PrefixCache, FreshInsertStoresAlignedLength) {
  auto c = cache_of_blocks(100);
  EXPECT_EQ(c.insert(iota_tokens(1, 150), 0.0), 144u);
}

TEST(PrefixCache, DisjointInsertEvictsPriorRequest) {
  const auto a = distinct_tokens(1, 3000);
  const auto other = distinct_tokens(2, 3000);
  PrefixCache c(CacheConfig{16, 3000});
  c.insert(a, 0.0);
  c.insert(other, 1.0);
  EXPECT_EQ(c.match(concat(a, distinct_tokens(3, 600))), 0u);
  EXPECT_EQ(c.match(other), 2992u);
}

TEST(PrefixCache, CapacityRoundsDownToBlocks) {
  PrefixCache c(CacheConfig{16, 3000});
  EXPECT_EQ(c.capacity_tokens(), 2992u);
  EXPECT_THROW(PrefixCache(CacheConfig{0, 100}), ConfigError);
}

TEST(EvictTo, NothingFreedWhenHeadroomSuffices) {
  auto c = cache_of_blocks(4);
  c.insert(iota_tokens(1, 32), 0.0);
  EXPECT_EQ(c.evict_to(32), 0u);
  EXPECT_EQ(c.resident_blocks(), 2u);
}

TEST(EvictTo, EvictsLeafOfUnprotectedChain) {
  auto c = cache_of_blocks(3);
  const auto a = iota_tokens(1, 32);
  const auto b = iota_tokens(1000, 16);
  c.insert(a, 0.0);
  c.insert(b, 1.0);
  const auto ca = block_chain(a, 16);
  const auto cb = block_chain(b, 16);
  EXPECT_EQ(c.evict_to(16, cb), 16u);
  EXPECT_TRUE(c.contains(ca[0]));
  EXPECT_FALSE(c.contains(ca[1]));
  EXPECT_TRUE(c.contains(cb[0]));
}

TEST(EvictTo, LruOrderAcrossChains) {
  auto c = cache_of_blocks(3);
  const auto a = iota_tokens(1, 16);
  const auto b = iota_tokens(100, 16);
  const auto d = iota_tokens(200, 16);
  c.insert(a, 0.0);
  c.insert(b, 1.0);
  c.insert(d, 2.0);
  c.insert(a, 3.0);  // touch
  EXPECT_EQ(c.evict_to(16), 16u);
  EXPECT_TRUE(c.contains(block_chain(a, 16)[0]));
  EXPECT_FALSE(c.contains(block_chain(b, 16)[0]));
}

TEST(EvictTo, ShortfallWhenEverythingProtected) {
  auto c = cache_of_blocks(2);
  const auto a = iota_tokens(1, 32);
  c.insert(a, 0.0);
  const auto chain = block_chain(a, 16);
  try {
    c.evict_to(16, chain);
    FAIL() << "expected CacheShortfall";
  } catch (const CacheShortfall& e) {
    EXPECT_EQ(e.shortfall_tokens(), 16u);
  }
  EXPECT_THROW(c.evict_to(48), ConfigError);
}

TEST(PrefixCache, RandomOperationsKeepInvariants) {
  rng::Stream s(77);
  std::vector<std::vector<Token>> bases;
  for (int i = 0; i < 6; ++i) bases.push_back(distinct_tokens(100 + i, 400));
  auto c = cache_of_blocks(40);
  for (int step = 0; step < 2000; ++step) {
    const auto& base = bases[static_cast<std::size_t>(s.uniform_int(0, 5))];
    const auto len = static_cast<std::size_t>(s.uniform_int(1, 400));
    std::vector<Token> seq(base.begin(), base.begin() + static_cast<std::ptrdiff_t>(len));
    if (s.uniform01() < 0.3) seq = concat(seq, distinct_tokens(1000 + static_cast<std::uint64_t>(step), 50));
    const double op = s.uniform01();
    if (op < 0.6) {
      const Tokens stored = c.insert(seq, step);
      EXPECT_EQ(stored % 16, 0u);
      EXPECT_EQ(c.match(seq), stored);
    } else if (op < 0.9) {
      const Tokens m1 = c.match(seq);
      EXPECT_EQ(c.match(seq), m1);
    } else {
      const auto need = static_cast<Tokens>(s.uniform_int(0, 40)) * 16;
      c.evict_to(need);
      EXPECT_GE(c.headroom_tokens(), need);
    }
    ASSERT_LE(c.used_tokens(), c.capacity_tokens());
    ASSERT_EQ(c.used_tokens(), c.resident_blocks() * 16);
    ASSERT_TRUE(c.check_invariants());
  }
}

TEST(PrefixCache, LargeCapacityStoresWholeRequests) {
  rng::Stream s(5);
  auto c = PrefixCache(CacheConfig{16, 1u << 24});
  for (int i = 0; i < 50; ++i) {
    const auto len = static_cast<std::size_t>(s.uniform_int(1, 5000));
    const auto seq = distinct_tokens(static_cast<std::uint64_t>(i) + 500, len);
    EXPECT_EQ(c.insert(seq, i), len / 16 * 16);
  }
}

TEST(PrefixCache, ClearEmpties) {
  auto c = cache_of_blocks(8);
  c.insert(iota_tokens(1, 64), 0.0);
  c.clear();
  EXPECT_EQ(c.used_tokens(), 0u);
  EXPECT_EQ(c.match(iota_tokens(1, 64)), 0u);
}
