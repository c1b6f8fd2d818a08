#include <gtest/gtest.h>

#include <random>

#include "psl/memtable.hpp"

using namespace psl;

namespace {

TimestampedValue tv(std::string_view data, std::uint64_t ts) { return {to_bytes(data), ts}; }

}  // namespace

TEST(TransactionBuffer, OverwriteKeepsLatest) {
  TransactionBuffer buf;
  buf.write(Key("k"), to_bytes("v"));
  buf.write(Key("k"), to_bytes("v2"));
  ASSERT_EQ(buf.size(), 1u);
  EXPECT_EQ(buf.staged()[0].second, to_bytes("v2"));
}

TEST(TransactionBuffer, TwentyWritesOneWriteSet) {
  TransactionBuffer buf;
  Memtable mt;
  for (int i = 0; i < 20; ++i) buf.write(Key("k" + std::to_string(i)), to_bytes("v"));
  auto ws = mt.stage(buf);
  EXPECT_EQ(ws.size(), 20u);
  EXPECT_TRUE(buf.empty());
}

TEST(TransactionBuffer, ValueTooLarge) {
  TransactionBuffer buf(8);
  EXPECT_THROW(buf.write(Key("k"), Bytes(9)), ValueTooLarge);
  EXPECT_NO_THROW(buf.write(Key("k"), Bytes(8)));
}

TEST(Stage, PerUpdateClockIncrement) {
  Memtable mt;
  mt.observe(10);
  TransactionBuffer buf;
  buf.write(Key("a"), to_bytes("1"));
  buf.write(Key("b"), to_bytes("2"));
  buf.write(Key("c"), to_bytes("3"));
  auto ws = mt.stage(buf);
  ASSERT_EQ(ws.size(), 3u);
  EXPECT_EQ(ws[0].value.ts, 11u);
  EXPECT_EQ(ws[1].value.ts, 12u);
  EXPECT_EQ(ws[2].value.ts, 13u);
  EXPECT_EQ(mt.clock(), 13u);
}

TEST(Stage, FirstWriteGetsTsOne) {
  Memtable mt;
  TransactionBuffer buf;
  buf.write(Key("a"), to_bytes("1"));
  EXPECT_EQ(mt.stage(buf)[0].value.ts, 1u);
}

TEST(Stage, SequentialTransactionsClockSequence) {
  Memtable mt;
  std::vector<std::uint64_t> seen;
  for (int t = 0; t < 2; ++t) {
    TransactionBuffer buf;
    buf.write(Key("a"), to_bytes("x"));
    buf.write(Key("b"), to_bytes("y"));
    for (auto& e : mt.stage(buf)) seen.push_back(e.value.ts);
  }
  EXPECT_EQ(seen, (std::vector<std::uint64_t>{1, 2, 3, 4}));
}

TEST(Apply, OlderIgnored) {
  Memtable mt;
  EXPECT_EQ(mt.apply(Key("k"), tv("new", 5)), ApplyResult::kApplied);
  EXPECT_EQ(mt.apply(Key("k"), tv("old", 3)), ApplyResult::kIgnored);
  EXPECT_EQ(*mt.peek(Key("k")), tv("new", 5));
  EXPECT_EQ(mt.apply(Key("k"), tv("new", 5)), ApplyResult::kIgnored);
}

TEST(Apply, ReceiveRuleAdvancesClock) {
  Memtable mt;
  mt.apply(Key("k"), tv("x", 41));
  EXPECT_EQ(mt.clock(), 41u);
  mt.apply(Key("k"), tv("y", 7));
  EXPECT_EQ(mt.clock(), 41u);
}

TEST(Apply, LowCacheDisallowsNewKeys) {
  Memtable mt;
  EXPECT_EQ(mt.apply(Key("unknown"), tv("v", 1), false), ApplyResult::kIgnored);
  EXPECT_FALSE(mt.contains(Key("unknown")));
  mt.apply(Key("known"), tv("v", 1));
  EXPECT_EQ(mt.apply(Key("known"), tv("w", 2), false), ApplyResult::kApplied);
}

// Scripted LRU oracle: capacity 2, a then b inserted, a touched, c arrives.
TEST(Apply, LruEvictsOnlyCoveredEntries) {
  Memtable mt(MemtableConfig{.capacity = 2});
  mt.apply(Key("a"), tv("va", 1));
  mt.apply(Key("b"), tv("vb", 2));
  EXPECT_EQ(mt.apply(Key("c"), tv("vc", 3)), ApplyResult::kEvictionBlocked);

  mt.cover(Key("a"), Version::of(tv("va", 1)));
  mt.cover(Key("b"), Version::of(tv("vb", 2)));
  ASSERT_NE(mt.get(Key("a")), nullptr);  // b is now least recently used
  EXPECT_EQ(mt.apply(Key("c"), tv("vc", 3)), ApplyResult::kApplied);
  EXPECT_TRUE(mt.contains(Key("a")));
  EXPECT_FALSE(mt.contains(Key("b")));
  EXPECT_TRUE(mt.has_evicted());

  // Only a is evictable now; c is pinned.
  EXPECT_EQ(mt.apply(Key("d"), tv("vd", 4)), ApplyResult::kApplied);
  EXPECT_FALSE(mt.contains(Key("a")));
  EXPECT_EQ(mt.apply(Key("e"), tv("ve", 5)), ApplyResult::kEvictionBlocked);
  EXPECT_EQ(mt.size(), 2u);
}

TEST(EvictCheck, Cases) {
  Memtable mt;
  auto v = tv("v", 4);
  mt.apply(Key("local"), v);
  EXPECT_EQ(mt.evict_check(Key("local")), EvictState::kPinned);

  mt.apply(Key("eq"), v);
  EXPECT_EQ(mt.cover(Key("eq"), Version::of(v)), CoverResult::kCovered);
  EXPECT_EQ(mt.evict_check(Key("eq")), EvictState::kEvictable);

  mt.apply(Key("lower"), tv("w", 9));
  EXPECT_EQ(mt.cover(Key("lower"), Version::of(tv("w", 3))), CoverResult::kNewerLocally);
  EXPECT_EQ(mt.evict_check(Key("lower")), EvictState::kPinned);
}

TEST(EvictCheck, AdvancingPastCoverageRepins) {
  Memtable mt;
  mt.apply(Key("k"), tv("a", 1));
  mt.cover(Key("k"), Version::of(tv("a", 1)));
  EXPECT_EQ(mt.evict_check(Key("k")), EvictState::kEvictable);
  mt.apply(Key("k"), tv("b", 2));
  EXPECT_EQ(mt.evict_check(Key("k")), EvictState::kPinned);
}

TEST(Cover, NewerReportInvalidatesAndSetsFloor) {
  Memtable mt;
  mt.apply(Key("k"), tv("old", 2));
  EXPECT_EQ(mt.cover(Key("k"), Version::of(tv("new", 6))), CoverResult::kInvalidated);
  EXPECT_TRUE(mt.needs_refresh(Key("k")));
  EXPECT_EQ(mt.get(Key("k")), nullptr);
  // A stale multicast below the floor is ignored, the reported value is accepted.
  EXPECT_EQ(mt.apply(Key("k"), tv("old", 2)), ApplyResult::kIgnored);
  EXPECT_EQ(mt.apply(Key("k"), tv("mid", 5)), ApplyResult::kIgnored);
  EXPECT_EQ(mt.apply(Key("k"), tv("new", 6)), ApplyResult::kApplied);
  EXPECT_EQ(mt.evict_check(Key("k")), EvictState::kEvictable);
}

// Randomized properties: per-key monotonicity, clock safety, pinning safety.
TEST(MemtableProperty, RandomOperations) {
  std::mt19937_64 rng(2024);
  for (int run = 0; run < 50; ++run) {
    std::size_t cap = 1 + rng() % 6;
    Memtable mt(MemtableConfig{.capacity = cap});
    std::map<Key, TimestampedValue> last_seen;
    std::map<Key, Version> reported;  // what "PSL-DB" holds per key
    for (int op = 0; op < 400; ++op) {
      Key k("k" + std::to_string(rng() % 10));
      auto choice = rng() % 4;
      if (choice < 2) {
        TimestampedValue v{to_bytes(std::to_string(rng() % 3)), 1 + rng() % 20};
        auto before_size = mt.size();
        std::vector<Key> present;
        for (int i = 0; i < 10; ++i) {
          Key x("k" + std::to_string(i));
          if (mt.contains(x)) present.push_back(x);
        }
        std::map<Key, bool> evictable_before;
        for (auto& x : present) evictable_before[x] = mt.evict_check(x) == EvictState::kEvictable;
        mt.apply(k, v, rng() % 2 == 0);
        // Anything that disappeared must have been evictable.
        for (auto& x : present) {
          if (!mt.contains(x)) EXPECT_TRUE(evictable_before[x]);
        }
        (void)before_size;
      } else if (choice == 2) {
        TimestampedValue v{to_bytes(std::to_string(rng() % 3)), 1 + rng() % 20};
        auto ver = Version::of(v);
        auto& r = reported[k];
        if (r < ver) r = ver;
        mt.cover(k, r);
      } else if (const auto* got = mt.get(k)) {
        if (auto it = last_seen.find(k); it != last_seen.end() && mt.evictions() == 0) {
          EXPECT_TRUE(leq_e(it->second, *got));
        }
        last_seen[k] = *got;
      }
      EXPECT_LE(mt.size(), cap);
      mt.for_each([&](const Key&, const TimestampedValue& v) { EXPECT_GE(mt.clock(), v.ts); });
    }
  }
}
