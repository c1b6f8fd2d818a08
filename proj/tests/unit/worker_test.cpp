#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "psl/chain.hpp"
#include "psl/cluster.hpp"
#include "psl/verifier.hpp"
#include "test_util.hpp"

using namespace psl;
using test::ChainBuilder;

namespace {

ClusterConfig direct(std::size_t workers, std::uint64_t seed = 5) {
  ClusterConfig c;
  c.seed = seed;
  c.workers = workers;
  c.attest = false;
  return c;
}

bool commit(Cluster& c, Worker& w, std::vector<std::pair<std::string, std::string>> kv) {
  TransactionBuffer txn;
  for (auto& [k, v] : kv) txn.write(Key(k), to_bytes(v));
  bool done = false;
  w.commit(txn, [&](std::optional<CommitReceipt>) { done = true; });
  return c.run_until([&] { return done; }, c.sim().now() + 5 * kSeconds);
}

std::optional<TimestampedValue> read(Cluster& c, Worker& w, const std::string& k) {
  std::optional<TimestampedValue> out;
  bool done = false;
  w.read_key(Key(k), [&](std::optional<TimestampedValue> v) {
    out = std::move(v);
    done = true;
  });
  EXPECT_TRUE(c.run_until([&] { return done; }, c.sim().now() + 5 * kSeconds));
  return out;
}

// Per-key winner by (ts, digest), computed without the merge code.
std::map<Key, TimestampedValue> fold(const std::vector<BlockBody>& blocks) {
  std::map<Key, TimestampedValue> out;
  for (const auto& b : blocks) {
    for (const auto& e : b.writes) {
      auto it = out.find(e.key);
      if (it == out.end() || std::make_tuple(it->second.ts, digest(it->second.data)) <
                                 std::make_tuple(e.value.ts, digest(e.value.data))) {
        out[e.key] = e.value;
      }
    }
  }
  return out;
}

}  // namespace

TEST(Worker, FirstCommitHasZeroPrevAndSeqOne) {
  Cluster c(direct(1));
  ASSERT_TRUE(c.start());
  ASSERT_TRUE(commit(c, c.worker(0), {{"a", "1"}}));
  EXPECT_EQ(c.worker(0).seq(), 1u);
  auto env = c.server(0).retrieve_most_recent(layout::worker(0));
  ASSERT_TRUE(env.has_value());
  auto body = decode_block(open(*env, c.keys()));
  EXPECT_EQ(body.seq, 1u);
  EXPECT_EQ(body.prev_hash, Digest{});
  EXPECT_EQ(c.worker(0).tip(), envelope_digest(*env));
}

TEST(Worker, CommitWithOneServerDroppingEverything) {
  ClusterConfig cfg = direct(1);
  Cluster c(cfg);
  ASSERT_TRUE(c.start());
  c.sim().policy().set_inbound({layout::worker(0)}, layout::storage(0), netsim::LinkPolicy{1.0, {}, 0, false});
  for (int i = 0; i < 10; ++i) ASSERT_TRUE(commit(c, c.worker(0), {{"k", std::to_string(i)}}));
  EXPECT_EQ(c.worker(0).stats().commits_durable, 10u);
}

TEST(Worker, TwoHundredCommitsOneSignatureChainVerifies) {
  ClusterConfig cfg = direct(1);
  cfg.psl_db.gc = false;
  Cluster c(cfg);
  ASSERT_TRUE(c.start());
  for (int i = 0; i < 200; ++i) ASSERT_TRUE(commit(c, c.worker(0), {{"k" + std::to_string(i % 7), std::to_string(i)}}));
  EXPECT_EQ(c.worker(0).stats().signed_blocks, 1u);
  // Walk the chain back from the tip through storage.
  std::vector<ChainLink> links;
  Digest d = c.worker(0).tip();
  while (d != Digest{}) {
    auto env = c.server(0).retrieve_by_hash(d);
    if (!env) env = c.server(1).retrieve_by_hash(d);
    ASSERT_TRUE(env.has_value());
    auto body = decode_block(open(*env, c.keys()));
    d = body.prev_hash;
    links.push_back({*env, body});
  }
  std::reverse(links.begin(), links.end());
  ASSERT_EQ(links.size(), 200u);
  EXPECT_TRUE(verify_chain(links, c.keys().verify_key));
}

TEST(Worker, ReadOwnWriteIsLocalAndUnknownIsNotFound) {
  Cluster c(direct(2));
  ASSERT_TRUE(c.start());
  ASSERT_TRUE(commit(c, c.worker(0), {{"mine", "v"}}));
  auto fetches = c.worker(0).stats().fetches;
  auto v = read(c, c.worker(0), "mine");
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->data, to_bytes("v"));
  EXPECT_EQ(c.worker(0).stats().fetches, fetches);
  EXPECT_FALSE(read(c, c.worker(0), "nobody").has_value());
}

TEST(Worker, ReadThroughLevelTwoMatchesLastWrite) {
  ClusterConfig cfg = direct(2);
  cfg.psl_db.level1_max = 2;
  cfg.worker.memtable.capacity = 64;
  Cluster c(cfg);
  ASSERT_TRUE(c.start());
  c.sim().policy().set_inbound({layout::worker(0)}, layout::worker(1), netsim::LinkPolicy{1.0, {}, 0, false});
  for (int round = 0; round < 6; ++round) {
    ASSERT_TRUE(commit(c, c.worker(0), {{"deep", "r" + std::to_string(round)}, {"r" + std::to_string(round), "x"}}));
    ASSERT_TRUE(c.barrier(5 * kSeconds));
  }
  ASSERT_GT(c.psl_db().level2_keys(), 0u);
  auto v = read(c, c.worker(1), "r0");
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->data, to_bytes("x"));
  v = read(c, c.worker(1), "deep");
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->data, to_bytes("r5"));
}

TEST(Worker, TamperedMulticastDropped) {
  Cluster c(direct(2));
  ASSERT_TRUE(c.start());
  ChainBuilder chain{c.keys(), static_cast<WorkerId>(layout::worker(0))};
  Envelope env = chain.next(test::writes({{"t", "tampered"}}, 1000));
  env.ciphertext[3] ^= 0x40;
  c.sim().inject(layout::worker(1), layout::worker(0), rpc::frame(rpc::Multicast{env}));
  // Random bytes too.
  c.sim().inject(layout::worker(1), layout::worker(0), to_bytes("garbage frame"));
  c.run_until(nullptr, c.sim().now() + 100 * kMillis);
  EXPECT_EQ(c.worker(1).memtable().peek(Key("t")), nullptr);
  EXPECT_GE(c.worker(1).stats().validity_drops + c.worker(1).stats().malformed, 2u);
}

TEST(Worker, SeqChangedInHeaderFailsAead) {
  Cluster c(direct(2));
  ASSERT_TRUE(c.start());
  ChainBuilder chain{c.keys(), static_cast<WorkerId>(layout::worker(0))};
  Envelope env = chain.next(test::writes({{"ad", "bound"}}, 1000));
  env.ad.seq = 9;
  c.sim().inject(layout::worker(1), layout::worker(0), rpc::frame(rpc::Multicast{env}));
  c.run_until(nullptr, c.sim().now() + 100 * kMillis);
  EXPECT_EQ(c.worker(1).memtable().peek(Key("ad")), nullptr);
  EXPECT_EQ(c.worker(1).stats().validity_drops, 1u);
}

TEST(Worker, ReplayedHonestMulticastIsIdempotent) {
  Cluster c(direct(2));
  ASSERT_TRUE(c.start());
  ChainBuilder chain{c.keys(), static_cast<WorkerId>(layout::worker(0))};
  Envelope env = chain.next(test::writes({{"r", "one"}}, 7));
  for (int i = 0; i < 3; ++i) c.sim().inject(layout::worker(1), layout::worker(0), rpc::frame(rpc::Multicast{env}));
  c.run_until(nullptr, c.sim().now() + 100 * kMillis);
  const auto* v = c.worker(1).memtable().peek(Key("r"));
  ASSERT_NE(v, nullptr);
  EXPECT_EQ(v->data, to_bytes("one"));
  EXPECT_EQ(v->ts, 7u);
  EXPECT_EQ(c.worker(1).memtable().size(), 1u);
}

TEST(Worker, OlderMulticastLeavesMemtable) {
  Cluster c(direct(2));
  ASSERT_TRUE(c.start());
  ChainBuilder chain{c.keys(), static_cast<WorkerId>(layout::worker(0))};
  c.worker(1).handle_multicast(chain.next(test::writes({{"o", "new"}}, 50)));
  c.run_until(nullptr, c.sim().now() + 10 * kMillis);
  c.worker(1).handle_multicast(chain.next(test::writes({{"o", "old"}}, 3)));
  c.run_until(nullptr, c.sim().now() + 10 * kMillis);
  EXPECT_EQ(c.worker(1).memtable().peek(Key("o"))->data, to_bytes("new"));
}

TEST(Worker, InterleavedBlocksMatchFoldOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Cluster c(direct(4, 100 + trial));
    ASSERT_TRUE(c.start());
    std::vector<Envelope> envs;
    std::vector<BlockBody> bodies;
    for (std::size_t w = 0; w < 3; ++w) {
      ChainBuilder chain{c.keys(), static_cast<WorkerId>(layout::worker(w))};
      for (int b = 0; b < 5; ++b) {
        WriteSet ws;
        std::set<std::string> used;
        for (int i = 0; i < 4; ++i) {
          std::string k = "k" + std::to_string(rng() % 6);
          if (!used.insert(k).second) continue;
          ws.push_back({Key(k), TimestampedValue{to_bytes("w" + std::to_string(w) + "b" + std::to_string(b)), 1 + rng() % 5}});
        }
        bodies.push_back({static_cast<WorkerId>(layout::worker(w)), chain.seq + 1, chain.tip, ws});
        envs.push_back(chain.next(ws));
      }
    }
    std::shuffle(envs.begin(), envs.end(), rng);
    for (auto& e : envs) c.worker(3).handle_multicast(e);
    c.run_until(nullptr, c.sim().now() + 50 * kMillis);
    for (const auto& [k, v] : fold(bodies)) {
      const auto* got = c.worker(3).memtable().peek(k);
      ASSERT_NE(got, nullptr);
      EXPECT_EQ(*got, v) << k.str();
    }
  }
}

TEST(BatchMulticasts, SameKeyKeepsMax) {
  std::vector<BlockBody> bodies;
  for (std::uint64_t ts = 1; ts <= 3; ++ts) bodies.push_back({1, ts, {}, test::writes({{"k", "v" + std::to_string(ts)}}, ts)});
  auto ws = Worker::batch_pending_multicasts(bodies);
  ASSERT_EQ(ws.size(), 1u);
  EXPECT_EQ(ws[0].value.ts, 3u);
}

TEST(BatchMulticasts, DisjointConcatenates) {
  std::vector<BlockBody> bodies{{1, 1, {}, test::writes({{"a", "1"}, {"b", "2"}})},
                                {2, 1, {}, test::writes({{"c", "3"}})}};
  EXPECT_EQ(Worker::batch_pending_multicasts(bodies).size(), 3u);
}

TEST(BatchMulticasts, EqualsSequentialApply) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<BlockBody> bodies;
    for (int b = 0; b < 1 + static_cast<int>(rng() % 6); ++b) {
      WriteSet ws;
      std::set<std::string> used;
      for (int i = 0; i < 5; ++i) {
        std::string k = "k" + std::to_string(rng() % 5);
        if (!used.insert(k).second) continue;
        ws.push_back({Key(k), TimestampedValue{to_bytes(std::to_string(rng() % 3)), rng() % 4}});
      }
      bodies.push_back({1, static_cast<std::uint64_t>(b + 1), {}, ws});
    }
    Memtable seq_mt, batch_mt;
    for (const auto& b : bodies) {
      for (const auto& e : b.writes) seq_mt.apply(e.key, e.value);
    }
    auto ws = Worker::batch_pending_multicasts(bodies);
    std::set<Key> keys;
    for (const auto& e : ws) EXPECT_TRUE(keys.insert(e.key).second);
    for (const auto& e : ws) batch_mt.apply(e.key, e.value);
    auto oracle = fold(bodies);
    for (const auto& [k, v] : oracle) {
      ASSERT_NE(seq_mt.peek(k), nullptr);
      ASSERT_NE(batch_mt.peek(k), nullptr);
      EXPECT_EQ(*seq_mt.peek(k), v);
      EXPECT_EQ(*batch_mt.peek(k), v);
    }
  }
}

TEST(Worker, ReportGapOfThreeBackfillsTwo) {
  Cluster c(direct(2));
  ASSERT_TRUE(c.start());
  auto& w1 = c.worker(1);
  ASSERT_TRUE(c.barrier(5 * kSeconds));
  std::uint64_t base = w1.last_report_seq();
  auto backfills = w1.stats().report_backfills;
  c.sim().policy().set_inbound({layout::kPslDb}, layout::worker(1), netsim::LinkPolicy{1.0, {}, 0, false});
  for (int i = 0; i < 3; ++i) {
    ASSERT_TRUE(commit(c, c.worker(0), {{"g" + std::to_string(i), "v"}}));
    bool done = false;
    c.psl_db().checkpoint_round([&] { done = true; });
    ASSERT_TRUE(c.run_until([&] { return done; }, c.sim().now() + 5 * kSeconds));
  }
  ASSERT_EQ(c.psl_db().sr_seq(), base + 3);
  EXPECT_EQ(w1.last_report_seq(), base);
  c.heal();
  // A skipped round re-sends the latest report.
  ASSERT_TRUE(c.barrier(5 * kSeconds));
  EXPECT_EQ(w1.last_report_seq(), base + 3);
  EXPECT_EQ(w1.stats().report_backfills - backfills, 2u);
}

TEST(Worker, LockedCounterTwoWorkers) {
  Cluster c(direct(2));
  ASSERT_TRUE(c.start());
  std::size_t done = 0;
  std::function<void(Worker&, int)> step = [&](Worker& w, int left) {
    if (left == 0) {
      ++done;
      return;
    }
    w.acquire_lock(1, [&, left] {
      w.read_key(Key("counter"), [&, left](std::optional<TimestampedValue> v) {
        int cur = v ? std::stoi(std::string(v->data.begin(), v->data.end())) : 0;
        TransactionBuffer txn;
        txn.write(Key("counter"), to_bytes(std::to_string(cur + 1)));
        w.commit(txn, [&, left](std::optional<CommitReceipt>) {
          w.release_lock(1);
          step(w, left - 1);
        });
      });
    });
  };
  step(c.worker(0), 100);
  step(c.worker(1), 100);
  ASSERT_TRUE(c.run_until([&] { return done == 2; }, c.sim().now() + 600 * kSeconds));
  ASSERT_TRUE(c.barrier(5 * kSeconds));
  auto v = read(c, c.worker(0), "counter");
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->data, to_bytes("200"));
  auto verdict = verify::verify_all(c.history().events());
  EXPECT_TRUE(verdict.ok()) << verdict.to_json().dump(2);
  EXPECT_EQ(verdict.locks.grants, 200u);
}
