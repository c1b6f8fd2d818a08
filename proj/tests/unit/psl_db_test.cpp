#include <gtest/gtest.h>

#include "psl/cluster.hpp"
#include "psl/netsim.hpp"
#include "psl/psl_db.hpp"
#include "psl/storage_client.hpp"
#include "psl/storage_server.hpp"
#include "test_util.hpp"

using namespace psl;
using test::ChainBuilder;
using test::writes;

namespace {

constexpr NodeId kWriter = 100;

struct Probe final : Node {
  StorageClient client;
  Probe(NodeId id, std::shared_ptr<const Topology> topo) : Node(id), client(id, topo, 10 * kMillis) {}
  void start() override { client.attach(&rt(), (std::uint64_t{id()} << 32) + 1); }
  void receive(NodeId from, ByteView frame) override { client.on_message(from, rpc::parse(frame)); }
};

// PSL-DB alone with three storage servers; a probe plays the worker's
// storage side so blocks can be back-filled.
struct Rig {
  KeyMaterial keys = KeyMaterial::generate(21);
  std::shared_ptr<Topology> topo = [] {
    auto t = std::make_shared<Topology>();
    t->f = 1;
    t->psl_db = 2;
    t->storage = {10, 11, 12};
    t->workers = {kWriter};
    return t;
  }();
  netsim::Simulator sim{3};
  PslDb* db = nullptr;
  Probe* probe = nullptr;
  ChainBuilder chain{keys, kWriter};

  explicit Rig(PslDbConfig cfg = quiet()) {
    for (NodeId s : topo->storage) sim.emplace<StorageServer>(s, std::make_shared<MemoryBlockStore>(), keys.verify_key);
    db = &sim.emplace<PslDb>(2, topo, cfg);
    probe = &sim.emplace<Probe>(kWriter, topo);
    db->provision(keys);
    sim.start();
    sim.run_until([&] { return db->ready(); }, 5 * kSeconds);
  }

  static PslDbConfig quiet() {
    PslDbConfig c;
    c.checkpoint_interval = 0;
    return c;
  }

  StorageServer& server(std::size_t i) { return *static_cast<StorageServer*>(sim.node(topo->storage[i])); }

  /// Seals and quorum-stores the next block without handing it to PSL-DB.
  Envelope store_next(WriteSet ws) {
    Envelope e = chain.next(std::move(ws));
    bool acked = false;
    probe->client.store(kWriter, chain.seq, e, [&](const Digest&) { acked = true; });
    sim.run_until([&] { return acked; }, sim.now() + 5 * kSeconds);
    EXPECT_TRUE(acked);
    return e;
  }

  void ingest(const Envelope& e) {
    bool done = false;
    db->ingest_multicast(e, [&] { done = true; });
    sim.run_until([&] { return done; }, sim.now() + 5 * kSeconds);
    ASSERT_TRUE(done);
  }

  void round() {
    bool done = false;
    db->checkpoint_round([&] { done = true; });
    sim.run_until([&] { return done; }, sim.now() + 5 * kSeconds);
    ASSERT_TRUE(done);
  }

  SyncReportBody report() { return decode_sync_report(open(*db->last_report(), keys)); }
};

}  // namespace

TEST(PslDb, InOrderBlocksNoBackfill) {
  Rig r;
  for (int i = 0; i < 3; ++i) r.ingest(r.chain.next(writes({{"k" + std::to_string(i), "v"}})));
  EXPECT_EQ(r.db->worker_vc().at(kWriter), 3u);
  EXPECT_EQ(r.db->stats().backfill_fetches, 0u);
  EXPECT_TRUE(r.db->cut_closed());
}

TEST(PslDb, GapOfTwoBackfillsTwoBlocks) {
  Rig r;
  std::vector<Envelope> es;
  for (int i = 0; i < 5; ++i) es.push_back(r.store_next(writes({{"k" + std::to_string(i), "v"}})));
  r.ingest(es[0]);
  r.ingest(es[1]);
  r.ingest(es[4]);
  EXPECT_EQ(r.db->stats().backfill_fetches, 2u);
  EXPECT_EQ(r.db->worker_vc().at(kWriter), 5u);
  EXPECT_EQ(r.db->memtable().size(), 5u);
  EXPECT_TRUE(r.db->cut_closed());
  EXPECT_EQ(r.db->stats().cut_violations, 0u);
}

TEST(PslDb, BackfillSurvivesOneCrashedServer) {
  Rig r;
  std::vector<Envelope> es;
  for (int i = 0; i < 6; ++i) es.push_back(r.store_next(writes({{"k", std::to_string(i)}})));
  r.sim.crash(10);
  r.ingest(es[5]);
  EXPECT_EQ(r.db->worker_vc().at(kWriter), 6u);
  EXPECT_EQ(r.db->memtable().at(Key("k")).value.data, to_bytes("5"));
  EXPECT_TRUE(r.db->cut_closed());
}

TEST(PslDb, TamperedBlockDropped) {
  Rig r;
  Envelope e = r.chain.next(writes({{"a", "1"}}));
  e.ciphertext[3] ^= 0x10;
  r.ingest(e);
  EXPECT_EQ(r.db->stats().validity_drops, 1u);
  EXPECT_TRUE(r.db->worker_vc().empty());
}

TEST(PslDb, EmptyRoundIsSkipped) {
  Rig r;
  r.round();
  EXPECT_EQ(r.db->sr_seq(), 0u);
  EXPECT_EQ(r.db->stats().skipped_rounds, 1u);
}

TEST(PslDb, ReportListsExactlyTheWrittenKeys) {
  Rig r;
  r.ingest(r.store_next(writes({{"a", "va"}, {"b", "vb"}}, 7)));
  r.round();
  auto rep = r.report();
  ASSERT_EQ(rep.digests.size(), 2u);
  EXPECT_EQ(rep.digests[0], (KeyDigest{Key("a"), 7, digest(std::string_view("va"))}));
  EXPECT_EQ(rep.digests[1], (KeyDigest{Key("b"), 8, digest(std::string_view("vb"))}));
  EXPECT_EQ(rep.worker_vc, (std::vector<WorkerSeq>{{kWriter, 1}}));
  EXPECT_EQ(rep.seq, 1u);
  EXPECT_EQ(rep.prev_hash, Digest{});

  Digest first = envelope_digest(*r.db->last_report());
  r.ingest(r.store_next(writes({{"c", "vc"}}, 9)));
  r.round();
  EXPECT_EQ(r.report().prev_hash, first);
  EXPECT_EQ(r.report().seq, 2u);
}

TEST(PslDb, FetchKeyAnswers) {
  Rig r;
  r.ingest(r.store_next(writes({{"hot", "1"}})));
  auto a = r.db->fetch_key(Key("hot"));
  ASSERT_TRUE(a.has_value());
  EXPECT_EQ(a->kind, rpc::FetchKeyResp::Kind::kValue);
  EXPECT_EQ(a->value.data, to_bytes("1"));

  r.round();
  a = r.db->fetch_key(Key("hot"));
  ASSERT_TRUE(a.has_value());
  EXPECT_EQ(a->kind, rpc::FetchKeyResp::Kind::kCheckpoint);
  EXPECT_EQ(a->checkpoint, r.report().checkpoint_hash);

  a = r.db->fetch_key(Key("never"));
  ASSERT_TRUE(a.has_value());
  EXPECT_EQ(a->kind, rpc::FetchKeyResp::Kind::kNull);
}

TEST(PslDb, FifthCheckpointCompactsTwoOldest) {
  PslDbConfig cfg = Rig::quiet();
  cfg.level1_max = 4;
  Rig r(cfg);
  std::vector<Digest> ckpts;
  // "shared" lands in checkpoints 1 and 2; every round also adds a distinct key.
  for (int i = 0; i < 5; ++i) {
    WriteSet ws = writes({{"own" + std::to_string(i), "x"}}, 10u * (i + 1));
    if (i < 2) ws.push_back({Key("shared"), TimestampedValue{to_bytes("s" + std::to_string(i)), 10u * (i + 1) + 5}});
    r.ingest(r.store_next(ws));
    r.round();
    ckpts.push_back(r.report().checkpoint_hash);
    if (i < 4) {
      EXPECT_EQ(r.db->level1_size(), static_cast<std::size_t>(i + 1));
      EXPECT_EQ(r.db->stats().compactions, 0u);
    }
  }
  EXPECT_EQ(r.db->stats().compactions, 1u);
  EXPECT_EQ(r.db->level1_size(), 3u);
  EXPECT_EQ(r.db->level1_digests(), (std::vector<Digest>{ckpts[2], ckpts[3], ckpts[4]}));
  EXPECT_EQ(r.db->level2_keys(), 3u);  // own0, own1, shared
  EXPECT_EQ(r.db->level2_lookup(Key("shared")), ckpts[1]);
  EXPECT_EQ(r.db->level2_lookup(Key("own0")), ckpts[0]);
  auto a = r.db->fetch_key(Key("shared"));
  ASSERT_TRUE(a.has_value());
  EXPECT_EQ(a->checkpoint, ckpts[1]);
}

TEST(PslDb, DisjointCompactionSumsKeys) {
  PslDbConfig cfg = Rig::quiet();
  cfg.level1_max = 2;
  cfg.range_max = 3;
  Rig r(cfg);
  std::size_t written = 0;
  for (int round = 0; round < 6; ++round) {
    WriteSet ws;
    for (int i = 0; i < 4; ++i) {
      ws.push_back({Key("r" + std::to_string(round) + "k" + std::to_string(i)), TimestampedValue{to_bytes("v"), 1}});
    }
    r.ingest(r.store_next(ws));
    r.round();
    written += 4;
  }
  std::size_t in_level1 = 4 * r.db->level1_size();
  EXPECT_EQ(r.db->level2_keys() + in_level1, written);
  EXPECT_GE(r.db->level2_ranges(), r.db->level2_keys() / 3);
}

TEST(PslDb, GcListsCoveredBlocksExceptTip) {
  Rig r;
  std::vector<Envelope> es;
  for (int i = 0; i < 5; ++i) {
    es.push_back(r.store_next(writes({{"k", std::to_string(i)}})));
    r.ingest(es.back());
  }
  EXPECT_TRUE(r.db->issue_gc().empty());  // nothing checkpointed yet
  r.round();
  r.sim.run_for(kSeconds);
  EXPECT_EQ(r.db->stats().gc_listed, 4u);
  for (std::size_t s = 0; s < 3; ++s) {
    for (int i = 0; i < 4; ++i) EXPECT_FALSE(r.server(s).retrieve_by_hash(envelope_digest(es[i])).has_value());
    EXPECT_TRUE(r.server(s).retrieve_by_hash(envelope_digest(es[4])).has_value());
  }
  EXPECT_TRUE(r.db->cut_closed());
}

TEST(PslDb, UningestedBlockNeverListed) {
  Rig r;
  r.ingest(r.store_next(writes({{"a", "1"}})));
  r.ingest(r.store_next(writes({{"a", "2"}})));
  r.round();
  EXPECT_EQ(r.db->stats().gc_listed, 1u);
  // Block 3 reaches PSL-DB but no round has covered it.
  r.ingest(r.store_next(writes({{"a", "3"}})));
  EXPECT_TRUE(r.db->issue_gc().empty());
}

TEST(PslDb, CrashRestartRecoversQuorumStoredBlocks) {
  Rig r;
  for (int i = 0; i < 10; ++i) r.ingest(r.store_next(writes({{"k" + std::to_string(i), "v"}})));
  r.round();
  // Quorum-stored but never multicast to PSL-DB.
  for (int i = 10; i < 15; ++i) r.store_next(writes({{"k" + std::to_string(i), "v"}}));
  r.sim.crash(2);
  EXPECT_FALSE(r.db->ready());
  r.sim.restart(2);
  r.sim.run_until([&] { return r.db->ready(); }, r.sim.now() + 10 * kSeconds);
  ASSERT_TRUE(r.db->ready());
  EXPECT_EQ(r.db->sr_seq(), 1u);
  EXPECT_EQ(r.db->worker_vc().at(kWriter), 15u);
  EXPECT_EQ(r.db->stats().recoveries, 1u);
  r.round();
  EXPECT_EQ(r.db->sr_seq(), 2u);
  EXPECT_EQ(r.report().worker_vc, (std::vector<WorkerSeq>{{kWriter, 15}}));
  auto a = r.db->fetch_key(Key("k3"));
  ASSERT_TRUE(a.has_value());
  EXPECT_EQ(a->kind, rpc::FetchKeyResp::Kind::kCheckpoint);
  EXPECT_TRUE(r.db->cut_closed());
}

// --- locks, through full workers ---

namespace {

ClusterConfig direct(std::size_t workers) {
  ClusterConfig c;
  c.seed = 5;
  c.workers = workers;
  c.attest = false;
  return c;
}

}  // namespace

TEST(PslDbLocks, FreeLockGrantsImmediately) {
  Cluster c(direct(1));
  ASSERT_TRUE(c.start());
  bool granted = false;
  c.worker(0).acquire_lock(1, [&] { granted = true; });
  ASSERT_TRUE(c.run_until([&] { return granted; }, c.sim().now() + kSeconds));
  EXPECT_EQ(c.psl_db().lock_holder(1), layout::worker(0));
}

TEST(PslDbLocks, GrantsInArrivalOrder) {
  Cluster c(direct(4));
  ASSERT_TRUE(c.start());
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < 4; ++i) {
    // Staggered so arrival order is unambiguous.
    c.worker(i).schedule(i * 5 * kMillis, [&c, &order, i] {
      c.worker(i).acquire_lock(9, [&c, &order, i] {
        order.push_back(i);
        c.worker(i).schedule(20 * kMillis, [&c, i] { c.worker(i).release_lock(9); });
      });
    });
  }
  ASSERT_TRUE(c.run_until([&] { return order.size() == 4; }, c.sim().now() + 10 * kSeconds));
  EXPECT_EQ(order, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(PslDbLocks, NextGrantWaitsForReleasedTip) {
  Cluster c(direct(2));
  ASSERT_TRUE(c.start());
  Worker& a = c.worker(0);
  Worker& b = c.worker(1);
    bool a_has = false;
  a.acquire_lock(3, [&] { a_has = true; });
  ASSERT_TRUE(c.run_until([&] { return a_has; }, c.sim().now() + kSeconds));
  // PSL-DB never hears a's multicasts, so the barrier must fetch by tip.
  c.sim().policy().links[{layout::worker(0), layout::kPslDb}] = netsim::LinkPolicy{1.0, {}, 0, false};
  bool b_has = false;
  std::uint64_t vc_at_grant = 0;
  std::uint64_t report_at_grant = 0;
  const TimestampedValue* seen = nullptr;
  b.acquire_lock(3, [&] {
    b_has = true;
    vc_at_grant = c.psl_db().worker_vc().count(a.id()) ? c.psl_db().worker_vc().at(a.id()) : 0;
    report_at_grant = b.last_report_seq();
    seen = b.memtable().peek(Key("guarded"));
  });
  for (int i = 0; i < 3; ++i) {
    bool done = false;
    TransactionBuffer txn;
    txn.write(Key("guarded"), to_bytes("a" + std::to_string(i)));
    a.commit(txn, [&](std::optional<CommitReceipt>) { done = true; });
    ASSERT_TRUE(c.run_until([&] { return done; }, c.sim().now() + kSeconds));
  }
  EXPECT_FALSE(b_has);
  std::uint64_t a_seq = a.seq();
  c.sim().policy().links.erase({layout::worker(0), layout::kPslDb});
  std::uint64_t rounds_before = c.psl_db().stats().rounds;
  a.release_lock(3);
  ASSERT_TRUE(c.run_until([&] { return b_has; }, c.sim().now() + 5 * kSeconds));
  EXPECT_GE(vc_at_grant, a_seq);
  EXPECT_GT(c.psl_db().stats().rounds, rounds_before);
  EXPECT_EQ(report_at_grant, c.psl_db().sr_seq());
  ASSERT_NE(seen, nullptr);
  EXPECT_EQ(seen->data, to_bytes("a2"));
}

TEST(PslDbLocks, ReleaseByNonHolderCounted) {
  Cluster c(direct(2));
  ASSERT_TRUE(c.start());
  bool granted = false;
  c.worker(0).acquire_lock(4, [&] { granted = true; });
  ASSERT_TRUE(c.run_until([&] { return granted; }, c.sim().now() + kSeconds));
  auto nonces = NonceSource::seeded(1, 1);
  Envelope env = seal(rpc::encode_control(rpc::LockRelease{77, 4, 1, Digest{}}),
                      {layout::worker(1), 900, BodyKind::kControl}, c.keys(), false, nonces);
  c.sim().inject(layout::kPslDb, layout::worker(1), rpc::frame(rpc::Control{env}));
  c.sim().run_for(100 * kMillis);
  EXPECT_EQ(c.psl_db().stats().release_violations, 1u);
  EXPECT_EQ(c.psl_db().lock_holder(4), layout::worker(0));
}
