#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "psl/verifier.hpp"

using namespace psl;
using namespace psl::verify;

namespace {

Digest h(const std::string& v) { return digest(std::string_view(v)); }

HistoryEvent commit(NodeId node, const std::string& key, const std::string& v, std::uint64_t ts, std::uint64_t seq) {
  HistoryEvent e;
  e.node = node;
  e.kind = EventKind::kTxnCommit;
  e.key = Key(key);
  e.value = h(v);
  e.ts = ts;
  e.seq = seq;
  return e;
}

HistoryEvent durable(NodeId node, std::uint64_t seq) {
  HistoryEvent e;
  e.node = node;
  e.kind = EventKind::kCommitDurable;
  e.seq = seq;
  return e;
}

HistoryEvent read(NodeId node, const std::string& key, const std::string& v, std::uint64_t ts,
                  EventKind kind = EventKind::kRead) {
  HistoryEvent e;
  e.node = node;
  e.kind = kind;
  e.key = Key(key);
  e.value = h(v);
  e.ts = ts;
  return e;
}

HistoryEvent absent(NodeId node, const std::string& key, EventKind kind = EventKind::kRead) {
  HistoryEvent e;
  e.node = node;
  e.kind = kind;
  e.key = Key(key);
  e.absent = true;
  return e;
}

HistoryEvent lock_event(EventKind kind, NodeId node, std::uint64_t lock, std::uint64_t grant, SimTime t) {
  HistoryEvent e;
  e.t = t;
  e.node = node;
  e.kind = kind;
  e.lock = lock;
  e.seq = grant;
  return e;
}

}  // namespace

TEST(Verifier, EmptyHistoryPasses) {
  std::vector<HistoryEvent> none;
  EXPECT_TRUE(check_monotonic(none).empty());
  EXPECT_TRUE(check_validity(none).empty());
  EXPECT_TRUE(check_lock_serial(none).ok);
  auto v = verify_all(none);
  EXPECT_TRUE(v.ok());
  EXPECT_FALSE(v.convergence.has_value());
}

TEST(Verifier, BackwardsReadIsOneViolation) {
  std::vector<HistoryEvent> hist{commit(100, "k", "a", 3, 1), commit(100, "k", "b", 5, 2), read(101, "k", "b", 5),
                                 read(101, "k", "a", 3)};
  auto vs = check_monotonic(hist);
  ASSERT_EQ(vs.size(), 1u);
  EXPECT_EQ(vs[0].first, 2u);
  EXPECT_EQ(vs[0].second, 3u);
}

TEST(Verifier, MonotonicIsPerWorkerAndKey) {
  std::vector<HistoryEvent> hist{read(101, "k", "b", 5), read(102, "k", "a", 3), read(101, "j", "a", 3),
                                 read(101, "k", "b", 5)};
  EXPECT_TRUE(check_monotonic(hist).empty());
}

TEST(Verifier, SameTsOrderedByDigest) {
  auto lo = h("x") < h("y") ? "x" : "y";
  auto hi = h("x") < h("y") ? "y" : "x";
  std::vector<HistoryEvent> ok{read(101, "k", lo, 4), read(101, "k", hi, 4)};
  std::vector<HistoryEvent> bad{read(101, "k", hi, 4), read(101, "k", lo, 4)};
  EXPECT_TRUE(check_monotonic(ok).empty());
  EXPECT_EQ(check_monotonic(bad).size(), 1u);
}

TEST(Verifier, AbsentAfterPresentIsViolation) {
  std::vector<HistoryEvent> hist{absent(101, "k"), read(101, "k", "a", 1), absent(101, "k")};
  EXPECT_EQ(check_monotonic(hist).size(), 1u);
}

TEST(Verifier, ForeignDigestIsOneValidityViolation) {
  std::vector<HistoryEvent> hist{commit(100, "k", "a", 1, 1), read(101, "k", "a", 1), read(101, "k", "forged", 2),
                                 absent(102, "k")};
  auto vs = check_validity(hist);
  ASSERT_EQ(vs.size(), 1u);
  EXPECT_EQ(vs[0].second, 2u);
}

TEST(Verifier, SingleWriterConvergesToLastWrite) {
  std::vector<HistoryEvent> hist{commit(100, "k", "a", 1, 1), durable(100, 1), commit(100, "k", "b", 2, 2),
                                 durable(100, 2), read(100, "k", "b", 2, EventKind::kFinalRead),
                                 read(101, "k", "b", 2, EventKind::kFinalRead)};
  auto r = check_convergence(hist);
  EXPECT_TRUE(r.ok);
  EXPECT_EQ(r.final_reads, 2u);
  hist.push_back(read(102, "k", "a", 1, EventKind::kFinalRead));
  EXPECT_EQ(check_convergence(hist).mismatches.size(), 1u);
}

TEST(Verifier, UndurableWritesExcludedFromOracle) {
  // Worker 102's block 1 never reached a quorum.
  std::vector<HistoryEvent> hist{commit(100, "k", "a", 1, 1), durable(100, 1), commit(102, "k", "lost", 9, 1),
                                 read(100, "k", "a", 1, EventKind::kFinalRead)};
  EXPECT_TRUE(check_convergence(hist).ok);
  EXPECT_EQ(committed_writes(hist).size(), 1u);
}

TEST(Verifier, UnwrittenKeyMustReadAbsent) {
  std::vector<HistoryEvent> hist{absent(100, "nothing", EventKind::kFinalRead)};
  EXPECT_TRUE(check_convergence(hist).ok);
  hist.push_back(read(101, "nothing", "x", 1, EventKind::kFinalRead));
  EXPECT_FALSE(check_convergence(hist).ok);
}

// Random concurrent writes from three workers; the expected winner is
// computed here by sorting rather than folding.
TEST(Verifier, ConcurrentWritersMatchSortedOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<HistoryEvent> hist;
    std::vector<std::pair<std::uint64_t, std::string>> all;
    std::uint64_t seq[3] = {0, 0, 0};
    for (int i = 0; i < 12; ++i) {
      NodeId w = static_cast<NodeId>(100 + rng() % 3);
      std::uint64_t ts = 1 + rng() % 5;
      std::string v = "v" + std::to_string(rng() % 1000);
      auto s = ++seq[w - 100];
      hist.push_back(commit(w, "k", v, ts, s));
      hist.push_back(durable(w, s));
      all.emplace_back(ts, v);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : h(a.second) < h(b.second);
    });
    auto [ts, v] = all.back();
    for (NodeId w = 100; w < 103; ++w) hist.push_back(read(w, "k", v, ts, EventKind::kFinalRead));
    EXPECT_TRUE(check_convergence(hist).ok) << trial;
    // Any other candidate is rejected.
    for (const auto& [ots, ov] : all) {
      if (ots == ts && ov == v) continue;
      auto bad = hist;
      bad.push_back(read(103, "k", ov, ots, EventKind::kFinalRead));
      EXPECT_FALSE(check_convergence(bad).ok);
      break;
    }
  }
}

TEST(Verifier, DisjointLockIntervalsPass) {
  std::vector<HistoryEvent> hist{lock_event(EventKind::kLockGrant, 100, 1, 1, 10),
                                 lock_event(EventKind::kLockRelease, 100, 1, 1, 20),
                                 lock_event(EventKind::kLockGrant, 101, 1, 2, 30),
                                 lock_event(EventKind::kLockRelease, 101, 1, 2, 40)};
  auto r = check_lock_serial(hist);
  EXPECT_TRUE(r.ok);
  EXPECT_EQ(r.grants, 2u);
}

TEST(Verifier, OverlappingLockIntervalsFail) {
  std::vector<HistoryEvent> hist{lock_event(EventKind::kLockGrant, 100, 1, 1, 10),
                                 lock_event(EventKind::kLockGrant, 101, 1, 2, 15),
                                 lock_event(EventKind::kLockRelease, 100, 1, 1, 20),
                                 lock_event(EventKind::kLockRelease, 101, 1, 2, 40)};
  EXPECT_FALSE(check_lock_serial(hist).ok);
}

TEST(Verifier, DifferentLocksMayOverlap) {
  std::vector<HistoryEvent> hist{lock_event(EventKind::kLockGrant, 100, 1, 1, 10),
                                 lock_event(EventKind::kLockGrant, 101, 2, 2, 15),
                                 lock_event(EventKind::kLockRelease, 100, 1, 1, 20),
                                 lock_event(EventKind::kLockRelease, 101, 2, 2, 40)};
  EXPECT_TRUE(check_lock_serial(hist).ok);
}

TEST(Verifier, StaleReadAfterGrantFails) {
  std::vector<HistoryEvent> hist{lock_event(EventKind::kLockGrant, 100, 1, 1, 10), commit(100, "c", "1", 7, 1),
                                 lock_event(EventKind::kLockRelease, 100, 1, 1, 20),
                                 lock_event(EventKind::kLockGrant, 101, 1, 2, 30), read(101, "c", "0", 3),
                                 lock_event(EventKind::kLockRelease, 101, 1, 2, 40)};
  EXPECT_FALSE(check_lock_serial(hist).ok);
  hist[4] = read(101, "c", "1", 7);
  EXPECT_TRUE(check_lock_serial(hist).ok);
}

TEST(Verifier, ReleaseWithoutGrantFails) {
  std::vector<HistoryEvent> hist{lock_event(EventKind::kLockRelease, 100, 1, 1, 20)};
  EXPECT_FALSE(check_lock_serial(hist).ok);
}

TEST(Verifier, HistoryJsonRoundTrip) {
  std::vector<HistoryEvent> hist{commit(100, "k", "a", 3, 1), durable(100, 1), absent(101, "q"),
                                 lock_event(EventKind::kLockGrant, 100, 9, 4, 77)};
  std::ostringstream out;
  for (const auto& e : hist) out << to_json_line(e) << "\n";
  out << R"({"t":5,"ev":"deliver","from":1,"to":2})" << "\n";
  std::istringstream in(out.str());
  auto back = read_history(in);
  ASSERT_EQ(back.size(), hist.size());
  for (std::size_t i = 0; i < hist.size(); ++i) {
    EXPECT_EQ(back[i].kind, hist[i].kind);
    EXPECT_EQ(back[i].node, hist[i].node);
    EXPECT_EQ(back[i].key, hist[i].key);
    EXPECT_EQ(back[i].value, hist[i].value);
    EXPECT_EQ(back[i].ts, hist[i].ts);
    EXPECT_EQ(back[i].seq, hist[i].seq);
    EXPECT_EQ(back[i].lock, hist[i].lock);
    EXPECT_EQ(back[i].absent, hist[i].absent);
  }
}

TEST(Verifier, VerdictJsonReportsEachProperty) {
  std::vector<HistoryEvent> hist{read(101, "k", "forged", 1)};
  auto v = verify_all(hist);
  EXPECT_FALSE(v.ok());
  auto j = v.to_json();
  EXPECT_FALSE(j["pass"].get<bool>());
  EXPECT_FALSE(j["validity"]["pass"].get<bool>());
  EXPECT_TRUE(j["monotonic"]["pass"].get<bool>());
  EXPECT_EQ(j["validity"]["violations"].get<int>(), 1);
}
