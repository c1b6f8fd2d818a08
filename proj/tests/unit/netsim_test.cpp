#include <gtest/gtest.h>

#include <sstream>

#include "psl/netsim.hpp"

using namespace psl;
using namespace psl::netsim;

namespace {

struct Recorder final : Node {
  using Node::Node;
  std::vector<std::pair<SimTime, Bytes>> got;
  void receive(NodeId, ByteView frame) override { got.emplace_back(now(), Bytes(frame.begin(), frame.end())); }
  void say(NodeId to, std::string_view text) { rt().send(id(), to, std::make_shared<Bytes>(to_bytes(text))); }
  void shout(const std::vector<NodeId>& to, std::string_view text) {
    rt().multicast(id(), to, std::make_shared<Bytes>(to_bytes(text)));
  }
};

// Resends until acknowledged by any reply; used to see traffic resume after
// a partition.
struct Pinger final : Node {
  NodeId peer;
  std::size_t acks = 0;
  Pinger(NodeId id, NodeId p) : Node(id), peer(p) {}
  void start() override { tick(); }
  void tick() {
    if (acks > 0) return;
    rt().send(id(), peer, std::make_shared<Bytes>(to_bytes("ping")));
    after(5 * kMillis, [this] { tick(); });
  }
  void receive(NodeId, ByteView) override { ++acks; }
};

struct Ponger final : Node {
  using Node::Node;
  std::vector<SimTime> seen;
  void receive(NodeId from, ByteView) override {
    seen.push_back(now());
    rt().send(id(), from, std::make_shared<Bytes>(to_bytes("pong")));
  }
};

std::string run_log(std::uint64_t seed) {
  std::ostringstream log;
  AdversaryPolicy p;
  p.default_link = LinkPolicy{0.3, Delay::exponential(2.0), 1, true};
  Simulator sim(seed, p);
  sim.set_event_log(&log);
  auto& a = sim.emplace<Recorder>(1);
  sim.emplace<Recorder>(2);
  sim.emplace<Recorder>(3);
  sim.start();
  for (int i = 0; i < 50; ++i) a.shout({2, 3}, "m" + std::to_string(i));
  sim.run_to_quiescence(10 * kSeconds);
  return log.str();
}

}  // namespace

TEST(Netsim, EmptySystemReturnsImmediately) {
  Simulator sim(1);
  auto stats = sim.run_to_quiescence(kSeconds);
  EXPECT_EQ(stats.events, 0u);
  EXPECT_EQ(sim.now(), 0u);
}

TEST(Netsim, LosslessMulticastDeliveredExactlyOnce) {
  Simulator sim(1);
  auto& a = sim.emplace<Recorder>(1);
  auto& b = sim.emplace<Recorder>(2);
  auto& c = sim.emplace<Recorder>(3);
  sim.start();
  for (int i = 0; i < 10; ++i) a.shout({2, 3}, std::to_string(i));
  sim.run_to_quiescence(kSeconds);
  ASSERT_EQ(b.got.size(), 10u);
  ASSERT_EQ(c.got.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(b.got[i].second, to_bytes(std::to_string(i)));  // per-link FIFO
}

TEST(Netsim, DropAllOnOneLinkOnly) {
  Simulator sim(1);
  auto& a = sim.emplace<Recorder>(1);
  auto& b = sim.emplace<Recorder>(2);
  auto& c = sim.emplace<Recorder>(3);
  sim.policy().links[{1, 2}] = LinkPolicy{1.0, {}, 0, false};
  sim.start();
  for (int i = 0; i < 10; ++i) a.shout({2, 3}, "x");
  sim.run_to_quiescence(kSeconds);
  EXPECT_TRUE(b.got.empty());
  EXPECT_EQ(c.got.size(), 10u);
  EXPECT_EQ(sim.stats().dropped, 10u);
}

TEST(Netsim, ReplayCountTwoGivesThreeDeliveries) {
  Simulator sim(1);
  auto& a = sim.emplace<Recorder>(1);
  auto& b = sim.emplace<Recorder>(2);
  sim.policy().links[{1, 2}] = LinkPolicy{0, Delay::fixed(1), 2, false};
  sim.start();
  a.say(2, "hello");
  sim.run_to_quiescence(kSeconds);
  ASSERT_EQ(b.got.size(), 3u);
  for (auto& [t, bytes] : b.got) EXPECT_EQ(bytes, to_bytes("hello"));
}

TEST(Netsim, DelayDistributions) {
  Simulator sim(4);
  auto& a = sim.emplace<Recorder>(1);
  auto& b = sim.emplace<Recorder>(2);
  sim.policy().links[{1, 2}] = LinkPolicy{0, Delay::uniform(2, 4), 0, true};
  sim.start();
  for (int i = 0; i < 200; ++i) a.say(2, "d");
  sim.run_to_quiescence(kSeconds);
  ASSERT_EQ(b.got.size(), 200u);
  for (auto& [t, _] : b.got) {
    EXPECT_GE(t, 2 * kMillis);
    EXPECT_LE(t, 4 * kMillis + 100);  // plus receive-loop cost
  }
}

TEST(Netsim, PayloadNeverAlteredByPolicy) {
  Simulator sim(9);
  auto& a = sim.emplace<Recorder>(1);
  auto& b = sim.emplace<Recorder>(2);
  sim.policy().default_link = LinkPolicy{0.5, Delay::exponential(3), 3, true};
  std::set<Digest> sent;
  sim.start();
  for (int i = 0; i < 100; ++i) {
    std::string m = "payload-" + std::to_string(i);
    sent.insert(digest(std::string_view(m)));
    a.say(2, m);
  }
  sim.run_to_quiescence(10 * kSeconds);
  EXPECT_FALSE(b.got.empty());
  for (auto& [t, bytes] : b.got) EXPECT_EQ(sent.count(digest(bytes)), 1u);
}

TEST(Netsim, SameSeedSameLog) {
  auto a = run_log(42);
  auto b = run_log(42);
  auto c = run_log(43);
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Netsim, PartitionBlocksThenTrafficResumes) {
  Simulator sim(3);
  auto& ping = sim.emplace<Pinger>(1, 2);
  auto& pong = sim.emplace<Ponger>(2);
  sim.policy().partitions.push_back(Partition{0, 200 * kMillis, {1}});
  sim.start();
  sim.run_until([&] { return ping.acks > 0; }, 2 * kSeconds);
  ASSERT_GT(ping.acks, 0u);
  ASSERT_FALSE(pong.seen.empty());
  for (SimTime t : pong.seen) EXPECT_GE(t, 200 * kMillis);
  EXPECT_GT(sim.stats().partition_dropped, 0u);
}

TEST(Netsim, InjectDeliversAttackerBytes) {
  Simulator sim(1);
  auto& b = sim.emplace<Recorder>(2);
  sim.start();
  sim.inject(2, 7, to_bytes("forged"));
  sim.run_to_quiescence(kSeconds);
  ASSERT_EQ(b.got.size(), 1u);
  EXPECT_EQ(b.got[0].second, to_bytes("forged"));
  EXPECT_EQ(sim.stats().injected, 1u);
}

TEST(Netsim, CrashedNodeDropsTimersAndMessages) {
  Simulator sim(1);
  auto& ping = sim.emplace<Pinger>(1, 2);
  auto& pong = sim.emplace<Ponger>(2);
  sim.start();
  sim.crash(2);
  sim.run_for(100 * kMillis);
  EXPECT_TRUE(pong.seen.empty());
  EXPECT_GT(sim.stats().down_dropped, 0u);
  sim.restart(2);
  sim.run_until([&] { return ping.acks > 0; }, sim.now() + kSeconds);
  EXPECT_GT(ping.acks, 0u);
}

TEST(Netsim, EventBudgetStopsLivelock) {
  Simulator sim(1);
  sim.emplace<Pinger>(1, 2);
  sim.set_event_budget(100);
  sim.start();
  auto stats = sim.run_to_quiescence(3600 * kSeconds);
  EXPECT_TRUE(stats.budget_exhausted);
}

TEST(Netsim, PolicyFromJson) {
  auto j = nlohmann::json::parse(R"({
    "default": {"drop": 0.1, "delay": {"kind": "uniform", "a": 1, "b": 2}},
    "links": [{"from": "a", "to": "b*", "drop": 1.0, "replay": 2, "reorder": true}],
    "partitions": [{"start_ms": 5, "end_ms": 10, "side": ["a"]}]
  })");
  NameResolver names = [](const std::string& n) -> std::vector<NodeId> {
    if (n == "a") return {1};
    if (n == "b*") return {2, 3};
    throw std::invalid_argument(n);
  };
  auto p = policy_from_json(j, names);
  EXPECT_DOUBLE_EQ(p.default_link.drop_prob, 0.1);
  EXPECT_EQ(p.default_link.delay.kind, Delay::Kind::kUniform);
  EXPECT_EQ(p.links.size(), 2u);
  EXPECT_EQ(p.link(1, 3).replay_count, 2u);
  EXPECT_TRUE(p.cut(1, 2, 7 * kMillis));
  EXPECT_FALSE(p.cut(1, 2, 10 * kMillis));
  EXPECT_FALSE(p.cut(2, 3, 7 * kMillis));
}
