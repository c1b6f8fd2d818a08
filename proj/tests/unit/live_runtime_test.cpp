#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "psl/live_runtime.hpp"
#include "psl/psl_db.hpp"
#include "psl/storage_server.hpp"
#include "psl/worker.hpp"

using namespace psl;

namespace {

struct Echo final : Node {
  using Node::Node;
  std::vector<std::pair<NodeId, Bytes>> got;
  void receive(NodeId from, ByteView frame) override { got.emplace_back(from, Bytes(frame.begin(), frame.end())); }
  void push(NodeId to, std::string_view text) { rt().send(id(), to, std::make_shared<Bytes>(to_bytes(text))); }
};

}  // namespace

TEST(LiveRuntime, FramesCrossLoopbackInOrder) {
  LiveRuntime a, b;
  auto& x = a.emplace<Echo>(1);
  auto& y = b.emplace<Echo>(2);
  auto pa = a.listen();
  auto pb = b.listen();
  a.set_address(2, pb.at(2));
  b.set_address(1, pa.at(1));
  for (int i = 0; i < 50; ++i) x.push(2, "m" + std::to_string(i));
  ASSERT_TRUE(b.run_until([&] { return y.got.size() == 50; }, 5 * kSeconds));
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(y.got[i].first, 1u);
    EXPECT_EQ(y.got[i].second, to_bytes("m" + std::to_string(i)));
  }
  y.push(1, "back");
  ASSERT_TRUE(a.run_until([&] { return x.got.size() == 1; }, 5 * kSeconds));
  EXPECT_EQ(x.got[0].second, to_bytes("back"));
}

TEST(LiveRuntime, TimersFireInDeadlineOrder) {
  LiveRuntime rt;
  auto& n = rt.emplace<Echo>(1);
  std::vector<int> order;
  rt.set_timer(n.id(), 20 * kMillis, [&] { order.push_back(2); });
  rt.set_timer(n.id(), 5 * kMillis, [&] { order.push_back(1); });
  auto id = rt.set_timer(n.id(), 10 * kMillis, [&] { order.push_back(9); });
  rt.cancel_timer(id);
  ASSERT_TRUE(rt.run_until([&] { return order.size() == 2; }, kSeconds));
  EXPECT_EQ(order, (std::vector<int>{1, 2}));
}

// The protocol nodes run unchanged over TCP: storage servers in one runtime,
// workers and PSL-DB in another.
TEST(LiveRuntime, CommitReplicatesOverTcp) {
  auto topo = std::make_shared<Topology>();
  topo->f = 1;
  topo->psl_db = 2;
  topo->storage = {10, 11, 12};
  topo->workers = {100, 101};
  auto keys = KeyMaterial::generate(5);

  LiveRuntime storage_rt(5), compute_rt(5);
  for (NodeId s : topo->storage) {
    storage_rt.emplace<StorageServer>(s, std::make_shared<MemoryBlockStore>(), keys.verify_key);
  }
  auto& w0 = compute_rt.emplace<Worker>(100, topo);
  auto& w1 = compute_rt.emplace<Worker>(101, topo);
  auto& db = compute_rt.emplace<PslDb>(2, topo);
  w0.provision(keys);
  w1.provision(keys);
  db.provision(keys);

  auto storage_eps = storage_rt.listen();
  auto compute_eps = compute_rt.listen();
  for (auto& [id, ep] : storage_eps) compute_rt.set_address(id, ep);
  for (auto& [id, ep] : compute_eps) storage_rt.set_address(id, ep);

  std::atomic<bool> done{false};
  storage_rt.start();
  std::thread server_loop([&] { storage_rt.run_until([&] { return done.load(); }, 30 * kSeconds); });
  compute_rt.start();

  bool committed = false;
  if (compute_rt.run_until([&] { return db.ready(); }, 10 * kSeconds)) {
    TransactionBuffer txn;
    txn.write(Key("live"), to_bytes("over-tcp"));
    w0.commit(txn, [&](std::optional<CommitReceipt> r) { committed = r.has_value(); });
    compute_rt.run_until([&] { return committed && w1.memtable().peek(Key("live")) != nullptr; }, 10 * kSeconds);
  }
  done = true;
  server_loop.join();
  ASSERT_TRUE(db.ready());
  ASSERT_TRUE(committed);
  ASSERT_NE(w1.memtable().peek(Key("live")), nullptr);
  EXPECT_EQ(w1.memtable().peek(Key("live"))->data, to_bytes("over-tcp"));
  EXPECT_GT(compute_rt.frames_out(), 0u);
}
