#pragma once

// Live transport: nodes hosted in this process talk to remote nodes over
// TCP. Each directed (local node, remote node) pair gets one persistent
// connection opened with a hello frame {from, to}; every later frame is a
// u32 big-endian length followed by the payload. One receive thread per
// connection feeds a shared inbound queue; all node code runs on the thread
// that calls run_until.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "psl/runtime.hpp"

namespace psl {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

class LiveRuntime final : public Runtime {
 public:
  explicit LiveRuntime(std::uint64_t seed = 0, CostModel costs = {});
  ~LiveRuntime() override;

  template <class T, class... Args>
  T& emplace(Args&&... args) {
    auto node = std::make_unique<T>(std::forward<Args>(args)...);
    T& ref = *node;
    add(std::move(node));
    return ref;
  }
  void add(std::unique_ptr<Node> node);

  /// Opens a listening socket for every local node. A zero port in
  /// `endpoint` picks a free one; returns the bound endpoints.
  std::map<NodeId, Endpoint> listen(const std::map<NodeId, Endpoint>& requested = {});
  /// Where to reach a remote node.
  void set_address(NodeId id, Endpoint ep);

  /// Calls start() on every local node.
  void start();
  /// Processes inbound frames and timers until `done` holds or `timeout`
  /// elapses. Returns whether `done` held.
  bool run_until(const std::function<bool()>& done, SimTime timeout);
  void stop();

  std::uint64_t frames_in() const { return frames_in_; }
  std::uint64_t frames_out() const { return frames_out_; }

  // Runtime
  SimTime now() const override;
  void send(NodeId from, NodeId to, Payload frame) override;
  TimerId set_timer(NodeId owner, SimTime delay, std::function<void()> fn) override;
  void cancel_timer(TimerId id) override;
  const CostModel& costs() const override { return costs_; }
  std::uint64_t seed() const override { return seed_; }
  bool deterministic() const override { return false; }

 private:
  struct Inbound {
    NodeId from;
    NodeId to;
    Bytes payload;
  };
  struct Timer {
    NodeId owner;
    std::function<void()> fn;
  };

  void accept_loop(int listen_fd);
  void receive_loop(int fd);
  int connect_to(NodeId from, NodeId to);
  void push(Inbound in);

  std::uint64_t seed_;
  CostModel costs_;
  std::chrono::steady_clock::time_point epoch_;
  std::map<NodeId, std::unique_ptr<Node>> nodes_;
  std::map<NodeId, Endpoint> addresses_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Inbound> inbound_;

  std::multimap<SimTime, TimerId> timer_order_;
  std::map<TimerId, Timer> timers_;
  TimerId next_timer_ = 0;

  std::map<std::pair<NodeId, NodeId>, int> outbound_;
  std::vector<int> listen_fds_;
  std::mutex fds_mu_;
  std::vector<int> conn_fds_;
  std::vector<std::thread> threads_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> frames_in_{0};
  std::uint64_t frames_out_ = 0;
};

}  // namespace psl
