#pragma once

// Deterministic discrete-event network simulator.
//
// Events run in (time, insertion seq) order. Each directed link applies its
// own drop/delay/replay policy; multicast is a set of independent unicasts.
// Partitions drop any message sent or delivered across the cut while the
// window is open. Payload bytes are never modified by a policy; tampering
// goes through inject().

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "psl/runtime.hpp"

namespace psl::netsim {

struct Delay {
  enum class Kind { kFixed, kUniform, kExponential };
  Kind kind = Kind::kFixed;
  double a_ms = 0.5;  // fixed value, uniform low, or exponential mean
  double b_ms = 0.5;  // uniform high

  static Delay fixed(double ms) { return {Kind::kFixed, ms, ms}; }
  static Delay uniform(double lo, double hi) { return {Kind::kUniform, lo, hi}; }
  static Delay exponential(double mean) { return {Kind::kExponential, mean, mean}; }
};

struct LinkPolicy {
  double drop_prob = 0.0;
  Delay delay;
  std::uint32_t replay_count = 0;
  bool reorder = false;  // false: per-link FIFO
};

struct Partition {
  SimTime start = 0;
  SimTime end = 0;
  std::set<NodeId> side;  // one half; every other node is the other half

  bool active(SimTime t) const { return t >= start && t < end; }
  bool separates(NodeId a, NodeId b) const { return (side.count(a) != 0) != (side.count(b) != 0); }
};

struct AdversaryPolicy {
  LinkPolicy default_link;
  std::map<std::pair<NodeId, NodeId>, LinkPolicy> links;
  std::vector<Partition> partitions;

  const LinkPolicy& link(NodeId from, NodeId to) const;
  bool cut(NodeId a, NodeId b, SimTime t) const;
  void set_inbound(const std::vector<NodeId>& senders, NodeId to, const LinkPolicy& p);
};

/// Resolves a node name from a scenario file ("psldb", "storage:1",
/// "worker:*", ...) to node ids.
using NameResolver = std::function<std::vector<NodeId>(const std::string&)>;

/// {"default": {...link...}, "links": [{"from": "...", "to": "...", ...}],
///  "partitions": [{"start_ms": 0, "end_ms": 10, "side": ["worker:0"]}]}
/// Link fields: drop, delay {"kind": "fixed|uniform|exponential", "a": ms,
/// "b": ms}, replay, reorder.
AdversaryPolicy policy_from_json(const nlohmann::json& j, const NameResolver& names);
LinkPolicy link_from_json(const nlohmann::json& j, LinkPolicy base = {});

struct SimStats {
  std::uint64_t events = 0;
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  std::uint64_t partition_dropped = 0;
  std::uint64_t down_dropped = 0;
  std::uint64_t replayed = 0;
  std::uint64_t injected = 0;
  std::uint64_t bytes_delivered = 0;
  bool budget_exhausted = false;
  SimTime end_time = 0;
  std::map<NodeId, std::uint64_t> delivered_to;
};

class Simulator final : public Runtime {
 public:
  explicit Simulator(std::uint64_t seed, AdversaryPolicy policy = {}, CostModel costs = {});
  ~Simulator() override;

  template <class T, class... Args>
  T& emplace(Args&&... args) {
    auto node = std::make_unique<T>(std::forward<Args>(args)...);
    T& ref = *node;
    add(std::move(node));
    return ref;
  }
  void add(std::unique_ptr<Node> node);
  Node* node(NodeId id) const;
  std::vector<NodeId> node_ids() const;

  /// Calls start() on every node not yet started.
  void start();

  /// Harness action at absolute time `t`.
  void at(SimTime t, std::function<void()> fn);
  void crash(NodeId id);
  void restart(NodeId id);
  bool up(NodeId id) const;

  /// Delivers attacker-chosen bytes to `to` as if sent by `claimed_from`.
  void inject(NodeId to, NodeId claimed_from, Bytes bytes, SimTime delay = 0);

  SimStats run_until(const std::function<bool()>& done, SimTime max_time);
  SimStats run_for(SimTime duration) { return run_until(nullptr, now_ + duration); }
  /// Runs until the queue is empty or the limit is hit.
  SimStats run_to_quiescence(SimTime max_time) { return run_until(nullptr, max_time); }

  void set_event_budget(std::uint64_t max_events) { budget_ = max_events; }
  AdversaryPolicy& policy() { return policy_; }
  const SimStats& stats() const { return stats_; }
  bool idle() const { return queue_.empty(); }

  /// Line-delimited JSON records of every network event.
  void set_event_log(std::ostream* out) { log_ = out; }
  void log_record(const std::string& line);

  /// Called with (from, to, payload) for each delivered frame.
  void set_tap(std::function<void(NodeId, NodeId, const Bytes&)> tap) { tap_ = std::move(tap); }

  // Runtime
  SimTime now() const override { return now_; }
  void send(NodeId from, NodeId to, Payload frame) override;
  TimerId set_timer(NodeId owner, SimTime delay, std::function<void()> fn) override;
  void cancel_timer(TimerId id) override;
  void charge(NodeId node, double micros) override;
  const CostModel& costs() const override { return costs_; }
  std::uint64_t seed() const override { return seed_; }
  bool deterministic() const override { return true; }

  std::mt19937_64& rng() { return rng_; }

 private:
  enum class EventType : std::uint8_t { kDeliver, kTimer, kAction };
  struct Event {
    SimTime time = 0;
    std::uint64_t seq = 0;
    EventType type = EventType::kAction;
    NodeId from = 0;
    NodeId to = 0;
    bool injected = false;
    std::uint64_t epoch = 0;
    TimerId timer = 0;
    Payload payload;
    std::shared_ptr<std::function<void()>> fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };
  struct NodeSlot {
    std::unique_ptr<Node> node;
    bool up = true;
    bool started = false;
    std::uint64_t epoch = 0;
    SimTime busy_until = 0;
  };

  void push(Event e);
  SimTime sample_delay(const Delay& d);
  double uniform01();
  void deliver(Event& e);
  void log_net(const char* ev, const Event& e);

  std::uint64_t seed_;
  AdversaryPolicy policy_;
  CostModel costs_;
  std::mt19937_64 rng_;
  SimTime now_ = 0;
  std::uint64_t next_seq_ = 0;
  TimerId next_timer_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::map<NodeId, NodeSlot> nodes_;
  std::unordered_set<TimerId> cancelled_;
  std::map<std::pair<NodeId, NodeId>, SimTime> link_tail_;
  std::uint64_t budget_ = 200'000'000;
  SimStats stats_;
  std::ostream* log_ = nullptr;
  std::function<void(NodeId, NodeId, const Bytes&)> tap_;

  NodeId current_ = 0;
  bool in_delivery_ = false;
  double pending_cost_ = 0;
};

}  // namespace psl::netsim
