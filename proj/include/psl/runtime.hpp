#pragma once

// Execution environment seen by protocol nodes. The simulator and the live
// TCP transport both implement Runtime, so node code is shared.

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "psl/bytes.hpp"
#include "psl/rpc.hpp"
#include "psl/types.hpp"

namespace psl {

using SimTime = std::uint64_t;  // microseconds
constexpr SimTime kMillis = 1000;
constexpr SimTime kSeconds = 1000 * kMillis;

using Payload = std::shared_ptr<const Bytes>;
using TimerId = std::uint64_t;

/// Receive-loop CPU costs in microseconds, charged by nodes while handling a
/// message. Live mode ignores them.
struct CostModel {
  double per_message = 2.0;
  double aead_per_kib = 1.0;
  double hash_per_kib = 0.5;
  double sign = 25.0;
  double verify = 60.0;
  double kv_op = 0.5;

  double aead(std::size_t bytes) const { return aead_per_kib * static_cast<double>(bytes) / 1024.0; }
  double hash(std::size_t bytes) const { return hash_per_kib * static_cast<double>(bytes) / 1024.0; }
};

class Runtime {
 public:
  virtual ~Runtime() = default;

  virtual SimTime now() const = 0;
  virtual void send(NodeId from, NodeId to, Payload frame) = 0;
  virtual void multicast(NodeId from, const std::vector<NodeId>& group, Payload frame) {
    for (auto to : group) send(from, to, frame);
  }
  virtual TimerId set_timer(NodeId owner, SimTime delay, std::function<void()> fn) = 0;
  virtual void cancel_timer(TimerId id) = 0;
  virtual void charge(NodeId, double /*micros*/) {}
  virtual const CostModel& costs() const = 0;
  /// Deterministic in simulation; used to derive per-node nonce streams.
  virtual std::uint64_t seed() const = 0;
  virtual bool deterministic() const = 0;
};

class Node {
 public:
  explicit Node(NodeId id) : id_(id) {}
  virtual ~Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  NodeId id() const { return id_; }
  void bind(Runtime* rt) { rt_ = rt; }
  bool bound() const { return rt_ != nullptr; }

  virtual void start() {}
  virtual void receive(NodeId from, ByteView frame) = 0;
  /// Drops all volatile state. Timers set before the crash never fire.
  virtual void crash() {}
  /// Called after crash(); durable state is whatever the node kept outside
  /// its volatile members.
  virtual void restart() { start(); }

 protected:
  Runtime& rt() const { return *rt_; }
  SimTime now() const { return rt_->now(); }

  void send(NodeId to, const rpc::Message& m) const { rt_->send(id_, to, std::make_shared<Bytes>(rpc::frame(m))); }
  void multicast(const std::vector<NodeId>& to, const rpc::Message& m) const {
    rt_->multicast(id_, to, std::make_shared<Bytes>(rpc::frame(m)));
  }
  TimerId after(SimTime delay, std::function<void()> fn) const { return rt_->set_timer(id_, delay, std::move(fn)); }
  void charge(double micros) const { rt_->charge(id_, micros); }
  const CostModel& costs() const { return rt_->costs(); }

 private:
  NodeId id_;
  Runtime* rt_ = nullptr;
};

}  // namespace psl
