#pragma once

// Client side of the storage protocol: quorum stores, fetch-by-hash from any
// responding server, and most-recent polls. Every request is retried every
// `retry_interval` until it completes; nothing ever times out.

#include <functional>
#include <map>
#include <memory>
#include <set>

#include "psl/crypto.hpp"
#include "psl/runtime.hpp"
#include "psl/topology.hpp"

namespace psl {

struct StorageClientStats {
  std::uint64_t stores = 0;
  std::uint64_t store_resends = 0;
  std::uint64_t fetches = 0;
  std::uint64_t fetch_invalid = 0;
  std::uint64_t polls = 0;
  std::uint64_t gc_requests = 0;
};

class StorageClient {
 public:
  using StoreDone = std::function<void(const Digest&)>;
  using Validator = std::function<bool(const Envelope&)>;
  using FetchDone = std::function<void(Envelope)>;
  using PollDone = std::function<void(std::vector<Envelope>)>;

  StorageClient(NodeId self, std::shared_ptr<const Topology> topo, SimTime retry_interval = 50 * kMillis);

  /// Must be called before use and again after every restart, with a fresh
  /// request-id base so replies addressed to a previous incarnation are
  /// never matched.
  void attach(Runtime* rt, std::uint64_t req_base);
  void reset();

  std::uint64_t next_req() { return next_req_++; }

  /// Completes once `quorum` distinct servers acked the envelope's digest
  /// (default f+1). Resends go only to servers that have not acked.
  std::uint64_t store(std::uint32_t stream, std::uint64_t seq, Envelope env, StoreDone done, std::size_t quorum = 0);
  /// First response whose digest matches and that passes `valid`.
  void fetch(const Digest& d, Validator valid, FetchDone done);
  /// Like fetch, but reports absence once n-f servers answered null.
  void fetch_optional(const Digest& d, Validator valid, std::function<void(std::optional<Envelope>)> done);
  /// Waits for n-f responses; passes the non-null envelopes.
  void poll_recent(std::uint32_t stream, PollDone done);
  /// Best effort, one shot.
  void gc(std::vector<Digest> digests, const SigningKey& key);

  /// Returns true if the message was a storage reply.
  bool on_message(NodeId from, const rpc::Message& msg);

  std::size_t pending() const { return stores_.size() + fetches_.size() + polls_.size(); }
  std::size_t acks(std::uint64_t req) const;
  const StorageClientStats& stats() const { return stats_; }
  void set_retry_interval(SimTime r) { retry_ = r; }

 private:
  struct PendingStore {
    std::uint32_t stream;
    std::uint64_t seq;
    Payload frame;
    Digest digest;
    std::set<NodeId> acked;
    std::size_t quorum;
    StoreDone done;
  };
  struct PendingFetch {
    Digest digest;
    Payload frame;
    Validator valid;
    std::function<void(std::optional<Envelope>)> done;
    bool nullable = false;
    std::set<NodeId> nulls;
  };
  struct PendingPoll {
    Payload frame;
    std::map<NodeId, std::optional<Envelope>> responses;
    PollDone done;
  };

  void arm(std::uint64_t req);
  void retry(std::uint64_t req);

  NodeId self_;
  std::shared_ptr<const Topology> topo_;
  SimTime retry_;
  Runtime* rt_ = nullptr;
  std::uint64_t next_req_ = 1;
  std::map<std::uint64_t, PendingStore> stores_;
  std::map<std::uint64_t, PendingFetch> fetches_;
  std::map<std::uint64_t, PendingPoll> polls_;
  StorageClientStats stats_;
};

}  // namespace psl
