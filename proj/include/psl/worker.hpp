#pragma once

// FaaS worker: transactional KVS facade over the Memtable, durable commit
// (quorum store plus multicast), multicast and Sync Report handling with
// back-fill, reads through PSL-DB, the lock client, and function execution.

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>

#include "psl/attestation.hpp"
#include "psl/history.hpp"
#include "psl/memtable.hpp"
#include "psl/runtime.hpp"
#include "psl/storage_client.hpp"
#include "psl/topology.hpp"

namespace psl {

struct WorkerConfig {
  std::uint64_t sign_every = 200;  // 0 = never sign
  MemtableConfig memtable;
  bool low_cache_mode = false;
  std::size_t pipeline_depth = 1;
  SimTime retry_interval = 50 * kMillis;
  bool batch_multicasts = true;
  SimTime batch_window = 100;  // microseconds a first pending multicast waits for company
};

struct CommitReceipt {
  std::uint64_t seq = 0;
  Digest digest{};
};

struct WorkerStats {
  std::uint64_t blocks_emitted = 0;
  std::uint64_t signed_blocks = 0;
  std::uint64_t commits_durable = 0;
  std::uint64_t commits_deferred = 0;
  std::uint64_t validity_drops = 0;
  std::uint64_t signature_drops = 0;
  std::uint64_t malformed = 0;
  std::uint64_t multicasts_applied = 0;
  std::uint64_t multicast_batches = 0;
  std::uint64_t reports_applied = 0;
  std::uint64_t report_backfills = 0;
  std::uint64_t invalidations = 0;
  std::uint64_t reads = 0;
  std::uint64_t read_hits = 0;
  std::uint64_t fetches = 0;
  std::uint64_t checkpoint_fetches = 0;
  std::uint64_t uncached_reads = 0;
  std::uint64_t lock_grants = 0;
  std::uint64_t invocations = 0;
};

class Worker;

/// One function invocation running on a worker.
struct Invocation {
  Worker& worker;
  Bytes input;
  std::function<void(bool ok, Bytes result)> finish;
};
using Handler = std::function<void(std::shared_ptr<Invocation>)>;
/// Handlers keyed by the digest of the function's code bytes.
using HandlerRegistry = std::map<Digest, Handler>;

/// Plaintext of a sealed function result.
Bytes encode_result(bool ok, ByteView payload);
std::pair<bool, Bytes> decode_result(ByteView in);

class Worker final : public Node {
 public:
  using ReadDone = std::function<void(std::optional<TimestampedValue>)>;  // nullopt = KeyNotFound
  using CommitDone = std::function<void(std::optional<CommitReceipt>)>;    // nullopt = empty txn

  Worker(NodeId id, std::shared_ptr<const Topology> topo, WorkerConfig cfg = {}, History* history = nullptr);

  void set_identity(EnclaveIdentity id) { identity_ = std::move(id); }
  void set_handlers(std::shared_ptr<const HandlerRegistry> h) { handlers_ = std::move(h); }
  /// Direct key installation; the attested path goes through the manager.
  void provision(KeyMaterial keys);
  bool provisioned() const { return keys_.has_value(); }

  // --- application API ---
  void read_key(const Key& key, ReadDone done);
  void commit(TransactionBuffer& txn, CommitDone done);
  void durable_commit(WriteSet ws, CommitDone done);
  void acquire_lock(std::uint64_t lock_id, std::function<void()> done);
  void release_lock(std::uint64_t lock_id);
  bool holds_lock(std::uint64_t lock_id) const { return held_.count(lock_id) != 0; }
  /// Timer on this worker, for application code.
  void schedule(SimTime delay, std::function<void()> fn) { after(delay, std::move(fn)); }
  SimTime clock_now() const { return now(); }
  const WorkerConfig& config() const { return cfg_; }

  // --- protocol entry points ---
  void handle_multicast(const Envelope& env);
  void handle_sync_report(const Envelope& env);
  /// Collapses pending multicast bodies into one write set holding each
  /// key's maximum value.
  static WriteSet batch_pending_multicasts(const std::vector<BlockBody>& bodies);

  // --- inspection ---
  const Memtable& memtable() const { return memtable_; }
  std::uint64_t seq() const { return n_; }
  const Digest& tip() const { return h_; }
  std::uint64_t last_report_seq() const { return n_sr_; }
  std::size_t inflight() const { return inflight_.size() + queued_.size() + deferred_.size(); }
  const WorkerStats& stats() const { return stats_; }
  const StorageClient& storage() const { return storage_; }
  bool idle() const { return inflight() == 0; }
  bool alive() const { return alive_; }

  void start() override;
  void receive(NodeId from, ByteView frame) override;
  void crash() override;
  /// A crashed worker never comes back under the same identity.
  void restart() override {}

 private:
  struct Staged {
    WriteSet ws;
    CommitDone done;
  };
  struct Inflight {
    std::uint64_t seq;
    Digest digest;
    CommitDone done;
  };
  struct PendingFetch {
    std::uint64_t req;
    Key key;
    std::vector<ReadDone> waiters;
  };
  struct PendingLock {
    std::uint64_t req;
    std::function<void()> done;
  };
  struct PendingRelease {
    std::uint64_t lock;
    std::uint64_t grant;
    Digest tip;
  };
  struct FunctionRun {
    bool finished = false;
    rpc::FunctionDone result;
  };

  bool allow_new() const;
  void admit_commit(Staged s);
  void pump_commits();
  void start_block(Staged s);
  void on_block_durable(std::uint64_t seq, const Digest& d);

  void drain_multicasts();
  void apply_remote(const WriteSet& ws);

  void drain_reports();
  void apply_report(const SyncReportBody& r, const Digest& d);
  bool open_report(const Envelope& env, SyncReportBody& out);

  void send_fetch(std::uint64_t req);
  void on_fetch_resp(const rpc::FetchKeyResp& r);
  void finish_read(const Key& key, std::optional<TimestampedValue> v, bool retry);
  void load_checkpoint(const Digest& d, const Key& wanted);
  void complete_read(const Key& key, const std::optional<TimestampedValue>& v);

  void send_control(NodeId to, const rpc::ControlBody& body);
  void on_control(NodeId from, const Envelope& env);
  void send_lock_acquire(std::uint64_t lock);
  void send_lock_release(std::uint64_t req);
  void on_run_function(const rpc::RunFunction& r);
  void record(HistoryEvent e);

  std::shared_ptr<const Topology> topo_;
  WorkerConfig cfg_;
  History* history_;
  std::optional<EnclaveIdentity> identity_;
  std::shared_ptr<const HandlerRegistry> handlers_;
  std::optional<KeyMaterial> keys_;
  std::optional<NonceSource> nonces_;
  StorageClient storage_;
  Memtable memtable_;
  bool alive_ = true;

  // commit chain
  std::uint64_t n_ = 0;
  Digest h_{};         // digest of the last issued block
  Digest durable_h_{};  // digest of the last block that reached its quorum
  std::deque<Staged> deferred_;  // waiting for memtable room
  std::deque<Staged> queued_;    // waiting for a pipeline slot
  std::map<std::uint64_t, Inflight> inflight_;

  // multicast batching
  std::vector<BlockBody> pending_multicasts_;
  bool drain_scheduled_ = false;

  // sync reports
  std::uint64_t n_sr_ = 0;
  Digest last_report_hash_{};
  Digest last_checkpoint_{};
  std::map<std::uint64_t, std::pair<SyncReportBody, Digest>> reports_pending_;
  std::optional<Digest> report_fetch_;
  std::vector<std::pair<std::uint64_t, std::function<void()>>> report_waiters_;

  // reads
  std::map<std::uint64_t, PendingFetch> fetches_;
  std::map<Key, std::uint64_t> fetch_by_key_;
  std::map<Digest, std::vector<Key>> checkpoint_loads_;
  std::map<Key, Version> read_floors_;  // versions served without caching

  // locks
  std::map<std::uint64_t, PendingLock> acquiring_;
  std::map<std::uint64_t, std::uint64_t> held_;  // lock -> grant number
  std::map<std::uint64_t, PendingRelease> releasing_;

  // functions
  std::map<std::uint64_t, FunctionRun> runs_;

  WorkerStats stats_;
};

}  // namespace psl
