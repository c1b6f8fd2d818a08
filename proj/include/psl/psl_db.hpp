#pragma once

// PSL-DB: ingests worker blocks into a causally consistent cut, publishes
// quorum-stored Checkpoints and chained, signed Sync Reports, serves reads
// from an eager in-memory LSM index, runs the lock manager and triggers GC.
//
// All state changes run as tasks on one serial queue; a task may wait on
// storage replies, and the next task starts only when it finishes.

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <unordered_map>

#include "psl/attestation.hpp"
#include "psl/merge.hpp"
#include "psl/runtime.hpp"
#include "psl/storage_client.hpp"
#include "psl/topology.hpp"

namespace psl {

struct PslDbConfig {
  std::size_t checkpoint_threshold = 4096;  // memtable keys
  SimTime checkpoint_interval = 200 * kMillis;  // 0 = no timer
  std::size_t level1_max = 8;
  std::size_t range_max = 1024;
  std::size_t range_cache = 0;  // cached level-2 ranges, 0 = unbounded
  SimTime retry_interval = 50 * kMillis;
  bool gc = true;
  /// Re-check cut closure after every ingest and GC.
  bool audit_cut = false;
};

struct PslDbStats {
  std::uint64_t ingested_blocks = 0;
  std::uint64_t backfill_fetches = 0;
  std::uint64_t cut_violations = 0;
  std::uint64_t cut_audits = 0;
  std::uint64_t cut_audit_failures = 0;
  std::uint64_t dominated_writes = 0;
  std::uint64_t rounds = 0;
  std::uint64_t skipped_rounds = 0;
  std::uint64_t compactions = 0;
  std::uint64_t range_loads = 0;
  std::uint64_t fetch_requests = 0;
  std::uint64_t lock_grants = 0;
  std::uint64_t release_violations = 0;
  std::uint64_t validity_drops = 0;
  std::uint64_t recoveries = 0;
  std::uint64_t gc_listed = 0;
  std::uint64_t signatures = 0;
};

struct FetchAnswer {
  rpc::FetchKeyResp::Kind kind = rpc::FetchKeyResp::Kind::kNull;
  TimestampedValue value;
  Digest checkpoint{};
};

class PslDb final : public Node {
 public:
  using Done = std::function<void()>;
  using Task = std::function<void(Done)>;

  PslDb(NodeId id, std::shared_ptr<const Topology> topo, PslDbConfig cfg = {});

  void set_identity(EnclaveIdentity id) { identity_ = std::move(id); }
  void provision(KeyMaterial keys);
  bool provisioned() const { return keys_.has_value(); }

  // --- operations (each queued on the serial task queue) ---
  void ingest_multicast(const Envelope& env, Done done = {});
  void checkpoint_round(Done done = {});
  /// Synchronous lookup; nullopt when a level-2 range must be loaded first.
  std::optional<FetchAnswer> fetch_key(const Key& key);
  /// Drops worker blocks fully covered by the last checkpoint from the GC
  /// bookkeeping and returns their digests. Chain tips are never listed.
  std::vector<Digest> issue_gc();

  // --- inspection ---
  bool ready() const { return ready_; }
  std::uint64_t sr_seq() const { return n_; }
  const Digest& last_report_hash() const { return h_; }
  const std::optional<Envelope>& last_report() const { return last_report_; }
  const std::map<WorkerId, std::uint64_t>& worker_vc() const { return vc_; }
  const std::map<Key, HashedValue>& memtable() const { return memtable_; }
  std::size_t level1_size() const { return level1_.size(); }
  std::vector<Digest> level1_digests() const;
  std::size_t level2_ranges() const { return level2_.size(); }
  std::size_t level2_keys() const;
  std::optional<Digest> level2_lookup(const Key& key) const;
  const PslDbStats& stats() const { return stats_; }
  bool busy() const { return busy_ || !tasks_.empty(); }
  /// Every ingested block's predecessor is ingested, or was garbage
  /// collected after a checkpoint covered it.
  bool cut_closed() const;
  std::optional<NodeId> lock_holder(std::uint64_t lock) const;
  const StorageClient& storage() const { return storage_; }

  void start() override;
  void receive(NodeId from, ByteView frame) override;
  void crash() override;
  void restart() override;

 private:
  struct Level1Entry {
    Digest digest;
    std::map<Key, Version> index;
  };
  struct L2Entry {
    Digest checkpoint;
    Version version;
  };
  struct Level2Range {
    Digest digest{};
    std::optional<std::map<Key, L2Entry>> cached;
    std::uint64_t touched = 0;
  };
  struct Ingested {
    Digest digest;
    Digest prev;
  };
  struct Waiter {
    NodeId worker;
    std::uint64_t req;
  };
  struct LockState {
    std::optional<Waiter> holder;
    std::uint64_t grant_no = 0;
    std::deque<Waiter> waiters;
    bool barrier = false;
    std::set<std::uint64_t> released;
  };

  void enqueue(Task t);
  void pump();

  bool open_block(const Envelope& env, BlockBody& out);
  void ingest_envelope(const Envelope& env, Done done);
  void backfill(std::shared_ptr<std::vector<std::pair<BlockBody, Digest>>> chain, Done done);
  void ingest_block(const BlockBody& body, const Digest& d);
  void merge_write(const Key& key, const TimestampedValue& v);
  std::optional<Version> lsm_version(const Key& key) const;
  void ensure_ranges(const std::vector<Key>& keys, Done done);
  void load_range(const Digest& d, Done done);
  /// Range that holds or would hold `key`: the last one whose first key
  /// is <= key, else the first range.
  std::map<Key, Level2Range>::iterator range_owner(const Key& key);
  const L2Entry* level2_entry(const Key& key) const;
  void trim_range_cache();

  void run_round(Done done, bool poll);
  void poll_workers(Done done);
  void compact_level1(Done done);
  void finish_round(const Digest& checkpoint_hash, Done done);

  void recover(Done done);
  void load_manifest(const ManifestBody& m, Done done);
  void become_ready();

  void send_control(NodeId to, const rpc::ControlBody& body);
  void on_control(const Envelope& env);
  void answer_fetch(NodeId to, std::uint64_t req, const Key& key);
  void on_lock_acquire(NodeId w, const rpc::LockAcquire& a);
  void on_lock_release(NodeId w, const rpc::LockRelease& r);
  void grant(std::uint64_t lock, const Waiter& w);
  void ensure_ingested(NodeId w, const Digest& tip, Done done);
  void arm_timer();
  void maybe_trigger_round();
  void audit();

  std::shared_ptr<const Topology> topo_;
  PslDbConfig cfg_;
  std::optional<EnclaveIdentity> identity_;
  std::optional<KeyMaterial> keys_;
  std::optional<NonceSource> nonces_;
  StorageClient storage_;
  std::uint64_t boots_ = 0;  // survives crashes, like a hardware monotonic counter
  std::uint64_t epoch_ = 0;
  bool started_ = false;
  bool ready_ = false;

  std::deque<Task> tasks_;
  bool busy_ = false;
  bool pumping_ = false;
  bool round_queued_ = false;

  std::map<Key, HashedValue> memtable_;
  std::map<WorkerId, std::uint64_t> vc_;
  std::map<WorkerId, Digest> tips_;
  std::map<WorkerId, std::map<std::uint64_t, Ingested>> ingested_;
  std::map<WorkerId, std::uint64_t> gc_floor_;
  std::map<WorkerId, std::uint64_t> checkpoint_vc_;  // worker_vc of the last published report
  std::unordered_map<Digest, std::pair<WorkerId, std::uint64_t>, DigestHash> digest_index_;
  std::uint64_t n_ = 0;
  Digest h_{};
  std::optional<Envelope> last_report_;
  std::deque<Level1Entry> level1_;
  std::map<Key, Level2Range> level2_;
  std::uint64_t range_tick_ = 0;
  std::map<Digest, std::vector<Done>> range_loads_;

  std::vector<std::tuple<NodeId, std::uint64_t, Key>> deferred_fetches_;
  std::map<std::uint64_t, LockState> locks_;
  std::uint64_t grant_counter_ = 0;

  PslDbStats stats_;
};

}  // namespace psl
