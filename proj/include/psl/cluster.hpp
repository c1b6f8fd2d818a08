#pragma once

// One simulated deployment: 2f+1 storage servers, a worker pool, PSL-DB,
// the FaaS manager and the user, all on a single Simulator.
//
// Node ids: manager 1, PSL-DB 2, user 3, storage 10+i, workers 100+i.

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <vector>

#include "psl/faas_manager.hpp"
#include "psl/history.hpp"
#include "psl/netsim.hpp"
#include "psl/psl_db.hpp"
#include "psl/storage_server.hpp"
#include "psl/worker.hpp"

namespace psl {

namespace layout {
constexpr NodeId kManager = 1;
constexpr NodeId kPslDb = 2;
constexpr NodeId kUser = 3;
constexpr NodeId storage(std::size_t i) { return static_cast<NodeId>(10 + i); }
constexpr NodeId worker(std::size_t i) { return static_cast<NodeId>(100 + i); }
}  // namespace layout

Digest worker_code_hash();
Digest psl_db_code_hash();
Digest manager_code_hash();

struct ClusterConfig {
  std::uint64_t seed = 1;
  std::uint32_t f = 1;
  std::size_t workers = 4;
  WorkerConfig worker;
  PslDbConfig psl_db;
  netsim::AdversaryPolicy policy;
  CostModel costs;
  /// Provision through the attestation handshake; otherwise keys are
  /// installed directly.
  bool attest = true;
  /// Workers whose enclave reports different code.
  std::set<std::size_t> bad_workers;
  /// Storage servers keep blocks in files under this directory.
  std::optional<std::filesystem::path> storage_dir;
  std::shared_ptr<const HandlerRegistry> handlers;
};

class Cluster {
 public:
  explicit Cluster(ClusterConfig cfg);

  netsim::Simulator& sim() { return *sim_; }
  History& history() { return history_; }
  const std::shared_ptr<const Topology>& topology() const { return topo_; }
  const ClusterConfig& config() const { return cfg_; }
  const KeyMaterial& keys() const { return keys_; }

  std::size_t worker_count() const { return workers_.size(); }
  Worker& worker(std::size_t i) { return *workers_.at(i); }
  std::vector<Worker*> live_workers();
  PslDb& psl_db() { return *psl_db_; }
  StorageServer& server(std::size_t i) { return *servers_.at(i); }
  std::size_t server_count() const { return servers_.size(); }
  FaasManager& manager() { return *manager_; }
  UserClient& user() { return *user_; }

  /// Starts all nodes and provisions keys; false if that did not finish by
  /// `deadline`.
  bool start(SimTime deadline = 30 * kSeconds);
  bool run_until(const std::function<bool()>& pred, SimTime max_time);

  /// Drop every adversarial link policy and partition.
  void heal();
  /// Runs a checkpoint round and waits until every live worker has applied
  /// PSL-DB's latest report.
  bool barrier(SimTime timeout);
  /// Reads every key on every live worker and records final_read events.
  bool final_reads(const std::vector<Key>& keys, SimTime timeout);

  /// Scenario-file names: "psldb", "manager", "user", "storage:N",
  /// "worker:N", "storage:*", "worker:*".
  std::vector<NodeId> resolve(const std::string& name) const;
  netsim::NameResolver resolver() const {
    return [this](const std::string& n) { return resolve(n); };
  }

 private:
  ClusterConfig cfg_;
  std::unique_ptr<netsim::Simulator> sim_;
  std::shared_ptr<const Topology> topo_;
  History history_;
  KeyMaterial keys_;
  std::vector<StorageServer*> servers_;
  std::vector<Worker*> workers_;
  PslDb* psl_db_ = nullptr;
  FaasManager* manager_ = nullptr;
  UserClient* user_ = nullptr;
};

}  // namespace psl
