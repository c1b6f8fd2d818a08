#pragma once

// Application lifecycle: the user attests the manager and hands it the app
// keys; the manager attests every worker and PSL-DB, forwards the keys to
// the ones whose measurement matches, installs the verify key on storage
// servers, and then dispatches invocations to idle workers.

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>

#include "psl/attestation.hpp"
#include "psl/runtime.hpp"
#include "psl/storage_client.hpp"
#include "psl/topology.hpp"

namespace psl {

/// What the user registers with the manager: the code every enclave role
/// must be running.
struct ExpectedCode {
  Digest worker{};
  Digest psl_db{};
};

/// Payload the user seals to the manager: the key bundle plus the expected
/// measurements.
Bytes encode_manager_bundle(const KeyMaterial& keys, const ExpectedCode& code);
std::pair<KeyMaterial, ExpectedCode> decode_manager_bundle(ByteView in);

struct ManagerStats {
  std::uint64_t attested = 0;
  std::uint64_t excluded = 0;
  std::uint64_t dispatched = 0;
  std::uint64_t queued = 0;
  std::uint64_t completed = 0;
  std::uint64_t validity_drops = 0;
};

class FaasManager final : public Node {
 public:
  FaasManager(NodeId id, std::shared_ptr<const Topology> topo, EnclaveIdentity identity,
              SimTime retry_interval = 50 * kMillis);

  bool provisioned() const { return keys_.has_value(); }
  const std::vector<NodeId>& pool() const { return pool_; }
  const std::set<NodeId>& excluded() const { return excluded_; }
  bool idle(NodeId worker) const { return busy_.count(worker) == 0; }
  std::size_t queue_length() const { return queue_.size(); }
  const ManagerStats& stats() const { return stats_; }

  void start() override;
  void receive(NodeId from, ByteView frame) override;
  void crash() override;

 private:
  enum class Stage { kAttesting, kProvisioning, kDone, kExcluded };
  struct Enclave {
    rpc::Role role = rpc::Role::kWorker;
    Stage stage = Stage::kAttesting;
    std::uint64_t req = 0;
    Digest challenge{};
    Bytes sealed;
  };
  struct Job {
    NodeId user = 0;
    std::uint64_t user_req = 0;
    Digest code_id{};
    Digest input_id{};
    NodeId worker = 0;
    std::uint64_t run_req = 0;
    std::optional<rpc::InvokeResult> result;
  };

  void on_user_keys(NodeId user, const rpc::ProvisionKeys& p);
  void begin_pool();
  void send_attest(NodeId target);
  void on_quote(NodeId from, const rpc::Quote& q);
  void on_provision_ack(NodeId from, const rpc::ProvisionAck& a);
  void send_install(NodeId server);
  void maybe_finish_provisioning();

  void send_control(NodeId to, const rpc::ControlBody& body);
  void on_control(const Envelope& env);
  void on_invoke(NodeId user, const rpc::InvokeRequest& r);
  void dispatch();
  void send_run(std::uint64_t run_req);
  void on_function_done(NodeId worker, const rpc::FunctionDone& d);

  std::shared_ptr<const Topology> topo_;
  EnclaveIdentity identity_;
  SimTime retry_;
  std::optional<KeyMaterial> keys_;
  ExpectedCode expected_;
  std::optional<NonceSource> nonces_;
  std::uint64_t next_req_ = 1;

  NodeId user_ = 0;
  std::uint64_t user_provision_req_ = 0;
  bool provision_reported_ = false;
  std::map<NodeId, Enclave> enclaves_;
  std::set<NodeId> storage_pending_;
  std::map<std::uint64_t, NodeId> install_reqs_;
  std::vector<NodeId> pool_;
  std::set<NodeId> excluded_;

  std::map<std::pair<NodeId, std::uint64_t>, std::uint64_t> jobs_by_user_;  // (user, req) -> run req
  std::map<std::uint64_t, Job> jobs_;  // by run req
  std::deque<std::uint64_t> queue_;
  std::set<NodeId> busy_;

  ManagerStats stats_;
};

/// The application owner. Generates the app keys, uploads packages, runs the
/// provisioning handshake and submits invocations.
class UserClient final : public Node {
 public:
  using Uploaded = std::function<void(Digest code_id, Digest input_id)>;
  using Provisioned = std::function<void(std::vector<std::uint32_t> pool)>;
  using Invoked = std::function<void(rpc::InvokeResult)>;
  using Fetched = std::function<void(std::optional<std::pair<bool, Bytes>>)>;

  UserClient(NodeId id, std::shared_ptr<const Topology> topo, KeyMaterial keys, PublicKey platform,
             Measurement manager, ExpectedCode code, SimTime retry_interval = 50 * kMillis);

  /// Content-addressed: sealing the same bytes twice yields the same id.
  Envelope seal_package(ByteView bytes) const;
  void upload(ByteView code, ByteView input, Uploaded done);
  void provision(Provisioned done);
  void invoke(const Digest& code_id, const Digest& input_id, Invoked done);
  /// nullopt when the result cannot be opened.
  void fetch_result(const Digest& result_id, Fetched done);

  bool manager_rejected() const { return manager_rejected_; }
  const KeyMaterial& keys() const { return keys_; }

  void start() override;
  void receive(NodeId from, ByteView frame) override;

 private:
  void send_attest();
  void send_invoke(std::uint64_t req);

  std::shared_ptr<const Topology> topo_;
  KeyMaterial keys_;
  PublicKey platform_;
  Measurement manager_;
  ExpectedCode code_;
  SimTime retry_;
  StorageClient storage_;
  std::optional<NonceSource> nonces_;

  std::uint64_t provision_req_ = 0;
  Digest challenge_{};
  std::optional<Bytes> keys_sealed_;
  bool manager_rejected_ = false;
  Provisioned provisioned_;

  struct PendingInvoke {
    rpc::InvokeRequest request;
    Invoked done;
  };
  std::map<std::uint64_t, PendingInvoke> invokes_;
};

}  // namespace psl
