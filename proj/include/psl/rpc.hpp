#pragma once

// RPC messages. A frame is a u32 length prefix followed by a one-byte
// message kind and the canonically encoded fields.
//
// Everything that crosses a trust boundary and is not addressed to a storage
// server travels inside a sealed Control envelope; storage traffic carries
// envelopes the server cannot open.

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "psl/crypto.hpp"
#include "psl/types.hpp"

namespace psl::rpc {

// --- storage server ---------------------------------------------------------

struct StoreBlock {
  std::uint64_t req = 0;
  std::uint32_t worker_id = 0;  // stream id
  std::uint64_t seq = 0;        // 0 = not part of a chain
  Envelope envelope;
};
struct StoreAck {
  std::uint64_t req = 0;
  Digest digest{};
};
struct RetrieveByHash {
  std::uint64_t req = 0;
  Digest digest{};
};
struct RetrieveMostRecent {
  std::uint64_t req = 0;
  std::uint32_t worker_id = 0;
};
struct RetrieveResp {
  std::uint64_t req = 0;
  std::optional<Envelope> envelope;
};
struct GcRequest {
  std::uint64_t req = 0;
  std::vector<Digest> digests;
  Signature signature{};  // over gc_signing_bytes(req, digests)
};
struct GcResp {
  std::uint64_t req = 0;
  std::uint32_t deleted = 0;
};

// --- replication -------------------------------------------------------------

struct Multicast {
  Envelope envelope;
};
struct SyncReport {
  Envelope envelope;
};
struct Control {
  Envelope envelope;
};

// --- provisioning (before any application key exists) ------------------------

enum class Role : std::uint8_t { kWorker = 1, kManager = 2, kPslDb = 3 };

struct AttestRequest {
  std::uint64_t req = 0;
  Digest challenge{};
};
struct Quote {
  std::uint64_t req = 0;
  Role role = Role::kWorker;
  Digest code_hash{};
  PublicKey kem_public{};
  Signature platform_signature{};
};
struct ProvisionKeys {
  std::uint64_t req = 0;
  Bytes sealed;  // kem_seal(recipient, enc_key || sign_seed || verify_key)
};
struct ProvisionAck {
  std::uint64_t req = 0;
};
struct InstallVerifyKey {
  std::uint64_t req = 0;
  PublicKey verify_key{};
};
struct InstallVerifyKeyAck {
  std::uint64_t req = 0;
};

using Message = std::variant<StoreBlock, StoreAck, RetrieveByHash, RetrieveMostRecent, RetrieveResp, GcRequest, GcResp,
                             Multicast, SyncReport, Control, AttestRequest, Quote, ProvisionKeys, ProvisionAck,
                             InstallVerifyKey, InstallVerifyKeyAck>;

Bytes frame(const Message& m);
/// Throws CodecError on malformed frames.
Message parse(ByteView frame);

const char* name(const Message& m);

Bytes gc_signing_bytes(std::uint64_t req, const std::vector<Digest>& digests);

// --- control bodies (plaintext of Control envelopes) -------------------------

struct FetchKey {
  std::uint64_t req = 0;
  Key key;
};
struct FetchKeyResp {
  enum class Kind : std::uint8_t { kNull = 0, kValue = 1, kCheckpoint = 2 };
  std::uint64_t req = 0;
  Kind kind = Kind::kNull;
  TimestampedValue value;  // kValue
  Digest checkpoint{};     // kCheckpoint
};
struct LockAcquire {
  std::uint64_t req = 0;
  std::uint64_t lock_id = 0;
};
struct LockGrant {
  std::uint64_t req = 0;
  std::uint64_t lock_id = 0;
  std::uint64_t grant_no = 0;
  std::optional<Envelope> report;
};
struct LockRelease {
  std::uint64_t req = 0;
  std::uint64_t lock_id = 0;
  std::uint64_t grant_no = 0;
  Digest tip{};
};
struct LockReleaseAck {
  std::uint64_t req = 0;
  std::uint64_t lock_id = 0;
  std::uint64_t grant_no = 0;
};
struct InvokeRequest {
  std::uint64_t req = 0;
  Digest code_id{};
  Digest input_id{};
};
struct RunFunction {
  std::uint64_t req = 0;
  Digest code_id{};
  Digest input_id{};
};
struct FunctionDone {
  std::uint64_t req = 0;
  bool ok = false;
  Digest result_id{};
};
struct InvokeResult {
  std::uint64_t req = 0;
  bool ok = false;
  Digest result_id{};
  std::uint32_t worker = 0;
};
struct ProvisionDone {
  std::uint64_t req = 0;
  std::vector<std::uint32_t> pool;
};

using ControlBody = std::variant<FetchKey, FetchKeyResp, LockAcquire, LockGrant, LockRelease, LockReleaseAck,
                                 InvokeRequest, RunFunction, FunctionDone, InvokeResult, ProvisionDone>;

Bytes encode_control(const ControlBody& b);
ControlBody decode_control(ByteView in);
std::uint64_t control_req(const ControlBody& b);

}  // namespace psl::rpc
