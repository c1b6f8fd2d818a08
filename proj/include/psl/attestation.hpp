#pragma once

// Mock remote attestation. A platform authority key stands in for the
// hardware vendor: an enclave's quote is the authority's signature over its
// measurement, its key-exchange public key and the verifier's challenge.

#include <functional>
#include <memory>
#include <optional>

#include "psl/crypto.hpp"
#include "psl/rpc.hpp"

namespace psl {

struct Measurement {
  rpc::Role role = rpc::Role::kWorker;
  Digest code_hash{};
  bool operator==(const Measurement&) const = default;
};

class MeasurementMismatch : public std::runtime_error {
 public:
  MeasurementMismatch() : std::runtime_error("measurement mismatch") {}
};

Bytes quote_bytes(const Measurement& m, const PublicKey& kem_public, const Digest& challenge);

class PlatformAuthority {
 public:
  static std::shared_ptr<const PlatformAuthority> from_seed(std::uint64_t seed);
  Signature endorse(const Measurement& m, const PublicKey& kem_public, const Digest& challenge) const;
  const PublicKey& public_key() const { return key_.public_key(); }

 private:
  explicit PlatformAuthority(SigningKey k) : key_(std::move(k)) {}
  SigningKey key_;
};

/// What an enclave-role node is: its measured code and its key-exchange
/// keypair, endorsed by the platform.
struct EnclaveIdentity {
  Measurement measurement;
  KemKeypair kem;
  std::shared_ptr<const PlatformAuthority> platform;

  static EnclaveIdentity make(rpc::Role role, const Digest& code_hash, std::uint64_t seed,
                              std::shared_ptr<const PlatformAuthority> platform);
  rpc::Quote quote(std::uint64_t req, const Digest& challenge) const;
};

/// Throws MeasurementMismatch unless the quote is endorsed by `platform` for
/// `challenge` and matches `expected`.
void verify_quote(const rpc::Quote& q, const PublicKey& platform, const Digest& challenge, const Measurement& expected);

Bytes encode_key_bundle(const KeyMaterial& keys);
KeyMaterial decode_key_bundle(ByteView in);

/// Shared enclave-side handling of AttestRequest / ProvisionKeys. Returns
/// the reply to send, if any; calls `install` with newly received keys.
std::optional<rpc::Message> handle_provisioning(const EnclaveIdentity& id, const rpc::Message& msg,
                                                const std::function<void(KeyMaterial)>& install);

}  // namespace psl
