#pragma once

// Cryptographic envelope: SHA-256 digests, AES-256-GCM sealing with bound
// associated data, Ed25519 signatures over the ciphertext digest, and an
// X25519 sealed-box used for key provisioning.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>

#include "psl/bytes.hpp"
#include "psl/codec.hpp"

namespace psl {

class CryptoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DecryptionFailure : public CryptoError {
 public:
  DecryptionFailure() : CryptoError("decryption failure") {}
};

class SignatureInvalid : public CryptoError {
 public:
  SignatureInvalid() : CryptoError("signature invalid") {}
};

Digest digest(ByteView bytes);
inline Digest digest(std::string_view s) {
  return digest(ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}
Digest hmac_sha256(ByteView key, ByteView msg);

using Nonce = std::array<std::uint8_t, 12>;
using Signature = std::array<std::uint8_t, 64>;
using SymmetricKey = std::array<std::uint8_t, 32>;
using PublicKey = std::array<std::uint8_t, 32>;

enum class BodyKind : std::uint8_t {
  kBlock = 1,
  kSyncReport = 2,
  kCheckpoint = 3,
  kManifest = 4,
  kLevelRange = 5,
  kPackage = 6,
  kControl = 7,
  kResult = 8,
  kGcList = 9,
};

struct AssocData {
  std::uint32_t sender_id = 0;
  std::uint64_t seq = 0;
  BodyKind kind = BodyKind::kBlock;
  bool operator==(const AssocData&) const = default;
};

struct Envelope {
  Nonce nonce{};
  Bytes ciphertext;  // includes the 16-byte GCM tag
  AssocData ad;
  std::optional<Signature> signature;  // over digest(ciphertext)
  bool operator==(const Envelope&) const = default;
};

void encode(Writer& w, const Envelope& e);
Envelope decode_envelope(Reader& r);
Bytes encode_envelope(const Envelope& e);
Envelope decode_envelope(ByteView in);

/// Storage key and hash pointer of an envelope: the digest of its ciphertext.
inline Digest envelope_digest(const Envelope& e) { return digest(e.ciphertext); }

/// Ed25519 keypair. Only enclave-role nodes hold one.
class SigningKey {
 public:
  static SigningKey from_seed(const std::array<std::uint8_t, 32>& seed);
  ~SigningKey();
  SigningKey(const SigningKey&);
  SigningKey& operator=(const SigningKey&);
  SigningKey(SigningKey&&) noexcept;
  SigningKey& operator=(SigningKey&&) noexcept;

  Signature sign(ByteView msg) const;
  const PublicKey& public_key() const { return public_; }
  const std::array<std::uint8_t, 32>& seed() const { return seed_; }

 private:
  SigningKey() = default;
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::array<std::uint8_t, 32> seed_{};
  PublicKey public_{};
};

bool verify_signature(const PublicKey& pk, ByteView msg, const Signature& sig);

/// Application keys. Storage servers get a KeyMaterial with no signing or
/// encryption key, only `verify_key`.
struct KeyMaterial {
  std::optional<SymmetricKey> app_enc_key;
  std::optional<SigningKey> app_sign_key;
  PublicKey verify_key{};

  static KeyMaterial generate(std::uint64_t seed);
  KeyMaterial public_only() const;
};

/// Nonce generator: deterministic hash-DRBG in simulation, OS entropy live.
class NonceSource {
 public:
  static NonceSource seeded(std::uint64_t seed, std::uint64_t stream);
  static NonceSource os_entropy();

  Nonce next();
  void fill(std::span<std::uint8_t> out);

 private:
  NonceSource() = default;
  bool deterministic_ = true;
  Digest state_{};
  std::uint64_t counter_ = 0;
};

Bytes assoc_bytes(const AssocData& ad);

/// AEAD-encrypts `body` under the app key with `ad` bound; signs
/// digest(ciphertext) when `sign` is set.
Envelope seal(ByteView body, const AssocData& ad, const KeyMaterial& keys, bool sign, NonceSource& nonces);

/// Content-addressed variant: the nonce is derived from the plaintext, so
/// identical bodies seal to identical envelopes.
Envelope seal_deterministic(ByteView body, const AssocData& ad, const KeyMaterial& keys, bool sign);

/// Throws DecryptionFailure when ciphertext, nonce or `expected_ad` do not
/// match; SignatureInvalid when a present signature fails. `expected_ad`
/// defaults to the envelope's own header.
Bytes open(const Envelope& env, const AssocData& expected_ad, const KeyMaterial& keys);
inline Bytes open(const Envelope& env, const KeyMaterial& keys) { return open(env, env.ad, keys); }

bool signature_valid(const Envelope& env, const PublicKey& pk);

// X25519 sealed box for provisioning secrets to an attested enclave.
struct KemKeypair {
  std::array<std::uint8_t, 32> secret{};
  PublicKey public_key{};
  static KemKeypair from_seed(const std::array<std::uint8_t, 32>& seed);
};

Bytes kem_seal(const PublicKey& recipient, ByteView plaintext, NonceSource& rng);
Bytes kem_open(const KemKeypair& recipient, ByteView sealed);

}  // namespace psl
