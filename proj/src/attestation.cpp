#include "psl/attestation.hpp"

namespace psl {

Bytes quote_bytes(const Measurement& m, const PublicKey& kem_public, const Digest& challenge) {
  Writer w;
  w.str("psl-quote");
  w.u8(static_cast<std::uint8_t>(m.role));
  w.digest(m.code_hash);
  w.raw(kem_public);
  w.digest(challenge);
  return std::move(w).take();
}

std::shared_ptr<const PlatformAuthority> PlatformAuthority::from_seed(std::uint64_t seed) {
  std::array<std::uint8_t, 32> s{};
  auto d = digest("platform-authority" + std::to_string(seed));
  std::copy(d.begin(), d.end(), s.begin());
  return std::shared_ptr<const PlatformAuthority>(new PlatformAuthority(SigningKey::from_seed(s)));
}

Signature PlatformAuthority::endorse(const Measurement& m, const PublicKey& kem_public,
                                     const Digest& challenge) const {
  return key_.sign(quote_bytes(m, kem_public, challenge));
}

EnclaveIdentity EnclaveIdentity::make(rpc::Role role, const Digest& code_hash, std::uint64_t seed,
                                      std::shared_ptr<const PlatformAuthority> platform) {
  std::array<std::uint8_t, 32> s{};
  auto d = digest("enclave-kem" + std::to_string(seed));
  std::copy(d.begin(), d.end(), s.begin());
  return {{role, code_hash}, KemKeypair::from_seed(s), std::move(platform)};
}

rpc::Quote EnclaveIdentity::quote(std::uint64_t req, const Digest& challenge) const {
  return {req, measurement.role, measurement.code_hash, kem.public_key,
          platform->endorse(measurement, kem.public_key, challenge)};
}

void verify_quote(const rpc::Quote& q, const PublicKey& platform, const Digest& challenge,
                  const Measurement& expected) {
  Measurement got{q.role, q.code_hash};
  if (!verify_signature(platform, quote_bytes(got, q.kem_public, challenge), q.platform_signature)) {
    throw MeasurementMismatch();
  }
  if (!(got == expected)) throw MeasurementMismatch();
}

Bytes encode_key_bundle(const KeyMaterial& keys) {
  if (!keys.app_enc_key || !keys.app_sign_key) throw CryptoError("key bundle needs private keys");
  Writer w;
  w.raw(*keys.app_enc_key);
  w.raw(keys.app_sign_key->seed());
  w.raw(keys.verify_key);
  return std::move(w).take();
}

KeyMaterial decode_key_bundle(ByteView in) {
  Reader r(in);
  KeyMaterial k;
  k.app_enc_key = r.fixed<32>();
  k.app_sign_key = SigningKey::from_seed(r.fixed<32>());
  k.verify_key = r.fixed<32>();
  r.expect_done();
  if (k.app_sign_key->public_key() != k.verify_key) throw CryptoError("key bundle inconsistent");
  return k;
}

std::optional<rpc::Message> handle_provisioning(const EnclaveIdentity& id, const rpc::Message& msg,
                                                const std::function<void(KeyMaterial)>& install) {
  if (const auto* a = std::get_if<rpc::AttestRequest>(&msg)) return id.quote(a->req, a->challenge);
  if (const auto* p = std::get_if<rpc::ProvisionKeys>(&msg)) {
    try {
      install(decode_key_bundle(kem_open(id.kem, p->sealed)));
    } catch (const std::exception&) {
      return std::nullopt;
    }
    return rpc::ProvisionAck{p->req};
  }
  return std::nullopt;
}

}  // namespace psl
