#include "psl/crypto.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>

#include <cstring>

namespace psl {

namespace {

constexpr std::size_t kTagLen = 16;

struct CipherCtx {
  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  ~CipherCtx() { EVP_CIPHER_CTX_free(ctx); }
};

struct MdCtx {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  ~MdCtx() { EVP_MD_CTX_free(ctx); }
};

struct PkeyPtr {
  EVP_PKEY* p = nullptr;
  ~PkeyPtr() { EVP_PKEY_free(p); }
};

void check(int ok, const char* what) {
  if (ok != 1) throw CryptoError(what);
}

Bytes gcm_encrypt(const SymmetricKey& key, const Nonce& nonce, ByteView aad, ByteView plain) {
  CipherCtx c;
  check(EVP_EncryptInit_ex(c.ctx, EVP_aes_256_gcm(), nullptr, nullptr, nullptr), "gcm init");
  check(EVP_CIPHER_CTX_ctrl(c.ctx, EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(nonce.size()), nullptr), "gcm ivlen");
  check(EVP_EncryptInit_ex(c.ctx, nullptr, nullptr, key.data(), nonce.data()), "gcm key");
  int len = 0;
  if (!aad.empty()) check(EVP_EncryptUpdate(c.ctx, nullptr, &len, aad.data(), static_cast<int>(aad.size())), "gcm aad");
  Bytes out(plain.size() + kTagLen);
  int total = 0;
  if (!plain.empty()) {
    check(EVP_EncryptUpdate(c.ctx, out.data(), &len, plain.data(), static_cast<int>(plain.size())), "gcm update");
    total = len;
  }
  check(EVP_EncryptFinal_ex(c.ctx, out.data() + total, &len), "gcm final");
  total += len;
  check(EVP_CIPHER_CTX_ctrl(c.ctx, EVP_CTRL_GCM_GET_TAG, kTagLen, out.data() + total), "gcm tag");
  out.resize(static_cast<std::size_t>(total) + kTagLen);
  return out;
}

Bytes gcm_decrypt(const SymmetricKey& key, const Nonce& nonce, ByteView aad, ByteView sealed) {
  if (sealed.size() < kTagLen) throw DecryptionFailure();
  const std::size_t body_len = sealed.size() - kTagLen;
  CipherCtx c;
  check(EVP_DecryptInit_ex(c.ctx, EVP_aes_256_gcm(), nullptr, nullptr, nullptr), "gcm init");
  check(EVP_CIPHER_CTX_ctrl(c.ctx, EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(nonce.size()), nullptr), "gcm ivlen");
  check(EVP_DecryptInit_ex(c.ctx, nullptr, nullptr, key.data(), nonce.data()), "gcm key");
  int len = 0;
  if (!aad.empty()) check(EVP_DecryptUpdate(c.ctx, nullptr, &len, aad.data(), static_cast<int>(aad.size())), "gcm aad");
  Bytes out(body_len);
  int total = 0;
  if (body_len > 0) {
    check(EVP_DecryptUpdate(c.ctx, out.data(), &len, sealed.data(), static_cast<int>(body_len)), "gcm update");
    total = len;
  }
  Bytes tag(sealed.end() - kTagLen, sealed.end());
  check(EVP_CIPHER_CTX_ctrl(c.ctx, EVP_CTRL_GCM_SET_TAG, kTagLen, tag.data()), "gcm set tag");
  if (EVP_DecryptFinal_ex(c.ctx, out.data() + total, &len) != 1) throw DecryptionFailure();
  return out;
}

Digest tagged_digest(std::string_view tag, ByteView a, ByteView b = {}) {
  Bytes buf(tag.begin(), tag.end());
  buf.insert(buf.end(), a.begin(), a.end());
  buf.insert(buf.end(), b.begin(), b.end());
  return digest(buf);
}

Bytes u64_bytes(std::uint64_t v) {
  Writer w;
  w.u64(v);
  return std::move(w).take();
}

}  // namespace

Digest digest(ByteView bytes) {
  Digest out{};
  unsigned int len = 0;
  check(EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr), "sha256");
  return out;
}

Digest hmac_sha256(ByteView key, ByteView msg) {
  Digest out{};
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), msg.data(), msg.size(), out.data(), &len) ==
      nullptr) {
    throw CryptoError("hmac");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Envelope codec

void encode(Writer& w, const Envelope& e) {
  w.raw(e.nonce);
  w.bytes(e.ciphertext);
  w.u32(e.ad.sender_id);
  w.u64(e.ad.seq);
  w.u8(static_cast<std::uint8_t>(e.ad.kind));
  w.boolean(e.signature.has_value());
  if (e.signature) w.raw(*e.signature);
}

Envelope decode_envelope(Reader& r) {
  Envelope e;
  e.nonce = r.fixed<12>();
  e.ciphertext = r.bytes();
  e.ad.sender_id = r.u32();
  e.ad.seq = r.u64();
  auto kind = r.u8();
  if (kind < 1 || kind > static_cast<std::uint8_t>(BodyKind::kGcList)) throw CodecError("bad body kind");
  e.ad.kind = static_cast<BodyKind>(kind);
  if (r.boolean()) e.signature = r.fixed<64>();
  return e;
}

Bytes encode_envelope(const Envelope& e) {
  Writer w(e.ciphertext.size() + 96);
  encode(w, e);
  return std::move(w).take();
}

Envelope decode_envelope(ByteView in) {
  Reader r(in);
  auto e = decode_envelope(r);
  r.expect_done();
  return e;
}

Bytes assoc_bytes(const AssocData& ad) {
  Writer w(13);
  w.u32(ad.sender_id);
  w.u64(ad.seq);
  w.u8(static_cast<std::uint8_t>(ad.kind));
  return std::move(w).take();
}

// ---------------------------------------------------------------------------
// Ed25519

struct SigningKey::Impl {
  PkeyPtr key;
};

SigningKey SigningKey::from_seed(const std::array<std::uint8_t, 32>& seed) {
  SigningKey k;
  k.seed_ = seed;
  k.impl_ = std::make_unique<Impl>();
  k.impl_->key.p = EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, seed.data(), seed.size());
  if (k.impl_->key.p == nullptr) throw CryptoError("ed25519 key");
  std::size_t len = k.public_.size();
  check(EVP_PKEY_get_raw_public_key(k.impl_->key.p, k.public_.data(), &len), "ed25519 public");
  return k;
}

SigningKey::~SigningKey() = default;
SigningKey::SigningKey(const SigningKey& o) : SigningKey(from_seed(o.seed_)) {}
SigningKey& SigningKey::operator=(const SigningKey& o) {
  if (this != &o) *this = from_seed(o.seed_);
  return *this;
}
SigningKey::SigningKey(SigningKey&&) noexcept = default;
SigningKey& SigningKey::operator=(SigningKey&&) noexcept = default;

Signature SigningKey::sign(ByteView msg) const {
  MdCtx md;
  check(EVP_DigestSignInit(md.ctx, nullptr, nullptr, nullptr, impl_->key.p), "ed25519 sign init");
  Signature sig{};
  std::size_t len = sig.size();
  check(EVP_DigestSign(md.ctx, sig.data(), &len, msg.data(), msg.size()), "ed25519 sign");
  return sig;
}

bool verify_signature(const PublicKey& pk, ByteView msg, const Signature& sig) {
  PkeyPtr key;
  key.p = EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr, pk.data(), pk.size());
  if (key.p == nullptr) return false;
  MdCtx md;
  if (EVP_DigestVerifyInit(md.ctx, nullptr, nullptr, nullptr, key.p) != 1) return false;
  return EVP_DigestVerify(md.ctx, sig.data(), sig.size(), msg.data(), msg.size()) == 1;
}

KeyMaterial KeyMaterial::generate(std::uint64_t seed) {
  auto s = u64_bytes(seed);
  KeyMaterial km;
  km.app_enc_key = tagged_digest("psl-app-enc", s);
  km.app_sign_key = SigningKey::from_seed(tagged_digest("psl-app-sign", s));
  km.verify_key = km.app_sign_key->public_key();
  return km;
}

KeyMaterial KeyMaterial::public_only() const {
  KeyMaterial km;
  km.verify_key = verify_key;
  return km;
}

// ---------------------------------------------------------------------------
// Nonces

NonceSource NonceSource::seeded(std::uint64_t seed, std::uint64_t stream) {
  NonceSource n;
  auto a = u64_bytes(seed);
  auto b = u64_bytes(stream);
  n.state_ = tagged_digest("psl-nonce", a, b);
  return n;
}

NonceSource NonceSource::os_entropy() {
  NonceSource n;
  n.deterministic_ = false;
  return n;
}

void NonceSource::fill(std::span<std::uint8_t> out) {
  if (!deterministic_) {
    check(RAND_bytes(out.data(), static_cast<int>(out.size())), "RAND_bytes");
    return;
  }
  std::size_t off = 0;
  while (off < out.size()) {
    auto block = tagged_digest("", state_, u64_bytes(counter_++));
    std::size_t n = std::min(block.size(), out.size() - off);
    std::memcpy(out.data() + off, block.data(), n);
    off += n;
  }
}

Nonce NonceSource::next() {
  Nonce n{};
  fill(n);
  return n;
}

// ---------------------------------------------------------------------------
// Seal / open

namespace {

Envelope seal_with_nonce(ByteView body, const AssocData& ad, const KeyMaterial& keys, bool sign, const Nonce& nonce) {
  if (!keys.app_enc_key) throw CryptoError("no encryption key");
  Envelope e;
  e.nonce = nonce;
  e.ad = ad;
  e.ciphertext = gcm_encrypt(*keys.app_enc_key, nonce, assoc_bytes(ad), body);
  if (sign) {
    if (!keys.app_sign_key) throw CryptoError("no signing key");
    auto d = digest(e.ciphertext);
    e.signature = keys.app_sign_key->sign(d);
  }
  return e;
}

}  // namespace

Envelope seal(ByteView body, const AssocData& ad, const KeyMaterial& keys, bool sign, NonceSource& nonces) {
  return seal_with_nonce(body, ad, keys, sign, nonces.next());
}

Envelope seal_deterministic(ByteView body, const AssocData& ad, const KeyMaterial& keys, bool sign) {
  if (!keys.app_enc_key) throw CryptoError("no encryption key");
  Bytes msg = assoc_bytes(ad);
  msg.insert(msg.end(), body.begin(), body.end());
  auto mac = hmac_sha256(*keys.app_enc_key, msg);
  Nonce nonce{};
  std::copy_n(mac.begin(), nonce.size(), nonce.begin());
  return seal_with_nonce(body, ad, keys, sign, nonce);
}

bool signature_valid(const Envelope& env, const PublicKey& pk) {
  if (!env.signature) return false;
  auto d = digest(env.ciphertext);
  return verify_signature(pk, d, *env.signature);
}

Bytes open(const Envelope& env, const AssocData& expected_ad, const KeyMaterial& keys) {
  if (!keys.app_enc_key) throw CryptoError("no encryption key");
  auto plain = gcm_decrypt(*keys.app_enc_key, env.nonce, assoc_bytes(expected_ad), env.ciphertext);
  if (env.signature && !signature_valid(env, keys.verify_key)) throw SignatureInvalid();
  return plain;
}

// ---------------------------------------------------------------------------
// X25519 sealed box: eph_pub || AES-GCM(HKDF(ecdh), zero nonce)

namespace {

SymmetricKey derive_box_key(ByteView shared, const PublicKey& eph, const PublicKey& recipient) {
  Bytes info(eph.begin(), eph.end());
  info.insert(info.end(), recipient.begin(), recipient.end());
  auto prk = hmac_sha256(to_bytes("psl-kem-salt"), shared);
  info.push_back(0x01);
  return hmac_sha256(prk, info);
}

Bytes x25519(const std::array<std::uint8_t, 32>& secret, const PublicKey& peer) {
  PkeyPtr priv, pub;
  priv.p = EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, secret.data(), secret.size());
  pub.p = EVP_PKEY_new_raw_public_key(EVP_PKEY_X25519, nullptr, peer.data(), peer.size());
  if (priv.p == nullptr || pub.p == nullptr) throw CryptoError("x25519 key");
  EVP_PKEY_CTX* ctx = EVP_PKEY_CTX_new(priv.p, nullptr);
  if (ctx == nullptr) throw CryptoError("x25519 ctx");
  Bytes shared(32);
  std::size_t len = shared.size();
  bool ok = EVP_PKEY_derive_init(ctx) == 1 && EVP_PKEY_derive_set_peer(ctx, pub.p) == 1 &&
            EVP_PKEY_derive(ctx, shared.data(), &len) == 1;
  EVP_PKEY_CTX_free(ctx);
  if (!ok) throw CryptoError("x25519 derive");
  return shared;
}

}  // namespace

KemKeypair KemKeypair::from_seed(const std::array<std::uint8_t, 32>& seed) {
  KemKeypair kp;
  kp.secret = seed;
  PkeyPtr key;
  key.p = EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, seed.data(), seed.size());
  if (key.p == nullptr) throw CryptoError("x25519 key");
  std::size_t len = kp.public_key.size();
  check(EVP_PKEY_get_raw_public_key(key.p, kp.public_key.data(), &len), "x25519 public");
  return kp;
}

Bytes kem_seal(const PublicKey& recipient, ByteView plaintext, NonceSource& rng) {
  std::array<std::uint8_t, 32> eph_seed{};
  rng.fill(eph_seed);
  auto eph = KemKeypair::from_seed(eph_seed);
  auto shared = x25519(eph.secret, recipient);
  auto key = derive_box_key(shared, eph.public_key, recipient);
  Bytes out(eph.public_key.begin(), eph.public_key.end());
  auto ct = gcm_encrypt(key, Nonce{}, {}, plaintext);
  out.insert(out.end(), ct.begin(), ct.end());
  return out;
}

Bytes kem_open(const KemKeypair& recipient, ByteView sealed) {
  if (sealed.size() < 32 + kTagLen) throw DecryptionFailure();
  PublicKey eph{};
  std::copy_n(sealed.begin(), 32, eph.begin());
  auto shared = x25519(recipient.secret, eph);
  auto key = derive_box_key(shared, eph, recipient.public_key);
  return gcm_decrypt(key, Nonce{}, {}, sealed.subspan(32));
}

}  // namespace psl
