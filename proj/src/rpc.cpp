#include "psl/rpc.hpp"

namespace psl::rpc {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void put_opt_envelope(Writer& w, const std::optional<Envelope>& e) {
  w.boolean(e.has_value());
  if (e) encode(w, *e);
}

std::optional<Envelope> get_opt_envelope(Reader& r) {
  if (!r.boolean()) return std::nullopt;
  return decode_envelope(r);
}

void put_digests(Writer& w, const std::vector<Digest>& ds) {
  w.count(ds.size());
  for (const auto& d : ds) w.digest(d);
}

std::vector<Digest> get_digests(Reader& r) {
  auto n = r.count(32);
  std::vector<Digest> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(r.digest());
  return out;
}

}  // namespace

Bytes frame(const Message& m) {
  Writer w;
  w.u32(0);  // length placeholder
  w.u8(static_cast<std::uint8_t>(m.index()));
  std::visit(overloaded{
                 [&](const StoreBlock& x) {
                   w.u64(x.req);
                   w.u32(x.worker_id);
                   w.u64(x.seq);
                   encode(w, x.envelope);
                 },
                 [&](const StoreAck& x) {
                   w.u64(x.req);
                   w.digest(x.digest);
                 },
                 [&](const RetrieveByHash& x) {
                   w.u64(x.req);
                   w.digest(x.digest);
                 },
                 [&](const RetrieveMostRecent& x) {
                   w.u64(x.req);
                   w.u32(x.worker_id);
                 },
                 [&](const RetrieveResp& x) {
                   w.u64(x.req);
                   put_opt_envelope(w, x.envelope);
                 },
                 [&](const GcRequest& x) {
                   w.u64(x.req);
                   put_digests(w, x.digests);
                   w.raw(x.signature);
                 },
                 [&](const GcResp& x) {
                   w.u64(x.req);
                   w.u32(x.deleted);
                 },
                 [&](const Multicast& x) { encode(w, x.envelope); },
                 [&](const SyncReport& x) { encode(w, x.envelope); },
                 [&](const Control& x) { encode(w, x.envelope); },
                 [&](const AttestRequest& x) {
                   w.u64(x.req);
                   w.digest(x.challenge);
                 },
                 [&](const Quote& x) {
                   w.u64(x.req);
                   w.u8(static_cast<std::uint8_t>(x.role));
                   w.digest(x.code_hash);
                   w.raw(x.kem_public);
                   w.raw(x.platform_signature);
                 },
                 [&](const ProvisionKeys& x) {
                   w.u64(x.req);
                   w.bytes(x.sealed);
                 },
                 [&](const ProvisionAck& x) { w.u64(x.req); },
                 [&](const InstallVerifyKey& x) {
                   w.u64(x.req);
                   w.raw(x.verify_key);
                 },
                 [&](const InstallVerifyKeyAck& x) { w.u64(x.req); },
             },
             m);
  Bytes out = std::move(w).take();
  auto len = static_cast<std::uint32_t>(out.size() - 4);
  for (int i = 0; i < 4; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(len >> (8 * i));
  return out;
}

Message parse(ByteView in) {
  Reader r(in);
  auto len = r.u32();
  if (len != r.remaining()) throw CodecError("frame length mismatch");
  auto kind = r.u8();
  Message m;
  switch (kind) {
    case 0: {
      StoreBlock x;
      x.req = r.u64();
      x.worker_id = r.u32();
      x.seq = r.u64();
      x.envelope = decode_envelope(r);
      m = std::move(x);
      break;
    }
    case 1: {
      StoreAck x;
      x.req = r.u64();
      x.digest = r.digest();
      m = x;
      break;
    }
    case 2: {
      RetrieveByHash x;
      x.req = r.u64();
      x.digest = r.digest();
      m = x;
      break;
    }
    case 3: {
      RetrieveMostRecent x;
      x.req = r.u64();
      x.worker_id = r.u32();
      m = x;
      break;
    }
    case 4: {
      RetrieveResp x;
      x.req = r.u64();
      x.envelope = get_opt_envelope(r);
      m = std::move(x);
      break;
    }
    case 5: {
      GcRequest x;
      x.req = r.u64();
      x.digests = get_digests(r);
      x.signature = r.fixed<64>();
      m = std::move(x);
      break;
    }
    case 6: {
      GcResp x;
      x.req = r.u64();
      x.deleted = r.u32();
      m = x;
      break;
    }
    case 7:
      m = Multicast{decode_envelope(r)};
      break;
    case 8:
      m = SyncReport{decode_envelope(r)};
      break;
    case 9:
      m = Control{decode_envelope(r)};
      break;
    case 10: {
      AttestRequest x;
      x.req = r.u64();
      x.challenge = r.digest();
      m = x;
      break;
    }
    case 11: {
      Quote x;
      x.req = r.u64();
      auto role = r.u8();
      if (role < 1 || role > 3) throw CodecError("bad role");
      x.role = static_cast<Role>(role);
      x.code_hash = r.digest();
      x.kem_public = r.fixed<32>();
      x.platform_signature = r.fixed<64>();
      m = x;
      break;
    }
    case 12: {
      ProvisionKeys x;
      x.req = r.u64();
      x.sealed = r.bytes();
      m = std::move(x);
      break;
    }
    case 13:
      m = ProvisionAck{r.u64()};
      break;
    case 14: {
      InstallVerifyKey x;
      x.req = r.u64();
      x.verify_key = r.fixed<32>();
      m = x;
      break;
    }
    case 15:
      m = InstallVerifyKeyAck{r.u64()};
      break;
    default:
      throw CodecError("unknown message kind");
  }
  r.expect_done();
  return m;
}

const char* name(const Message& m) {
  static constexpr const char* kNames[] = {
      "StoreBlock", "StoreAck", "RetrieveByHash", "RetrieveMostRecent", "RetrieveResp", "GcRequest",
      "GcResp",     "Multicast", "SyncReport",    "Control",            "AttestRequest", "Quote",
      "ProvisionKeys", "ProvisionAck", "InstallVerifyKey", "InstallVerifyKeyAck"};
  return kNames[m.index()];
}

Bytes gc_signing_bytes(std::uint64_t req, const std::vector<Digest>& digests) {
  Writer w;
  w.str("psl-gc");
  w.u64(req);
  put_digests(w, digests);
  auto d = digest(w.view());
  return Bytes(d.begin(), d.end());
}

// ---------------------------------------------------------------------------

Bytes encode_control(const ControlBody& b) {
  Writer w;
  w.u8(static_cast<std::uint8_t>(b.index()));
  std::visit(overloaded{
                 [&](const FetchKey& x) {
                   w.u64(x.req);
                   encode(w, x.key);
                 },
                 [&](const FetchKeyResp& x) {
                   w.u64(x.req);
                   w.u8(static_cast<std::uint8_t>(x.kind));
                   if (x.kind == FetchKeyResp::Kind::kValue) encode(w, x.value);
                   if (x.kind == FetchKeyResp::Kind::kCheckpoint) w.digest(x.checkpoint);
                 },
                 [&](const LockAcquire& x) {
                   w.u64(x.req);
                   w.u64(x.lock_id);
                 },
                 [&](const LockGrant& x) {
                   w.u64(x.req);
                   w.u64(x.lock_id);
                   w.u64(x.grant_no);
                   put_opt_envelope(w, x.report);
                 },
                 [&](const LockRelease& x) {
                   w.u64(x.req);
                   w.u64(x.lock_id);
                   w.u64(x.grant_no);
                   w.digest(x.tip);
                 },
                 [&](const LockReleaseAck& x) {
                   w.u64(x.req);
                   w.u64(x.lock_id);
                   w.u64(x.grant_no);
                 },
                 [&](const InvokeRequest& x) {
                   w.u64(x.req);
                   w.digest(x.code_id);
                   w.digest(x.input_id);
                 },
                 [&](const RunFunction& x) {
                   w.u64(x.req);
                   w.digest(x.code_id);
                   w.digest(x.input_id);
                 },
                 [&](const FunctionDone& x) {
                   w.u64(x.req);
                   w.boolean(x.ok);
                   w.digest(x.result_id);
                 },
                 [&](const InvokeResult& x) {
                   w.u64(x.req);
                   w.boolean(x.ok);
                   w.digest(x.result_id);
                   w.u32(x.worker);
                 },
                 [&](const ProvisionDone& x) {
                   w.u64(x.req);
                   w.count(x.pool.size());
                   for (auto id : x.pool) w.u32(id);
                 },
             },
             b);
  return std::move(w).take();
}

ControlBody decode_control(ByteView in) {
  Reader r(in);
  auto kind = r.u8();
  ControlBody b;
  switch (kind) {
    case 0: {
      FetchKey x;
      x.req = r.u64();
      x.key = decode_key(r);
      b = std::move(x);
      break;
    }
    case 1: {
      FetchKeyResp x;
      x.req = r.u64();
      auto k = r.u8();
      if (k > 2) throw CodecError("bad fetch kind");
      x.kind = static_cast<FetchKeyResp::Kind>(k);
      if (x.kind == FetchKeyResp::Kind::kValue) x.value = decode_value(r);
      if (x.kind == FetchKeyResp::Kind::kCheckpoint) x.checkpoint = r.digest();
      b = std::move(x);
      break;
    }
    case 2: {
      LockAcquire x;
      x.req = r.u64();
      x.lock_id = r.u64();
      b = x;
      break;
    }
    case 3: {
      LockGrant x;
      x.req = r.u64();
      x.lock_id = r.u64();
      x.grant_no = r.u64();
      x.report = get_opt_envelope(r);
      b = std::move(x);
      break;
    }
    case 4: {
      LockRelease x;
      x.req = r.u64();
      x.lock_id = r.u64();
      x.grant_no = r.u64();
      x.tip = r.digest();
      b = x;
      break;
    }
    case 5: {
      LockReleaseAck x;
      x.req = r.u64();
      x.lock_id = r.u64();
      x.grant_no = r.u64();
      b = x;
      break;
    }
    case 6: {
      InvokeRequest x;
      x.req = r.u64();
      x.code_id = r.digest();
      x.input_id = r.digest();
      b = x;
      break;
    }
    case 7: {
      RunFunction x;
      x.req = r.u64();
      x.code_id = r.digest();
      x.input_id = r.digest();
      b = x;
      break;
    }
    case 8: {
      FunctionDone x;
      x.req = r.u64();
      x.ok = r.boolean();
      x.result_id = r.digest();
      b = x;
      break;
    }
    case 9: {
      InvokeResult x;
      x.req = r.u64();
      x.ok = r.boolean();
      x.result_id = r.digest();
      x.worker = r.u32();
      b = x;
      break;
    }
    case 10: {
      ProvisionDone x;
      x.req = r.u64();
      auto n = r.count(4);
      for (std::uint32_t i = 0; i < n; ++i) x.pool.push_back(r.u32());
      b = std::move(x);
      break;
    }
    default:
      throw CodecError("unknown control kind");
  }
  r.expect_done();
  return b;
}

std::uint64_t control_req(const ControlBody& b) {
  return std::visit([](const auto& x) { return x.req; }, b);
}

}  // namespace psl::rpc
