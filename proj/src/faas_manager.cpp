#include "psl/faas_manager.hpp"

#include <algorithm>

#include "psl/worker.hpp"

namespace psl {

Bytes encode_manager_bundle(const KeyMaterial& keys, const ExpectedCode& code) {
  Writer w;
  w.bytes(encode_key_bundle(keys));
  w.digest(code.worker);
  w.digest(code.psl_db);
  return std::move(w).take();
}

std::pair<KeyMaterial, ExpectedCode> decode_manager_bundle(ByteView in) {
  Reader r(in);
  Bytes bundle = r.bytes();
  ExpectedCode code;
  code.worker = r.fixed<32>();
  code.psl_db = r.fixed<32>();
  r.expect_done();
  return {decode_key_bundle(bundle), code};
}

namespace {

Digest fresh_challenge(NonceSource& rng) {
  Digest d{};
  rng.fill(d);
  return d;
}

}  // namespace

// --- manager ----------------------------------------------------------------------

FaasManager::FaasManager(NodeId id, std::shared_ptr<const Topology> topo, EnclaveIdentity identity,
                         SimTime retry_interval)
    : Node(id), topo_(std::move(topo)), identity_(std::move(identity)), retry_(retry_interval) {}

void FaasManager::start() {
  nonces_ = rt().deterministic() ? NonceSource::seeded(rt().seed(), id()) : NonceSource::os_entropy();
}

void FaasManager::crash() {
  keys_.reset();
  enclaves_.clear();
  storage_pending_.clear();
  install_reqs_.clear();
  pool_.clear();
  excluded_.clear();
  jobs_by_user_.clear();
  jobs_.clear();
  queue_.clear();
  busy_.clear();
  provision_reported_ = false;
}

void FaasManager::on_user_keys(NodeId user, const rpc::ProvisionKeys& p) {
  if (keys_) {
    if (user != user_ || p.req != user_provision_req_) return;
    send(user, rpc::ProvisionAck{p.req});
    if (provision_reported_) send_control(user_, rpc::ProvisionDone{user_provision_req_, pool_});
    return;
  }
  try {
    auto [keys, code] = decode_manager_bundle(kem_open(identity_.kem, p.sealed));
    keys_ = std::move(keys);
    expected_ = code;
  } catch (const std::exception&) {
    ++stats_.validity_drops;
    return;
  }
  user_ = user;
  user_provision_req_ = p.req;
  send(user, rpc::ProvisionAck{p.req});
  begin_pool();
}

void FaasManager::begin_pool() {
  for (auto w : topo_->workers) enclaves_[w].role = rpc::Role::kWorker;
  if (topo_->psl_db != 0) enclaves_[topo_->psl_db].role = rpc::Role::kPslDb;
  for (auto& [node, e] : enclaves_) send_attest(node);
  for (auto s : topo_->storage) {
    storage_pending_.insert(s);
    install_reqs_[next_req_++] = s;
  }
  for (auto s : topo_->storage) send_install(s);
}

void FaasManager::send_attest(NodeId target) {
  auto it = enclaves_.find(target);
  if (it == enclaves_.end()) return;
  Enclave& e = it->second;
  switch (e.stage) {
    case Stage::kAttesting:
      if (e.req == 0) {
        e.req = next_req_++;
        e.challenge = fresh_challenge(*nonces_);
      }
      send(target, rpc::AttestRequest{e.req, e.challenge});
      break;
    case Stage::kProvisioning:
      send(target, rpc::ProvisionKeys{e.req, e.sealed});
      break;
    case Stage::kDone:
    case Stage::kExcluded:
      return;
  }
  after(retry_, [this, target] { send_attest(target); });
}

void FaasManager::on_quote(NodeId from, const rpc::Quote& q) {
  auto it = enclaves_.find(from);
  if (it == enclaves_.end() || it->second.stage != Stage::kAttesting || q.req != it->second.req) return;
  Enclave& e = it->second;
  Measurement want{e.role, e.role == rpc::Role::kPslDb ? expected_.psl_db : expected_.worker};
  try {
    verify_quote(q, identity_.platform->public_key(), e.challenge, want);
  } catch (const MeasurementMismatch&) {
    e.stage = Stage::kExcluded;
    excluded_.insert(from);
    ++stats_.excluded;
    maybe_finish_provisioning();
    return;
  }
  ++stats_.attested;
  e.sealed = kem_seal(q.kem_public, encode_key_bundle(*keys_), *nonces_);
  e.stage = Stage::kProvisioning;
  send(from, rpc::ProvisionKeys{e.req, e.sealed});
}

void FaasManager::on_provision_ack(NodeId from, const rpc::ProvisionAck& a) {
  auto it = enclaves_.find(from);
  if (it == enclaves_.end() || it->second.stage != Stage::kProvisioning || a.req != it->second.req) return;
  it->second.stage = Stage::kDone;
  if (it->second.role == rpc::Role::kWorker) {
    pool_.insert(std::upper_bound(pool_.begin(), pool_.end(), from), from);
  }
  maybe_finish_provisioning();
  dispatch();
}

void FaasManager::send_install(NodeId server) {
  if (!storage_pending_.count(server)) return;
  for (const auto& [req, s] : install_reqs_) {
    if (s == server) send(server, rpc::InstallVerifyKey{req, keys_->verify_key});
  }
  after(retry_, [this, server] { send_install(server); });
}

void FaasManager::maybe_finish_provisioning() {
  if (provision_reported_ || !storage_pending_.empty()) return;
  for (const auto& [node, e] : enclaves_) {
    if (e.stage != Stage::kDone && e.stage != Stage::kExcluded) return;
  }
  provision_reported_ = true;
  send_control(user_, rpc::ProvisionDone{user_provision_req_, pool_});
}

void FaasManager::send_control(NodeId to, const rpc::ControlBody& body) {
  if (!keys_) return;
  Envelope env = seal(rpc::encode_control(body), {id(), next_req_++, BodyKind::kControl}, *keys_, false, *nonces_);
  send(to, rpc::Control{std::move(env)});
}

void FaasManager::on_control(const Envelope& env) {
  if (!keys_ || env.ad.kind != BodyKind::kControl) {
    ++stats_.validity_drops;
    return;
  }
  rpc::ControlBody body;
  try {
    body = rpc::decode_control(open(env, *keys_));
  } catch (const std::exception&) {
    ++stats_.validity_drops;
    return;
  }
  if (const auto* r = std::get_if<rpc::InvokeRequest>(&body)) return on_invoke(env.ad.sender_id, *r);
  if (const auto* d = std::get_if<rpc::FunctionDone>(&body)) return on_function_done(env.ad.sender_id, *d);
}

void FaasManager::on_invoke(NodeId user, const rpc::InvokeRequest& r) {
  auto key = std::make_pair(user, r.req);
  if (auto it = jobs_by_user_.find(key); it != jobs_by_user_.end()) {
    const Job& job = jobs_.at(it->second);
    if (job.result) send_control(user, *job.result);
    return;
  }
  std::uint64_t run = next_req_++;
  jobs_by_user_[key] = run;
  Job& job = jobs_[run];
  job.user = user;
  job.user_req = r.req;
  job.code_id = r.code_id;
  job.input_id = r.input_id;
  job.run_req = run;
  bool any_idle = std::any_of(pool_.begin(), pool_.end(), [this](NodeId w) { return idle(w); });
  if (!any_idle) ++stats_.queued;
  queue_.push_back(run);
  dispatch();
}

void FaasManager::dispatch() {
  while (!queue_.empty()) {
    auto w = std::find_if(pool_.begin(), pool_.end(), [this](NodeId n) { return idle(n); });
    if (w == pool_.end()) return;
    std::uint64_t run = queue_.front();
    queue_.pop_front();
    jobs_.at(run).worker = *w;
    busy_.insert(*w);
    ++stats_.dispatched;
    send_run(run);
  }
}

void FaasManager::send_run(std::uint64_t run) {
  auto it = jobs_.find(run);
  if (it == jobs_.end() || it->second.result) return;
  const Job& job = it->second;
  send_control(job.worker, rpc::RunFunction{run, job.code_id, job.input_id});
  after(retry_, [this, run] { send_run(run); });
}

void FaasManager::on_function_done(NodeId worker, const rpc::FunctionDone& d) {
  auto it = jobs_.find(d.req);
  if (it == jobs_.end() || it->second.worker != worker || it->second.result) return;
  Job& job = it->second;
  job.result = rpc::InvokeResult{job.user_req, d.ok, d.result_id, worker};
  busy_.erase(worker);
  ++stats_.completed;
  send_control(job.user, *job.result);
  dispatch();
}

void FaasManager::receive(NodeId from, ByteView frame) {
  rpc::Message msg;
  try {
    msg = rpc::parse(frame);
  } catch (const CodecError&) {
    ++stats_.validity_drops;
    return;
  }
  if (const auto* a = std::get_if<rpc::AttestRequest>(&msg)) {
    send(from, identity_.quote(a->req, a->challenge));
  } else if (const auto* p = std::get_if<rpc::ProvisionKeys>(&msg)) {
    on_user_keys(from, *p);
  } else if (const auto* q = std::get_if<rpc::Quote>(&msg)) {
    on_quote(from, *q);
  } else if (const auto* pa = std::get_if<rpc::ProvisionAck>(&msg)) {
    on_provision_ack(from, *pa);
  } else if (const auto* ia = std::get_if<rpc::InstallVerifyKeyAck>(&msg)) {
    auto it = install_reqs_.find(ia->req);
    if (it != install_reqs_.end() && it->second == from) {
      storage_pending_.erase(from);
      maybe_finish_provisioning();
    }
  } else if (const auto* c = std::get_if<rpc::Control>(&msg)) {
    on_control(c->envelope);
  }
}

// --- user -------------------------------------------------------------------------

UserClient::UserClient(NodeId id, std::shared_ptr<const Topology> topo, KeyMaterial keys, PublicKey platform,
                       Measurement manager, ExpectedCode code, SimTime retry_interval)
    : Node(id),
      topo_(std::move(topo)),
      keys_(std::move(keys)),
      platform_(platform),
      manager_(manager),
      code_(code),
      retry_(retry_interval),
      storage_(id, topo_, retry_interval) {}

void UserClient::start() {
  storage_.attach(&rt(), (static_cast<std::uint64_t>(id()) << 32) + 1);
  nonces_ = rt().deterministic() ? NonceSource::seeded(rt().seed(), id()) : NonceSource::os_entropy();
}

Envelope UserClient::seal_package(ByteView bytes) const {
  return seal_deterministic(bytes, {id(), 0, BodyKind::kPackage}, keys_, false);
}

void UserClient::upload(ByteView code, ByteView input, Uploaded done) {
  Envelope ec = seal_package(code);
  Envelope ei = seal_package(input);
  Digest dc = envelope_digest(ec);
  Digest di = envelope_digest(ei);
  auto remaining = std::make_shared<int>(2);
  auto one = [remaining, dc, di, done](const Digest&) {
    if (--*remaining == 0 && done) done(dc, di);
  };
  std::uint32_t stream = id() | 0x4000'0000u;
  storage_.store(stream, 0, std::move(ec), one);
  storage_.store(stream, 0, std::move(ei), one);
}

void UserClient::provision(Provisioned done) {
  provisioned_ = std::move(done);
  provision_req_ = storage_.next_req();
  challenge_ = fresh_challenge(*nonces_);
  keys_sealed_.reset();
  send_attest();
}

void UserClient::send_attest() {
  if (!provisioned_ || manager_rejected_) return;
  if (keys_sealed_) {
    send(topo_->manager, rpc::ProvisionKeys{provision_req_, *keys_sealed_});
  } else {
    send(topo_->manager, rpc::AttestRequest{provision_req_, challenge_});
  }
  after(retry_, [this] { send_attest(); });
}

void UserClient::invoke(const Digest& code_id, const Digest& input_id, Invoked done) {
  auto req = storage_.next_req();
  invokes_[req] = {rpc::InvokeRequest{req, code_id, input_id}, std::move(done)};
  send_invoke(req);
}

void UserClient::send_invoke(std::uint64_t req) {
  auto it = invokes_.find(req);
  if (it == invokes_.end()) return;
  Envelope env = seal(rpc::encode_control(it->second.request), {id(), storage_.next_req(), BodyKind::kControl}, keys_,
                      false, *nonces_);
  send(topo_->manager, rpc::Control{std::move(env)});
  after(retry_, [this, req] { send_invoke(req); });
}

void UserClient::fetch_result(const Digest& result_id, Fetched done) {
  storage_.fetch_optional(
      result_id, [](const Envelope& e) { return e.ad.kind == BodyKind::kResult; },
      [this, done](std::optional<Envelope> env) {
        if (!env) return done(std::nullopt);
        try {
          done(decode_result(open(*env, keys_)));
        } catch (const std::exception&) {
          done(std::nullopt);
        }
      });
}

void UserClient::receive(NodeId from, ByteView frame) {
  rpc::Message msg;
  try {
    msg = rpc::parse(frame);
  } catch (const CodecError&) {
    return;
  }
  if (storage_.on_message(from, msg)) return;
  if (from != topo_->manager) return;
  if (const auto* q = std::get_if<rpc::Quote>(&msg)) {
    if (q->req != provision_req_ || keys_sealed_ || !provisioned_) return;
    try {
      verify_quote(*q, platform_, challenge_, manager_);
    } catch (const MeasurementMismatch&) {
      manager_rejected_ = true;
      auto done = std::move(provisioned_);
      provisioned_ = nullptr;
      done({});
      return;
    }
    keys_sealed_ = kem_seal(q->kem_public, encode_manager_bundle(keys_, code_), *nonces_);
    send(topo_->manager, rpc::ProvisionKeys{provision_req_, *keys_sealed_});
    return;
  }
  if (const auto* c = std::get_if<rpc::Control>(&msg)) {
    rpc::ControlBody body;
    try {
      body = rpc::decode_control(open(c->envelope, keys_));
    } catch (const std::exception&) {
      return;
    }
    if (const auto* p = std::get_if<rpc::ProvisionDone>(&body)) {
      if (p->req != provision_req_ || !provisioned_) return;
      auto done = std::move(provisioned_);
      provisioned_ = nullptr;
      done(p->pool);
      return;
    }
    if (const auto* r = std::get_if<rpc::InvokeResult>(&body)) {
      auto it = invokes_.find(r->req);
      if (it == invokes_.end()) return;
      auto done = std::move(it->second.done);
      invokes_.erase(it);
      if (done) done(*r);
    }
  }
}

}  // namespace psl
