#include "psl/worker.hpp"

namespace psl {

Bytes encode_result(bool ok, ByteView payload) {
  Writer w(payload.size() + 8);
  w.boolean(ok);
  w.bytes(payload);
  return std::move(w).take();
}

std::pair<bool, Bytes> decode_result(ByteView in) {
  Reader r(in);
  bool ok = r.boolean();
  Bytes b = r.bytes();
  r.expect_done();
  return {ok, std::move(b)};
}

Worker::Worker(NodeId id, std::shared_ptr<const Topology> topo, WorkerConfig cfg, History* history)
    : Node(id),
      topo_(std::move(topo)),
      cfg_(cfg),
      history_(history),
      storage_(id, topo_, cfg.retry_interval),
      memtable_(cfg.memtable) {}

void Worker::start() {
  storage_.attach(&rt(), (static_cast<std::uint64_t>(id()) << 32) + 1);
  if (!nonces_) {
    nonces_ = rt().deterministic() ? NonceSource::seeded(rt().seed(), id()) : NonceSource::os_entropy();
  }
}

void Worker::provision(KeyMaterial keys) {
  if (!keys_) keys_ = std::move(keys);
}

void Worker::crash() {
  alive_ = false;
  storage_.reset();
  keys_.reset();
  memtable_ = Memtable(cfg_.memtable);
  deferred_.clear();
  queued_.clear();
  inflight_.clear();
  pending_multicasts_.clear();
  reports_pending_.clear();
  report_waiters_.clear();
  fetches_.clear();
  fetch_by_key_.clear();
  checkpoint_loads_.clear();
  acquiring_.clear();
  held_.clear();
  releasing_.clear();
  runs_.clear();
}

void Worker::record(HistoryEvent e) {
  if (history_ == nullptr) return;
  e.t = now();
  e.node = id();
  history_->record(std::move(e));
}

bool Worker::allow_new() const {
  return !cfg_.low_cache_mode && !memtable_.has_evicted() && stats_.uncached_reads == 0;
}

// --- commits ------------------------------------------------------------------

void Worker::commit(TransactionBuffer& txn, CommitDone done) {
  if (txn.empty()) {
    if (done) done(std::nullopt);
    return;
  }
  durable_commit(memtable_.stage(txn), std::move(done));
}

void Worker::durable_commit(WriteSet ws, CommitDone done) {
  if (ws.empty()) {
    if (done) done(std::nullopt);
    return;
  }
  for (const auto& e : ws) {
    if (e.value.data.size() > memtable_.config().max_value_bytes) throw ValueTooLarge();
  }
  admit_commit({std::move(ws), std::move(done)});
}

void Worker::admit_commit(Staged s) {
  std::size_t new_keys = 0;
  for (const auto& e : s.ws) new_keys += memtable_.contains(e.key) ? 0 : 1;
  if (!deferred_.empty() || !memtable_.can_admit(new_keys)) {
    ++stats_.commits_deferred;
    deferred_.push_back(std::move(s));
    return;
  }
  for (const auto& e : s.ws) memtable_.apply(e.key, e.value, true);
  queued_.push_back(std::move(s));
  pump_commits();
}

void Worker::pump_commits() {
  while (!queued_.empty() && inflight_.size() < std::max<std::size_t>(1, cfg_.pipeline_depth)) {
    Staged s = std::move(queued_.front());
    queued_.pop_front();
    start_block(std::move(s));
  }
}

void Worker::start_block(Staged s) {
  ++n_;
  BlockBody body{id(), n_, h_, std::move(s.ws)};
  Bytes plain = canonical_encode(body);
  bool sign = cfg_.sign_every == 1 || (cfg_.sign_every > 0 && n_ % cfg_.sign_every == 0);
  Envelope env = seal(plain, {id(), n_, BodyKind::kBlock}, *keys_, sign, *nonces_);
  h_ = envelope_digest(env);
  ++stats_.blocks_emitted;
  if (sign) ++stats_.signed_blocks;
  for (const auto& e : body.writes) {
    HistoryEvent ev;
    ev.kind = EventKind::kTxnCommit;
    ev.key = e.key;
    ev.value = digest(e.value.data);
    ev.ts = e.value.ts;
    ev.seq = n_;
    record(std::move(ev));
  }
  inflight_[n_] = {n_, h_, std::move(s.done)};
  multicast(topo_->replication_group(id()), rpc::Multicast{env});
  std::uint64_t seq = n_;
  storage_.store(id(), seq, std::move(env), [this, seq](const Digest& d) { on_block_durable(seq, d); });
}

void Worker::on_block_durable(std::uint64_t seq, const Digest& d) {
  auto it = inflight_.find(seq);
  if (it == inflight_.end()) return;
  CommitDone done = std::move(it->second.done);
  inflight_.erase(it);
  durable_h_ = d;
  ++stats_.commits_durable;
  HistoryEvent ev;
  ev.kind = EventKind::kCommitDurable;
  ev.seq = seq;
  record(std::move(ev));
  if (done) done(CommitReceipt{seq, d});
  pump_commits();
}

// --- multicast -------------------------------------------------------------------

WriteSet Worker::batch_pending_multicasts(const std::vector<BlockBody>& bodies) {
  std::map<Key, HashedValue> best;
  for (const auto& b : bodies) {
    for (const auto& e : b.writes) {
      auto hv = HashedValue::of(e.value);
      auto it = best.find(e.key);
      if (it == best.end()) {
        best.emplace(e.key, std::move(hv));
      } else if (it->second.version <= hv.version) {
        it->second = std::move(hv);
      }
    }
  }
  WriteSet out;
  out.reserve(best.size());
  for (auto& [k, hv] : best) out.push_back({k, std::move(hv.value)});
  return out;
}

void Worker::handle_multicast(const Envelope& env) {
  if (!keys_ || !alive_) return;
  if (env.ad.kind != BodyKind::kBlock) {
    ++stats_.validity_drops;
    return;
  }
  if (env.ad.sender_id == id()) return;  // our own block coming back
  charge(costs().aead(env.ciphertext.size()) + (env.signature ? costs().verify : 0.0));
  BlockBody body;
  try {
    body = decode_block(open(env, *keys_));
  } catch (const SignatureInvalid&) {
    ++stats_.signature_drops;
    return;
  } catch (const std::exception&) {
    ++stats_.validity_drops;
    return;
  }
  if (body.worker_id != env.ad.sender_id || body.seq != env.ad.seq) {
    ++stats_.validity_drops;
    return;
  }
  HistoryEvent ev;
  ev.kind = EventKind::kMulticastRx;
  ev.seq = body.seq;
  ev.lock = body.worker_id;
  record(std::move(ev));
  if (!cfg_.batch_multicasts) {
    ++stats_.multicasts_applied;
    apply_remote(body.writes);
    return;
  }
  pending_multicasts_.push_back(std::move(body));
  if (!drain_scheduled_) {
    drain_scheduled_ = true;
    after(cfg_.batch_window, [this] { drain_multicasts(); });
  }
}

void Worker::drain_multicasts() {
  drain_scheduled_ = false;
  if (pending_multicasts_.empty()) return;
  std::vector<BlockBody> batch;
  batch.swap(pending_multicasts_);
  stats_.multicasts_applied += batch.size();
  if (batch.size() == 1) {
    apply_remote(batch.front().writes);
    return;
  }
  ++stats_.multicast_batches;
  apply_remote(batch_pending_multicasts(batch));
}

void Worker::apply_remote(const WriteSet& ws) {
  bool allow = allow_new();
  for (const auto& e : ws) memtable_.apply(e.key, e.value, allow);
  charge(costs().kv_op * static_cast<double>(ws.size()));
}

// --- sync reports ----------------------------------------------------------------

bool Worker::open_report(const Envelope& env, SyncReportBody& out) {
  if (!keys_) return false;
  if (env.ad.kind != BodyKind::kSyncReport || env.ad.sender_id != topo_->psl_db || !env.signature) {
    ++stats_.signature_drops;
    return false;
  }
  charge(costs().verify + costs().aead(env.ciphertext.size()));
  try {
    out = decode_sync_report(open(env, *keys_));
  } catch (const SignatureInvalid&) {
    ++stats_.signature_drops;
    return false;
  } catch (const std::exception&) {
    ++stats_.validity_drops;
    return false;
  }
  if (out.seq != env.ad.seq) {
    ++stats_.validity_drops;
    return false;
  }
  return true;
}

void Worker::handle_sync_report(const Envelope& env) {
  SyncReportBody r;
  if (!open_report(env, r)) return;
  if (r.seq <= n_sr_) return;
  reports_pending_.emplace(r.seq, std::make_pair(std::move(r), envelope_digest(env)));
  drain_reports();
}

void Worker::drain_reports() {
  while (!reports_pending_.empty()) {
    auto it = reports_pending_.begin();
    if (it->first <= n_sr_) {
      reports_pending_.erase(it);
      continue;
    }
    // A worker with no state yet has nothing to reconcile and may start at
    // any report.
    bool fresh = n_sr_ == 0 && memtable_.size() == 0 && read_floors_.empty();
    if (it->first == n_sr_ + 1 || fresh) {
      if (n_sr_ > 0 && it->second.first.prev_hash != last_report_hash_) {
        ++stats_.validity_drops;  // not our chain
        reports_pending_.erase(it);
        continue;
      }
      auto [body, d] = std::move(it->second);
      reports_pending_.erase(it);
      apply_report(body, d);
      continue;
    }
    Digest need = it->second.first.prev_hash;
    if (report_fetch_) return;
    report_fetch_ = need;
    ++stats_.report_backfills;
    NodeId psl = topo_->psl_db;
    storage_.fetch(
        need, [psl](const Envelope& e) { return e.ad.kind == BodyKind::kSyncReport && e.ad.sender_id == psl; },
        [this](Envelope e) {
          report_fetch_.reset();
          SyncReportBody r;
          if (open_report(e, r) && r.seq > n_sr_) {
            reports_pending_.emplace(r.seq, std::make_pair(std::move(r), envelope_digest(e)));
          }
          drain_reports();
        });
    return;
  }
}

void Worker::apply_report(const SyncReportBody& r, const Digest& d) {
  for (const auto& kd : r.digests) {
    if (memtable_.cover(kd.key, {kd.ts, kd.value_hash}) == CoverResult::kInvalidated) ++stats_.invalidations;
  }
  charge(costs().kv_op * static_cast<double>(r.digests.size()));
  n_sr_ = r.seq;
  last_report_hash_ = d;
  last_checkpoint_ = r.checkpoint_hash;
  ++stats_.reports_applied;
  HistoryEvent ev;
  ev.kind = EventKind::kSrRx;
  ev.seq = r.seq;
  record(std::move(ev));

  std::deque<Staged> retry;
  retry.swap(deferred_);
  for (auto& s : retry) admit_commit(std::move(s));

  std::vector<std::function<void()>> ready;
  for (auto it = report_waiters_.begin(); it != report_waiters_.end();) {
    if (it->first <= n_sr_) {
      ready.push_back(std::move(it->second));
      it = report_waiters_.erase(it);
    } else {
      ++it;
    }
  }
  for (auto& f : ready) f();
}

// --- reads -----------------------------------------------------------------------

void Worker::complete_read(const Key& key, const std::optional<TimestampedValue>& v) {
  HistoryEvent ev;
  ev.kind = EventKind::kRead;
  ev.key = key;
  if (v) {
    ev.value = digest(v->data);
    ev.ts = v->ts;
  } else {
    ev.absent = true;
  }
  record(std::move(ev));
}

void Worker::read_key(const Key& key, ReadDone done) {
  ++stats_.reads;
  if (const auto* v = memtable_.get(key)) {
    ++stats_.read_hits;
    TimestampedValue copy = *v;
    complete_read(key, copy);
    done(std::move(copy));
    return;
  }
  if (auto it = fetch_by_key_.find(key); it != fetch_by_key_.end()) {
    fetches_.at(it->second).waiters.push_back(std::move(done));
    return;
  }
  auto req = storage_.next_req();
  fetches_.emplace(req, PendingFetch{req, key, {std::move(done)}});
  fetch_by_key_[key] = req;
  ++stats_.fetches;
  send_fetch(req);
}

void Worker::send_fetch(std::uint64_t req) {
  auto it = fetches_.find(req);
  if (it == fetches_.end()) return;
  bool loading = checkpoint_loads_.end() !=
                 std::find_if(checkpoint_loads_.begin(), checkpoint_loads_.end(), [&](const auto& kv) {
                   return std::find(kv.second.begin(), kv.second.end(), it->second.key) != kv.second.end();
                 });
  if (!loading) send_control(topo_->psl_db, rpc::FetchKey{req, it->second.key});
  after(cfg_.retry_interval, [this, req] { send_fetch(req); });
}

void Worker::finish_read(const Key& key, std::optional<TimestampedValue> v, bool retry) {
  if (retry) return;  // the pending fetch stays and is resent
  auto it = fetch_by_key_.find(key);
  if (it == fetch_by_key_.end()) return;
  auto waiters = std::move(fetches_.at(it->second).waiters);
  fetches_.erase(it->second);
  fetch_by_key_.erase(it);
  for (auto& w : waiters) {
    complete_read(key, v);
    w(v);
  }
}

void Worker::on_fetch_resp(const rpc::FetchKeyResp& r) {
  auto it = fetches_.find(r.req);
  if (it == fetches_.end()) return;
  Key key = it->second.key;
  auto floor = read_floors_.find(key);
  switch (r.kind) {
    case rpc::FetchKeyResp::Kind::kValue: {
      Version ver = Version::of(r.value);
      if (floor != read_floors_.end() && ver < floor->second) return finish_read(key, {}, true);
      auto res = memtable_.apply(key, r.value, true);
      if (res == ApplyResult::kEvictionBlocked) {
        ++stats_.uncached_reads;
        read_floors_[key] = ver;
        return finish_read(key, r.value, false);
      }
      if (memtable_.needs_refresh(key)) return finish_read(key, {}, true);
      return finish_read(key, *memtable_.peek(key), false);
    }
    case rpc::FetchKeyResp::Kind::kCheckpoint:
      return load_checkpoint(r.checkpoint, key);
    case rpc::FetchKeyResp::Kind::kNull: {
      if (const auto* v = memtable_.peek(key)) return finish_read(key, *v, false);
      bool inconsistent = memtable_.needs_refresh(key) || floor != read_floors_.end();
      return finish_read(key, std::nullopt, inconsistent);
    }
  }
}

void Worker::load_checkpoint(const Digest& d, const Key& wanted) {
  auto& keys = checkpoint_loads_[d];
  if (std::find(keys.begin(), keys.end(), wanted) == keys.end()) keys.push_back(wanted);
  if (keys.size() > 1) return;
  ++stats_.checkpoint_fetches;
  NodeId psl = topo_->psl_db;
  storage_.fetch(
      d, [psl](const Envelope& e) { return e.ad.kind == BodyKind::kCheckpoint && e.ad.sender_id == psl; },
      [this, d](Envelope env) {
        auto wanted_keys = std::move(checkpoint_loads_[d]);
        checkpoint_loads_.erase(d);
        CheckpointBody body;
        try {
          body = decode_checkpoint(open(env, *keys_));
        } catch (const std::exception&) {
          ++stats_.validity_drops;
          return;  // pending fetches are resent
        }
        std::set<Key> wanted(wanted_keys.begin(), wanted_keys.end());
        std::map<Key, const TimestampedValue*> found;
        bool allow = allow_new();
        // Only the latest checkpoint is known to hold no stale entries.
        bool side_load = d == last_checkpoint_;
        for (const auto& e : body.entries) {
          bool is_wanted = wanted.count(e.key) != 0;
          if (!is_wanted && !side_load) continue;
          if (is_wanted) found[e.key] = &e.value;
          bool admit = is_wanted || (allow && memtable_.size() < memtable_.capacity());
          memtable_.apply(e.key, e.value, admit);
          memtable_.mark_covered(e.key, Version::of(e.value));
        }
        for (const auto& k : wanted_keys) {
          if (!fetch_by_key_.count(k)) continue;
          if (const auto* v = memtable_.peek(k); v && !memtable_.needs_refresh(k)) {
            finish_read(k, *v, false);
            continue;
          }
          auto f = found.find(k);
          if (f == found.end() || memtable_.needs_refresh(k)) continue;  // resent later
          Version ver = Version::of(*f->second);
          auto floor = read_floors_.find(k);
          if (floor != read_floors_.end() && ver < floor->second) continue;
          ++stats_.uncached_reads;
          read_floors_[k] = ver;
          finish_read(k, *f->second, false);
        }
      });
}

// --- control channel ---------------------------------------------------------------

void Worker::send_control(NodeId to, const rpc::ControlBody& body) {
  if (!keys_) return;
  auto ad_seq = storage_.next_req();
  Envelope env = seal(rpc::encode_control(body), {id(), ad_seq, BodyKind::kControl}, *keys_, false, *nonces_);
  send(to, rpc::Control{std::move(env)});
}

void Worker::on_control(NodeId, const Envelope& env) {
  if (!keys_) return;
  if (env.ad.kind != BodyKind::kControl) {
    ++stats_.validity_drops;
    return;
  }
  charge(costs().aead(env.ciphertext.size()));
  rpc::ControlBody body;
  try {
    body = rpc::decode_control(open(env, *keys_));
  } catch (const std::exception&) {
    ++stats_.validity_drops;
    return;
  }
  NodeId sender = env.ad.sender_id;
  if (sender == topo_->psl_db) {
    if (const auto* r = std::get_if<rpc::FetchKeyResp>(&body)) return on_fetch_resp(*r);
    if (const auto* g = std::get_if<rpc::LockGrant>(&body)) {
      auto it = acquiring_.find(g->lock_id);
      if (it == acquiring_.end() || it->second.req != g->req) return;
      auto done = std::move(it->second.done);
      acquiring_.erase(it);
      held_[g->lock_id] = g->grant_no;
      ++stats_.lock_grants;
      auto finish = [this, lock = g->lock_id, grant = g->grant_no, done = std::move(done)] {
        HistoryEvent ev;
        ev.kind = EventKind::kLockGrant;
        ev.lock = lock;
        ev.seq = grant;
        record(std::move(ev));
        if (done) done();
      };
      SyncReportBody r;
      if (g->report && open_report(*g->report, r) && r.seq > n_sr_) {
        std::uint64_t target = r.seq;
        reports_pending_.emplace(r.seq, std::make_pair(std::move(r), envelope_digest(*g->report)));
        report_waiters_.emplace_back(target, std::move(finish));
        drain_reports();
        return;
      }
      finish();
      return;
    }
    if (const auto* a = std::get_if<rpc::LockReleaseAck>(&body)) {
      releasing_.erase(a->req);
      return;
    }
  }
  if (sender == topo_->manager) {
    if (const auto* r = std::get_if<rpc::RunFunction>(&body)) on_run_function(*r);
  }
}

// --- locks ---------------------------------------------------------------------------

void Worker::acquire_lock(std::uint64_t lock_id, std::function<void()> done) {
  auto req = storage_.next_req();
  acquiring_[lock_id] = {req, std::move(done)};
  send_lock_acquire(lock_id);
}

void Worker::send_lock_acquire(std::uint64_t lock) {
  auto it = acquiring_.find(lock);
  if (it == acquiring_.end()) return;
  auto req = it->second.req;
  send_control(topo_->psl_db, rpc::LockAcquire{req, lock});
  after(cfg_.retry_interval, [this, lock, req] {
    auto cur = acquiring_.find(lock);
    if (cur != acquiring_.end() && cur->second.req == req) send_lock_acquire(lock);
  });
}

void Worker::release_lock(std::uint64_t lock_id) {
  auto it = held_.find(lock_id);
  if (it == held_.end()) return;
  auto grant = it->second;
  held_.erase(it);
  HistoryEvent ev;
  ev.kind = EventKind::kLockRelease;
  ev.lock = lock_id;
  ev.seq = grant;
  record(std::move(ev));
  auto req = storage_.next_req();
  releasing_[req] = {lock_id, grant, h_};
  send_lock_release(req);
}

void Worker::send_lock_release(std::uint64_t req) {
  auto it = releasing_.find(req);
  if (it == releasing_.end()) return;
  send_control(topo_->psl_db, rpc::LockRelease{req, it->second.lock, it->second.grant, it->second.tip});
  after(cfg_.retry_interval, [this, req] { send_lock_release(req); });
}

// --- functions -----------------------------------------------------------------------

void Worker::on_run_function(const rpc::RunFunction& r) {
  if (auto it = runs_.find(r.req); it != runs_.end()) {
    if (it->second.finished) send_control(topo_->manager, it->second.result);
    return;
  }
  runs_[r.req] = {};
  ++stats_.invocations;
  auto req = r.req;
  auto finish = [this, req](bool ok, Bytes result) {
    if (!alive_) return;
    Envelope env = seal_deterministic(encode_result(ok, result), {id(), req, BodyKind::kResult}, *keys_, false);
    storage_.store(id() | 0x4000'0000u, 0, std::move(env), [this, req, ok](const Digest& d) {
      auto& run = runs_[req];
      run.finished = true;
      run.result = rpc::FunctionDone{req, ok, d};
      send_control(topo_->manager, run.result);
    });
  };
  auto is_package = [](const Envelope& e) { return e.ad.kind == BodyKind::kPackage; };
  auto input_id = r.input_id;
  storage_.fetch_optional(r.code_id, is_package, [this, finish, input_id, is_package](std::optional<Envelope> code) {
    if (!code) return finish(false, to_bytes("unknown code"));
    storage_.fetch_optional(input_id, is_package, [this, finish, code](std::optional<Envelope> input) {
      if (!input) return finish(false, to_bytes("unknown input"));
      Bytes code_bytes, input_bytes;
      try {
        code_bytes = open(*code, *keys_);
        input_bytes = open(*input, *keys_);
      } catch (const std::exception&) {
        ++stats_.validity_drops;
        return finish(false, to_bytes("package rejected"));
      }
      const Handler* h = nullptr;
      if (handlers_) {
        auto it = handlers_->find(digest(code_bytes));
        if (it != handlers_->end()) h = &it->second;
      }
      if (h == nullptr) return finish(false, to_bytes("no handler for code"));
      auto inv = std::make_shared<Invocation>(Invocation{*this, std::move(input_bytes), finish});
      (*h)(inv);
    });
  });
}

// --- dispatch --------------------------------------------------------------------------

void Worker::receive(NodeId from, ByteView frame) {
  if (!alive_) return;
  rpc::Message msg;
  try {
    msg = rpc::parse(frame);
  } catch (const CodecError&) {
    ++stats_.malformed;
    return;
  }
  if (storage_.on_message(from, msg)) return;
  if (const auto* m = std::get_if<rpc::Multicast>(&msg)) return handle_multicast(m->envelope);
  if (const auto* m = std::get_if<rpc::SyncReport>(&msg)) return handle_sync_report(m->envelope);
  if (const auto* m = std::get_if<rpc::Control>(&msg)) return on_control(from, m->envelope);
  if (identity_) {
    auto reply = handle_provisioning(*identity_, msg, [this](KeyMaterial k) { provision(std::move(k)); });
    if (reply) send(from, *reply);
  }
}

}  // namespace psl
