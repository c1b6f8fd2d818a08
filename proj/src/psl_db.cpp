#include "psl/psl_db.hpp"

#include <algorithm>

namespace psl {

PslDb::PslDb(NodeId id, std::shared_ptr<const Topology> topo, PslDbConfig cfg)
    : Node(id), topo_(std::move(topo)), cfg_(cfg), storage_(id, topo_, cfg.retry_interval) {}

void PslDb::start() {
  ++boots_;
  started_ = true;
  storage_.attach(&rt(), (boots_ << 48) | (static_cast<std::uint64_t>(id()) << 32) | 1);
  nonces_ = rt().deterministic() ? NonceSource::seeded(rt().seed(), (boots_ << 32) | id()) : NonceSource::os_entropy();
  grant_counter_ = boots_ << 32;
  arm_timer();
  if (keys_) enqueue([this](Done d) { recover(std::move(d)); });
}

void PslDb::provision(KeyMaterial keys) {
  if (keys_) return;
  keys_ = std::move(keys);
  if (started_) enqueue([this](Done d) { recover(std::move(d)); });
}

// Application keys survive a crash: a restarted enclave unseals them from
// its platform instead of being provisioned again.
void PslDb::crash() {
  ++epoch_;
  started_ = false;
  ready_ = false;
  storage_.reset();
  tasks_.clear();
  busy_ = false;
  pumping_ = false;
  round_queued_ = false;
  memtable_.clear();
  vc_.clear();
  tips_.clear();
  ingested_.clear();
  gc_floor_.clear();
  checkpoint_vc_.clear();
  digest_index_.clear();
  n_ = 0;
  h_ = {};
  last_report_.reset();
  level1_.clear();
  level2_.clear();
  range_loads_.clear();
  deferred_fetches_.clear();
  locks_.clear();
}

void PslDb::restart() { start(); }

void PslDb::arm_timer() {
  if (cfg_.checkpoint_interval == 0) return;
  after(cfg_.checkpoint_interval, [this, e = epoch_] {
    if (e != epoch_) return;
    if (ready_) maybe_trigger_round();
    arm_timer();
  });
}

// --- task queue -------------------------------------------------------------------

void PslDb::enqueue(Task t) {
  tasks_.push_back(std::move(t));
  pump();
}

void PslDb::pump() {
  if (pumping_) return;
  pumping_ = true;
  while (!busy_ && !tasks_.empty()) {
    Task t = std::move(tasks_.front());
    tasks_.pop_front();
    busy_ = true;
    t([this, e = epoch_] {
      if (e != epoch_) return;
      busy_ = false;
      pump();
    });
  }
  pumping_ = false;
}

void PslDb::maybe_trigger_round() {
  if (round_queued_) return;
  round_queued_ = true;
  enqueue([this](Done d) {
    round_queued_ = false;
    run_round(std::move(d), true);
  });
}

void PslDb::checkpoint_round(Done done) {
  enqueue([this, done = std::move(done)](Done d) {
    run_round(
        [done, d] {
          if (done) done();
          d();
        },
        true);
  });
}

void PslDb::ingest_multicast(const Envelope& env, Done done) {
  enqueue([this, env, done = std::move(done)](Done d) {
    ingest_envelope(env, [done, d] {
      if (done) done();
      d();
    });
  });
}

// --- ingest -----------------------------------------------------------------------

bool PslDb::open_block(const Envelope& env, BlockBody& out) {
  if (!keys_ || env.ad.kind != BodyKind::kBlock) {
    ++stats_.validity_drops;
    return false;
  }
  charge(costs().aead(env.ciphertext.size()) + (env.signature ? costs().verify : 0.0));
  try {
    out = decode_block(open(env, *keys_));
  } catch (const std::exception&) {
    ++stats_.validity_drops;
    return false;
  }
  if (out.worker_id != env.ad.sender_id || out.seq != env.ad.seq) {
    ++stats_.validity_drops;
    return false;
  }
  return true;
}

void PslDb::ingest_envelope(const Envelope& env, Done done) {
  BlockBody body;
  if (!open_block(env, body)) return done();
  auto cur = vc_.count(body.worker_id) ? vc_[body.worker_id] : 0;
  if (body.seq <= cur) return done();
  auto chain = std::make_shared<std::vector<std::pair<BlockBody, Digest>>>();
  chain->emplace_back(std::move(body), envelope_digest(env));
  backfill(std::move(chain), std::move(done));
}

// Walks prev_hash pointers back to the first block after the worker's
// current cut, then ingests the whole chain oldest first.
void PslDb::backfill(std::shared_ptr<std::vector<std::pair<BlockBody, Digest>>> chain, Done done) {
  const BlockBody& last = chain->back().first;
  WorkerId w = last.worker_id;
  auto cur = vc_.count(w) ? vc_[w] : 0;
  if (last.seq <= cur + 1) {
    std::vector<Key> keys;
    for (const auto& [b, d] : *chain) {
      for (const auto& e : b.writes) keys.push_back(e.key);
    }
    ensure_ranges(keys, [this, chain, done] {
      for (auto it = chain->rbegin(); it != chain->rend(); ++it) {
        auto now_vc = vc_.count(it->first.worker_id) ? vc_[it->first.worker_id] : 0;
        if (it->first.seq <= now_vc) continue;
        ingest_block(it->first, it->second);
      }
      done();
    });
    return;
  }
  ++stats_.backfill_fetches;
  std::uint64_t want = last.seq - 1;
  storage_.fetch(
      last.prev_hash,
      [w, want](const Envelope& e) {
        return e.ad.kind == BodyKind::kBlock && e.ad.sender_id == w && e.ad.seq == want;
      },
      [this, chain, done](Envelope e) {
        BlockBody b;
        if (!open_block(e, b)) return done();
        chain->emplace_back(std::move(b), envelope_digest(e));
        backfill(chain, done);
      });
}

void PslDb::ingest_block(const BlockBody& body, const Digest& d) {
  WorkerId w = body.worker_id;
  auto& vc = vc_[w];
  Digest expected_prev = vc == 0 ? Digest{} : tips_[w];
  if (body.seq != vc + 1 || body.prev_hash != expected_prev) {
    ++stats_.cut_violations;
    return;
  }
  for (const auto& e : body.writes) merge_write(e.key, e.value);
  charge(costs().kv_op * static_cast<double>(body.writes.size()));
  vc = body.seq;
  tips_[w] = d;
  ingested_[w][body.seq] = {d, body.prev_hash};
  digest_index_[d] = {w, body.seq};
  ++stats_.ingested_blocks;
  audit();
  if (memtable_.size() >= cfg_.checkpoint_threshold) maybe_trigger_round();
}

void PslDb::audit() {
  if (!cfg_.audit_cut) return;
  ++stats_.cut_audits;
  if (!cut_closed()) ++stats_.cut_audit_failures;
}

void PslDb::merge_write(const Key& key, const TimestampedValue& v) {
  HashedValue hv = HashedValue::of(v);
  charge(costs().hash(v.data.size()));
  if (auto it = memtable_.find(key); it != memtable_.end()) {
    if (it->second.version <= hv.version) {
      it->second = std::move(hv);
    } else {
      ++stats_.dominated_writes;
    }
    return;
  }
  if (auto held = lsm_version(key); held && hv.version <= *held) {
    ++stats_.dominated_writes;
    return;
  }
  memtable_.emplace(key, std::move(hv));
}

std::optional<Version> PslDb::lsm_version(const Key& key) const {
  for (auto it = level1_.rbegin(); it != level1_.rend(); ++it) {
    if (auto f = it->index.find(key); f != it->index.end()) return f->second;
  }
  if (const auto* e = level2_entry(key)) return e->version;
  return std::nullopt;
}

// --- level 2 ----------------------------------------------------------------------

std::map<Key, PslDb::Level2Range>::iterator PslDb::range_owner(const Key& key) {
  auto it = level2_.upper_bound(key);
  if (it != level2_.begin()) --it;
  return it;
}

const PslDb::L2Entry* PslDb::level2_entry(const Key& key) const {
  auto it = level2_.upper_bound(key);
  if (it == level2_.begin()) return nullptr;
  --it;
  if (!it->second.cached) return nullptr;
  auto f = it->second.cached->find(key);
  return f == it->second.cached->end() ? nullptr : &f->second;
}

std::optional<Digest> PslDb::level2_lookup(const Key& key) const {
  if (const auto* e = level2_entry(key)) return e->checkpoint;
  return std::nullopt;
}

std::size_t PslDb::level2_keys() const {
  std::size_t n = 0;
  for (const auto& [k, r] : level2_) n += r.cached ? r.cached->size() : 0;
  return n;
}

void PslDb::ensure_ranges(const std::vector<Key>& keys, Done done) {
  std::set<Digest> need;
  if (!level2_.empty()) {
    for (const auto& k : keys) {
      auto it = range_owner(k);
      if (!it->second.cached) need.insert(it->second.digest);
    }
  }
  if (need.empty()) return done();
  auto remaining = std::make_shared<std::size_t>(need.size());
  for (const auto& d : need) {
    load_range(d, [remaining, done] {
      if (--*remaining == 0) done();
    });
  }
}

void PslDb::load_range(const Digest& d, Done done) {
  auto& waiters = range_loads_[d];
  waiters.push_back(std::move(done));
  if (waiters.size() > 1) return;
  ++stats_.range_loads;
  NodeId self = id();
  storage_.fetch(
      d, [self](const Envelope& e) { return e.ad.kind == BodyKind::kLevelRange && e.ad.sender_id == self; },
      [this, d](Envelope env) {
        auto waiting = std::move(range_loads_[d]);
        range_loads_.erase(d);
        try {
          auto body = decode_level_range(open(env, *keys_));
          charge(costs().aead(env.ciphertext.size()));
          if (!body.entries.empty()) {
            auto it = level2_.find(body.entries.front().key);
            if (it != level2_.end() && it->second.digest == d && !it->second.cached) {
              std::map<Key, L2Entry> m;
              for (auto& e : body.entries) m.emplace(std::move(e.key), L2Entry{e.checkpoint, {e.ts, e.value_hash}});
              it->second.cached = std::move(m);
              it->second.touched = ++range_tick_;
            }
          }
        } catch (const std::exception&) {
          ++stats_.validity_drops;
        }
        for (auto& w : waiting) w();
        trim_range_cache();
      });
}

void PslDb::trim_range_cache() {
  if (cfg_.range_cache == 0) return;
  std::vector<std::pair<std::uint64_t, Level2Range*>> cached;
  for (auto& [k, r] : level2_) {
    if (r.cached) cached.emplace_back(r.touched, &r);
  }
  if (cached.size() <= cfg_.range_cache) return;
  std::sort(cached.begin(), cached.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i + cfg_.range_cache < cached.size(); ++i) cached[i].second->cached.reset();
}

// Merges the oldest ceil(L1/2) level-1 checkpoints into level-2 ranges;
// every range that changes is re-split to at most range_max keys and stored
// again before the manifest can refer to it.
void PslDb::compact_level1(Done done) {
  std::size_t count = std::min(level1_.size(), (cfg_.level1_max + 1) / 2);
  std::vector<Key> keys;
  for (std::size_t i = 0; i < count; ++i) {
    for (const auto& [k, v] : level1_[i].index) keys.push_back(k);
  }
  ensure_ranges(keys, [this, count, done] {
    std::map<Key, L2Entry> updates;
    for (std::size_t i = 0; i < count; ++i) {
      for (const auto& [k, ver] : level1_[i].index) {
        L2Entry e{level1_[i].digest, ver};
        auto [it, fresh] = updates.try_emplace(k, e);
        if (!fresh && it->second.version <= ver) it->second = e;
      }
    }
    std::map<Key, std::map<Key, L2Entry>> groups;  // owning range's first key -> merged contents
    for (const auto& [k, e] : updates) {
      Key owner = level2_.empty() ? updates.begin()->first : range_owner(k)->first;
      auto g = groups.find(owner);
      if (g == groups.end()) {
        g = groups.emplace(owner, std::map<Key, L2Entry>{}).first;
        if (auto r = level2_.find(owner); r != level2_.end() && r->second.cached) g->second = *r->second.cached;
      }
      auto [it, fresh] = g->second.try_emplace(k, e);
      if (!fresh && it->second.version <= e.version) it->second = e;
    }
    std::vector<Envelope> to_store;
    std::size_t range_max = std::max<std::size_t>(1, cfg_.range_max);
    for (auto& [owner, entries] : groups) {
      level2_.erase(owner);
      std::size_t parts = (entries.size() + range_max - 1) / range_max;
      std::size_t per = (entries.size() + parts - 1) / parts;
      auto it = entries.begin();
      while (it != entries.end()) {
        LevelRangeBody body;
        std::map<Key, L2Entry> chunk;
        for (std::size_t j = 0; j < per && it != entries.end(); ++j, ++it) {
          body.entries.push_back({it->first, it->second.checkpoint, it->second.version.ts, it->second.version.hash});
          chunk.emplace(it->first, it->second);
        }
        Envelope env = seal_deterministic(canonical_encode(body), {id(), 0, BodyKind::kLevelRange}, *keys_, false);
        charge(costs().aead(env.ciphertext.size()));
        Key first = chunk.begin()->first;
        level2_[first] = Level2Range{envelope_digest(env), std::move(chunk), ++range_tick_};
        to_store.push_back(std::move(env));
      }
    }
    level1_.erase(level1_.begin(), level1_.begin() + static_cast<std::ptrdiff_t>(count));
    ++stats_.compactions;
    if (to_store.empty()) return done();
    auto remaining = std::make_shared<std::size_t>(to_store.size());
    for (auto& env : to_store) {
      storage_.store(id(), 0, std::move(env), [this, remaining, done](const Digest&) {
        if (--*remaining != 0) return;
        trim_range_cache();
        done();
      });
    }
  });
}

// --- checkpoint rounds ------------------------------------------------------------

void PslDb::poll_workers(Done done) {
  std::set<WorkerId> ws(topo_->workers.begin(), topo_->workers.end());
  for (const auto& [w, s] : vc_) ws.insert(w);
  if (ws.empty()) return done();
  auto remaining = std::make_shared<std::size_t>(ws.size());
  auto one = [remaining, done] {
    if (--*remaining == 0) done();
  };
  for (auto w : ws) {
    storage_.poll_recent(w, [this, w, one](std::vector<Envelope> envs) {
      const Envelope* best = nullptr;
      for (const auto& e : envs) {
        if (e.ad.kind != BodyKind::kBlock || e.ad.sender_id != w) continue;
        if (best == nullptr || e.ad.seq > best->ad.seq) best = &e;
      }
      auto cur = vc_.count(w) ? vc_[w] : 0;
      if (best == nullptr || best->ad.seq <= cur) return one();
      ingest_envelope(*best, one);
    });
  }
}

// Timer rounds first poll every worker's stream for blocks whose multicast
// was lost. A round with nothing new re-sends the last report instead, for
// workers that missed it.
void PslDb::run_round(Done done, bool poll) {
  if (!keys_) return done();
  auto body = [this, done] {
    if (memtable_.empty()) {
      ++stats_.skipped_rounds;
      if (last_report_) multicast(topo_->workers, rpc::SyncReport{*last_report_});
      return done();
    }
    std::uint64_t seq = n_ + 1;
    CheckpointBody cb;
    cb.seq = seq;
    cb.entries.reserve(memtable_.size());
    for (const auto& [k, hv] : memtable_) cb.entries.push_back({k, hv.value});
    Envelope ckpt = seal(canonical_encode(cb), {id(), seq, BodyKind::kCheckpoint}, *keys_, false, *nonces_);
    charge(costs().aead(ckpt.ciphertext.size()));
    Digest hc = envelope_digest(ckpt);
    storage_.store(id(), 0, std::move(ckpt), [this, hc, done](const Digest&) { finish_round(hc, done); });
  };
  if (poll) {
    poll_workers(body);
  } else {
    body();
  }
}

void PslDb::finish_round(const Digest& checkpoint_hash, Done done) {
  std::uint64_t seq = n_ + 1;
  SyncReportBody r;
  r.seq = seq;
  r.prev_hash = h_;
  r.checkpoint_hash = checkpoint_hash;
  r.digests.reserve(memtable_.size());
  Level1Entry l1{checkpoint_hash, {}};
  for (const auto& [k, hv] : memtable_) {
    r.digests.push_back({k, hv.version.ts, hv.version.hash});
    l1.index.emplace(k, hv.version);
  }
  for (const auto& [w, s] : vc_) r.worker_vc.push_back({w, s});
  Envelope report = seal(canonical_encode(r), {id(), seq, BodyKind::kSyncReport}, *keys_, true, *nonces_);
  charge(costs().sign + costs().aead(report.ciphertext.size()));
  ++stats_.signatures;
  Digest dr = envelope_digest(report);

  auto publish = [this, seq, dr, report = std::move(report), l1 = std::move(l1), done]() mutable {
    level1_.push_back(std::move(l1));
    ManifestBody m;
    m.seq = seq;
    m.report_hash = dr;
    m.report_envelope = encode_envelope(report);
    for (const auto& [w, s] : vc_) {
      m.worker_vc.push_back({w, s});
      m.worker_tips.push_back(tips_[w]);
    }
    for (const auto& e : level1_) m.level1.push_back(e.digest);
    for (const auto& [k, rg] : level2_) m.level2.push_back({k, rg.digest});
    Envelope me = seal(canonical_encode(m), {id(), seq, BodyKind::kManifest}, *keys_, false, *nonces_);
    charge(costs().aead(me.ciphertext.size()));
    storage_.store(topo_->manifest_stream(), seq, std::move(me),
                   [this, seq, dr, report = std::move(report), done](const Digest&) {
                     n_ = seq;
                     h_ = dr;
                     last_report_ = report;
                     memtable_.clear();
                     checkpoint_vc_ = vc_;
                     ++stats_.rounds;
                     multicast(topo_->workers, rpc::SyncReport{report});
                     storage_.store(topo_->report_stream(), seq, report, {});
                     if (cfg_.gc && keys_->app_sign_key) {
                       auto list = issue_gc();
                       if (!list.empty()) storage_.gc(std::move(list), *keys_->app_sign_key);
                     }
                     done();
                   });
  };
  if (cfg_.level1_max > 0 && level1_.size() >= cfg_.level1_max) {
    compact_level1(std::move(publish));
  } else {
    publish();
  }
}

std::vector<Digest> PslDb::issue_gc() {
  std::vector<Digest> out;
  for (auto& [w, blocks] : ingested_) {
    auto c = checkpoint_vc_.find(w);
    if (c == checkpoint_vc_.end()) continue;
    auto cut = c->second;
    for (auto it = blocks.begin(); it != blocks.end() && it->first < cut;) {
      out.push_back(it->second.digest);
      digest_index_.erase(it->second.digest);
      gc_floor_[w] = std::max(gc_floor_[w], it->first);
      it = blocks.erase(it);
    }
  }
  stats_.gc_listed += out.size();
  if (!out.empty()) audit();
  return out;
}

bool PslDb::cut_closed() const {
  for (const auto& [w, blocks] : ingested_) {
    auto floor_it = gc_floor_.find(w);
    std::uint64_t floor = floor_it == gc_floor_.end() ? 0 : floor_it->second;
    for (const auto& [seq, b] : blocks) {
      if (seq == 1) {
        if (b.prev != Digest{}) return false;
        continue;
      }
      auto prev = blocks.find(seq - 1);
      if (prev != blocks.end()) {
        if (prev->second.digest != b.prev) return false;
      } else if (seq - 1 > floor) {
        return false;
      }
    }
    auto vc = vc_.find(w);
    if (!blocks.empty() && (vc == vc_.end() || vc->second != blocks.rbegin()->first)) return false;
  }
  return true;
}

std::vector<Digest> PslDb::level1_digests() const {
  std::vector<Digest> out;
  for (const auto& e : level1_) out.push_back(e.digest);
  return out;
}

// --- recovery ---------------------------------------------------------------------

void PslDb::recover(Done done) {
  ready_ = false;
  NodeId self = id();
  storage_.poll_recent(topo_->manifest_stream(), [this, self, done](std::vector<Envelope> envs) {
    std::optional<ManifestBody> best;
    for (const auto& e : envs) {
      if (e.ad.kind != BodyKind::kManifest || e.ad.sender_id != self) continue;
      try {
        auto m = decode_manifest(open(e, *keys_));
        if (m.seq != e.ad.seq) continue;
        if (!best || m.seq > best->seq) best = std::move(m);
      } catch (const std::exception&) {
        ++stats_.validity_drops;
      }
    }
    if (!best) {
      become_ready();
      return done();
    }
    ++stats_.recoveries;
    load_manifest(*best, [this, done] {
      poll_workers([this, done] {
        become_ready();
        done();
      });
    });
  });
}

void PslDb::load_manifest(const ManifestBody& m, Done done) {
  n_ = m.seq;
  h_ = m.report_hash;
  last_report_ = decode_envelope(m.report_envelope);
  for (std::size_t i = 0; i < m.worker_vc.size(); ++i) {
    vc_[m.worker_vc[i].worker_id] = m.worker_vc[i].seq;
    tips_[m.worker_vc[i].worker_id] = m.worker_tips[i];
    gc_floor_[m.worker_vc[i].worker_id] = m.worker_vc[i].seq;
    checkpoint_vc_[m.worker_vc[i].worker_id] = m.worker_vc[i].seq;
  }
  // The report may not have reached its quorum before the crash.
  storage_.store(topo_->report_stream(), n_, *last_report_, {});
  for (const auto& ref : m.level2) level2_[ref.first_key] = Level2Range{ref.digest, std::nullopt, 0};

  auto loaded = std::make_shared<std::vector<std::optional<Level1Entry>>>(m.level1.size());
  auto finish = [this, loaded, done] {
    for (auto& e : *loaded) level1_.push_back(std::move(*e));
    if (cfg_.range_cache != 0 || level2_.empty()) return done();
    std::vector<Key> firsts;
    for (const auto& [k, r] : level2_) firsts.push_back(k);
    ensure_ranges(firsts, done);
  };
  if (m.level1.empty()) return finish();
  auto remaining = std::make_shared<std::size_t>(m.level1.size());
  NodeId self = id();
  for (std::size_t i = 0; i < m.level1.size(); ++i) {
    Digest d = m.level1[i];
    storage_.fetch(
        d, [self](const Envelope& e) { return e.ad.kind == BodyKind::kCheckpoint && e.ad.sender_id == self; },
        [this, loaded, remaining, finish, i, d](Envelope env) {
          Level1Entry entry{d, {}};
          try {
            auto body = decode_checkpoint(open(env, *keys_));
            for (const auto& e : body.entries) entry.index.emplace(e.key, Version::of(e.value));
          } catch (const std::exception&) {
            ++stats_.validity_drops;
          }
          (*loaded)[i] = std::move(entry);
          if (--*remaining == 0) finish();
        });
  }
}

void PslDb::become_ready() {
  ready_ = true;
  auto pending = std::move(deferred_fetches_);
  deferred_fetches_.clear();
  for (const auto& [to, req, key] : pending) answer_fetch(to, req, key);
}

// --- reads ------------------------------------------------------------------------

std::optional<FetchAnswer> PslDb::fetch_key(const Key& key) {
  FetchAnswer a;
  if (auto it = memtable_.find(key); it != memtable_.end()) {
    a.kind = rpc::FetchKeyResp::Kind::kValue;
    a.value = it->second.value;
    return a;
  }
  for (auto it = level1_.rbegin(); it != level1_.rend(); ++it) {
    if (it->index.count(key)) {
      a.kind = rpc::FetchKeyResp::Kind::kCheckpoint;
      a.checkpoint = it->digest;
      return a;
    }
  }
  auto it = level2_.upper_bound(key);
  if (it == level2_.begin()) return a;
  --it;
  if (!it->second.cached) return std::nullopt;
  it->second.touched = ++range_tick_;
  if (auto f = it->second.cached->find(key); f != it->second.cached->end()) {
    a.kind = rpc::FetchKeyResp::Kind::kCheckpoint;
    a.checkpoint = f->second.checkpoint;
  }
  return a;
}

void PslDb::answer_fetch(NodeId to, std::uint64_t req, const Key& key) {
  charge(costs().kv_op);
  if (auto a = fetch_key(key)) {
    send_control(to, rpc::FetchKeyResp{req, a->kind, std::move(a->value), a->checkpoint});
    return;
  }
  load_range(range_owner(key)->second.digest, [this, to, req, key] { answer_fetch(to, req, key); });
}

// --- control channel --------------------------------------------------------------

void PslDb::send_control(NodeId to, const rpc::ControlBody& body) {
  if (!keys_) return;
  Envelope env =
      seal(rpc::encode_control(body), {id(), storage_.next_req(), BodyKind::kControl}, *keys_, false, *nonces_);
  charge(costs().aead(env.ciphertext.size()));
  send(to, rpc::Control{std::move(env)});
}

void PslDb::on_control(const Envelope& env) {
  if (!keys_ || env.ad.kind != BodyKind::kControl) {
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
  if (const auto* f = std::get_if<rpc::FetchKey>(&body)) {
    ++stats_.fetch_requests;
    if (!ready_) {
      deferred_fetches_.emplace_back(sender, f->req, f->key);
      return;
    }
    return answer_fetch(sender, f->req, f->key);
  }
  if (!ready_) return;  // lock clients retry
  if (const auto* a = std::get_if<rpc::LockAcquire>(&body)) return on_lock_acquire(sender, *a);
  if (const auto* r = std::get_if<rpc::LockRelease>(&body)) return on_lock_release(sender, *r);
}

// --- locks ------------------------------------------------------------------------

std::optional<NodeId> PslDb::lock_holder(std::uint64_t lock) const {
  auto it = locks_.find(lock);
  if (it == locks_.end() || !it->second.holder) return std::nullopt;
  return it->second.holder->worker;
}

void PslDb::grant(std::uint64_t lock, const Waiter& w) {
  auto& L = locks_[lock];
  L.holder = w;
  L.grant_no = ++grant_counter_;
  ++stats_.lock_grants;
  send_control(w.worker, rpc::LockGrant{w.req, lock, L.grant_no, last_report_});
}

void PslDb::on_lock_acquire(NodeId w, const rpc::LockAcquire& a) {
  auto& L = locks_[a.lock_id];
  if (L.holder && L.holder->worker == w) {
    if (L.holder->req == a.req) send_control(w, rpc::LockGrant{a.req, a.lock_id, L.grant_no, last_report_});
    return;
  }
  for (auto& x : L.waiters) {
    if (x.worker == w) {
      x.req = a.req;
      return;
    }
  }
  if (!L.holder && !L.barrier && L.waiters.empty()) return grant(a.lock_id, {w, a.req});
  L.waiters.push_back({w, a.req});
}

// A release is a barrier: the holder's writes up to its tip are ingested
// and published in a Sync Report before the next grant, which carries it.
void PslDb::on_lock_release(NodeId w, const rpc::LockRelease& r) {
  auto& L = locks_[r.lock_id];
  rpc::LockReleaseAck ack{r.req, r.lock_id, r.grant_no};
  if (L.holder && L.holder->worker == w && L.grant_no == r.grant_no) {
    L.holder.reset();
    L.released.insert(r.grant_no);
    L.barrier = true;
    send_control(w, ack);
    std::uint64_t lock = r.lock_id;
    Digest tip = r.tip;
    enqueue([this, w, lock, tip](Done d) {
      ensure_ingested(w, tip, [this, lock, d] {
        run_round(
            [this, lock, d] {
              auto& st = locks_[lock];
              st.barrier = false;
              if (!st.holder && !st.waiters.empty()) {
                Waiter next = st.waiters.front();
                st.waiters.pop_front();
                grant(lock, next);
              }
              d();
            },
            false);
      });
    });
    return;
  }
  if (L.released.count(r.grant_no) == 0) ++stats_.release_violations;
  send_control(w, ack);  // stop the client's retries either way
}

void PslDb::ensure_ingested(NodeId w, const Digest& tip, Done done) {
  if (tip == Digest{} || digest_index_.count(tip) != 0) return done();
  if (auto t = tips_.find(w); t != tips_.end() && t->second == tip) return done();
  storage_.fetch(
      tip, [w](const Envelope& e) { return e.ad.kind == BodyKind::kBlock && e.ad.sender_id == w; },
      [this, done](Envelope e) { ingest_envelope(e, done); });
}

// --- dispatch ---------------------------------------------------------------------

void PslDb::receive(NodeId from, ByteView frame) {
  rpc::Message msg;
  try {
    msg = rpc::parse(frame);
  } catch (const CodecError&) {
    ++stats_.validity_drops;
    return;
  }
  if (storage_.on_message(from, msg)) return;
  if (const auto* m = std::get_if<rpc::Multicast>(&msg)) {
    if (keys_) ingest_multicast(m->envelope);
    return;
  }
  if (const auto* m = std::get_if<rpc::Control>(&msg)) return on_control(m->envelope);
  if (identity_) {
    auto reply = handle_provisioning(*identity_, msg, [this](KeyMaterial k) { provision(std::move(k)); });
    if (reply) send(from, *reply);
  }
}

}  // namespace psl
