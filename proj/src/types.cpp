#include "psl/types.hpp"

#include <algorithm>
#include <functional>
#include <string_view>

namespace psl {

std::size_t KeyHash::operator()(const Key& k) const noexcept {
  const auto& b = k.bytes();
  return std::hash<std::string_view>{}(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
}

void encode(Writer& w, const Key& k) {
  if (k.empty()) throw CodecError("empty key");
  w.bytes(k.bytes());
}

void encode(Writer& w, const TimestampedValue& v) {
  w.bytes(v.data);
  w.u64(v.ts);
}

void encode(Writer& w, const WriteSet& ws) {
  w.count(ws.size());
  for (const auto& e : ws) {
    encode(w, e.key);
    encode(w, e.value);
  }
}

void encode(Writer& w, const BlockBody& b) {
  w.u32(b.worker_id);
  w.u64(b.seq);
  w.digest(b.prev_hash);
  encode(w, b.writes);
}

void encode(Writer& w, const SyncReportBody& b) {
  w.count(b.digests.size());
  for (const auto& d : b.digests) {
    encode(w, d.key);
    w.u64(d.ts);
    w.digest(d.value_hash);
  }
  w.count(b.worker_vc.size());
  for (const auto& v : b.worker_vc) {
    w.u32(v.worker_id);
    w.u64(v.seq);
  }
  w.u64(b.seq);
  w.digest(b.prev_hash);
  w.digest(b.checkpoint_hash);
}

void encode(Writer& w, const CheckpointBody& b) {
  w.count(b.entries.size());
  for (const auto& e : b.entries) {
    encode(w, e.key);
    encode(w, e.value);
  }
  w.u64(b.seq);
}

void encode(Writer& w, const LevelRangeBody& b) {
  w.count(b.entries.size());
  for (const auto& e : b.entries) {
    encode(w, e.key);
    w.digest(e.checkpoint);
    w.u64(e.ts);
    w.digest(e.value_hash);
  }
}

void encode(Writer& w, const ManifestBody& b) {
  w.u64(b.seq);
  w.digest(b.report_hash);
  w.bytes(b.report_envelope);
  w.count(b.worker_vc.size());
  for (const auto& v : b.worker_vc) {
    w.u32(v.worker_id);
    w.u64(v.seq);
  }
  w.count(b.worker_tips.size());
  for (const auto& d : b.worker_tips) w.digest(d);
  w.count(b.level1.size());
  for (const auto& d : b.level1) w.digest(d);
  w.count(b.level2.size());
  for (const auto& r : b.level2) {
    encode(w, r.first_key);
    w.digest(r.digest);
  }
}

Key decode_key(Reader& r) {
  auto b = r.bytes();
  if (b.empty() || b.size() > kMaxKeyBytes) throw CodecError("key length out of range");
  return Key(std::move(b));
}

TimestampedValue decode_value(Reader& r) {
  TimestampedValue v;
  v.data = r.bytes();
  v.ts = r.u64();
  return v;
}

namespace {

template <typename T, typename KeyOf>
void require_sorted_unique(const std::vector<T>& items, KeyOf key_of, const char* what) {
  for (std::size_t i = 1; i < items.size(); ++i) {
    if (!(key_of(items[i - 1]) < key_of(items[i]))) throw CodecError(std::string(what) + " not sorted/unique");
  }
}

}  // namespace

WriteSet decode_write_set(Reader& r) {
  auto n = r.count(13);
  WriteSet ws;
  ws.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto k = decode_key(r);
    auto v = decode_value(r);
    ws.push_back({std::move(k), std::move(v)});
  }
  std::vector<const Key*> keys;
  keys.reserve(ws.size());
  for (const auto& e : ws) keys.push_back(&e.key);
  std::sort(keys.begin(), keys.end(), [](const Key* a, const Key* b) { return *a < *b; });
  for (std::size_t i = 1; i < keys.size(); ++i) {
    if (*keys[i - 1] == *keys[i]) throw CodecError("duplicate key in write set");
  }
  return ws;
}

BlockBody decode_block(Reader& r) {
  BlockBody b;
  b.worker_id = r.u32();
  b.seq = r.u64();
  b.prev_hash = r.digest();
  b.writes = decode_write_set(r);
  return b;
}

SyncReportBody decode_sync_report(Reader& r) {
  SyncReportBody b;
  auto n = r.count(45);
  b.digests.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    KeyDigest d;
    d.key = decode_key(r);
    d.ts = r.u64();
    d.value_hash = r.digest();
    b.digests.push_back(std::move(d));
  }
  auto m = r.count(12);
  for (std::uint32_t i = 0; i < m; ++i) {
    WorkerSeq v;
    v.worker_id = r.u32();
    v.seq = r.u64();
    b.worker_vc.push_back(v);
  }
  b.seq = r.u64();
  b.prev_hash = r.digest();
  b.checkpoint_hash = r.digest();
  require_sorted_unique(b.digests, [](const KeyDigest& d) -> const Key& { return d.key; }, "sync report digests");
  require_sorted_unique(b.worker_vc, [](const WorkerSeq& v) { return v.worker_id; }, "worker_vc");
  return b;
}

CheckpointBody decode_checkpoint(Reader& r) {
  CheckpointBody b;
  auto n = r.count(13);
  b.entries.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto k = decode_key(r);
    auto v = decode_value(r);
    b.entries.push_back({std::move(k), std::move(v)});
  }
  b.seq = r.u64();
  require_sorted_unique(b.entries, [](const WriteEntry& e) -> const Key& { return e.key; }, "checkpoint entries");
  return b;
}

LevelRangeBody decode_level_range(Reader& r) {
  LevelRangeBody b;
  auto n = r.count(77);
  b.entries.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    LevelRangeEntry e;
    e.key = decode_key(r);
    e.checkpoint = r.digest();
    e.ts = r.u64();
    e.value_hash = r.digest();
    b.entries.push_back(std::move(e));
  }
  require_sorted_unique(b.entries, [](const LevelRangeEntry& e) -> const Key& { return e.key; }, "level range");
  return b;
}

ManifestBody decode_manifest(Reader& r) {
  ManifestBody b;
  b.seq = r.u64();
  b.report_hash = r.digest();
  b.report_envelope = r.bytes();
  auto m = r.count(12);
  for (std::uint32_t i = 0; i < m; ++i) {
    WorkerSeq v;
    v.worker_id = r.u32();
    v.seq = r.u64();
    b.worker_vc.push_back(v);
  }
  auto nt = r.count(32);
  if (nt != m) throw CodecError("worker tips do not match vector clock");
  for (std::uint32_t i = 0; i < nt; ++i) b.worker_tips.push_back(r.digest());
  auto l1 = r.count(32);
  for (std::uint32_t i = 0; i < l1; ++i) b.level1.push_back(r.digest());
  auto l2 = r.count(37);
  for (std::uint32_t i = 0; i < l2; ++i) {
    RangeRef ref;
    ref.first_key = decode_key(r);
    ref.digest = r.digest();
    b.level2.push_back(std::move(ref));
  }
  return b;
}

}  // namespace psl
