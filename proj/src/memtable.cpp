#include "psl/memtable.hpp"

namespace psl {

void TransactionBuffer::write(const Key& key, Bytes value) {
  if (value.size() > max_value_) throw ValueTooLarge();
  auto it = index_.find(key);
  if (it != index_.end()) {
    staged_[it->second].second = std::move(value);
    return;
  }
  index_.emplace(key, staged_.size());
  staged_.emplace_back(key, std::move(value));
}

void TransactionBuffer::clear() {
  staged_.clear();
  index_.clear();
}

bool Memtable::is_evictable(const Entry& e) const {
  if (!e.value) return true;  // a refresh marker's floor came from a report
  return e.coverage && e.version <= *e.coverage;
}

void Memtable::refresh_evictable(const Key& key, Entry& e) {
  const Key* kp = &entries_.find(key)->first;
  bool now = is_evictable(e);
  if (now == e.evictable) return;
  if (e.evictable) {
    evictable_.erase({e.touched, kp});
  } else {
    evictable_.insert({e.touched, kp});
  }
  e.evictable = now;
}

void Memtable::touch(const Key& key, Entry& e) {
  const Key* kp = &entries_.find(key)->first;
  if (e.evictable) evictable_.erase({e.touched, kp});
  e.touched = ++tick_;
  if (e.evictable) evictable_.insert({e.touched, kp});
}

const TimestampedValue* Memtable::get(const Key& key) {
  auto it = entries_.find(key);
  if (it == entries_.end() || !it->second.value) return nullptr;
  touch(key, it->second);
  return &*it->second.value;
}

const TimestampedValue* Memtable::peek(const Key& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end() || !it->second.value) return nullptr;
  return &*it->second.value;
}

bool Memtable::needs_refresh(const Key& key) const {
  auto it = entries_.find(key);
  return it != entries_.end() && !it->second.value;
}

bool Memtable::over_budget(std::size_t extra_entries, std::size_t extra_bytes) const {
  if (entries_.size() + extra_entries > cfg_.capacity) return true;
  return cfg_.byte_budget != 0 && bytes_ + extra_bytes > cfg_.byte_budget;
}

bool Memtable::evict_one() {
  if (evictable_.empty()) return false;
  auto victim = evictable_.begin();
  Key key = *victim->second;
  evictable_.erase(victim);
  auto it = entries_.find(key);
  if (it->second.value) bytes_ -= it->second.value->data.size();
  entries_.erase(it);
  ++evictions_;
  return true;
}

bool Memtable::can_admit(std::size_t new_keys) const {
  if (entries_.size() + new_keys <= cfg_.capacity) return true;
  return entries_.size() + new_keys - cfg_.capacity <= evictable_.size();
}

ApplyResult Memtable::apply(const Key& key, const TimestampedValue& value, bool allow_new) {
  observe(value.ts);
  auto it = entries_.find(key);
  if (it != entries_.end()) {
    Entry& e = it->second;
    auto incoming = Version::of(value);
    if (e.value) {
      if (!(e.version < incoming)) return ApplyResult::kIgnored;
      bytes_ -= e.value->data.size();
    } else if (incoming < e.version) {
      return ApplyResult::kIgnored;  // below the reported floor
    }
    e.value = value;
    e.version = incoming;
    bytes_ += value.data.size();
    refresh_evictable(key, e);
    touch(key, e);
    return ApplyResult::kApplied;
  }

  if (!allow_new) return ApplyResult::kIgnored;
  while (over_budget(1, value.data.size())) {
    if (!evict_one()) return ApplyResult::kEvictionBlocked;
  }
  auto [pos, inserted] = entries_.emplace(key, Entry{});
  Entry& e = pos->second;
  e.value = value;
  e.version = Version::of(value);
  e.touched = ++tick_;
  bytes_ += value.data.size();
  refresh_evictable(key, e);
  return ApplyResult::kApplied;
}

EvictState Memtable::evict_check(const Key& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return EvictState::kEvictable;
  return is_evictable(it->second) ? EvictState::kEvictable : EvictState::kPinned;
}

CoverResult Memtable::cover(const Key& key, const Version& reported) {
  observe(reported.ts);
  auto it = entries_.find(key);
  if (it == entries_.end()) return CoverResult::kNotPresent;
  Entry& e = it->second;
  if (!e.value) {
    if (e.version < reported) e.version = reported;
    return CoverResult::kCovered;
  }
  if (e.version < reported) {
    bytes_ -= e.value->data.size();
    e.value.reset();
    e.version = reported;
    e.coverage = reported;
    refresh_evictable(key, e);
    return CoverResult::kInvalidated;
  }
  if (!e.coverage || *e.coverage < reported) e.coverage = reported;
  refresh_evictable(key, e);
  return e.version == reported ? CoverResult::kCovered : CoverResult::kNewerLocally;
}

void Memtable::mark_covered(const Key& key, const Version& v) {
  auto it = entries_.find(key);
  if (it == entries_.end()) return;
  Entry& e = it->second;
  if (!e.coverage || *e.coverage < v) e.coverage = v;
  refresh_evictable(key, e);
}

WriteSet Memtable::stage(TransactionBuffer& buf) {
  WriteSet ws;
  ws.reserve(buf.staged_.size());
  for (auto& [k, v] : buf.staged_) {
    ws.push_back({k, TimestampedValue{std::move(v), ++clock_}});
  }
  buf.clear();
  return ws;
}

}  // namespace psl
