#pragma once

// Bounded in-enclave cache of Key -> TimestampedValue.
//
// Values only advance under the merge order. An entry may be evicted only
// once PSL-DB is known to hold a value at least as new (a Sync Report covered
// it, or it was fetched from PSL-DB); anything else is pinned. A Sync Report
// that shows a newer value turns the entry into a refresh marker that keeps
// the reported version as a floor: reads miss and go to PSL-DB, and stale
// multicasts below the floor are ignored.

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "psl/merge.hpp"
#include "psl/types.hpp"

namespace psl {

class ValueTooLarge : public std::length_error {
 public:
  ValueTooLarge() : std::length_error("value exceeds configured maximum") {}
};

struct MemtableConfig {
  std::size_t capacity = 1 << 20;  // entries
  std::size_t byte_budget = 0;     // 0 = off; otherwise max total value bytes
  std::size_t max_value_bytes = kDefaultMaxValueBytes;
};

enum class ApplyResult { kApplied, kIgnored, kEvictionBlocked };
enum class EvictState { kEvictable, kPinned };
enum class CoverResult { kNotPresent, kCovered, kNewerLocally, kInvalidated };

class TransactionBuffer {
 public:
  explicit TransactionBuffer(std::size_t max_value_bytes = kDefaultMaxValueBytes) : max_value_(max_value_bytes) {}

  /// Later writes to the same key overwrite earlier ones in place.
  void write(const Key& key, Bytes value);
  void clear();
  bool empty() const { return staged_.empty(); }
  std::size_t size() const { return staged_.size(); }
  const std::vector<std::pair<Key, Bytes>>& staged() const { return staged_; }

 private:
  friend class Memtable;
  std::size_t max_value_;
  std::vector<std::pair<Key, Bytes>> staged_;
  std::unordered_map<Key, std::size_t, KeyHash> index_;
};

class Memtable {
 public:
  explicit Memtable(MemtableConfig cfg = {}) : cfg_(cfg) {}

  /// Returns the value and refreshes recency; nullptr on miss or when the
  /// entry is waiting for a refresh from PSL-DB.
  const TimestampedValue* get(const Key& key);
  const TimestampedValue* peek(const Key& key) const;
  bool contains(const Key& key) const { return entries_.count(key) != 0; }
  bool needs_refresh(const Key& key) const;

  /// Merge-on-insert. New keys are admitted only when `allow_new`; admitting
  /// into a full table evicts the least recently used evictable entry.
  ApplyResult apply(const Key& key, const TimestampedValue& value, bool allow_new = true);

  EvictState evict_check(const Key& key) const;

  /// Applies one Sync Report digest to the local entry.
  CoverResult cover(const Key& key, const Version& reported);

  /// PSL-DB is known to hold at least `v` for `key`.
  void mark_covered(const Key& key, const Version& v);

  /// Assigns ts = ++clock to each staged write in staging order and clears
  /// the buffer. Does not apply the writes.
  WriteSet stage(TransactionBuffer& buf);

  /// Lamport receive rule.
  void observe(std::uint64_t ts) {
    if (ts > clock_) clock_ = ts;
  }
  std::uint64_t clock() const { return clock_; }

  /// True when a free slot exists or some entry could be evicted now.
  bool can_admit(std::size_t new_keys) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return cfg_.capacity; }
  std::size_t pinned_count() const { return entries_.size() - evictable_.size(); }
  std::size_t bytes_used() const { return bytes_; }
  std::uint64_t evictions() const { return evictions_; }
  bool has_evicted() const { return evictions_ > 0; }
  const MemtableConfig& config() const { return cfg_; }

  template <typename F>
  void for_each(F&& f) const {
    for (const auto& [k, e] : entries_) {
      if (e.value) f(k, *e.value);
    }
  }

 private:
  struct Entry {
    std::optional<TimestampedValue> value;  // empty: refresh marker
    Version version;                        // of value, or the floor
    std::optional<Version> coverage;
    std::uint64_t touched = 0;
    bool evictable = false;
  };
  using Recency = std::pair<std::uint64_t, const Key*>;

  bool is_evictable(const Entry& e) const;
  void refresh_evictable(const Key& key, Entry& e);
  void touch(const Key& key, Entry& e);
  bool over_budget(std::size_t extra_entries, std::size_t extra_bytes) const;
  bool evict_one();

  MemtableConfig cfg_;
  std::unordered_map<Key, Entry, KeyHash> entries_;
  std::set<Recency> evictable_;  // ordered by last touch
  std::uint64_t tick_ = 0;
  std::uint64_t clock_ = 0;
  std::size_t bytes_ = 0;
  std::uint64_t evictions_ = 0;
};

}  // namespace psl
