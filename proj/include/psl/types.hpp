#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "psl/bytes.hpp"
#include "psl/codec.hpp"

namespace psl {

using WorkerId = std::uint32_t;
using NodeId = std::uint32_t;

inline constexpr std::size_t kMaxKeyBytes = 1024;
inline constexpr std::size_t kDefaultMaxValueBytes = 1 << 20;

/// Non-empty byte-string of at most 1024 bytes, ordered bytewise.
class Key {
 public:
  Key() = default;
  explicit Key(Bytes bytes) : bytes_(std::move(bytes)) { validate(); }
  explicit Key(std::string_view s) : bytes_(s.begin(), s.end()) { validate(); }

  const Bytes& bytes() const { return bytes_; }
  std::string str() const { return std::string(bytes_.begin(), bytes_.end()); }
  bool empty() const { return bytes_.empty(); }

  auto operator<=>(const Key&) const = default;
  bool operator==(const Key&) const = default;

 private:
  void validate() const {
    if (bytes_.empty() || bytes_.size() > kMaxKeyBytes) {
      throw std::invalid_argument("key length must be in 1..=1024");
    }
  }
  Bytes bytes_;
};

struct KeyHash {
  std::size_t operator()(const Key& k) const noexcept;
};

/// Opaque value bytes plus the Lamport timestamp they were written at.
struct TimestampedValue {
  Bytes data;
  std::uint64_t ts = 0;

  bool operator==(const TimestampedValue&) const = default;
};

struct WriteEntry {
  Key key;
  TimestampedValue value;
  bool operator==(const WriteEntry&) const = default;
};

/// Keys are distinct within one write set.
using WriteSet = std::vector<WriteEntry>;

/// Plaintext of one worker block: the replication and WAL unit.
struct BlockBody {
  WorkerId worker_id = 0;
  std::uint64_t seq = 0;
  Digest prev_hash{};
  WriteSet writes;
  bool operator==(const BlockBody&) const = default;
};

struct KeyDigest {
  Key key;
  std::uint64_t ts = 0;
  Digest value_hash{};
  bool operator==(const KeyDigest&) const = default;
};

struct WorkerSeq {
  WorkerId worker_id = 0;
  std::uint64_t seq = 0;
  bool operator==(const WorkerSeq&) const = default;
};

/// PSL-DB's chained digest of global state after one checkpoint round.
struct SyncReportBody {
  std::vector<KeyDigest> digests;  // sorted by key
  std::vector<WorkerSeq> worker_vc;  // unique worker ids, ascending
  std::uint64_t seq = 0;
  Digest prev_hash{};
  Digest checkpoint_hash{};
  bool operator==(const SyncReportBody&) const = default;
};

struct CheckpointBody {
  std::vector<WriteEntry> entries;  // sorted by key, one per key
  std::uint64_t seq = 0;
  bool operator==(const CheckpointBody&) const = default;
};

/// One durable level-2 range of PSL-DB's LSM index.
struct LevelRangeEntry {
  Key key;
  Digest checkpoint{};
  std::uint64_t ts = 0;
  Digest value_hash{};
  bool operator==(const LevelRangeEntry&) const = default;
};

struct LevelRangeBody {
  std::vector<LevelRangeEntry> entries;  // sorted by key
  bool operator==(const LevelRangeBody&) const = default;
};

struct RangeRef {
  Key first_key;
  Digest digest{};
  bool operator==(const RangeRef&) const = default;
};

/// Recovery record PSL-DB stores after each round so it can restart cold.
struct ManifestBody {
  std::uint64_t seq = 0;  // sync report seq this manifest belongs to
  Digest report_hash{};
  Bytes report_envelope;  // encoded Envelope of that sync report
  std::vector<WorkerSeq> worker_vc;
  std::vector<Digest> worker_tips;  // digest of block worker_vc[i].seq
  std::vector<Digest> level1;  // oldest first
  std::vector<RangeRef> level2;
  bool operator==(const ManifestBody&) const = default;
};

// Canonical encodings. decode_* throws CodecError on malformed input or
// violated type invariants.
void encode(Writer& w, const Key& k);
void encode(Writer& w, const TimestampedValue& v);
void encode(Writer& w, const WriteSet& ws);
void encode(Writer& w, const BlockBody& b);
void encode(Writer& w, const SyncReportBody& b);
void encode(Writer& w, const CheckpointBody& b);
void encode(Writer& w, const LevelRangeBody& b);
void encode(Writer& w, const ManifestBody& b);

Key decode_key(Reader& r);
TimestampedValue decode_value(Reader& r);
WriteSet decode_write_set(Reader& r);
BlockBody decode_block(Reader& r);
SyncReportBody decode_sync_report(Reader& r);
CheckpointBody decode_checkpoint(Reader& r);
LevelRangeBody decode_level_range(Reader& r);
ManifestBody decode_manifest(Reader& r);

template <typename T>
Bytes canonical_encode(const T& body) {
  Writer w;
  encode(w, body);
  return std::move(w).take();
}

template <typename T, typename F>
T decode_all(ByteView in, F&& decode_fn) {
  Reader r(in);
  T out = decode_fn(r);
  r.expect_done();
  return out;
}

inline BlockBody decode_block(ByteView in) { return decode_all<BlockBody>(in, [](Reader& r) { return decode_block(r); }); }
inline SyncReportBody decode_sync_report(ByteView in) {
  return decode_all<SyncReportBody>(in, [](Reader& r) { return decode_sync_report(r); });
}
inline CheckpointBody decode_checkpoint(ByteView in) {
  return decode_all<CheckpointBody>(in, [](Reader& r) { return decode_checkpoint(r); });
}
inline LevelRangeBody decode_level_range(ByteView in) {
  return decode_all<LevelRangeBody>(in, [](Reader& r) { return decode_level_range(r); });
}
inline ManifestBody decode_manifest(ByteView in) {
  return decode_all<ManifestBody>(in, [](Reader& r) { return decode_manifest(r); });
}
inline WriteSet decode_write_set(ByteView in) {
  return decode_all<WriteSet>(in, [](Reader& r) { return decode_write_set(r); });
}

}  // namespace psl
