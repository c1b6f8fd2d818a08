#pragma once

#include <optional>

#include "psl/crypto.hpp"
#include "psl/types.hpp"

namespace psl {

/// Version of a value as compared by the merge order: timestamp first, then
/// the value digest as a big-endian 256-bit integer.
struct Version {
  std::uint64_t ts = 0;
  Digest hash{};

  static Version of(const TimestampedValue& v) { return {v.ts, digest(v.data)}; }
  auto operator<=>(const Version&) const = default;
};

/// V1 <=_e V2  iff  ts1 < ts2, or ts1 == ts2 and H(v1) <= H(v2).
bool leq_e(const TimestampedValue& a, const TimestampedValue& b);

inline bool leq_e(const Version& a, const Version& b) { return a <= b; }

/// Join of the merge order. `existing` absent means the key is new.
const TimestampedValue& merge(const std::optional<TimestampedValue>& existing, const TimestampedValue& incoming);
TimestampedValue merge(const TimestampedValue& existing, const TimestampedValue& incoming);

/// A value with its digest computed once, for merge-heavy paths.
struct HashedValue {
  TimestampedValue value;
  Version version;

  static HashedValue of(TimestampedValue v) {
    auto ver = Version::of(v);
    return {std::move(v), ver};
  }
};

inline const HashedValue& merge(const HashedValue& existing, const HashedValue& incoming) {
  return existing.version <= incoming.version ? incoming : existing;
}

}  // namespace psl
