#include "psl/merge.hpp"

namespace psl {

bool leq_e(const TimestampedValue& a, const TimestampedValue& b) {
  if (a.ts != b.ts) return a.ts < b.ts;
  if (a.data == b.data) return true;
  return digest(a.data) <= digest(b.data);
}

const TimestampedValue& merge(const std::optional<TimestampedValue>& existing, const TimestampedValue& incoming) {
  if (!existing || leq_e(*existing, incoming)) return incoming;
  return *existing;
}

TimestampedValue merge(const TimestampedValue& existing, const TimestampedValue& incoming) {
  return leq_e(existing, incoming) ? incoming : existing;
}

}  // namespace psl
