#pragma once

// Append-only record of client-visible events, consumed by the verifier.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "psl/bytes.hpp"
#include "psl/runtime.hpp"
#include "psl/types.hpp"

namespace psl {

enum class EventKind : std::uint8_t {
  kTxnCommit,      // one per write entry at staging time
  kCommitDurable,  // block seq reached its quorum
  kRead,
  kMulticastRx,
  kSrRx,
  kLockGrant,
  kLockRelease,
  kFinalRead,
};

const char* event_kind_name(EventKind k);
std::optional<EventKind> event_kind_from(std::string_view name);

struct HistoryEvent {
  SimTime t = 0;
  NodeId node = 0;
  EventKind kind = EventKind::kRead;
  std::optional<Key> key;
  Digest value{};
  std::uint64_t ts = 0;
  std::uint64_t seq = 0;  // block seq, report seq, or grant number
  std::uint64_t lock = 0;
  bool absent = false;  // read found nothing
};

std::string to_json_line(const HistoryEvent& e);
/// Returns nothing for lines that are not history records (network events).
std::optional<HistoryEvent> history_from_json_line(std::string_view line);

class History {
 public:
  void record(HistoryEvent e);
  const std::vector<HistoryEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  void clear() { events_.clear(); }

  /// Mirrors every record as a JSON line.
  void set_sink(std::ostream* out) { sink_ = out; }

 private:
  std::vector<HistoryEvent> events_;
  std::ostream* sink_ = nullptr;
};

std::vector<HistoryEvent> read_history(std::istream& in);

}  // namespace psl
