#include "psl/history.hpp"

#include <istream>

#include "json.hpp"

namespace psl {

namespace {
constexpr const char* kNames[] = {"txn_commit", "commit_durable", "read",        "multicast_rx",
                                  "sr_rx",      "lock_grant",     "lock_release", "final_read"};
}

const char* event_kind_name(EventKind k) { return kNames[static_cast<int>(k)]; }

std::optional<EventKind> event_kind_from(std::string_view name) {
  for (int i = 0; i < 8; ++i) {
    if (name == kNames[i]) return static_cast<EventKind>(i);
  }
  return std::nullopt;
}

std::string to_json_line(const HistoryEvent& e) {
  nlohmann::ordered_json j;
  j["t"] = e.t;
  j["ev"] = "history";
  j["node"] = e.node;
  j["kind"] = event_kind_name(e.kind);
  if (e.key) j["key"] = to_hex(e.key->bytes());
  if (e.value != kZeroDigest) j["value"] = to_hex(e.value);
  if (e.ts != 0) j["ts"] = e.ts;
  if (e.seq != 0) j["seq"] = e.seq;
  if (e.lock != 0) j["lock"] = e.lock;
  if (e.absent) j["absent"] = true;
  return j.dump();
}

std::optional<HistoryEvent> history_from_json_line(std::string_view line) {
  auto j = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("ev", "") != "history") return std::nullopt;
  auto kind = event_kind_from(j.value("kind", ""));
  if (!kind) return std::nullopt;
  HistoryEvent e;
  e.t = j.value("t", SimTime{0});
  e.node = j.value("node", NodeId{0});
  e.kind = *kind;
  if (j.contains("key")) e.key = Key(from_hex(j["key"].get<std::string>()));
  if (j.contains("value")) e.value = digest_from_hex(j["value"].get<std::string>());
  e.ts = j.value("ts", std::uint64_t{0});
  e.seq = j.value("seq", std::uint64_t{0});
  e.lock = j.value("lock", std::uint64_t{0});
  e.absent = j.value("absent", false);
  return e;
}

void History::record(HistoryEvent e) {
  if (sink_ != nullptr) *sink_ << to_json_line(e) << '\n';
  events_.push_back(std::move(e));
}

std::vector<HistoryEvent> read_history(std::istream& in) {
  std::vector<HistoryEvent> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (auto e = history_from_json_line(line)) out.push_back(std::move(*e));
  }
  return out;
}

}  // namespace psl
