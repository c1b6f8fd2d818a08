#include "psl/verifier.hpp"

#include <algorithm>
#include <set>
#include <tuple>

namespace psl::verify {

namespace {

// Reads are compared as (present, ts, digest) tuples. The digest array
// compares bytewise, which is its big-endian integer order.
auto read_rank(const HistoryEvent& e) { return std::make_tuple(!e.absent, e.ts, e.value); }

bool is_read(const HistoryEvent& e) { return e.kind == EventKind::kRead || e.kind == EventKind::kFinalRead; }

std::string describe(const HistoryEvent& e) {
  if (e.absent) return "absent";
  return "ts=" + std::to_string(e.ts) + " h=" + to_hex(e.value).substr(0, 16);
}

}  // namespace

std::vector<Violation> check_monotonic(const std::vector<HistoryEvent>& h) {
  std::vector<Violation> out;
  std::map<std::pair<NodeId, Key>, std::size_t> last;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& e = h[i];
    if (!is_read(e) || !e.key) continue;
    auto k = std::make_pair(e.node, *e.key);
    auto it = last.find(k);
    if (it != last.end() && read_rank(e) < read_rank(h[it->second])) {
      out.push_back({it->second, i,
                     "node " + std::to_string(e.node) + " key " + e.key->str() + ": " + describe(h[it->second]) +
                         " then " + describe(e)});
    }
    last[k] = i;
  }
  return out;
}

std::vector<Violation> check_validity(const std::vector<HistoryEvent>& h, const std::set<Digest>& written) {
  std::vector<Violation> out;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& e = h[i];
    if (!is_read(e) || e.absent) continue;
    if (!written.count(e.value)) out.push_back({i, i, "read of a value nobody wrote: " + describe(e)});
  }
  return out;
}

std::vector<Violation> check_validity(const std::vector<HistoryEvent>& h) {
  std::set<Digest> written;
  for (const auto& e : h) {
    if (e.kind == EventKind::kTxnCommit) written.insert(e.value);
  }
  return check_validity(h, written);
}

std::vector<const HistoryEvent*> committed_writes(const std::vector<HistoryEvent>& h) {
  std::set<std::pair<NodeId, std::uint64_t>> durable;
  for (const auto& e : h) {
    if (e.kind == EventKind::kCommitDurable) durable.insert({e.node, e.seq});
  }
  std::vector<const HistoryEvent*> out;
  for (const auto& e : h) {
    if (e.kind == EventKind::kTxnCommit && durable.count({e.node, e.seq})) out.push_back(&e);
  }
  return out;
}

ConvergenceResult check_convergence(const std::vector<HistoryEvent>& h) {
  // Brute-force fold: for each key keep the committed write with the
  // greatest (ts, digest); ties on both are the same value.
  std::map<Key, std::pair<std::uint64_t, Digest>> oracle;
  for (const auto* w : committed_writes(h)) {
    auto cand = std::make_pair(w->ts, w->value);
    auto [it, fresh] = oracle.try_emplace(*w->key, cand);
    if (!fresh && std::tie(it->second.first, it->second.second) < std::tie(cand.first, cand.second)) {
      it->second = cand;
    }
  }
  ConvergenceResult r;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& e = h[i];
    if (e.kind != EventKind::kFinalRead || !e.key) continue;
    ++r.final_reads;
    auto it = oracle.find(*e.key);
    bool match = it == oracle.end() ? e.absent : (!e.absent && e.ts == it->second.first && e.value == it->second.second);
    if (!match) {
      std::string want = it == oracle.end() ? "absent"
                                            : "ts=" + std::to_string(it->second.first) + " h=" +
                                                  to_hex(it->second.second).substr(0, 16);
      r.mismatches.push_back(
          {i, i, "node " + std::to_string(e.node) + " key " + e.key->str() + ": got " + describe(e) + " want " + want});
    }
  }
  r.ok = r.mismatches.empty();
  return r;
}

LockResult check_lock_serial(const std::vector<HistoryEvent>& h) {
  struct Interval {
    NodeId node;
    std::uint64_t grant;
    std::size_t start;
    std::optional<std::size_t> end;
  };
  std::map<std::uint64_t, std::vector<Interval>> by_lock;
  LockResult r;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& e = h[i];
    if (e.kind == EventKind::kLockGrant) {
      by_lock[e.lock].push_back({e.node, e.seq, i, std::nullopt});
      ++r.grants;
    } else if (e.kind == EventKind::kLockRelease) {
      auto& iv = by_lock[e.lock];
      auto it = std::find_if(iv.rbegin(), iv.rend(),
                             [&](const Interval& x) { return x.node == e.node && x.grant == e.seq && !x.end; });
      if (it == iv.rend()) {
        r.violations.push_back({i, i, "release without a matching grant on lock " + std::to_string(e.lock)});
      } else {
        it->end = i;
      }
    }
  }
  for (auto& [lock, iv] : by_lock) {
    std::sort(iv.begin(), iv.end(), [&](const Interval& a, const Interval& b) { return a.start < b.start; });
    for (std::size_t j = 0; j + 1 < iv.size(); ++j) {
      const auto& a = iv[j];
      const auto& b = iv[j + 1];
      if (!a.end || *a.end > b.start || h[*a.end].t > h[b.start].t) {
        r.violations.push_back({a.start, b.start,
                                "lock " + std::to_string(lock) + ": grant to node " + std::to_string(b.node) +
                                    " overlaps the interval of node " + std::to_string(a.node)});
        continue;
      }
      // What the previous holder wrote inside its interval.
      std::map<Key, std::pair<std::uint64_t, Digest>> wrote;
      for (std::size_t k = a.start; k <= *a.end; ++k) {
        const auto& e = h[k];
        if (e.kind != EventKind::kTxnCommit || e.node != a.node) continue;
        auto cand = std::make_pair(e.ts, e.value);
        auto [it, fresh] = wrote.try_emplace(*e.key, cand);
        if (!fresh && it->second < cand) it->second = cand;
      }
      std::set<Key> seen;
      std::size_t stop = b.end ? *b.end : h.size() - 1;
      for (std::size_t k = b.start; k <= stop; ++k) {
        const auto& e = h[k];
        if (e.kind != EventKind::kRead || e.node != b.node || !e.key || seen.count(*e.key)) continue;
        seen.insert(*e.key);
        auto w = wrote.find(*e.key);
        if (w == wrote.end()) continue;
        if (e.absent || std::make_pair(e.ts, e.value) < w->second) {
          r.violations.push_back({*a.end, k,
                                  "lock " + std::to_string(lock) + ": node " + std::to_string(b.node) +
                                      " read a value older than the previous holder's write of " + e.key->str()});
        }
      }
    }
  }
  r.ok = r.violations.empty();
  return r;
}

Verdict verify_all(const std::vector<HistoryEvent>& h) {
  Verdict v;
  v.events = h.size();
  v.monotonic = check_monotonic(h);
  v.validity = check_validity(h);
  bool finals = std::any_of(h.begin(), h.end(), [](const HistoryEvent& e) { return e.kind == EventKind::kFinalRead; });
  if (finals) v.convergence = check_convergence(h);
  v.locks = check_lock_serial(h);
  return v;
}

namespace {

nlohmann::ordered_json violations_json(const std::vector<Violation>& vs) {
  auto arr = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < vs.size() && i < 20; ++i) {
    arr.push_back({{"first", vs[i].first}, {"second", vs[i].second}, {"detail", vs[i].detail}});
  }
  return arr;
}

}  // namespace

nlohmann::ordered_json Verdict::to_json() const {
  nlohmann::ordered_json j;
  j["events"] = events;
  j["pass"] = ok();
  j["monotonic"] = {{"pass", monotonic.empty()}, {"violations", monotonic.size()}, {"details", violations_json(monotonic)}};
  j["validity"] = {{"pass", validity.empty()}, {"violations", validity.size()}, {"details", violations_json(validity)}};
  if (convergence) {
    j["convergence"] = {{"pass", convergence->ok},
                        {"final_reads", convergence->final_reads},
                        {"mismatches", convergence->mismatches.size()},
                        {"details", violations_json(convergence->mismatches)}};
  } else {
    j["convergence"] = {{"pass", true}, {"checked", false}};
  }
  j["lock_serial"] = {{"pass", locks.ok},
                      {"grants", locks.grants},
                      {"violations", locks.violations.size()},
                      {"details", violations_json(locks.violations)}};
  return j;
}

}  // namespace psl::verify
