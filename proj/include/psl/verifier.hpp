#pragma once

// Offline checks over recorded histories.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "psl/history.hpp"

namespace psl::verify {

struct Violation {
  std::size_t first = 0;   // index into the history
  std::size_t second = 0;  // index of the offending event
  std::string detail;
};

/// Per (worker, key), successive reads never go back in the merge order.
/// An absent read after a present one is a violation.
std::vector<Violation> check_monotonic(const std::vector<HistoryEvent>& h);

/// Every present read returns a digest from `written`.
std::vector<Violation> check_validity(const std::vector<HistoryEvent>& h, const std::set<Digest>& written);
/// Same, with the written set taken from the history's txn_commit records.
std::vector<Violation> check_validity(const std::vector<HistoryEvent>& h);

/// Committed writes: txn_commit records whose block has a commit_durable
/// record from the same worker.
std::vector<const HistoryEvent*> committed_writes(const std::vector<HistoryEvent>& h);

struct ConvergenceResult {
  bool ok = true;
  std::size_t final_reads = 0;
  std::vector<Violation> mismatches;
};
/// Compares every final_read record with the max-by-(ts, digest) fold of
/// committed writes to its key.
ConvergenceResult check_convergence(const std::vector<HistoryEvent>& h);

struct LockResult {
  bool ok = true;
  std::size_t grants = 0;
  std::vector<Violation> violations;
};
/// Grant intervals per lock are disjoint, and a grantee's first read of a
/// key the previous holder wrote returns at least that holder's write.
LockResult check_lock_serial(const std::vector<HistoryEvent>& h);

struct Verdict {
  std::vector<Violation> monotonic;
  std::vector<Violation> validity;
  std::optional<ConvergenceResult> convergence;  // only when final reads exist
  LockResult locks;
  std::size_t events = 0;

  bool ok() const {
    return monotonic.empty() && validity.empty() && (!convergence || convergence->ok) && locks.ok;
  }
  nlohmann::ordered_json to_json() const;
};

Verdict verify_all(const std::vector<HistoryEvent>& h);

}  // namespace psl::verify
