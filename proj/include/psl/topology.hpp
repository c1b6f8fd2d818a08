#pragma once

#include <cstdint>
#include <vector>

#include "psl/types.hpp"

namespace psl {

/// Static deployment description shared by every node of one application.
/// A worker's id is its node id and doubles as its block stream id.
struct Topology {
  std::vector<NodeId> storage;  // 2f+1 servers
  std::vector<NodeId> workers;
  NodeId psl_db = 0;
  NodeId manager = 0;
  std::uint32_t f = 1;

  std::size_t write_quorum() const { return f + 1; }
  std::size_t read_quorum() const { return storage.size() - f; }

  /// Storage streams used by PSL-DB for Sync Reports and manifests.
  std::uint32_t report_stream() const { return psl_db; }
  std::uint32_t manifest_stream() const { return psl_db | 0x8000'0000u; }

  std::vector<NodeId> replication_group(NodeId self) const {
    std::vector<NodeId> out;
    for (auto w : workers) {
      if (w != self) out.push_back(w);
    }
    if (psl_db != self && psl_db != 0) out.push_back(psl_db);
    return out;
  }
};

}  // namespace psl
