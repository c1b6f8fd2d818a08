#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include "psl/crypto.hpp"
#include "psl/types.hpp"

namespace psl {

class ChainBroken : public std::runtime_error {
 public:
  explicit ChainBroken(std::uint64_t seq)
      : std::runtime_error("hash chain broken at seq " + std::to_string(seq)), seq_(seq) {}
  std::uint64_t seq() const { return seq_; }

 private:
  std::uint64_t seq_;
};

struct ChainLink {
  Envelope envelope;
  BlockBody body;
};

/// Checks a run of blocks ordered by seq. Every body must point at the
/// digest of the previous envelope's ciphertext (the first at `anchor`, or
/// all-zero when it is seq 1) and seqs must be contiguous. Every signature
/// present must verify; the tip must carry one, or `head_signature` must
/// sign the tip's digest. A signature on block n attests 1..n.
///
/// Throws ChainBroken with the first bad seq. Returns false when the links
/// are intact but nothing signs the tip.
bool verify_chain(std::span<const ChainLink> blocks, const PublicKey& verify_key,
                  const std::optional<Signature>& head_signature = std::nullopt,
                  const std::optional<Digest>& anchor = std::nullopt);

}  // namespace psl
