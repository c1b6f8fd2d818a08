#include "psl/chain.hpp"

namespace psl {

bool verify_chain(std::span<const ChainLink> blocks, const PublicKey& verify_key,
                  const std::optional<Signature>& head_signature, const std::optional<Digest>& anchor) {
  if (blocks.empty()) return false;

  Digest expected_prev = anchor.value_or(kZeroDigest);
  std::uint64_t expected_seq = blocks.front().body.seq;
  if (!anchor && expected_seq != 1) throw ChainBroken(expected_seq);

  for (const auto& link : blocks) {
    const auto& body = link.body;
    if (body.seq != expected_seq || body.prev_hash != expected_prev) throw ChainBroken(expected_seq);
    if (link.envelope.ad.seq != body.seq) throw ChainBroken(expected_seq);
    if (link.envelope.signature && !signature_valid(link.envelope, verify_key)) throw ChainBroken(body.seq);
    expected_prev = envelope_digest(link.envelope);
    ++expected_seq;
  }

  const auto& tip = blocks.back();
  if (tip.envelope.signature) return true;
  if (head_signature) {
    if (!verify_signature(verify_key, expected_prev, *head_signature)) throw ChainBroken(tip.body.seq);
    return true;
  }
  return false;
}

}  // namespace psl
