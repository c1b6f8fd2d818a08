#pragma once

// Untrusted replicated block store. Holds opaque envelopes keyed by the
// digest of their ciphertext and the most recent block of every stream.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>

#include "psl/crypto.hpp"
#include "psl/runtime.hpp"

namespace psl {

/// Durable record: the stream and seq a block was stored under, plus the
/// encoded envelope.
struct StoredBlock {
  std::uint32_t stream = 0;
  std::uint64_t seq = 0;
  Envelope envelope;
};

Bytes encode_stored(const StoredBlock& b);
StoredBlock decode_stored(ByteView in);

class BlockStore {
 public:
  virtual ~BlockStore() = default;
  /// Returns false if the write did not reach durable storage.
  virtual bool put(const Digest& d, ByteView record) = 0;
  virtual std::optional<Bytes> get(const Digest& d) const = 0;
  virtual bool contains(const Digest& d) const = 0;
  virtual bool erase(const Digest& d) = 0;
  virtual void scan(const std::function<void(const Digest&, ByteView)>& f) const = 0;
  virtual std::size_t size() const = 0;

  /// Fault injection: every put fails while set.
  void set_fail_writes(bool v) { fail_writes_ = v; }

 protected:
  bool fail_writes_ = false;
};

class MemoryBlockStore final : public BlockStore {
 public:
  bool put(const Digest& d, ByteView record) override;
  std::optional<Bytes> get(const Digest& d) const override;
  bool contains(const Digest& d) const override { return map_.count(d) != 0; }
  bool erase(const Digest& d) override { return map_.erase(d) != 0; }
  void scan(const std::function<void(const Digest&, ByteView)>& f) const override;
  std::size_t size() const override { return map_.size(); }

 private:
  std::map<Digest, Bytes> map_;
};

/// One file per block named by hex digest; writes go to a temp file that is
/// fsynced and renamed into place.
class DirectoryBlockStore final : public BlockStore {
 public:
  explicit DirectoryBlockStore(std::filesystem::path dir);
  bool put(const Digest& d, ByteView record) override;
  std::optional<Bytes> get(const Digest& d) const override;
  bool contains(const Digest& d) const override;
  bool erase(const Digest& d) override;
  void scan(const std::function<void(const Digest&, ByteView)>& f) const override;
  std::size_t size() const override;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path path_for(const Digest& d) const;
  std::filesystem::path dir_;
};

struct StorageStats {
  std::uint64_t stored = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t rejected_signature = 0;
  std::uint64_t write_failures = 0;
  std::uint64_t signed_blocks = 0;
  std::uint64_t gc_deleted = 0;
  std::uint64_t gc_refused = 0;
  std::uint64_t gc_rejected = 0;
  std::uint64_t malformed = 0;
};

class StorageServer final : public Node {
 public:
  enum class StoreResult { kStored, kDuplicate, kSignatureInvalid, kWriteFailed };

  StorageServer(NodeId id, std::shared_ptr<BlockStore> store, std::optional<PublicKey> verify_key = std::nullopt);

  // Algorithm operations, usable without a network.
  StoreResult store_block(const Envelope& env, std::uint64_t seq, std::uint32_t stream);
  std::optional<Envelope> retrieve_by_hash(const Digest& d) const;
  std::optional<Envelope> retrieve_most_recent(std::uint32_t stream) const;
  /// Returns the number of blocks deleted; chain tips are refused.
  std::optional<std::uint32_t> gc(std::uint64_t req, const std::vector<Digest>& digests, const Signature& sig);

  void install_verify_key(const PublicKey& pk);
  bool has_verify_key() const { return verify_key_.has_value(); }
  const std::optional<PublicKey>& verify_key() const { return verify_key_; }

  const std::map<std::uint32_t, std::pair<Digest, std::uint64_t>>& recent_block_map() const { return recent_; }
  /// Unsigned blocks not yet followed by a signed block of the same stream.
  std::size_t unattested() const { return unattested_.size(); }
  const StorageStats& stats() const { return stats_; }
  BlockStore& block_store() { return *store_; }

  void receive(NodeId from, ByteView frame) override;
  void crash() override;
  void restart() override;

 private:
  void rebuild_recent();
  void note_recent(std::uint32_t stream, std::uint64_t seq, const Digest& d);

  std::shared_ptr<BlockStore> store_;
  std::optional<PublicKey> verify_key_;
  std::map<std::uint32_t, std::pair<Digest, std::uint64_t>> recent_;
  std::set<std::tuple<std::uint32_t, std::uint64_t, Digest>> unattested_;
  StorageStats stats_;
};

}  // namespace psl
