#include "psl/storage_server.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>

namespace psl {

Bytes encode_stored(const StoredBlock& b) {
  Writer w(b.envelope.ciphertext.size() + 128);
  w.u32(b.stream);
  w.u64(b.seq);
  encode(w, b.envelope);
  return std::move(w).take();
}

StoredBlock decode_stored(ByteView in) {
  Reader r(in);
  StoredBlock b;
  b.stream = r.u32();
  b.seq = r.u64();
  b.envelope = decode_envelope(r);
  r.expect_done();
  return b;
}

// --- memory backend ---------------------------------------------------------

bool MemoryBlockStore::put(const Digest& d, ByteView record) {
  if (fail_writes_) return false;
  map_.try_emplace(d, record.begin(), record.end());
  return true;
}

std::optional<Bytes> MemoryBlockStore::get(const Digest& d) const {
  auto it = map_.find(d);
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

void MemoryBlockStore::scan(const std::function<void(const Digest&, ByteView)>& f) const {
  for (const auto& [d, rec] : map_) f(d, rec);
}

// --- directory backend ------------------------------------------------------

namespace fs = std::filesystem;

DirectoryBlockStore::DirectoryBlockStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path DirectoryBlockStore::path_for(const Digest& d) const { return dir_ / (to_hex(d) + ".blk"); }

bool DirectoryBlockStore::put(const Digest& d, ByteView record) {
  if (fail_writes_) return false;
  auto final_path = path_for(d);
  if (fs::exists(final_path)) return true;
  auto tmp = final_path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) return false;
  std::size_t off = 0;
  while (off < record.size()) {
    auto n = ::write(fd, record.data() + off, record.size() - off);
    if (n <= 0) {
      ::close(fd);
      ::unlink(tmp.c_str());
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    ::unlink(tmp.c_str());
    return false;
  }
  ::close(fd);
  std::error_code ec;
  fs::rename(tmp, final_path, ec);
  if (ec) return false;
  int dfd = ::open(dir_.c_str(), O_RDONLY | O_DIRECTORY);
  if (dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
  return true;
}

std::optional<Bytes> DirectoryBlockStore::get(const Digest& d) const {
  std::ifstream in(path_for(d), std::ios::binary);
  if (!in) return std::nullopt;
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool DirectoryBlockStore::contains(const Digest& d) const { return fs::exists(path_for(d)); }

bool DirectoryBlockStore::erase(const Digest& d) {
  std::error_code ec;
  return fs::remove(path_for(d), ec);
}

void DirectoryBlockStore::scan(const std::function<void(const Digest&, ByteView)>& f) const {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() == ".blk") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    Digest d;
    try {
      d = digest_from_hex(p.stem().string());
    } catch (const std::invalid_argument&) {
      continue;
    }
    if (auto rec = get(d)) f(d, *rec);
  }
}

std::size_t DirectoryBlockStore::size() const {
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() == ".blk") ++n;
  }
  return n;
}

// --- server -----------------------------------------------------------------

StorageServer::StorageServer(NodeId id, std::shared_ptr<BlockStore> store, std::optional<PublicKey> verify_key)
    : Node(id), store_(std::move(store)), verify_key_(verify_key) {
  rebuild_recent();
}

void StorageServer::install_verify_key(const PublicKey& pk) {
  if (!verify_key_) verify_key_ = pk;
}

void StorageServer::note_recent(std::uint32_t stream, std::uint64_t seq, const Digest& d) {
  auto it = recent_.find(stream);
  if (seq > 0 && (it == recent_.end() || seq > it->second.second)) recent_[stream] = {d, seq};
}

StorageServer::StoreResult StorageServer::store_block(const Envelope& env, std::uint64_t seq, std::uint32_t stream) {
  Digest d = envelope_digest(env);
  if (env.signature) {
    if (bound()) charge(costs().verify);
    if (!verify_key_ || !signature_valid(env, *verify_key_)) {
      ++stats_.rejected_signature;
      return StoreResult::kSignatureInvalid;
    }
  }
  if (store_->contains(d)) {
    ++stats_.duplicates;
    note_recent(stream, seq, d);
    return StoreResult::kDuplicate;
  }
  // Durable write first; the in-memory index is rebuilt from disk on restart.
  if (!store_->put(d, encode_stored({stream, seq, env}))) {
    ++stats_.write_failures;
    return StoreResult::kWriteFailed;
  }
  ++stats_.stored;
  note_recent(stream, seq, d);
  if (env.signature) {
    ++stats_.signed_blocks;
    auto lo = unattested_.lower_bound({stream, 0, kZeroDigest});
    auto hi = unattested_.lower_bound({stream, seq, kZeroDigest});
    unattested_.erase(lo, hi);
  } else if (seq > 0) {
    unattested_.insert({stream, seq, d});
  }
  return StoreResult::kStored;
}

std::optional<Envelope> StorageServer::retrieve_by_hash(const Digest& d) const {
  auto rec = store_->get(d);
  if (!rec) return std::nullopt;
  return decode_stored(*rec).envelope;
}

std::optional<Envelope> StorageServer::retrieve_most_recent(std::uint32_t stream) const {
  auto it = recent_.find(stream);
  if (it == recent_.end()) return std::nullopt;
  return retrieve_by_hash(it->second.first);
}

std::optional<std::uint32_t> StorageServer::gc(std::uint64_t req, const std::vector<Digest>& digests,
                                               const Signature& sig) {
  if (bound()) charge(costs().verify);
  if (!verify_key_ || !verify_signature(*verify_key_, rpc::gc_signing_bytes(req, digests), sig)) {
    ++stats_.gc_rejected;
    return std::nullopt;
  }
  std::set<Digest> tips;
  for (const auto& [stream, tip] : recent_) tips.insert(tip.first);
  std::uint32_t deleted = 0;
  for (const auto& d : digests) {
    if (tips.count(d) != 0) {
      ++stats_.gc_refused;
      continue;
    }
    if (store_->erase(d)) ++deleted;
  }
  stats_.gc_deleted += deleted;
  return deleted;
}

void StorageServer::rebuild_recent() {
  recent_.clear();
  unattested_.clear();
  store_->scan([this](const Digest& d, ByteView rec) {
    try {
      auto b = decode_stored(rec);
      note_recent(b.stream, b.seq, d);
    } catch (const CodecError&) {
      ++stats_.malformed;
    }
  });
}

void StorageServer::crash() { recent_.clear(); }

void StorageServer::restart() { rebuild_recent(); }

void StorageServer::receive(NodeId from, ByteView frame) {
  rpc::Message msg;
  try {
    msg = rpc::parse(frame);
  } catch (const CodecError&) {
    ++stats_.malformed;
    return;
  }
  if (auto* m = std::get_if<rpc::StoreBlock>(&msg)) {
    charge(costs().hash(m->envelope.ciphertext.size()));
    auto r = store_block(m->envelope, m->seq, m->worker_id);
    if (r == StoreResult::kStored || r == StoreResult::kDuplicate) {
      send(from, rpc::StoreAck{m->req, envelope_digest(m->envelope)});
    }
  } else if (auto* m = std::get_if<rpc::RetrieveByHash>(&msg)) {
    send(from, rpc::RetrieveResp{m->req, retrieve_by_hash(m->digest)});
  } else if (auto* m = std::get_if<rpc::RetrieveMostRecent>(&msg)) {
    send(from, rpc::RetrieveResp{m->req, retrieve_most_recent(m->worker_id)});
  } else if (auto* m = std::get_if<rpc::GcRequest>(&msg)) {
    if (auto n = gc(m->req, m->digests, m->signature)) send(from, rpc::GcResp{m->req, *n});
  } else if (auto* m = std::get_if<rpc::InstallVerifyKey>(&msg)) {
    install_verify_key(m->verify_key);
    send(from, rpc::InstallVerifyKeyAck{m->req});
  }
}

}  // namespace psl
