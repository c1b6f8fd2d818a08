#include "psl/storage_client.hpp"

#include <algorithm>

namespace psl {

StorageClient::StorageClient(NodeId self, std::shared_ptr<const Topology> topo, SimTime retry_interval)
    : self_(self), topo_(std::move(topo)), retry_(retry_interval) {}

void StorageClient::attach(Runtime* rt, std::uint64_t req_base) {
  rt_ = rt;
  next_req_ = req_base;
}

void StorageClient::reset() {
  stores_.clear();
  fetches_.clear();
  polls_.clear();
}

std::size_t StorageClient::acks(std::uint64_t req) const {
  auto it = stores_.find(req);
  return it == stores_.end() ? 0 : it->second.acked.size();
}

void StorageClient::arm(std::uint64_t req) {
  rt_->set_timer(self_, retry_, [this, req] { retry(req); });
}

void StorageClient::retry(std::uint64_t req) {
  if (auto it = stores_.find(req); it != stores_.end()) {
    for (auto s : topo_->storage) {
      if (it->second.acked.count(s) == 0) {
        rt_->send(self_, s, it->second.frame);
        ++stats_.store_resends;
      }
    }
    arm(req);
  } else if (auto it = fetches_.find(req); it != fetches_.end()) {
    rt_->multicast(self_, topo_->storage, it->second.frame);
    arm(req);
  } else if (auto it = polls_.find(req); it != polls_.end()) {
    for (auto s : topo_->storage) {
      if (it->second.responses.count(s) == 0) rt_->send(self_, s, it->second.frame);
    }
    arm(req);
  }
}

std::uint64_t StorageClient::store(std::uint32_t stream, std::uint64_t seq, Envelope env, StoreDone done,
                                   std::size_t quorum) {
  auto req = next_req();
  Digest d = envelope_digest(env);
  auto frame = std::make_shared<Bytes>(rpc::frame(rpc::StoreBlock{req, stream, seq, std::move(env)}));
  stores_.emplace(req, PendingStore{stream, seq, frame, d, {}, quorum == 0 ? topo_->write_quorum() : quorum,
                                    std::move(done)});
  ++stats_.stores;
  rt_->multicast(self_, topo_->storage, frame);
  arm(req);
  return req;
}

void StorageClient::fetch(const Digest& d, Validator valid, FetchDone done) {
  auto req = next_req();
  auto frame = std::make_shared<Bytes>(rpc::frame(rpc::RetrieveByHash{req, d}));
  auto wrapped = [done = std::move(done)](std::optional<Envelope> e) { done(std::move(*e)); };
  fetches_.emplace(req, PendingFetch{d, frame, std::move(valid), std::move(wrapped)});
  ++stats_.fetches;
  rt_->multicast(self_, topo_->storage, frame);
  arm(req);
}

void StorageClient::fetch_optional(const Digest& d, Validator valid,
                                   std::function<void(std::optional<Envelope>)> done) {
  auto req = next_req();
  auto frame = std::make_shared<Bytes>(rpc::frame(rpc::RetrieveByHash{req, d}));
  fetches_.emplace(req, PendingFetch{d, frame, std::move(valid), std::move(done), true, {}});
  ++stats_.fetches;
  rt_->multicast(self_, topo_->storage, frame);
  arm(req);
}

void StorageClient::poll_recent(std::uint32_t stream, PollDone done) {
  auto req = next_req();
  auto frame = std::make_shared<Bytes>(rpc::frame(rpc::RetrieveMostRecent{req, stream}));
  polls_.emplace(req, PendingPoll{frame, {}, std::move(done)});
  ++stats_.polls;
  rt_->multicast(self_, topo_->storage, frame);
  arm(req);
}

void StorageClient::gc(std::vector<Digest> digests, const SigningKey& key) {
  if (digests.empty()) return;
  auto req = next_req();
  auto sig = key.sign(rpc::gc_signing_bytes(req, digests));
  ++stats_.gc_requests;
  rt_->multicast(self_, topo_->storage, std::make_shared<Bytes>(rpc::frame(rpc::GcRequest{req, std::move(digests), sig})));
}

bool StorageClient::on_message(NodeId from, const rpc::Message& msg) {
  bool reply = std::holds_alternative<rpc::StoreAck>(msg) || std::holds_alternative<rpc::RetrieveResp>(msg) ||
               std::holds_alternative<rpc::GcResp>(msg);
  if (!reply) return false;
  if (std::find(topo_->storage.begin(), topo_->storage.end(), from) == topo_->storage.end()) return true;
  if (const auto* ack = std::get_if<rpc::StoreAck>(&msg)) {
    auto it = stores_.find(ack->req);
    if (it == stores_.end() || ack->digest != it->second.digest) return true;
    it->second.acked.insert(from);
    if (it->second.acked.size() >= it->second.quorum) {
      auto done = std::move(it->second.done);
      Digest d = it->second.digest;
      stores_.erase(it);
      if (done) done(d);
    }
    return true;
  }
  if (const auto* resp = std::get_if<rpc::RetrieveResp>(&msg)) {
    if (auto it = fetches_.find(resp->req); it != fetches_.end()) {
      if (!resp->envelope) {
        auto& p = it->second;
        p.nulls.insert(from);
        if (p.nullable && p.nulls.size() >= topo_->read_quorum()) {
          auto done = std::move(p.done);
          fetches_.erase(it);
          done(std::nullopt);
        }
        return true;
      }
      const Envelope& env = *resp->envelope;
      if (envelope_digest(env) != it->second.digest || (it->second.valid && !it->second.valid(env))) {
        ++stats_.fetch_invalid;
        return true;
      }
      auto done = std::move(it->second.done);
      fetches_.erase(it);
      done(env);
      return true;
    }
    if (auto it = polls_.find(resp->req); it != polls_.end()) {
      it->second.responses.emplace(from, resp->envelope);
      if (it->second.responses.size() >= topo_->read_quorum()) {
        std::vector<Envelope> out;
        for (auto& [_, e] : it->second.responses) {
          if (e) out.push_back(std::move(*e));
        }
        auto done = std::move(it->second.done);
        polls_.erase(it);
        done(std::move(out));
      }
    }
    return true;
  }
  return std::holds_alternative<rpc::GcResp>(msg);
}

}  // namespace psl
