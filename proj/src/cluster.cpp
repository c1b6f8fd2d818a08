#include "psl/cluster.hpp"

#include <algorithm>

namespace psl {

Digest worker_code_hash() { return digest(std::string_view("psl-worker/1")); }
Digest psl_db_code_hash() { return digest(std::string_view("psl-db/1")); }
Digest manager_code_hash() { return digest(std::string_view("psl-manager/1")); }

Cluster::Cluster(ClusterConfig cfg)
    : cfg_(std::move(cfg)),
      sim_(std::make_unique<netsim::Simulator>(cfg_.seed, cfg_.policy, cfg_.costs)),
      keys_(KeyMaterial::generate(cfg_.seed)) {
  auto topo = std::make_shared<Topology>();
  topo->f = cfg_.f;
  topo->psl_db = layout::kPslDb;
  topo->manager = layout::kManager;
  for (std::size_t i = 0; i < 2 * cfg_.f + 1; ++i) topo->storage.push_back(layout::storage(i));
  for (std::size_t i = 0; i < cfg_.workers; ++i) topo->workers.push_back(layout::worker(i));
  topo_ = topo;

  auto platform = PlatformAuthority::from_seed(cfg_.seed);
  for (std::size_t i = 0; i < topo_->storage.size(); ++i) {
    std::shared_ptr<BlockStore> store;
    if (cfg_.storage_dir) {
      store = std::make_shared<DirectoryBlockStore>(*cfg_.storage_dir / ("server" + std::to_string(i)));
    } else {
      store = std::make_shared<MemoryBlockStore>();
    }
    servers_.push_back(&sim_->emplace<StorageServer>(topo_->storage[i], store));
  }
  for (std::size_t i = 0; i < cfg_.workers; ++i) {
    auto& w = sim_->emplace<Worker>(topo_->workers[i], topo_, cfg_.worker, &history_);
    Digest code = cfg_.bad_workers.count(i) ? digest(std::string_view("tampered-worker")) : worker_code_hash();
    w.set_identity(EnclaveIdentity::make(rpc::Role::kWorker, code, cfg_.seed * 1000 + i, platform));
    w.set_handlers(cfg_.handlers);
    workers_.push_back(&w);
  }
  psl_db_ = &sim_->emplace<PslDb>(layout::kPslDb, topo_, cfg_.psl_db);
  psl_db_->set_identity(EnclaveIdentity::make(rpc::Role::kPslDb, psl_db_code_hash(), cfg_.seed * 1000 + 999, platform));
  manager_ = &sim_->emplace<FaasManager>(
      layout::kManager, topo_,
      EnclaveIdentity::make(rpc::Role::kManager, manager_code_hash(), cfg_.seed * 1000 + 998, platform));
  user_ = &sim_->emplace<UserClient>(layout::kUser, topo_, keys_, platform->public_key(),
                                     Measurement{rpc::Role::kManager, manager_code_hash()},
                                     ExpectedCode{worker_code_hash(), psl_db_code_hash()});
}

std::vector<Worker*> Cluster::live_workers() {
  std::vector<Worker*> out;
  for (auto* w : workers_) {
    if (w->alive() && sim_->up(w->id()) && w->provisioned()) out.push_back(w);
  }
  return out;
}

bool Cluster::start(SimTime deadline) {
  sim_->start();
  if (!cfg_.attest) {
    for (auto* w : workers_) {
      if (!cfg_.bad_workers.count(static_cast<std::size_t>(w->id() - layout::worker(0)))) w->provision(keys_);
    }
    psl_db_->provision(keys_);
    for (auto* s : servers_) s->install_verify_key(keys_.verify_key);
    return run_until([this] { return psl_db_->ready(); }, deadline);
  }
  auto done = std::make_shared<bool>(false);
  user_->provision([done](std::vector<std::uint32_t>) { *done = true; });
  bool ok = run_until([&] { return *done && psl_db_->ready(); }, deadline);
  return ok && !user_->manager_rejected();
}

bool Cluster::run_until(const std::function<bool()>& pred, SimTime max_time) {
  if (pred && pred()) return true;
  sim_->run_until(pred, max_time);
  return !pred || pred();
}

void Cluster::heal() {
  auto& p = sim_->policy();
  p.default_link = {};
  p.links.clear();
  p.partitions.clear();
}

bool Cluster::barrier(SimTime timeout) {
  SimTime deadline = sim_->now() + timeout;
  auto round_done = std::make_shared<bool>(false);
  psl_db_->checkpoint_round([round_done] { *round_done = true; });
  if (!run_until([&] { return *round_done; }, deadline)) return false;
  std::uint64_t target = psl_db_->sr_seq();
  return run_until(
      [&] {
        auto ws = live_workers();
        return std::all_of(ws.begin(), ws.end(), [&](Worker* w) { return w->last_report_seq() >= target; });
      },
      deadline);
}

bool Cluster::final_reads(const std::vector<Key>& keys, SimTime timeout) {
  SimTime deadline = sim_->now() + timeout;
  auto ws = live_workers();
  auto pending = std::make_shared<std::size_t>(ws.size() * keys.size());
  for (auto* w : ws) {
    for (const auto& k : keys) {
      NodeId node = w->id();
      w->read_key(k, [this, node, k, pending](std::optional<TimestampedValue> v) {
        HistoryEvent e;
        e.t = sim_->now();
        e.node = node;
        e.kind = EventKind::kFinalRead;
        e.key = k;
        if (v) {
          e.value = digest(v->data);
          e.ts = v->ts;
        } else {
          e.absent = true;
        }
        history_.record(std::move(e));
        --*pending;
      });
    }
  }
  return run_until([&] { return *pending == 0; }, deadline);
}

std::vector<NodeId> Cluster::resolve(const std::string& name) const {
  if (name == "psldb" || name == "psl-db") return {layout::kPslDb};
  if (name == "manager") return {layout::kManager};
  if (name == "user") return {layout::kUser};
  auto colon = name.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("unknown node name: " + name);
  std::string kind = name.substr(0, colon);
  std::string idx = name.substr(colon + 1);
  const std::vector<NodeId>* pool = nullptr;
  if (kind == "storage") pool = &topo_->storage;
  if (kind == "worker") pool = &topo_->workers;
  if (pool == nullptr) throw std::invalid_argument("unknown node name: " + name);
  if (idx == "*") return *pool;
  std::size_t i = std::stoul(idx);
  if (i >= pool->size()) throw std::invalid_argument("node index out of range: " + name);
  return {(*pool)[i]};
}

}  // namespace psl
