#include "psl/netsim.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "psl/crypto.hpp"

namespace psl::netsim {

const LinkPolicy& AdversaryPolicy::link(NodeId from, NodeId to) const {
  auto it = links.find({from, to});
  return it == links.end() ? default_link : it->second;
}

bool AdversaryPolicy::cut(NodeId a, NodeId b, SimTime t) const {
  for (const auto& p : partitions) {
    if (p.active(t) && p.separates(a, b)) return true;
  }
  return false;
}

void AdversaryPolicy::set_inbound(const std::vector<NodeId>& senders, NodeId to, const LinkPolicy& p) {
  for (auto from : senders) {
    if (from != to) links[{from, to}] = p;
  }
}

namespace {

Delay delay_from_json(const nlohmann::json& j) {
  Delay d;
  auto kind = j.value("kind", std::string("fixed"));
  d.a_ms = j.value("a", 0.5);
  d.b_ms = j.value("b", d.a_ms);
  if (kind == "fixed") {
    d.kind = Delay::Kind::kFixed;
  } else if (kind == "uniform") {
    d.kind = Delay::Kind::kUniform;
  } else if (kind == "exponential") {
    d.kind = Delay::Kind::kExponential;
  } else {
    throw std::invalid_argument("unknown delay kind: " + kind);
  }
  return d;
}

}  // namespace

LinkPolicy link_from_json(const nlohmann::json& j, LinkPolicy base) {
  if (j.contains("drop")) base.drop_prob = j["drop"].get<double>();
  if (j.contains("delay")) base.delay = delay_from_json(j["delay"]);
  if (j.contains("replay")) base.replay_count = j["replay"].get<std::uint32_t>();
  if (j.contains("reorder")) base.reorder = j["reorder"].get<bool>();
  if (base.drop_prob < 0 || base.drop_prob > 1) throw std::invalid_argument("drop must be in [0,1]");
  return base;
}

AdversaryPolicy policy_from_json(const nlohmann::json& j, const NameResolver& names) {
  AdversaryPolicy p;
  if (j.contains("default")) p.default_link = link_from_json(j["default"]);
  for (const auto& l : j.value("links", nlohmann::json::array())) {
    auto lp = link_from_json(l, p.default_link);
    for (auto from : names(l.at("from").get<std::string>())) {
      for (auto to : names(l.at("to").get<std::string>())) {
        if (from != to) p.links[{from, to}] = lp;
      }
    }
  }
  for (const auto& pj : j.value("partitions", nlohmann::json::array())) {
    Partition part;
    part.start = static_cast<SimTime>(pj.at("start_ms").get<double>() * kMillis);
    part.end = static_cast<SimTime>(pj.at("end_ms").get<double>() * kMillis);
    if (part.end < part.start) throw std::invalid_argument("partition ends before it starts");
    for (const auto& n : pj.at("side")) {
      for (auto id : names(n.get<std::string>())) part.side.insert(id);
    }
    p.partitions.push_back(std::move(part));
  }
  return p;
}

// ---------------------------------------------------------------------------

Simulator::Simulator(std::uint64_t seed, AdversaryPolicy policy, CostModel costs)
    : seed_(seed), policy_(std::move(policy)), costs_(costs), rng_(seed ^ 0x9e3779b97f4a7c15ULL) {}

Simulator::~Simulator() = default;

void Simulator::add(std::unique_ptr<Node> node) {
  NodeId id = node->id();
  if (nodes_.count(id) != 0) throw std::invalid_argument("duplicate node id");
  node->bind(this);
  nodes_[id].node = std::move(node);
}

Node* Simulator::node(NodeId id) const {
  auto it = nodes_.find(id);
  return it == nodes_.end() ? nullptr : it->second.node.get();
}

std::vector<NodeId> Simulator::node_ids() const {
  std::vector<NodeId> out;
  for (const auto& [id, _] : nodes_) out.push_back(id);
  return out;
}

void Simulator::start() {
  for (auto& [id, slot] : nodes_) {
    if (slot.started) continue;
    slot.started = true;
    current_ = id;
    slot.node->start();
  }
}

void Simulator::push(Event e) {
  e.seq = next_seq_++;
  queue_.push(std::move(e));
}

void Simulator::at(SimTime t, std::function<void()> fn) {
  Event e;
  e.time = std::max(t, now_);
  e.type = EventType::kAction;
  e.fn = std::make_shared<std::function<void()>>(std::move(fn));
  push(std::move(e));
}

void Simulator::crash(NodeId id) {
  auto& slot = nodes_.at(id);
  if (!slot.up) return;
  slot.up = false;
  ++slot.epoch;
  slot.busy_until = 0;
  slot.node->crash();
  log_record("{\"t\":" + std::to_string(now_) + ",\"ev\":\"crash\",\"node\":" + std::to_string(id) + "}");
}

void Simulator::restart(NodeId id) {
  auto& slot = nodes_.at(id);
  if (slot.up) return;
  slot.up = true;
  log_record("{\"t\":" + std::to_string(now_) + ",\"ev\":\"restart\",\"node\":" + std::to_string(id) + "}");
  NodeId saved = current_;
  current_ = id;
  slot.node->restart();
  current_ = saved;
}

bool Simulator::up(NodeId id) const {
  auto it = nodes_.find(id);
  return it != nodes_.end() && it->second.up;
}

void Simulator::inject(NodeId to, NodeId claimed_from, Bytes bytes, SimTime delay) {
  Event e;
  e.time = now_ + delay;
  e.type = EventType::kDeliver;
  e.from = claimed_from;
  e.to = to;
  e.injected = true;
  e.payload = std::make_shared<const Bytes>(std::move(bytes));
  ++stats_.injected;
  push(std::move(e));
}

double Simulator::uniform01() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

SimTime Simulator::sample_delay(const Delay& d) {
  double ms = d.a_ms;
  switch (d.kind) {
    case Delay::Kind::kFixed:
      break;
    case Delay::Kind::kUniform:
      ms = d.a_ms + (d.b_ms - d.a_ms) * uniform01();
      break;
    case Delay::Kind::kExponential:
      ms = -d.a_ms * std::log(1.0 - uniform01());
      break;
  }
  if (ms < 0) ms = 0;
  return static_cast<SimTime>(std::llround(ms * kMillis));
}

void Simulator::send(NodeId from, NodeId to, Payload frame) {
  ++stats_.sent;
  const LinkPolicy& lp = policy_.link(from, to);
  Event base;
  base.type = EventType::kDeliver;
  base.from = from;
  base.to = to;
  base.payload = std::move(frame);
  if (policy_.cut(from, to, now_)) {
    ++stats_.partition_dropped;
    log_net("cut", base);
    return;
  }
  std::uint32_t copies = 1 + lp.replay_count;
  for (std::uint32_t i = 0; i < copies; ++i) {
    if (lp.drop_prob > 0 && uniform01() < lp.drop_prob) {
      ++stats_.dropped;
      log_net("drop", base);
      continue;
    }
    Event e = base;
    e.time = now_ + sample_delay(lp.delay);
    if (!lp.reorder) {
      auto& tail = link_tail_[{from, to}];
      if (e.time < tail) e.time = tail;
      tail = e.time;
    }
    if (i > 0) ++stats_.replayed;
    push(std::move(e));
  }
}

TimerId Simulator::set_timer(NodeId owner, SimTime delay, std::function<void()> fn) {
  Event e;
  e.time = now_ + delay;
  e.type = EventType::kTimer;
  e.to = owner;
  e.timer = ++next_timer_;
  auto it = nodes_.find(owner);
  e.epoch = it == nodes_.end() ? 0 : it->second.epoch;
  e.fn = std::make_shared<std::function<void()>>(std::move(fn));
  TimerId id = e.timer;
  push(std::move(e));
  return id;
}

void Simulator::cancel_timer(TimerId id) {
  if (id != 0) cancelled_.insert(id);
}

void Simulator::charge(NodeId node, double micros) {
  if (in_delivery_ && node == current_) pending_cost_ += micros;
}

void Simulator::log_record(const std::string& line) {
  if (log_ != nullptr) *log_ << line << '\n';
}

void Simulator::log_net(const char* ev, const Event& e) {
  if (log_ == nullptr) return;
  auto h = digest(*e.payload);
  char buf[192];
  std::snprintf(buf, sizeof buf, "{\"t\":%llu,\"ev\":\"%s\",\"from\":%u,\"to\":%u,\"len\":%zu,\"h\":\"%s\"}",
                static_cast<unsigned long long>(now_), ev, e.from, e.to, e.payload->size(),
                to_hex(ByteView(h.data(), 8)).c_str());
  *log_ << buf << '\n';
}

void Simulator::deliver(Event& e) {
  auto it = nodes_.find(e.to);
  if (it == nodes_.end()) return;
  NodeSlot& slot = it->second;
  if (!slot.up) {
    ++stats_.down_dropped;
    log_net("down", e);
    return;
  }
  if (!e.injected && policy_.cut(e.from, e.to, now_)) {
    ++stats_.partition_dropped;
    log_net("cut", e);
    return;
  }
  if (slot.busy_until > now_) {
    e.time = slot.busy_until;
    push(std::move(e));
    return;
  }
  ++stats_.delivered;
  ++stats_.delivered_to[e.to];
  stats_.bytes_delivered += e.payload->size();
  log_net(e.injected ? "inject" : "deliver", e);
  if (tap_) tap_(e.from, e.to, *e.payload);
  current_ = e.to;
  in_delivery_ = true;
  pending_cost_ = costs_.per_message;
  slot.node->receive(e.from, *e.payload);
  in_delivery_ = false;
  if (slot.up) slot.busy_until = now_ + static_cast<SimTime>(std::llround(pending_cost_));
}

SimStats Simulator::run_until(const std::function<bool()>& done, SimTime max_time) {
  start();
  while (!queue_.empty()) {
    if (done && done()) break;
    if (queue_.top().time > max_time) break;
    if (stats_.events >= budget_) {
      stats_.budget_exhausted = true;
      break;
    }
    Event e = queue_.top();
    queue_.pop();
    now_ = e.time;
    ++stats_.events;
    switch (e.type) {
      case EventType::kDeliver:
        deliver(e);
        break;
      case EventType::kTimer: {
        if (cancelled_.erase(e.timer) != 0) break;
        auto it = nodes_.find(e.to);
        if (it != nodes_.end() && (!it->second.up || it->second.epoch != e.epoch)) break;
        current_ = e.to;
        (*e.fn)();
        break;
      }
      case EventType::kAction:
        (*e.fn)();
        break;
    }
  }
  bool stopped_early = stats_.budget_exhausted || (done && done());
  if (!stopped_early && !queue_.empty() && max_time > now_) now_ = max_time;
  stats_.end_time = now_;
  return stats_;
}

}  // namespace psl::netsim
