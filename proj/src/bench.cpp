#include "psl/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace psl::bench {

std::string key_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "user%08zu", i);
  return buf;
}

ZipfSampler::ZipfSampler(std::size_t n, double theta) {
  if (n == 0) throw std::invalid_argument("zipf over zero keys");
  cdf_.resize(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += 1.0 / std::pow(static_cast<double>(i + 1), theta);
    cdf_[i] = total;
  }
  for (auto& c : cdf_) c /= total;
  cdf_.back() = 1.0;
}

std::size_t ZipfSampler::operator()(std::mt19937_64& rng) const {
  double u = uniform01(rng);
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
}

double ZipfSampler::mass(std::size_t rank) const { return rank == 0 ? cdf_[0] : cdf_[rank] - cdf_[rank - 1]; }

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

namespace {

std::mt19937_64 trace_rng(std::uint64_t seed, std::uint32_t worker_id) {
  return std::mt19937_64(seed * 0x9E3779B97F4A7C15ULL + worker_id + 1);
}

Bytes random_value(std::mt19937_64& rng, std::size_t n) {
  Bytes v(n);
  for (auto& b : v) b = static_cast<std::uint8_t>(rng() & 0xff);
  return v;
}

}  // namespace

Bytes gen_trace(const WorkloadSpec& spec, std::uint64_t seed, std::uint32_t worker_id) {
  auto rng = trace_rng(seed, worker_id);
  std::optional<ZipfSampler> zipf;
  if (spec.zipfian) zipf.emplace(spec.key_count, spec.theta);
  std::string out;
  out.reserve(spec.ops * (spec.value_size * 2 + 20));
  for (std::size_t i = 0; i < spec.ops; ++i) {
    bool read = uniform01(rng) < spec.read_ratio;
    std::size_t k = zipf ? (*zipf)(rng) : static_cast<std::size_t>(rng() % spec.key_count);
    if (read) {
      out += "R " + key_name(k) + "\n";
    } else {
      out += "W " + key_name(k) + " " + to_hex(random_value(rng, spec.value_size)) + "\n";
    }
  }
  return to_bytes(out);
}

std::vector<TraceOp> parse_trace(ByteView trace) {
  std::vector<TraceOp> ops;
  std::string_view s(reinterpret_cast<const char*>(trace.data()), trace.size());
  std::size_t line_no = 0;
  while (!s.empty()) {
    ++line_no;
    auto nl = s.find('\n');
    std::string_view line = s.substr(0, nl);
    s = nl == std::string_view::npos ? std::string_view{} : s.substr(nl + 1);
    if (line.empty()) continue;
    auto bad = [&] { return std::invalid_argument("bad trace line " + std::to_string(line_no)); };
    if (line.size() < 3 || line[1] != ' ' || (line[0] != 'R' && line[0] != 'W')) throw bad();
    TraceOp op;
    op.write = line[0] == 'W';
    std::string_view rest = line.substr(2);
    if (op.write) {
      auto sp = rest.find(' ');
      if (sp == std::string_view::npos) throw bad();
      op.key = Key(rest.substr(0, sp));
      op.value = from_hex(rest.substr(sp + 1));
    } else {
      op.key = Key(rest);
    }
    ops.push_back(std::move(op));
  }
  return ops;
}

// --- recording ---

struct Recorder {
  SimTime origin = 0;
  SimTime interval = 5 * kSeconds;
  bool measuring = false;
  struct Bucket {
    std::uint64_t ops = 0;
    std::uint64_t commits = 0;
    std::vector<SimTime> latencies;
  };
  std::map<std::uint64_t, Bucket> buckets;
  std::vector<SimTime> latencies;
  std::uint64_t ops = 0;
  std::uint64_t commits = 0;
  SimTime last = 0;

  Bucket& at(SimTime t) { return buckets[(t - origin) / interval]; }
  void op_done(SimTime t, std::uint64_t n) {
    if (!measuring) return;
    ops += n;
    at(t).ops += n;
    last = std::max(last, t);
  }
  void commit_done(SimTime t, SimTime latency) {
    if (!measuring) return;
    ++commits;
    auto& b = at(t);
    ++b.commits;
    b.latencies.push_back(latency);
    latencies.push_back(latency);
    last = std::max(last, t);
  }
};

namespace {

double percentile_ms(std::vector<SimTime> v, double p) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return static_cast<double>(v[rank - 1]) / 1000.0;
}

constexpr std::uint64_t kGlobalLock = 1;

// One logical application thread replaying its share of a trace.
struct TraceThread : std::enable_shared_from_this<TraceThread> {
  std::shared_ptr<Invocation> inv;
  std::shared_ptr<std::vector<TraceOp>> ops;
  std::shared_ptr<Recorder> rec;
  std::vector<std::pair<std::size_t, std::size_t>> batches;  // [begin, end)
  std::size_t batch = 0;
  std::size_t pos = 0;
  SimTime op_cost = 0;
  bool lock = false;
  TransactionBuffer txn;
  std::function<void()> on_done;

  Worker& w() { return inv->worker; }

  void next_batch() {
    if (batch == batches.size()) {
      on_done();
      return;
    }
    pos = batches[batch].first;
    txn.clear();
    auto self = shared_from_this();
    if (lock) {
      w().acquire_lock(kGlobalLock, [self] { self->step(); });
    } else {
      step();
    }
  }

  void step() {
    auto self = shared_from_this();
    if (pos == batches[batch].second) {
      SimTime started = w().clock_now();
      std::uint64_t n = batches[batch].second - batches[batch].first;
      w().commit(txn, [self, started, n](std::optional<CommitReceipt> r) {
        SimTime t = self->w().clock_now();
        self->rec->op_done(t, n);
        if (r) self->rec->commit_done(t, t - started);
        if (self->lock) self->w().release_lock(kGlobalLock);
        ++self->batch;
        self->next_batch();
      });
      return;
    }
    w().schedule(op_cost, [self] {
      const TraceOp& op = (*self->ops)[self->pos++];
      if (op.write) {
        self->txn.write(op.key, op.value);
        self->step();
      } else {
        self->w().read_key(op.key, [self](std::optional<TimestampedValue>) { self->step(); });
      }
    });
  }
};

struct CounterLoop : std::enable_shared_from_this<CounterLoop> {
  std::shared_ptr<Invocation> inv;
  std::shared_ptr<Recorder> rec;
  std::size_t remaining = 0;
  std::size_t done = 0;

  void next() {
    if (remaining == 0) {
      inv->finish(true, to_bytes(std::to_string(done)));
      return;
    }
    auto self = shared_from_this();
    Worker& w = inv->worker;
    w.acquire_lock(kGlobalLock, [self, &w] {
      w.read_key(Key("counter"), [self, &w](std::optional<TimestampedValue> v) {
        std::uint64_t cur = 0;
        if (v) cur = std::stoull(std::string(v->data.begin(), v->data.end()));
        TransactionBuffer txn;
        txn.write(Key("counter"), to_bytes(std::to_string(cur + 1)));
        SimTime started = w.clock_now();
        w.commit(txn, [self, &w, started](std::optional<CommitReceipt>) {
          self->rec->op_done(w.clock_now(), 1);
          self->rec->commit_done(w.clock_now(), w.clock_now() - started);
          w.release_lock(kGlobalLock);
          --self->remaining;
          ++self->done;
          self->next();
        });
      });
    });
  }
};

}  // namespace

Bytes ycsb_code() { return to_bytes("fn:ycsb/1"); }
Bytes counter_code() { return to_bytes("fn:counter/1"); }
Bytes identity_code() { return to_bytes("fn:identity/1"); }

std::shared_ptr<HandlerRegistry> builtin_handlers(std::shared_ptr<Recorder> rec, const ExperimentConfig& cfg) {
  auto reg = std::make_shared<HandlerRegistry>();
  std::size_t threads = cfg.lock_mode ? 1 : std::max<std::size_t>(1, cfg.app_threads);
  std::size_t batch_size = std::max<std::size_t>(1, cfg.workload.batch_size);
  SimTime op_cost = cfg.op_cost;
  bool lock = cfg.lock_mode;

  (*reg)[digest(ycsb_code())] = [=](std::shared_ptr<Invocation> inv) {
    std::shared_ptr<std::vector<TraceOp>> ops;
    try {
      ops = std::make_shared<std::vector<TraceOp>>(parse_trace(inv->input));
    } catch (const std::exception& e) {
      inv->finish(false, to_bytes(e.what()));
      return;
    }
    auto left = std::make_shared<std::size_t>(threads);
    auto total = ops->size();
    for (std::size_t t = 0; t < threads; ++t) {
      auto th = std::make_shared<TraceThread>();
      th->inv = inv;
      th->ops = ops;
      th->rec = rec;
      th->op_cost = op_cost;
      th->lock = lock;
      for (std::size_t b = t * batch_size; b < ops->size(); b += threads * batch_size) {
        th->batches.emplace_back(b, std::min(b + batch_size, ops->size()));
      }
      th->on_done = [inv, left, total] {
        if (--*left == 0) inv->finish(true, to_bytes(std::to_string(total)));
      };
      th->next_batch();
    }
  };
  (*reg)[digest(counter_code())] = [rec](std::shared_ptr<Invocation> inv) {
    auto loop = std::make_shared<CounterLoop>();
    loop->inv = inv;
    loop->rec = rec;
    try {
      loop->remaining = std::stoul(std::string(inv->input.begin(), inv->input.end()));
    } catch (const std::exception&) {
      inv->finish(false, to_bytes("bad increment count"));
      return;
    }
    loop->next();
  };
  (*reg)[digest(identity_code())] = [](std::shared_ptr<Invocation> inv) { inv->finish(true, inv->input); };
  return reg;
}

// --- configuration ---

ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig c) {
  auto get = [&](const char* name, auto& field) {
    if (j.contains(name)) field = j.at(name).get<std::decay_t<decltype(field)>>();
  };
  get("seed", c.seed);
  get("workers", c.workers);
  get("app_threads", c.app_threads);
  get("memtable_capacity", c.memtable_capacity);
  get("f", c.f);
  get("lock_mode", c.lock_mode);
  get("attest", c.attest);
  get("preload", c.preload);
  if (j.contains("sign_every")) {
    const auto& s = j.at("sign_every");
    c.sign_every = s.is_string() && s.get<std::string>() == "inf" ? 0 : s.get<std::uint64_t>();
  }
  if (j.contains("sample_interval_s")) c.sample_interval = static_cast<SimTime>(j.at("sample_interval_s").get<double>() * kSeconds);
  if (j.contains("max_time_s")) c.max_time = static_cast<SimTime>(j.at("max_time_s").get<double>() * kSeconds);
  get("op_cost_us", c.op_cost);
  if (j.contains("workload")) {
    const auto& w = j.at("workload");
    auto& s = c.workload;
    if (w.contains("key_count")) s.key_count = w.at("key_count").get<std::size_t>();
    if (w.contains("value_size")) s.value_size = w.at("value_size").get<std::size_t>();
    if (w.contains("read_ratio")) s.read_ratio = w.at("read_ratio").get<double>();
    if (w.contains("distribution")) {
      auto d = w.at("distribution").get<std::string>();
      if (d != "zipfian" && d != "uniform") throw std::invalid_argument("unknown distribution: " + d);
      s.zipfian = d == "zipfian";
    }
    if (w.contains("theta")) s.theta = w.at("theta").get<double>();
    if (w.contains("batch_size")) s.batch_size = w.at("batch_size").get<std::size_t>();
    if (w.contains("ops")) s.ops = w.at("ops").get<std::size_t>();
  }
  if (j.contains("policy")) c.policy = j.at("policy");
  if (j.contains("injections")) {
    c.injections.clear();
    for (const auto& i : j.at("injections")) {
      Injection inj;
      inj.at = static_cast<SimTime>(i.at("at_s").get<double>() * kSeconds);
      inj.action = i.at("action").get<std::string>();
      inj.node = i.at("node").get<std::string>();
      if (inj.action != "crash" && inj.action != "restart") throw std::invalid_argument("unknown action: " + inj.action);
      c.injections.push_back(std::move(inj));
    }
  }
  return c;
}

// --- runs ---

namespace {

ClusterConfig cluster_config(const ExperimentConfig& cfg, std::shared_ptr<Recorder> rec) {
  ClusterConfig cc;
  cc.seed = cfg.seed;
  cc.f = cfg.f;
  cc.workers = cfg.workers;
  cc.worker.sign_every = cfg.sign_every;
  if (cfg.memtable_capacity != 0) cc.worker.memtable.capacity = cfg.memtable_capacity;
  cc.psl_db = cfg.psl_db;
  cc.psl_db.audit_cut = true;
  cc.attest = cfg.attest;
  cc.handlers = builtin_handlers(std::move(rec), cfg);
  return cc;
}

// Installs the scenario policy with partition windows shifted to `origin`.
void apply_policy(Cluster& c, const nlohmann::json& policy, SimTime origin) {
  if (policy.is_null()) return;
  auto p = netsim::policy_from_json(policy, c.resolver());
  for (auto& part : p.partitions) {
    part.start += origin;
    part.end += origin;
  }
  c.sim().policy() = std::move(p);
}

// Writes every key once from worker 0 so reads start warm.
bool preload(Cluster& c, const WorkloadSpec& spec, std::uint64_t seed) {
  auto rng = trace_rng(seed, 0xffffffffu);
  auto pending = std::make_shared<std::size_t>(0);
  constexpr std::size_t kChunk = 100;
  for (std::size_t i = 0; i < spec.key_count; i += kChunk) {
    TransactionBuffer txn;
    for (std::size_t k = i; k < std::min(i + kChunk, spec.key_count); ++k) {
      txn.write(Key(key_name(k)), random_value(rng, spec.value_size));
    }
    ++*pending;
    c.worker(0).commit(txn, [pending](std::optional<CommitReceipt>) { --*pending; });
  }
  if (!c.run_until([&] { return *pending == 0; }, c.sim().now() + 600 * kSeconds)) return false;
  return c.barrier(60 * kSeconds);
}

std::vector<Key> all_keys(const WorkloadSpec& spec) {
  std::vector<Key> keys;
  keys.reserve(spec.key_count);
  for (std::size_t i = 0; i < spec.key_count; ++i) keys.emplace_back(key_name(i));
  return keys;
}

void schedule_injections(Cluster& c, const std::vector<Injection>& injections, SimTime origin) {
  for (const auto& inj : injections) {
    for (NodeId id : c.resolve(inj.node)) {
      bool crash = inj.action == "crash";
      c.sim().at(origin + inj.at, [&c, id, crash] {
        if (crash) {
          c.sim().crash(id);
        } else {
          c.sim().restart(id);
        }
      });
    }
  }
}

// Records the cumulative sent-message count at every interval boundary.
struct MessageSampler {
  std::vector<std::uint64_t> sent_at;  // index i = count at origin + i * interval
  bool stopped = false;
};

void arm_sampler(Cluster& c, std::shared_ptr<MessageSampler> s, SimTime origin, SimTime interval) {
  s->sent_at.push_back(c.sim().stats().sent);
  auto next = origin + interval * s->sent_at.size();
  c.sim().at(next, [&c, s, origin, interval] {
    if (s->stopped) return;
    arm_sampler(c, s, origin, interval);
  });
}

void collect_common(Cluster& c, Metrics& m) {
  m.blocks = 0;
  m.block_signatures = 0;
  for (std::size_t i = 0; i < c.worker_count(); ++i) {
    const auto& ws = c.worker(i).stats();
    m.blocks += ws.blocks_emitted;
    m.block_signatures += ws.signed_blocks;
  }
  m.report_signatures = c.psl_db().stats().signatures;
  m.cut_violations = c.psl_db().stats().cut_violations + c.psl_db().stats().cut_audit_failures;
  m.cut_audits = c.psl_db().stats().cut_audits;
  m.cut_closed = c.psl_db().cut_closed();
}

}  // namespace

Metrics run_experiment(const ExperimentConfig& cfg, std::ostream* event_log) {
  Metrics m;
  auto rec = std::make_shared<Recorder>();
  rec->interval = cfg.sample_interval;
  Cluster c(cluster_config(cfg, rec));
  if (event_log != nullptr) {
    c.sim().set_event_log(event_log);
    c.history().set_sink(event_log);
  }
  m.provisioned = c.start(60 * kSeconds);
  if (!m.provisioned) return m;
  if (cfg.preload && !preload(c, cfg.workload, cfg.seed)) return m;

  auto& user = c.user();
  std::vector<std::pair<Digest, Digest>> packages(cfg.workers);
  std::size_t uploaded = 0;
  Bytes code = ycsb_code();
  for (std::size_t i = 0; i < cfg.workers; ++i) {
    Bytes trace = gen_trace(cfg.workload, cfg.seed, static_cast<std::uint32_t>(i));
    user.upload(code, trace, [&packages, &uploaded, i](Digest code_id, Digest input_id) {
      packages[i] = {code_id, input_id};
      ++uploaded;
    });
  }
  if (!c.run_until([&] { return uploaded == cfg.workers; }, c.sim().now() + 600 * kSeconds)) return m;

  std::uint64_t blocks_before = 0;
  for (std::size_t i = 0; i < c.worker_count(); ++i) blocks_before += c.worker(i).stats().blocks_emitted;
  std::uint64_t sent_before = c.sim().stats().sent;
  SimTime origin = c.sim().now();
  rec->origin = origin;
  rec->last = origin;
  rec->measuring = true;
  apply_policy(c, cfg.policy, origin);
  schedule_injections(c, cfg.injections, origin);
  auto sampler = std::make_shared<MessageSampler>();
  arm_sampler(c, sampler, origin, cfg.sample_interval);

  std::size_t answered = 0;
  for (const auto& [code_id, input_id] : packages) {
    user.invoke(code_id, input_id, [&m, &answered](rpc::InvokeResult r) {
      if (!r.ok) ++m.failed_invocations;
      ++answered;
    });
  }
  m.completed = c.run_until([&] { return answered == cfg.workers; }, origin + cfg.max_time) && m.failed_invocations == 0;
  SimTime end = std::max(rec->last, origin + 1);
  rec->measuring = false;
  sampler->stopped = true;
  sampler->sent_at.push_back(c.sim().stats().sent);
  m.messages = c.sim().stats().sent - sent_before;

  m.ops = rec->ops;
  m.commits = rec->commits;
  m.duration_s = static_cast<double>(end - origin) / kSeconds;
  m.ops_per_s = m.duration_s > 0 ? static_cast<double>(m.ops) / m.duration_s : 0.0;
  m.p50_ms = percentile_ms(rec->latencies, 0.50);
  m.p99_ms = percentile_ms(rec->latencies, 0.99);

  // A run that issued no operations has no timeline.
  std::uint64_t intervals = m.ops == 0 ? 0 : (end - origin + cfg.sample_interval - 1) / cfg.sample_interval;
  for (std::uint64_t i = 0; i < intervals; ++i) {
    Sample s;
    s.start = i * cfg.sample_interval;
    s.end = (i + 1) * cfg.sample_interval;
    auto it = rec->buckets.find(i);
    if (it != rec->buckets.end()) {
      s.ops = it->second.ops;
      s.commits = it->second.commits;
      s.p50_ms = percentile_ms(it->second.latencies, 0.50);
      s.p99_ms = percentile_ms(it->second.latencies, 0.99);
    }
    const auto& sent = sampler->sent_at;
    if (i + 1 < sent.size()) s.messages = sent[i + 1] - sent[i];
    for (const auto& inj : cfg.injections) {
      if (inj.at >= s.start && inj.at < s.end) {
        if (!s.marker.empty()) s.marker += ";";
        s.marker += inj.action + " " + inj.node;
      }
    }
    m.timeline.push_back(std::move(s));
  }

  collect_common(c, m);
  m.multicast_blocks = m.blocks - blocks_before;

  c.heal();
  if (!c.barrier(120 * kSeconds) || !c.final_reads(all_keys(cfg.workload), 120 * kSeconds)) m.completed = false;
  collect_common(c, m);
  m.multicast_blocks = m.blocks - blocks_before;
  m.verdict = verify::verify_all(c.history().events());
  return m;
}

Metrics run_lock_benchmark(ExperimentConfig cfg, std::ostream* event_log) {
  cfg.lock_mode = true;
  cfg.app_threads = 1;
  return run_experiment(cfg, event_log);
}

CounterResult run_counter(std::uint64_t seed, std::size_t workers, std::size_t increments) {
  CounterResult out;
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.workers = workers;
  auto rec = std::make_shared<Recorder>();
  Cluster c(cluster_config(cfg, rec));
  if (!c.start(60 * kSeconds)) return out;
  std::vector<std::pair<Digest, Digest>> packages;
  std::size_t uploaded = 0;
  for (std::size_t i = 0; i < workers; ++i) {
    c.user().upload(counter_code(), to_bytes(std::to_string(increments)), [&](Digest code_id, Digest input_id) {
      packages.emplace_back(code_id, input_id);
      ++uploaded;
    });
  }
  if (!c.run_until([&] { return uploaded == workers; }, c.sim().now() + 60 * kSeconds)) return out;
  SimTime origin = c.sim().now();
  rec->origin = origin;
  rec->measuring = true;
  std::size_t answered = 0;
  bool failed = false;
  for (const auto& [code_id, input_id] : packages) {
    c.user().invoke(code_id, input_id, [&](rpc::InvokeResult r) {
      failed = failed || !r.ok;
      ++answered;
    });
  }
  out.completed = c.run_until([&] { return answered == workers; }, origin + 3600 * kSeconds) && !failed;
  SimTime end = std::max(rec->last, origin + 1);
  out.ops_per_s = static_cast<double>(rec->ops) / (static_cast<double>(end - origin) / kSeconds);
  c.barrier(60 * kSeconds);
  std::optional<TimestampedValue> final;
  bool read = false;
  c.worker(0).read_key(Key("counter"), [&](std::optional<TimestampedValue> v) {
    final = std::move(v);
    read = true;
  });
  c.run_until([&] { return read; }, c.sim().now() + 60 * kSeconds);
  if (final) out.final_value = std::stoull(std::string(final->data.begin(), final->data.end()));
  out.locks = verify::check_lock_serial(c.history().events());
  out.verdict = verify::verify_all(c.history().events());
  return out;
}

// --- output ---

const char* const kCsvHeader = "interval,start_s,end_s,ops,ops_per_s,commits,p50_commit_ms,p99_commit_ms,messages,marker";

void write_csv(std::ostream& out, const Metrics& m) {
  out << kCsvHeader << "\n";
  char buf[256];
  for (std::size_t i = 0; i < m.timeline.size(); ++i) {
    const auto& s = m.timeline[i];
    double width = static_cast<double>(s.end - s.start) / kSeconds;
    std::snprintf(buf, sizeof buf, "%zu,%.3f,%.3f,%llu,%.3f,%llu,%.3f,%.3f,%llu,", i,
                  static_cast<double>(s.start) / kSeconds, static_cast<double>(s.end) / kSeconds,
                  static_cast<unsigned long long>(s.ops), static_cast<double>(s.ops) / width,
                  static_cast<unsigned long long>(s.commits), s.p50_ms, s.p99_ms,
                  static_cast<unsigned long long>(s.messages));
    out << buf << s.marker << "\n";
  }
}

nlohmann::ordered_json summary_json(const Metrics& m) {
  auto round3 = [](double v) { return std::round(v * 1000.0) / 1000.0; };
  nlohmann::ordered_json j;
  j["pass"] = m.pass();
  j["provisioned"] = m.provisioned;
  j["completed"] = m.completed;
  j["ops"] = m.ops;
  j["commits"] = m.commits;
  j["failed_invocations"] = m.failed_invocations;
  j["duration_s"] = round3(m.duration_s);
  j["ops_per_s"] = round3(m.ops_per_s);
  j["p50_commit_ms"] = round3(m.p50_ms);
  j["p99_commit_ms"] = round3(m.p99_ms);
  j["messages"] = m.messages;
  j["blocks"] = m.blocks;
  j["multicast_blocks"] = m.multicast_blocks;
  j["block_signatures"] = m.block_signatures;
  j["report_signatures"] = m.report_signatures;
  j["cut_violations"] = m.cut_violations;
  j["cut_audits"] = m.cut_audits;
  j["cut_closed"] = m.cut_closed;
  if (m.verdict) j["verdict"] = m.verdict->to_json();
  return j;
}

}  // namespace psl::bench
