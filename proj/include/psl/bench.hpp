#pragma once

// YCSB-style workloads run as functions on the simulated cluster, plus the
// metrics timeline and CSV output.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "psl/cluster.hpp"
#include "psl/verifier.hpp"

namespace psl::bench {

struct WorkloadSpec {
  std::size_t key_count = 3000;
  std::size_t value_size = 100;
  double read_ratio = 0.5;
  bool zipfian = true;
  double theta = 0.99;
  std::size_t batch_size = 20;
  std::size_t ops = 10000;  // per worker
};

/// "user%08d" for key index i.
std::string key_name(std::size_t i);

/// Draws ranks 0..n-1 with P(i) proportional to 1/(i+1)^theta.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double theta);
  std::size_t operator()(std::mt19937_64& rng) const;
  double mass(std::size_t rank) const;
  std::size_t size() const { return cdf_.size(); }

 private:
  std::vector<double> cdf_;
};

/// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform01(std::mt19937_64& rng);

/// Lines "R <key>" and "W <key> <value-hex>", one per op.
Bytes gen_trace(const WorkloadSpec& spec, std::uint64_t seed, std::uint32_t worker_id);

struct TraceOp {
  bool write = false;
  Key key;
  Bytes value;
};
std::vector<TraceOp> parse_trace(ByteView trace);

/// Injected failure at a time relative to the start of the measured phase.
struct Injection {
  SimTime at = 0;
  std::string action;  // "crash" or "restart"
  std::string node;    // scenario node name
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::size_t app_threads = 4;
  std::uint64_t sign_every = 200;  // 0 = never
  std::size_t memtable_capacity = 0;  // 0 = default
  std::uint32_t f = 1;
  bool lock_mode = false;
  bool attest = true;
  bool preload = true;  // write every key once before measuring
  WorkloadSpec workload;
  nlohmann::json policy;  // scenario policy, resolved against the cluster's node names
  std::vector<Injection> injections;
  SimTime sample_interval = 5 * kSeconds;
  SimTime max_time = 3600 * kSeconds;
  SimTime op_cost = 50;  // application time per op, microseconds
  PslDbConfig psl_db;
};

ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});

struct Sample {
  SimTime start = 0;
  SimTime end = 0;
  std::uint64_t ops = 0;
  std::uint64_t commits = 0;
  double p50_ms = 0;
  double p99_ms = 0;
  std::uint64_t messages = 0;
  std::string marker;
};

struct Metrics {
  bool provisioned = false;
  bool completed = false;
  std::vector<Sample> timeline;
  std::uint64_t ops = 0;
  std::uint64_t commits = 0;
  std::uint64_t failed_invocations = 0;
  double duration_s = 0;
  double ops_per_s = 0;
  double p50_ms = 0;
  double p99_ms = 0;
  std::uint64_t messages = 0;
  std::uint64_t blocks = 0;
  std::uint64_t multicast_blocks = 0;
  std::uint64_t block_signatures = 0;
  std::uint64_t report_signatures = 0;
  std::uint64_t cut_violations = 0;
  std::uint64_t cut_audits = 0;
  bool cut_closed = true;
  std::optional<verify::Verdict> verdict;

  bool pass() const { return provisioned && completed && cut_violations == 0 && cut_closed && verdict && verdict->ok(); }
};

/// Runs the workload on every worker through the manager and verifies the
/// recorded history. `event_log` receives network and history records.
Metrics run_experiment(const ExperimentConfig& cfg, std::ostream* event_log = nullptr);
/// Same workload with every batch under one global lock, one thread per
/// worker.
Metrics run_lock_benchmark(ExperimentConfig cfg, std::ostream* event_log = nullptr);

struct CounterResult {
  bool completed = false;
  std::uint64_t final_value = 0;
  double ops_per_s = 0;
  verify::LockResult locks;
  verify::Verdict verdict;
};
/// Every worker performs `increments` read-modify-write steps on one key,
/// each under the same lock.
CounterResult run_counter(std::uint64_t seed, std::size_t workers, std::size_t increments);

/// Code bytes of the built-in functions; their digests key the handler
/// registry.
Bytes ycsb_code();
Bytes counter_code();
Bytes identity_code();

struct Recorder;
std::shared_ptr<HandlerRegistry> builtin_handlers(std::shared_ptr<Recorder> rec, const ExperimentConfig& cfg);

void write_csv(std::ostream& out, const Metrics& m);
extern const char* const kCsvHeader;
nlohmann::ordered_json summary_json(const Metrics& m);

}  // namespace psl::bench
