// pslbench: trace generation, simulated experiments, and offline history
// verification.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "psl/bench.hpp"

using namespace psl;

namespace {

struct RunOptions {
  std::string scenario;
  std::uint64_t seed = 1;
  std::size_t workers = 4;
  std::size_t threads = 4;
  std::size_t ops = 10000;
  std::size_t keys = 3000;
  double read_ratio = 0.5;
  std::string dist = "zipfian";
  std::string sign_every = "200";
  bool no_preload = false;
  std::size_t memtable = 0;
  std::uint32_t f = 1;
  double sample_s = 5;
  double max_time_s = 3600;
  std::uint64_t op_cost = 50;
  std::string csv;
  std::string log;
  std::string summary;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--scenario", o.scenario, "JSON scenario file; flags given explicitly still apply on top");
  cmd->add_option("--seed", o.seed, "RNG seed (PSL_SEED overrides)");
  cmd->add_option("--workers", o.workers);
  cmd->add_option("--threads", o.threads, "application threads per worker");
  cmd->add_option("--ops", o.ops, "operations per worker");
  cmd->add_option("--keys", o.keys);
  cmd->add_option("--read-ratio", o.read_ratio);
  cmd->add_option("--dist", o.dist)->check(CLI::IsMember({"zipfian", "uniform"}));
  cmd->add_option("--sign-every", o.sign_every, "block signing interval, or inf");
  cmd->add_flag("--no-preload", o.no_preload);
  cmd->add_option("--memtable", o.memtable, "memtable capacity in entries (0 = default)");
  cmd->add_option("--f", o.f, "tolerated storage faults; 2f+1 servers");
  cmd->add_option("--sample-interval", o.sample_s, "seconds of simulated time per timeline row");
  cmd->add_option("--max-time", o.max_time_s, "simulated seconds before the run is abandoned");
  cmd->add_option("--op-cost", o.op_cost, "application microseconds per operation");
  cmd->add_option("--csv", o.csv, "timeline CSV output");
  cmd->add_option("--log", o.log, "JSONL event log output");
  cmd->add_option("--summary", o.summary, "summary JSON output (default stdout)");
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("PSL_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  return std::stoull(s);
}

bench::ExperimentConfig build_config(CLI::App* cmd, const RunOptions& o) {
  bench::ExperimentConfig cfg;
  if (!o.scenario.empty()) {
    std::ifstream in(o.scenario);
    if (!in) throw std::runtime_error("cannot open scenario " + o.scenario);
    cfg = bench::config_from_json(nlohmann::json::parse(in));
  }
  auto given = [&](const char* name) { return o.scenario.empty() || cmd->count(name) > 0; };
  if (given("--seed")) cfg.seed = o.seed;
  if (given("--workers")) cfg.workers = o.workers;
  if (given("--threads")) cfg.app_threads = o.threads;
  if (given("--ops")) cfg.workload.ops = o.ops;
  if (given("--keys")) cfg.workload.key_count = o.keys;
  if (given("--read-ratio")) cfg.workload.read_ratio = o.read_ratio;
  if (given("--dist")) cfg.workload.zipfian = o.dist == "zipfian";
  if (given("--sign-every")) cfg.sign_every = o.sign_every == "inf" ? 0 : std::stoull(o.sign_every);
  if (o.no_preload) cfg.preload = false;
  if (given("--memtable")) cfg.memtable_capacity = o.memtable;
  if (given("--f")) cfg.f = o.f;
  if (given("--sample-interval")) cfg.sample_interval = static_cast<SimTime>(o.sample_s * kSeconds);
  if (given("--max-time")) cfg.max_time = static_cast<SimTime>(o.max_time_s * kSeconds);
  if (given("--op-cost")) cfg.op_cost = o.op_cost;
  if (auto s = env_seed()) cfg.seed = *s;
  return cfg;
}

int emit(const bench::Metrics& m, const RunOptions& o) {
  if (!o.csv.empty()) {
    std::ofstream out(o.csv);
    bench::write_csv(out, m);
  }
  auto text = bench::summary_json(m).dump(2);
  if (o.summary.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream(o.summary) << text << "\n";
  }
  return m.pass() ? 0 : 1;
}

int run(CLI::App* cmd, const RunOptions& o, bool lock) {
  auto cfg = build_config(cmd, o);
  std::ofstream log;
  if (!o.log.empty()) log.open(o.log);
  std::ostream* sink = o.log.empty() ? nullptr : &log;
  auto m = lock ? bench::run_lock_benchmark(cfg, sink) : bench::run_experiment(cfg, sink);
  return emit(m, o);
}

// Column means over a timeline CSV written by `run`.
int report(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "cannot open " << path << "\n";
    return 2;
  }
  std::string line;
  std::getline(in, line);
  if (line != bench::kCsvHeader) {
    std::cerr << "unexpected header in " << path << "\n";
    return 2;
  }
  std::size_t rows = 0;
  double ops_s = 0, p50 = 0, p99 = 0;
  double lo = 0, hi = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (cols.size() < 9) continue;
    double v = std::stod(cols[4]);
    ops_s += v;
    p50 += std::stod(cols[6]);
    p99 += std::stod(cols[7]);
    lo = rows == 0 ? v : std::min(lo, v);
    hi = rows == 0 ? v : std::max(hi, v);
    ++rows;
    if (cols.size() > 9 && !cols[9].empty()) std::cout << "interval " << cols[0] << ": " << cols[9] << "\n";
  }
  if (rows == 0) {
    std::cout << "no samples\n";
    return 0;
  }
  std::printf("intervals %zu  mean ops/s %.1f  min %.1f  max %.1f  mean p50 %.3f ms  mean p99 %.3f ms\n", rows,
              ops_s / rows, lo, hi, p50 / rows, p99 / rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated deployment benchmarks and history checks"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-trace", "write a YCSB-style trace");
  bench::WorkloadSpec spec;
  std::uint64_t gen_seed = 1;
  std::uint32_t gen_worker = 0;
  std::string gen_dist = "zipfian";
  std::string gen_out;
  gen->add_option("--seed", gen_seed);
  gen->add_option("--worker", gen_worker);
  gen->add_option("--ops", spec.ops);
  gen->add_option("--keys", spec.key_count);
  gen->add_option("--value-size", spec.value_size);
  gen->add_option("--read-ratio", spec.read_ratio);
  gen->add_option("--theta", spec.theta);
  gen->add_option("--dist", gen_dist)->check(CLI::IsMember({"zipfian", "uniform"}));
  gen->add_option("-o,--out", gen_out, "output file (default stdout)");

  RunOptions run_opts;
  auto* run_cmd = app.add_subcommand("run", "run a workload and verify its history");
  add_run_options(run_cmd, run_opts);
  RunOptions lock_opts;
  lock_opts.threads = 1;
  auto* lock_cmd = app.add_subcommand("lock-bench", "run the workload with every batch under one global lock");
  add_run_options(lock_cmd, lock_opts);

  auto* counter = app.add_subcommand("counter", "locked shared counter");
  std::uint64_t counter_seed = 1;
  std::size_t counter_workers = 4, counter_incr = 50;
  counter->add_option("--seed", counter_seed);
  counter->add_option("--workers", counter_workers);
  counter->add_option("--increments", counter_incr, "per worker");

  auto* verify_cmd = app.add_subcommand("verify", "check a recorded event log");
  std::string log_path;
  verify_cmd->add_option("log", log_path)->required();

  auto* report_cmd = app.add_subcommand("report", "summarize a timeline CSV");
  std::string csv_path;
  report_cmd->add_option("csv", csv_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      spec.zipfian = gen_dist == "zipfian";
      if (auto s = env_seed()) gen_seed = *s;
      Bytes trace = bench::gen_trace(spec, gen_seed, gen_worker);
      std::string_view text(reinterpret_cast<const char*>(trace.data()), trace.size());
      if (gen_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream(gen_out, std::ios::binary) << text;
      }
      return 0;
    }
    if (run_cmd->parsed()) return run(run_cmd, run_opts, false);
    if (lock_cmd->parsed()) return run(lock_cmd, lock_opts, true);
    if (counter->parsed()) {
      if (auto s = env_seed()) counter_seed = *s;
      auto r = bench::run_counter(counter_seed, counter_workers, counter_incr);
      nlohmann::ordered_json j;
      j["completed"] = r.completed;
      j["final_value"] = r.final_value;
      j["expected"] = counter_workers * counter_incr;
      j["ops_per_s"] = r.ops_per_s;
      j["lock_grants"] = r.locks.grants;
      j["verdict"] = r.verdict.to_json();
      std::cout << j.dump(2) << "\n";
      return r.completed && r.final_value == counter_workers * counter_incr && r.verdict.ok() ? 0 : 1;
    }
    if (verify_cmd->parsed()) {
      std::ifstream in(log_path);
      if (!in) {
        std::cerr << "cannot open " << log_path << "\n";
        return 2;
      }
      auto verdict = verify::verify_all(read_history(in));
      std::cout << verdict.to_json().dump(2) << "\n";
      return verdict.ok() ? 0 : 1;
    }
    if (report_cmd->parsed()) return report(csv_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
