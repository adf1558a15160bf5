#pragma once

#include <string>
#include <vector>

#include "atsc/trainer.hpp"

namespace atsc {

/// Per-seed evaluation outcome: average queue is the episode mean of the
/// summed per-agent queues sampled every dt.
struct EvalReport {
  std::string algorithm;
  std::string scenario;
  std::vector<std::uint64_t> seeds;
  std::vector<Scalar> avg_queue;  // one per seed
  Scalar mean = 0.0;
  Scalar stddev = 0.0;  // population
};

/// Runs one evaluation episode per seed (policy sampled, no learning) and
/// aggregates. The seed drives both the insertion schedule and the action
/// sampling stream.
EvalReport evaluate(const TrainConfig& cfg, MultiAgentSystem& sys, const ScenarioSpec& scenario,
                    const std::vector<std::uint64_t>& seeds);

struct CrossRow {
  std::string scenario;
  EvalReport policy;
  EvalReport greedy;
};

/// Evaluates the trained policy and the greedy baseline on each scenario.
std::vector<CrossRow> cross_test(const TrainConfig& cfg, const TrafficNetwork& net,
                                 MultiAgentSystem& sys,
                                 const std::vector<ScenarioSpec>& scenarios);

struct StabilityResult {
  Algorithm algorithm = Algorithm::Ma2c;
  int runs = 0;
  int successes = 0;
  std::vector<bool> per_run;
  std::vector<Scalar> final_avg_queue;  // last-quartile mean per run
};

/// Trains n_runs replicas with distinct train seeds and counts
/// success_criterion passes. Greedy is not a learner and is rejected.
/// Replicas run in parallel, bounded by the ATSC_THREADS environment
/// variable; results are assembled by run index either way.
StabilityResult stability_suite(const TrainConfig& cfg, const TrafficNetwork& net, int n_runs);

// --- persistence -----------------------------------------------------------

/// Little-endian binary checkpoint: magic, version byte, architecture hash,
/// then length-prefixed parameter and optimizer-state blocks per agent.
/// load_checkpoint requires a system built for the same algorithm and network
/// and restores it bit-exactly.
void save_checkpoint(const MultiAgentSystem& sys, const std::string& path);
void load_checkpoint(MultiAgentSystem& sys, const std::string& path);
/// Algorithm stored in a checkpoint header (to build the system before load).
Algorithm checkpoint_algorithm(const std::string& path);

void save_record(const RunRecord& record, const std::string& path);  // json
RunRecord load_record(const std::string& path);
void save_report(const EvalReport& report, const std::string& path);  // json
EvalReport load_report(const std::string& path);

enum class ExportSeries { Queue, Vehicles, Losses };
enum class ExportFormat { Csv, Json };

/// Plot-ready series from a record: learning-step vs average queue, tick vs
/// running vehicles, or learning-step vs per-agent losses.
void export_record(const RunRecord& record, ExportSeries series, ExportFormat format,
                   const std::string& path);
void export_report(const EvalReport& report, ExportFormat format, const std::string& path);

// --- configuration and CLI ---------------------------------------------

struct CliOptions {
  TrainConfig cfg;
  std::string grid = "3x3";
  std::string net_file;  // takes precedence over grid when set
  double lane_length = 200.0;
  int phases = 2;
  std::string out_prefix = "run";
};

/// key=value lines, # comments. Keys follow the paper's symbols (alpha,
/// gamma, beta, batch, dt, ts, ty, eta_theta, eta_psi) plus artifact keys
/// (algo, scenario, seed, seed_mode, episodes, grid, net, out, ...).
/// Flags given on the command line override file values.
void apply_config_file(const std::string& path, CliOptions& opt);

TrafficNetwork resolve_network(const CliOptions& opt, std::uint64_t seed);

/// Subcommands: train, eval, cross, stability, export, gen-net.
/// Exit 0 on success, 2 on configuration errors, 1 on runtime failures.
int run_cli(int argc, const char* const* argv);

}  // namespace atsc
