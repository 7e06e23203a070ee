#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "crir/env/environment.hpp"
#include "crir/harness/config.hpp"
#include "crir/harness/metrics.hpp"

namespace crir::harness {

using Rng = std::mt19937_64;

// Independent generator per purpose, derived from the run seed.
enum class Stream : std::uint64_t { kInit = 1, kEnv, kNoise, kReplay, kUniform, kGate, kPrcl };
Rng make_stream(std::uint64_t seed, Stream stream);

std::filesystem::path default_data_path();
std::unique_ptr<env::Environment> make_environment(const ExperimentConfig& config);

// Optional bookkeeping for end-to-end property checks; off in normal runs.
struct TrainAudit {
  bool track_mixed = false;    // transition serials seen by RL vs by PRCL batches
  bool check_routing = false;  // encoder snapshots around every RL and PRCL pass
};

struct RunResult {
  std::string run_id;
  std::uint64_t seed = 0;
  std::vector<EpisodeMetrics> episodes;
  std::vector<GradNormRecord> grad_norms;
  std::size_t env_steps = 0;
  std::size_t update_steps = 0;
  std::size_t prcl_batches = 0;
  std::uint64_t stale_priority_updates = 0;

  // track_mixed
  std::size_t rl_transitions = 0;       // distinct serials in critic updates
  std::size_t rl_transitions_in_prcl = 0;  // ... of which appeared in a PRCL batch

  // check_routing
  std::size_t rl_passes = 0;
  std::size_t rl_passes_moving_encoder = 0;
  std::size_t prcl_passes = 0;
  std::size_t prcl_passes_moving_encoder = 0;
};

// One training run: the interaction loop with replay, the gated contrastive
// step and the actor-critic updates. Deterministic in (config, seed).
RunResult train_run(const ExperimentConfig& config, std::uint64_t seed, const std::string& run_id,
                    const TrainAudit& audit = {});

std::string code_version();
std::string manifest_text(const ExperimentConfig& config, std::uint64_t seed, const std::string& run_id);

// metrics.csv, manifest.txt and, when logged, grad_norms.csv under dir.
void write_run(const RunResult& run, const ExperimentConfig& config, const std::filesystem::path& dir);

// Runs tasks on up to jobs worker threads; results keep task order.
std::vector<RunResult> run_parallel(const std::vector<std::function<RunResult()>>& tasks, std::size_t jobs);

// Mean and CI half-width across runs of the per-run average over the last
// fraction of episodes.
struct FinalWindow {
  double mean = 0.0;
  double half_width = 0.0;
  std::vector<double> per_run;
};
FinalWindow final_window(const std::vector<RunResult>& runs, double fraction, bool ctr = false);

struct Arm {
  std::string label;
  ExperimentConfig config;
};

const std::vector<std::string>& suite_names();
// The grid of one ablation suite on top of a base configuration.
std::vector<Arm> suite_arms(const std::string& suite, const ExperimentConfig& base);

struct AblationResult {
  std::vector<Arm> arms;
  std::vector<std::vector<RunResult>> runs;  // [arm][seed]
};

// Every arm x seed run, per-run outputs, pooled metrics.csv, aggregate.csv,
// summary.csv and one SVG per metric under out_dir.
AblationResult run_ablation(const std::string& suite, const ExperimentConfig& base, const std::filesystem::path& out_dir);

}  // namespace crir::harness
