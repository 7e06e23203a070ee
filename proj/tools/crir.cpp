// crir: training, ablation suites and oracle checks from the command line.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "crir/env/environment.hpp"
#include "crir/harness/config.hpp"
#include "crir/harness/oracles.hpp"
#include "crir/harness/train.hpp"

namespace hs = crir::harness;

namespace {

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& out_dir) {
  hs::ExperimentConfig cfg = hs::parse_config_file(config_path);
  std::vector<std::uint64_t> seeds;
  if (seed) {
    seeds.push_back(*seed);
  } else {
    for (std::size_t k = 0; k < cfg.seeds; ++k) seeds.push_back(cfg.seed + k);
  }
  std::vector<std::function<hs::RunResult()>> tasks;
  for (std::uint64_t s : seeds) {
    tasks.push_back([&cfg, s] { return hs::train_run(cfg, s, "seed" + std::to_string(s)); });
  }
  const auto runs = hs::run_parallel(tasks, cfg.jobs);
  const std::filesystem::path out(out_dir);
  std::vector<hs::EpisodeMetrics> pooled;
  for (const auto& r : runs) {
    hs::write_run(r, cfg, out / r.run_id);
    pooled.insert(pooled.end(), r.episodes.begin(), r.episodes.end());
    spdlog::info("{}: {} episodes, {} updates", r.run_id, r.episodes.size(), r.update_steps);
  }
  hs::emit_csv(pooled, out / "metrics.csv");
  if (runs.size() >= 2) {
    std::vector<std::vector<double>> reward, ctr;
    for (const auto& r : runs) {
      reward.emplace_back();
      ctr.emplace_back();
      for (const auto& m : r.episodes) {
        reward.back().push_back(m.cumulative_reward);
        ctr.back().push_back(m.ctr);
      }
    }
    std::vector<hs::AggregateCurve> rc{hs::aggregate_ci(reward, cfg.smoothing_window, "reward")};
    std::vector<hs::AggregateCurve> cc{hs::aggregate_ci(ctr, cfg.smoothing_window, "ctr")};
    hs::emit_aggregate_csv(rc, "cumulative_reward", out / "aggregate_reward.csv");
    hs::emit_aggregate_csv(cc, "ctr", out / "aggregate_ctr.csv");
    hs::emit_svg(rc, out / "reward.svg", {"episode reward", "episode", "cumulative reward"});
    hs::emit_svg(cc, out / "ctr.svg", {"CTR", "episode", "CTR"});
  }
  return 0;
}

int cmd_ablate(const std::string& suite, const std::string& out_dir, const std::string& config_path,
               std::optional<std::size_t> jobs) {
  hs::ExperimentConfig base;
  if (!config_path.empty()) base = hs::parse_config_file(config_path);
  if (jobs) base.jobs = *jobs;
  auto res = hs::run_ablation(suite, base, out_dir);
  std::size_t n = 0;
  for (const auto& a : res.runs) n += a.size();
  std::printf("%s: %zu runs over %zu arms written to %s\n", suite.c_str(), n, res.arms.size(), out_dir.c_str());
  return 0;
}

int cmd_check_grads(std::size_t points) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = hs::run_gradient_oracle(points);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.max_error < 1e-4;
    ok = ok && pass;
    std::printf("%-22s points=%zu max_rel_err=%.3e %s\n", r.loss.c_str(), r.points, r.max_error,
                pass ? "PASS" : "FAIL");
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("elapsed %.2fs\n", secs);
  return ok ? 0 : 1;
}

int cmd_oracle_rewards() {
  bool ok = true;
  std::printf("%-8s %-8s %-10s %-10s\n", "rating", "repeats", "expected", "computed");
  for (const auto& row : hs::golden_reward_table()) {
    const double got = crir::env::ml1m_reward(row.rating, row.repeats);
    const bool match = got == row.reward;
    ok = ok && match;
    std::printf("%-8s %-8zu %-10.6g %-10.6g%s\n", row.rating ? std::to_string(*row.rating).c_str() : "absent",
                row.repeats, row.reward, got, match ? "" : "  MISMATCH");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CRIR interactive-recommendation laboratory"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train with a configuration file");
  std::string config_path, out_dir = "runs";
  std::optional<std::uint64_t> seed;
  train->add_option("--config", config_path, "key = value configuration file")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "single run with this seed instead of the configured seed range");
  train->add_option("--out", out_dir, "output directory");

  auto* ablate = app.add_subcommand("ablate", "run one ablation suite");
  std::string suite, ablate_out, base_config;
  std::optional<std::size_t> jobs;
  ablate->add_option("--suite", suite, "ablation suite")
      ->required()
      ->check(CLI::IsMember(hs::suite_names()));
  ablate->add_option("--out", ablate_out, "output directory")->required();
  ablate->add_option("--config", base_config, "base configuration")->check(CLI::ExistingFile);
  ablate->add_option("--jobs", jobs, "parallel runs");

  auto* grads = app.add_subcommand("check-grads", "finite-difference check of every loss");
  std::size_t points = 100;
  grads->add_option("--points", points, "random points per loss");

  app.add_subcommand("oracle-rewards", "print the hand-traced ML-1M reward table against the implementation");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config_path, seed, out_dir);
    if (*ablate) return cmd_ablate(suite, ablate_out, base_config, jobs);
    if (*grads) return cmd_check_grads(points);
    return cmd_oracle_rewards();
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
}
