#include "crir/harness/train.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <mutex>
#include <thread>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "crir/agent/agent.hpp"
#include "crir/replay/buffer.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#ifndef CRIR_GIT_REV
#define CRIR_GIT_REV "unknown"
#endif
#ifndef CRIR_DEFAULT_DATA
#define CRIR_DEFAULT_DATA "data/ml1m_fixture/ratings.dat"
#endif

namespace crir::harness {

namespace sr = crir::staterep;

Rng make_stream(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

std::filesystem::path default_data_path() { return CRIR_DEFAULT_DATA; }

std::unique_ptr<env::Environment> make_environment(const ExperimentConfig& c) {
  if (c.env == EnvId::kMl1m) {
    const std::filesystem::path path = c.data.empty() ? default_data_path() : std::filesystem::path(c.data);
    auto table = std::make_shared<env::RatingTable>(env::load_ml1m(path));
    if (table->num_users() == 0 || table->num_items() == 0) {
      throw std::runtime_error("no ratings in " + path.string());
    }
    env::Ml1mConfig mc;
    mc.max_steps = c.max_steps;
    mc.shift_every = c.shift_every;
    mc.early_stop_negatives = c.early_stop_negatives;
    return std::make_unique<env::Ml1mEnvironment>(std::move(table), mc);
  }
  env::SyntheticConfig sc;
  sc.num_users = c.synthetic_users;
  sc.user_feature_width = c.synthetic_user_features;
  sc.action_dim = c.repr_dim;
  sc.max_steps = c.max_steps;
  sc.threshold = c.synthetic_threshold;
  sc.drift_every = c.synthetic_drift_every;
  sc.drift_weight = c.synthetic_drift;
  return std::make_unique<env::SyntheticEnvironment>(sc);
}

namespace {

// Training allocates and frees megabyte-sized tape buffers every update.
// Keeping them on the heap instead of fresh mmap pages avoids page-fault
// churn that otherwise costs as much as the arithmetic.
void keep_large_allocations_on_heap() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
#endif
}

sr::RepresentationConfig representation_config(const ExperimentConfig& c, const env::Environment& e) {
  sr::RepresentationConfig r;
  r.kind = e.kind();
  r.repr_dim = c.repr_dim;
  r.activation_hidden = c.activation_hidden;
  r.feedback_buckets = c.feedback_buckets;
  r.max_history = c.max_history;
  r.reward_range = e.reward_range();
  if (e.kind() == EnvKind::kDiscrete) {
    r.catalog_size = static_cast<const env::Ml1mEnvironment&>(e).num_items();
    r.num_users = e.num_users();
  } else {
    r.item_feature_width = c.repr_dim;
    r.user_feature_width = c.synthetic_user_features;
  }
  return r;
}

agent::AgentConfig agent_config(const ExperimentConfig& c) {
  agent::AgentConfig a;
  a.hidden = c.hidden;
  a.gamma = c.gamma;
  a.tau = c.tau;
  a.learning_rate = c.learning_rate;
  a.mechanism = c.mechanism;
  a.gamma_prcl = c.gamma_prcl;
  a.routing = c.routing;
  a.coefficient = c.coefficient == prcl::CoefficientStrategy::Kind::kBalanced
                      ? prcl::CoefficientStrategy::balanced(c.max_history)
                      : prcl::CoefficientStrategy::positional();
  return a;
}

// Linear from start to end over the first `span` steps, then held.
double linear_schedule(double start, double end, std::size_t step, std::size_t span) {
  if (span == 0 || step >= span) return end;
  return start + (end - start) * static_cast<double>(step) / static_cast<double>(span);
}

std::vector<std::vector<double>> copy_values(const std::vector<numcore::Tensor*>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto* p : params) out.emplace_back(p->values().begin(), p->values().end());
  return out;
}

}  // namespace

RunResult train_run(const ExperimentConfig& c, std::uint64_t seed, const std::string& run_id,
                    const TrainAudit& audit) {
  validate(c);
  keep_large_allocations_on_heap();
  auto environment = make_environment(c);
  Rng init_rng = make_stream(seed, Stream::kInit);
  Rng env_rng = make_stream(seed, Stream::kEnv);
  Rng noise_rng = make_stream(seed, Stream::kNoise);
  Rng replay_rng = make_stream(seed, Stream::kReplay);
  Rng uniform_rng = make_stream(seed, Stream::kUniform);
  Rng gate_rng = make_stream(seed, Stream::kGate);
  Rng prcl_rng = make_stream(seed, Stream::kPrcl);

  agent::Agent ag(representation_config(c, *environment), agent_config(c), init_rng);
  replay::ReplayBuffer buffer({c.buffer_capacity, c.per_alpha, c.priority_epsilon});
  const bool discrete = environment->kind() == EnvKind::kDiscrete;

  RunResult result;
  result.run_id = run_id;
  result.seed = seed;
  const std::size_t total_steps = c.total_steps();
  std::unordered_set<std::uint64_t> rl_serials, prcl_serials;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto encoder = ag.representation().encoder_parameters();

  for (std::size_t episode = 0; episode < c.episode_count(); ++episode) {
    const env::EpisodeState* state = &environment->reset(env_rng);
    std::vector<double> rewards;
    double rl_norm_sum = 0.0, prcl_norm_sum = 0.0;
    std::size_t rl_norm_count = 0, prcl_norm_count = 0;

    while (!state->done) {
      const std::size_t before = state->history->size();
      const sr::StateInput input{state->user, std::span<const BehaviorRecord>(*state->history)};
      const double sigma = linear_schedule(c.sigma_start, c.sigma_end, result.env_steps, total_steps / 2);
      env::Action action;
      action.vector = ag.select_action(input, sigma, noise_rng);
      if (discrete) action.items = agent::resolve_action(action.vector, ag.representation().item_embeddings(), c.top_k);
      const UserProfile user = state->user;
      const auto log = state->history;
      const env::StepOutcome outcome = environment->step(action, env_rng);
      rewards.push_back(outcome.reward);
      buffer.push({user, HistoryView{log, before}, std::move(action.vector), outcome.reward,
                   HistoryView{log, before + 1}, outcome.done});
      ++result.env_steps;
      state = &environment->state();

      if (buffer.size() < c.batch_size) continue;  // warm-up

      // Update step: PER batch, gated contrastive batch, critic, actor, targets.
      const double beta = linear_schedule(c.per_beta_start, c.per_beta_end, result.env_steps, total_steps);
      const replay::PerSample per = buffer.sample_per(c.batch_size, beta, replay_rng);
      const bool gate = unit(gate_rng) < c.prcl_frequency;

      std::vector<sr::StateInput> prcl_inputs;
      if (gate) {
        std::vector<std::size_t> random;
        if (c.sampling != prcl::SamplingMechanism::kCombined) random = buffer.sample_uniform(c.batch_size, uniform_rng);
        for (std::size_t slot : prcl::assemble_prcl_batch(per.slots, random, c.sampling)) {
          const replay::Transition& t = buffer.at(slot);
          prcl_inputs.push_back({t.user, t.history.records()});
          if (audit.track_mixed) prcl_serials.insert(buffer.serial(slot));
        }
        ++result.prcl_batches;
      }

      std::optional<prcl::PrclStepResult> prcl_result;
      if (gate && c.mechanism == agent::Mechanism::kAuxiliary) {
        std::vector<std::vector<double>> snap;
        if (audit.check_routing) snap = copy_values(encoder);
        prcl_result = ag.prcl_step(prcl_inputs, prcl_rng);
        if (audit.check_routing) {
          ++result.prcl_passes;
          if (copy_values(encoder) != snap) ++result.prcl_passes_moving_encoder;
        }
      }

      std::vector<const replay::Transition*> batch;
      batch.reserve(per.slots.size());
      for (std::size_t slot : per.slots) batch.push_back(&buffer.at(slot));
      if (audit.track_mixed) rl_serials.insert(per.serials.begin(), per.serials.end());

      const bool constrained_prcl = gate && c.mechanism == agent::Mechanism::kConstrained;
      std::vector<std::vector<double>> snap;
      if (audit.check_routing) snap = copy_values(encoder);
      const agent::CriticResult critic =
          ag.critic_update(batch, per.weights, constrained_prcl ? std::span<const sr::StateInput>(prcl_inputs)
                                                                : std::span<const sr::StateInput>(),
                           prcl_rng);
      if (audit.check_routing) {
        ++result.rl_passes;
        if (copy_values(encoder) != snap) ++result.rl_passes_moving_encoder;
      }
      buffer.update_priorities(per.slots, per.serials, critic.td_abs);
      ag.actor_update(critic.states);
      ag.soft_update_targets();
      ++result.update_steps;

      if (c.log_grad_norms && result.update_steps % c.grad_log_every == 0) {
        result.grad_norms.push_back({run_id, seed, result.update_steps, "rl", critic.grad_norm_rl});
        rl_norm_sum += critic.grad_norm_rl;
        ++rl_norm_count;
        if (prcl_result && prcl_result->samples > 0) {
          result.grad_norms.push_back({run_id, seed, result.update_steps, "prcl", prcl_result->grad_norm});
          prcl_norm_sum += prcl_result->grad_norm;
          ++prcl_norm_count;
        }
      }
    }

    EpisodeMetrics m;
    m.run_id = run_id;
    m.seed = seed;
    m.episode = episode;
    for (double r : rewards) m.cumulative_reward += r;
    m.ctr = compute_ctr(rewards);
    m.episode_length = rewards.size();
    if (c.log_grad_norms) {
      if (rl_norm_count) m.grad_norm_rl = rl_norm_sum / static_cast<double>(rl_norm_count);
      if (prcl_norm_count) m.grad_norm_prcl = prcl_norm_sum / static_cast<double>(prcl_norm_count);
    }
    result.episodes.push_back(std::move(m));
  }

  result.stale_priority_updates = buffer.stale_updates();
  if (audit.track_mixed) {
    result.rl_transitions = rl_serials.size();
    for (std::uint64_t s : rl_serials) result.rl_transitions_in_prcl += prcl_serials.count(s);
  }
  return result;
}

std::string code_version() { return std::string(CRIR_VERSION) + "+" + CRIR_GIT_REV; }

std::string manifest_text(const ExperimentConfig& config, std::uint64_t seed, const std::string& run_id) {
  std::ostringstream out;
  out << "# crir run manifest\n";
  out << "run_id = " << run_id << '\n';
  out << "run_seed = " << seed << '\n';
  out << "code_version = " << code_version() << '\n';
  out << "\n# configuration\n" << to_text(config);
  return out.str();
}

void write_run(const RunResult& run, const ExperimentConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  emit_csv(run.episodes, dir / "metrics.csv");
  std::ofstream manifest(dir / "manifest.txt", std::ios::binary);
  manifest << manifest_text(config, run.seed, run.run_id);
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  if (config.log_grad_norms) emit_grad_csv(run.grad_norms, dir / "grad_norms.csv");
}

std::vector<RunResult> run_parallel(const std::vector<std::function<RunResult()>>& tasks, std::size_t jobs) {
  std::vector<RunResult> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        results[i] = tasks[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

FinalWindow final_window(const std::vector<RunResult>& runs, double fraction, bool ctr) {
  if (runs.empty()) throw std::invalid_argument("final_window: no runs");
  FinalWindow w;
  for (const auto& r : runs) {
    const std::size_t n = r.episodes.size();
    const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(n) * fraction));
    if (n == 0) throw std::invalid_argument("final_window: run without episodes");
    double s = 0.0;
    for (std::size_t i = n - k; i < n; ++i) s += ctr ? r.episodes[i].ctr : r.episodes[i].cumulative_reward;
    w.per_run.push_back(s / static_cast<double>(k));
  }
  for (double v : w.per_run) w.mean += v;
  w.mean /= static_cast<double>(w.per_run.size());
  w.half_width = ci_half_width(w.per_run);
  return w;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"frequency", "coefficient", "sampling", "training", "routing"};
  return names;
}

std::vector<Arm> suite_arms(const std::string& suite, const ExperimentConfig& base) {
  std::vector<Arm> arms;
  auto arm = [&](std::string label, auto&& edit) {
    ExperimentConfig c = base;
    c.crir_without_cl = false;
    edit(c);
    arms.push_back({std::move(label), c});
  };
  if (suite == "frequency") {
    for (const char* f : {"0", "0.25", "0.5", "0.75", "1"}) {
      arm(std::string("freq_") + f, [&](ExperimentConfig& c) { c.prcl_frequency = std::stod(f); });
    }
  } else if (suite == "coefficient") {
    arm("positional", [](ExperimentConfig& c) { c.coefficient = prcl::CoefficientStrategy::Kind::kPositional; });
    arm("balanced", [](ExperimentConfig& c) { c.coefficient = prcl::CoefficientStrategy::Kind::kBalanced; });
  } else if (suite == "sampling") {
    for (auto m : {prcl::SamplingMechanism::kMixed, prcl::SamplingMechanism::kDivided,
                   prcl::SamplingMechanism::kCombined}) {
      arm(to_string(m), [&](ExperimentConfig& c) { c.sampling = m; });
    }
  } else if (suite == "training") {
    arm("auxiliary", [](ExperimentConfig& c) { c.mechanism = agent::Mechanism::kAuxiliary; });
    for (const char* g : {"0", "0.5", "1"}) {
      arm(std::string("constrained_g") + g, [&](ExperimentConfig& c) {
        c.mechanism = agent::Mechanism::kConstrained;
        c.gamma_prcl = std::stod(g);
      });
    }
  } else if (suite == "routing") {
    for (auto r : {agent::Routing::kOnlyRl, agent::Routing::kOnlyPrcl, agent::Routing::kBoth}) {
      arm(to_string(r), [&](ExperimentConfig& c) {
        c.routing = r;
        c.log_grad_norms = true;
      });
    }
  } else {
    throw std::invalid_argument("unknown ablation suite '" + suite + "'");
  }
  return arms;
}

AblationResult run_ablation(const std::string& suite, const ExperimentConfig& base, const std::filesystem::path& out) {
  AblationResult res;
  res.arms = suite_arms(suite, base);
  if (base.seeds < 2) throw std::invalid_argument("run_ablation: confidence bands need at least two seeds");

  std::vector<std::function<RunResult()>> tasks;
  for (const Arm& arm : res.arms) {
    for (std::size_t k = 0; k < base.seeds; ++k) {
      const std::uint64_t seed = base.seed + k;
      const std::string id = arm.label + "_s" + std::to_string(seed);
      tasks.push_back([&arm, seed, id] {
        spdlog::info("run {} start", id);
        auto r = train_run(arm.config, seed, id);
        spdlog::info("run {} done: {} updates", id, r.update_steps);
        return r;
      });
    }
  }
  auto flat = run_parallel(tasks, base.jobs);

  std::vector<EpisodeMetrics> pooled;
  std::vector<GradNormRecord> grads;
  std::vector<AggregateCurve> reward_curves, ctr_curves, rl_norm_curves, prcl_norm_curves;
  std::ofstream summary;
  std::filesystem::create_directories(out);
  summary.open(out / "summary.csv", std::ios::binary);
  summary << "label,final_reward_mean,final_reward_half_width,final_ctr_mean,final_ctr_half_width\r\n";

  std::size_t idx = 0;
  for (const Arm& arm : res.arms) {
    std::vector<RunResult> runs;
    std::vector<std::vector<double>> reward, ctr, rl_norm, prcl_norm;
    for (std::size_t k = 0; k < base.seeds; ++k, ++idx) {
      RunResult& r = flat[idx];
      write_run(r, arm.config, out / "runs" / r.run_id);
      pooled.insert(pooled.end(), r.episodes.begin(), r.episodes.end());
      grads.insert(grads.end(), r.grad_norms.begin(), r.grad_norms.end());
      std::vector<double> rw, ct, gr, gp;
      for (const auto& m : r.episodes) {
        rw.push_back(m.cumulative_reward);
        ct.push_back(m.ctr);
        gr.push_back(m.grad_norm_rl.value_or(0.0));
        gp.push_back(m.grad_norm_prcl.value_or(0.0));
      }
      reward.push_back(std::move(rw));
      ctr.push_back(std::move(ct));
      rl_norm.push_back(std::move(gr));
      prcl_norm.push_back(std::move(gp));
      runs.push_back(std::move(r));
    }
    reward_curves.push_back(aggregate_ci(reward, base.smoothing_window, arm.label));
    ctr_curves.push_back(aggregate_ci(ctr, base.smoothing_window, arm.label));
    if (arm.config.log_grad_norms) {
      rl_norm_curves.push_back(aggregate_ci(rl_norm, base.smoothing_window, arm.label));
      prcl_norm_curves.push_back(aggregate_ci(prcl_norm, base.smoothing_window, arm.label));
    }
    const auto fr = final_window(runs, 0.1, false), fc = final_window(runs, 0.1, true);
    summary << csv_field(arm.label) << ',' << csv_number(fr.mean) << ',' << csv_number(fr.half_width) << ','
            << csv_number(fc.mean) << ',' << csv_number(fc.half_width) << "\r\n";
    res.runs.push_back(std::move(runs));
  }
  if (!summary) throw std::runtime_error("cannot write summary in " + out.string());

  emit_csv(pooled, out / "metrics.csv");
  emit_aggregate_csv(reward_curves, "cumulative_reward", out / "aggregate_reward.csv");
  emit_aggregate_csv(ctr_curves, "ctr", out / "aggregate_ctr.csv");
  emit_svg(reward_curves, out / "reward.svg", {suite + ": episode reward", "episode", "cumulative reward"});
  emit_svg(ctr_curves, out / "ctr.svg", {suite + ": CTR", "episode", "CTR"});
  if (!rl_norm_curves.empty()) {
    emit_grad_csv(grads, out / "grad_norms.csv");
    emit_svg(rl_norm_curves, out / "grad_norm_rl.svg", {suite + ": encoder gradient norm, RL pass", "episode", "L2 norm"});
    emit_svg(prcl_norm_curves, out / "grad_norm_prcl.svg",
             {suite + ": encoder gradient norm, contrastive pass", "episode", "L2 norm"});
  }
  return res;
}

}  // namespace crir::harness
