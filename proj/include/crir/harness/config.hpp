#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "crir/agent/agent.hpp"
#include "crir/prcl/prcl.hpp"

namespace crir::harness {

enum class EnvId { kMl1m, kSynthetic };

struct ExperimentConfig {
  EnvId env = EnvId::kMl1m;
  std::string data;  // ratings.dat; empty selects the bundled fixture
  std::optional<std::size_t> episodes;  // unset: 2000 for ML-1M, 20000 synthetic
  std::size_t seeds = 5;
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;

  double prcl_frequency = 1.0;
  prcl::CoefficientStrategy::Kind coefficient = prcl::CoefficientStrategy::Kind::kPositional;
  prcl::SamplingMechanism sampling = prcl::SamplingMechanism::kMixed;
  agent::Mechanism mechanism = agent::Mechanism::kAuxiliary;
  double gamma_prcl = 0.0;
  agent::Routing routing = agent::Routing::kBoth;
  bool crir_without_cl = false;

  std::size_t repr_dim = 100;
  std::size_t hidden = 128;
  std::size_t activation_hidden = 36;
  std::size_t feedback_buckets = 5;
  std::size_t max_history = 50;
  double learning_rate = 1e-3;
  double gamma = 0.9;
  double tau = 0.001;

  std::size_t buffer_capacity = 100000;
  double per_alpha = 0.6;
  double per_beta_start = 0.4;
  double per_beta_end = 1.0;
  double priority_epsilon = 1e-3;

  double sigma_start = 0.1;
  double sigma_end = 0.01;

  std::size_t max_steps = 50;
  std::size_t top_k = 10;
  std::size_t shift_every = 10;
  std::size_t early_stop_negatives = 0;

  std::size_t synthetic_users = 50;
  std::size_t synthetic_user_features = 16;
  double synthetic_threshold = 0.3;
  double synthetic_drift = 0.2;
  std::size_t synthetic_drift_every = 5;

  bool log_grad_norms = false;
  std::size_t grad_log_every = 10;
  std::size_t smoothing_window = 0;  // 0 disables smoothing of aggregates
  std::size_t jobs = 1;

  std::size_t episode_count() const;
  std::size_t total_steps() const { return episode_count() * max_steps; }
};

// Sets one field from its textual value. Unknown keys and unparsable values
// throw std::invalid_argument.
void set_field(ExperimentConfig& config, const std::string& key, const std::string& value);

// "key = value" lines, '#' starts a comment. Validated before returning.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig parse_config_file(const std::filesystem::path& path);

// Throws std::invalid_argument on violated invariants.
void validate(const ExperimentConfig& config);

// Every field as "key = value" lines; parse_config(to_text(c)) == c.
std::string to_text(const ExperimentConfig& config);

std::vector<std::string> config_keys();

std::string to_string(prcl::SamplingMechanism m);
std::string to_string(agent::Mechanism m);
std::string to_string(agent::Routing r);

}  // namespace crir::harness
