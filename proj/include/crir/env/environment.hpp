#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "crir/staterep/behavior.hpp"

namespace crir::env {

using Rng = std::mt19937_64;

// Ratings on a dense users x items grid. User and item indices are
// contiguous; the original dataset ids are kept alongside.
class RatingTable {
 public:
  RatingTable() = default;
  RatingTable(std::vector<std::uint32_t> user_ids, std::vector<std::uint32_t> item_ids);

  std::size_t num_users() const { return user_ids_.size(); }
  std::size_t num_items() const { return item_ids_.size(); }
  const std::vector<std::uint32_t>& user_ids() const { return user_ids_; }
  const std::vector<std::uint32_t>& item_ids() const { return item_ids_; }

  // Empty when the pair is not in the dataset.
  std::optional<int> rating(UserId user, ItemId item) const;
  void set_rating(UserId user, ItemId item, int rating);
  // Lookup by original dataset ids.
  std::optional<int> rating_by_id(std::uint32_t user_id, std::uint32_t item_id) const;
  std::size_t num_ratings() const { return count_; }

  std::size_t genre(ItemId item) const { return genres_.at(item); }
  std::size_t num_genres() const { return num_genres_; }
  void set_genres(std::vector<std::size_t> genres, std::size_t num_genres);

 private:
  std::vector<std::uint32_t> user_ids_;
  std::vector<std::uint32_t> item_ids_;
  std::vector<std::int8_t> grid_;  // 0 marks an absent pair
  std::vector<std::size_t> genres_;
  std::size_t num_genres_ = 0;
  std::size_t count_ = 0;
};

struct LoadReport {
  std::size_t lines = 0;
  std::size_t parsed = 0;
  std::size_t malformed = 0;
  bool genres_from_file = false;
};

// Reads "UserID::MovieID::Rating::Timestamp" lines. Genres come from a
// movies.dat next to the ratings file when present, otherwise item id mod 18.
// Rejects unreadable files and files with more than 1% malformed lines.
RatingTable load_ml1m(const std::filesystem::path& ratings_path, LoadReport* report = nullptr);

// Reward of one recommended item given its (possibly absent) rating and how
// often the item already occurs in the history.
double ml1m_reward(std::optional<int> rating, std::size_t repeat_count);

struct EpisodeState {
  UserProfile user;
  std::shared_ptr<BehaviorLog> history;
  std::uint32_t step = 0;
  bool done = false;
};

struct Action {
  std::vector<double> vector;  // continuous environments
  std::vector<ItemId> items;   // discrete environments: candidate slate
};

struct StepOutcome {
  double reward = 0.0;
  bool done = false;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual EnvKind kind() const = 0;
  virtual RewardRange reward_range() const = 0;
  virtual std::size_t max_steps() const = 0;
  virtual std::size_t num_users() const = 0;
  virtual const EpisodeState& reset(Rng& rng) = 0;
  virtual StepOutcome step(const Action& action, Rng& rng) = 0;
  virtual const EpisodeState& state() const = 0;
};

struct Ml1mConfig {
  std::size_t max_steps = 50;
  std::size_t shift_every = 10;  // 0 disables interest shifting
  // Consecutive negative rewards that end an episode early; 0 disables.
  std::size_t early_stop_negatives = 0;
};

// Rating-driven simulator. A step scores every item of the slate, logs the
// best one with its own reward as feedback and returns that reward. Every
// shift_every steps one random genre's ratings move by +-1 for the rest of
// the episode.
class Ml1mEnvironment : public Environment {
 public:
  Ml1mEnvironment(std::shared_ptr<const RatingTable> table, Ml1mConfig config = {});

  EnvKind kind() const override { return EnvKind::kDiscrete; }
  RewardRange reward_range() const override { return {-1.0, 1.0}; }
  std::size_t max_steps() const override { return config_.max_steps; }
  std::size_t num_users() const override { return table_->num_users(); }
  std::size_t num_items() const { return table_->num_items(); }
  const EpisodeState& reset(Rng& rng) override;
  StepOutcome step(const Action& action, Rng& rng) override;
  const EpisodeState& state() const override { return state_; }

  // Reward of one item for the active user against the current history,
  // with the episode's rating shifts applied.
  double get_reward(ItemId item) const;
  std::optional<int> effective_rating(ItemId item) const;
  const RatingTable& table() const { return *table_; }
  const std::vector<int>& genre_shift() const { return genre_shift_; }

 private:
  std::shared_ptr<const RatingTable> table_;
  Ml1mConfig config_;
  EpisodeState state_;
  std::vector<int> genre_shift_;
  std::vector<std::uint32_t> item_counts_;
  std::size_t negative_run_ = 0;
};

struct SyntheticConfig {
  std::size_t num_users = 50;
  std::size_t user_feature_width = 16;
  std::size_t action_dim = 100;
  std::size_t max_steps = 50;
  double threshold = 0.3;
  std::size_t drift_every = 5;  // positive-reward steps between drifts
  double drift_weight = 0.2;    // 0 keeps interests fixed
  std::uint64_t population_seed = 7;
};

// Stand-in continuous environment with static user features and a drifting
// unit-norm interest vector. Not a reproduction of any external simulator.
class SyntheticEnvironment : public Environment {
 public:
  explicit SyntheticEnvironment(SyntheticConfig config = {});

  EnvKind kind() const override { return EnvKind::kContinuous; }
  RewardRange reward_range() const override { return {0.0, 1.0}; }
  std::size_t max_steps() const override { return config_.max_steps; }
  std::size_t num_users() const override { return features_.size(); }
  const EpisodeState& reset(Rng& rng) override;
  StepOutcome step(const Action& action, Rng& rng) override;
  const EpisodeState& state() const override { return state_; }

  const std::vector<double>& interest() const { return interest_; }
  void set_interest(std::vector<double> interest);
  double reward_for(std::span<const double> action) const;
  const SyntheticConfig& config() const { return config_; }

 private:
  SyntheticConfig config_;
  std::vector<std::vector<double>> features_;
  std::vector<std::vector<double>> initial_interest_;
  EpisodeState state_;
  std::vector<double> interest_;
  std::size_t positives_ = 0;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace crir::env
