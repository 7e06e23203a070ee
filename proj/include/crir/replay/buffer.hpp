#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "crir/staterep/behavior.hpp"

namespace crir::replay {

using Rng = std::mt19937_64;

// One stored interaction. Histories are raw records; representations are
// recomputed from them under the current parameters.
struct Transition {
  UserProfile user;
  HistoryView history;
  std::vector<double> action;
  double reward = 0.0;
  HistoryView next_history;
  bool done = false;
};

// Binary tree over a fixed number of leaves. Internal nodes hold subtree
// sums and maxima.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  void set(std::size_t leaf, double value);
  double leaf(std::size_t leaf) const { return sum_[base_ + leaf]; }
  double total() const { return sum_[1]; }
  double max() const { return max_[1]; }
  // Leaf whose cumulative range contains mass; only leaves with positive
  // value are returned while total() > 0.
  std::size_t find(double mass) const;
  // Largest absolute deviation between an internal node and its children.
  double consistency_error() const;

 private:
  std::size_t capacity_;
  std::size_t base_;
  std::vector<double> sum_;
  std::vector<double> max_;
};

struct ReplayConfig {
  std::size_t capacity = 100000;
  double alpha = 0.6;
  double priority_epsilon = 1e-3;
};

struct PerSample {
  std::vector<std::size_t> slots;
  std::vector<std::uint64_t> serials;
  std::vector<double> weights;       // importance weights, max-normalised
  std::vector<double> probabilities;
};

// Prioritised replay with a ring of slots. Every push gets a fresh serial
// number so indices held across an overwrite can be recognised as stale.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(ReplayConfig config = {});

  const ReplayConfig& config() const { return config_; }
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return config_.capacity; }

  std::size_t push(Transition t);
  PerSample sample_per(std::size_t batch_size, double beta, Rng& rng) const;
  // Distinct slots chosen uniformly at random.
  std::vector<std::size_t> sample_uniform(std::size_t batch_size, Rng& rng) const;
  void update_priorities(const std::vector<std::size_t>& slots, const std::vector<std::uint64_t>& serials,
                         const std::vector<double>& td_magnitudes);

  const Transition& at(std::size_t slot) const;
  std::uint64_t serial(std::size_t slot) const;
  double priority(std::size_t slot) const;
  std::uint64_t stale_updates() const { return stale_updates_; }
  const SumTree& tree() const { return tree_; }

  void save(const std::filesystem::path& path) const;
  static ReplayBuffer load(const std::filesystem::path& path);

 private:
  ReplayConfig config_;
  SumTree tree_;      // priority^alpha, drives sampling
  SumTree raw_;       // raw priorities, for the running maximum
  std::vector<Transition> slots_;
  std::vector<std::uint64_t> serials_;
  std::size_t size_ = 0;
  std::size_t head_ = 0;
  std::uint64_t next_serial_ = 0;
  std::uint64_t stale_updates_ = 0;
};

}  // namespace crir::replay
