#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <variant>
#include <vector>

namespace crir {

using ItemId = std::uint32_t;  // catalog index in discrete environments
using UserId = std::uint32_t;

enum class EnvKind { kDiscrete, kContinuous };

struct RewardRange {
  double low = -1.0;
  double high = 1.0;
};

// One interacted item plus the feedback the user gave it.
struct BehaviorRecord {
  std::variant<ItemId, std::vector<double>> item;
  double feedback = 0.0;
  std::uint32_t step_index = 0;
};

// Catalog user id (discrete) or raw user features (continuous).
using UserProfile = std::variant<UserId, std::vector<double>>;

using BehaviorLog = std::vector<BehaviorRecord>;

// Prefix of an append-only episode log. Consecutive transitions of one
// episode share the log, so a history costs one pointer and a length.
struct HistoryView {
  std::shared_ptr<const BehaviorLog> log;
  std::size_t length = 0;

  std::span<const BehaviorRecord> records() const {
    if (!log) return {};
    return std::span<const BehaviorRecord>(log->data(), length);
  }
  std::size_t size() const { return length; }
};

}  // namespace crir
