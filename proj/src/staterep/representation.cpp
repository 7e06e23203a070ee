#include "crir/staterep/representation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace crir::staterep {

namespace nc = numcore;

std::size_t feedback_bucket(double feedback, RewardRange range, std::size_t buckets) {
  if (buckets == 0) throw std::invalid_argument("feedback_bucket: zero buckets");
  if (!(range.high > range.low)) throw std::invalid_argument("feedback_bucket: empty reward range");
  const double t = (feedback - range.low) / (range.high - range.low);
  if (!(t > 0.0)) return 0;
  const auto b = static_cast<std::size_t>(std::floor(t * static_cast<double>(buckets)));
  return std::min(b, buckets - 1);
}

namespace {

void init_table(Tensor& t, std::size_t dim, nc::Rng& rng) { nc::init_uniform_fan_in(t, dim, rng); }

}  // namespace

RepresentationNetwork::RepresentationNetwork(const RepresentationConfig& config, nc::Rng& rng)
    : config_(config) {
  const std::size_t d = config.repr_dim;
  if (d == 0 || config.feedback_buckets == 0 || config.activation_hidden == 0 || config.max_history == 0) {
    throw std::invalid_argument("RepresentationNetwork: dimensions must be positive");
  }
  if (config.kind == EnvKind::kDiscrete) {
    if (config.catalog_size == 0 || config.num_users == 0) {
      throw std::invalid_argument("RepresentationNetwork: discrete env needs catalog and user counts");
    }
    item_table_ = Tensor({config.catalog_size, d}, true);
    init_table(item_table_, d, rng);
    user_table_ = Tensor({config.num_users, d}, true);
    init_table(user_table_, d, rng);
  } else {
    if (config.item_feature_width == 0 || config.user_feature_width == 0) {
      throw std::invalid_argument("RepresentationNetwork: continuous env needs feature widths");
    }
    item_encoder_ = nc::Linear(config.item_feature_width, d, rng);
    user_encoder_ = nc::Linear(config.user_feature_width, d, rng);
  }
  feedback_table_ = Tensor({config.feedback_buckets, d}, true);
  init_table(feedback_table_, d, rng);
  projection_ = nc::Linear(2 * d, d, rng);
  act_hidden_ = nc::Linear(3 * d, config.activation_hidden, rng);
  act_dice_ = nc::Dice(config.activation_hidden);
  act_out_ = nc::Linear(config.activation_hidden, 1, rng);
}

std::vector<Tensor*> RepresentationNetwork::encoder_parameters() {
  std::vector<Tensor*> out;
  if (config_.kind == EnvKind::kDiscrete) {
    out.push_back(&item_table_);
  } else {
    for (Tensor* p : item_encoder_.parameters()) out.push_back(p);
  }
  out.push_back(&feedback_table_);
  for (Tensor* p : projection_.parameters()) out.push_back(p);
  return out;
}

std::vector<Tensor*> RepresentationNetwork::state_parameters() {
  std::vector<Tensor*> out;
  if (config_.kind == EnvKind::kDiscrete) {
    out.push_back(&user_table_);
  } else {
    for (Tensor* p : user_encoder_.parameters()) out.push_back(p);
  }
  for (Tensor* p : act_hidden_.parameters()) out.push_back(p);
  for (Tensor* p : act_dice_.parameters()) out.push_back(p);
  for (Tensor* p : act_out_.parameters()) out.push_back(p);
  return out;
}

std::vector<Tensor*> RepresentationNetwork::parameters() {
  auto out = encoder_parameters();
  for (Tensor* p : state_parameters()) out.push_back(p);
  return out;
}

const Tensor& RepresentationNetwork::item_embeddings() const {
  if (config_.kind != EnvKind::kDiscrete) throw std::logic_error("item_embeddings: continuous environment");
  return item_table_;
}

namespace {

ItemId checked_item_id(const BehaviorRecord& r, std::size_t catalog) {
  const auto* id = std::get_if<ItemId>(&r.item);
  if (!id) throw std::invalid_argument("behavior record: expected a catalog id");
  if (*id >= catalog) {
    throw std::out_of_range("behavior record: item " + std::to_string(*id) + " outside catalog of " +
                            std::to_string(catalog));
  }
  return *id;
}

const std::vector<double>& checked_features(const BehaviorRecord& r, std::size_t width) {
  const auto* f = std::get_if<std::vector<double>>(&r.item);
  if (!f) throw std::invalid_argument("behavior record: expected an item feature vector");
  if (f->size() != width) {
    throw std::invalid_argument("behavior record: item feature width " + std::to_string(f->size()) +
                                ", expected " + std::to_string(width));
  }
  return *f;
}

}  // namespace

std::vector<std::span<const BehaviorRecord>> RepresentationNetwork::truncate(
    std::span<const StateInput> batch) const {
  std::vector<std::span<const BehaviorRecord>> out;
  out.reserve(batch.size());
  for (const StateInput& in : batch) {
    auto h = in.history;
    if (h.size() > config_.max_history) h = h.subspan(h.size() - config_.max_history);
    out.push_back(h);
  }
  return out;
}

Var RepresentationNetwork::encode_user(Tape& tape, const UserProfile& user, bool trainable) {
  if (config_.kind == EnvKind::kDiscrete) {
    const auto* id = std::get_if<UserId>(&user);
    if (!id) throw std::invalid_argument("user profile: expected a user id");
    if (*id >= config_.num_users) throw std::out_of_range("user profile: user id outside table");
    return nc::gather_rows(nc::bind(tape, user_table_, trainable), {*id});
  }
  const auto* f = std::get_if<std::vector<double>>(&user);
  if (!f) throw std::invalid_argument("user profile: expected a feature vector");
  if (f->size() != config_.user_feature_width) throw std::invalid_argument("user profile: feature width mismatch");
  return user_encoder_.forward(tape, tape.constant(Tensor::matrix(1, f->size(), *f)), trainable);
}

Var RepresentationNetwork::encode_behavior(Tape& tape, const BehaviorRecord& record, bool trainable) {
  Var item;
  if (config_.kind == EnvKind::kDiscrete) {
    const ItemId id = checked_item_id(record, config_.catalog_size);
    item = nc::gather_rows(nc::bind(tape, item_table_, trainable), {id});
  } else {
    const auto& f = checked_features(record, config_.item_feature_width);
    item = item_encoder_.forward(tape, tape.constant(Tensor::matrix(1, f.size(), f)), trainable);
  }
  const std::size_t bucket = feedback_bucket(record.feedback, config_.reward_range, config_.feedback_buckets);
  Var fb = nc::gather_rows(nc::bind(tape, feedback_table_, trainable), {bucket});
  return projection_.forward(tape, nc::concat_cols({item, fb}), trainable);
}

Var RepresentationNetwork::activation_unit(Tape& tape, Var user, Var behavior, bool trainable) {
  Var x = nc::concat_cols({user, nc::mul(user, behavior), behavior});
  Var hidden = nc::dice(act_hidden_.forward(tape, x, trainable), act_dice_, DiceMode::kEval, trainable);
  return act_out_.forward(tape, hidden, trainable);
}

StateRepresentation RepresentationNetwork::state_representation(Tape& tape, const StateInput& input) {
  const auto history = truncate(std::span<const StateInput>(&input, 1)).front();
  const std::size_t d = config_.repr_dim;
  Var u = encode_user(tape, input.user);
  StateRepresentation out;
  if (history.empty()) {
    out.state = tape.constant(Tensor({1, 2 * d}));
    return out;
  }
  Var avg, weighted;
  for (const BehaviorRecord& r : history) {
    Var h = encode_behavior(tape, r);
    Var w = activation_unit(tape, u, h);
    out.weights.push_back(w.value().item());
    Var uh = nc::mul(u, h);
    Var wh = nc::scale_rows(h, nc::reshape(w, {1}));
    avg = avg.valid() ? nc::add(avg, uh) : uh;
    weighted = weighted.valid() ? nc::add(weighted, wh) : wh;
  }
  avg = nc::scale(avg, 1.0 / static_cast<double>(history.size()));
  out.state = nc::concat_cols({avg, weighted});
  return out;
}

RepresentationBatch RepresentationNetwork::forward(Tape& tape, std::span<const StateInput> batch,
                                                   const ForwardOptions& opt) {
  if (batch.empty()) throw std::invalid_argument("RepresentationNetwork::forward: empty batch");
  const std::size_t d = config_.repr_dim;
  const std::size_t n_states = batch.size();
  const auto histories = truncate(batch);

  RepresentationBatch out;
  out.offsets.reserve(n_states + 1);
  out.offsets.push_back(0);
  for (const auto& h : histories) out.offsets.push_back(out.offsets.back() + h.size());
  const std::size_t n_rows = out.offsets.back();

  if (n_rows == 0) {
    if (opt.need_state) out.states = tape.constant(Tensor({n_states, 2 * d}));
    return out;
  }

  // Per-row bookkeeping: owning state, item slot, feedback bucket.
  std::vector<std::size_t> state_of_row, item_slot, bucket_of_row;
  state_of_row.reserve(n_rows);
  item_slot.reserve(n_rows);
  bucket_of_row.reserve(n_rows);
  out.step_indices.reserve(n_rows);

  Var item_rows;  // one row per distinct item (discrete) or per behavior (continuous)
  if (config_.kind == EnvKind::kDiscrete) {
    std::unordered_map<ItemId, std::size_t> slot;
    std::vector<std::size_t> unique_ids;
    for (std::size_t s = 0; s < n_states; ++s) {
      for (const BehaviorRecord& r : histories[s]) {
        const ItemId id = checked_item_id(r, config_.catalog_size);
        auto [it, inserted] = slot.try_emplace(id, unique_ids.size());
        if (inserted) unique_ids.push_back(id);
        item_slot.push_back(it->second);
      }
    }
    item_rows = nc::gather_rows(nc::bind(tape, item_table_, opt.train_encoder), std::move(unique_ids));
  } else {
    Tensor features({n_rows, config_.item_feature_width});
    std::size_t row = 0;
    for (std::size_t s = 0; s < n_states; ++s) {
      for (const BehaviorRecord& r : histories[s]) {
        const auto& f = checked_features(r, config_.item_feature_width);
        std::copy(f.begin(), f.end(), features.values().begin() + row * f.size());
        item_slot.push_back(row++);
      }
    }
    item_rows = item_encoder_.forward(tape, tape.constant(std::move(features)), opt.train_encoder);
  }
  for (std::size_t s = 0; s < n_states; ++s) {
    for (const BehaviorRecord& r : histories[s]) {
      state_of_row.push_back(s);
      bucket_of_row.push_back(feedback_bucket(r.feedback, config_.reward_range, config_.feedback_buckets));
      out.step_indices.push_back(r.step_index);
    }
  }

  // h = W [e ; f] + b, split so the projection runs once per distinct item
  // and once per feedback bucket instead of once per behavior.
  Var proj_w = nc::bind(tape, projection_.weight, opt.train_encoder);
  Var proj_b = nc::bind(tape, projection_.bias, opt.train_encoder);
  Var p_item = nc::linear(item_rows, nc::slice_cols(proj_w, 0, d));
  Var p_fb = nc::linear(nc::bind(tape, feedback_table_, opt.train_encoder), nc::slice_cols(proj_w, d, 2 * d), proj_b);
  Var h = nc::add(nc::gather_rows(p_item, item_slot), nc::gather_rows(p_fb, bucket_of_row));
  out.behaviors = h;

  // User representations, one per state.
  Var users;
  if (config_.kind == EnvKind::kDiscrete) {
    std::vector<std::size_t> ids;
    ids.reserve(n_states);
    for (const StateInput& in : batch) {
      const auto* id = std::get_if<UserId>(&in.user);
      if (!id) throw std::invalid_argument("user profile: expected a user id");
      if (*id >= config_.num_users) throw std::out_of_range("user profile: user id outside table");
      ids.push_back(*id);
    }
    users = nc::gather_rows(nc::bind(tape, user_table_, opt.train_state), std::move(ids));
  } else {
    Tensor features({n_states, config_.user_feature_width});
    for (std::size_t s = 0; s < n_states; ++s) {
      const auto* f = std::get_if<std::vector<double>>(&batch[s].user);
      if (!f) throw std::invalid_argument("user profile: expected a feature vector");
      if (f->size() != config_.user_feature_width) throw std::invalid_argument("user profile: feature width mismatch");
      std::copy(f->begin(), f->end(), features.values().begin() + s * f->size());
    }
    users = user_encoder_.forward(tape, tape.constant(std::move(features)), opt.train_state);
  }
  Var user_rows = nc::gather_rows(users, state_of_row);
  Var uh = nc::mul(user_rows, h);

  // Activation unit over [u, u*h, h]; the first layer is split by input block.
  Var a_w = nc::bind(tape, act_hidden_.weight, opt.train_state);
  Var a_b = nc::bind(tape, act_hidden_.bias, opt.train_state);
  Var a_u = nc::slice_cols(a_w, 0, d);
  Var a_uh = nc::slice_cols(a_w, d, 2 * d);
  Var a_h = nc::slice_cols(a_w, 2 * d, 3 * d);
  Var uh_in = uh, p_item_in = p_item, p_fb_in = p_fb;
  if (!opt.weights_need_grad) {
    uh_in = tape.constant(uh.value());
    p_item_in = tape.constant(p_item.value());
    p_fb_in = tape.constant(p_fb.value());
  }
  Var pre = nc::linear(uh_in, a_uh);
  pre = nc::add(pre, nc::gather_rows(nc::linear(users, a_u, a_b), state_of_row));
  pre = nc::add(pre, nc::gather_rows(nc::linear(p_item_in, a_h), item_slot));
  pre = nc::add(pre, nc::gather_rows(nc::linear(p_fb_in, a_h), bucket_of_row));
  Var hidden = nc::dice(pre, act_dice_, opt.mode, opt.train_state);
  Var weights = nc::reshape(act_out_.forward(tape, hidden, opt.train_state), {n_rows});
  out.weights = weights;

  if (opt.need_state) {
    Var avg = nc::segment_mean(uh, out.offsets);
    Var weighted = nc::segment_sum(nc::scale_rows(h, weights), out.offsets);
    out.states = nc::concat_cols({avg, weighted});
  }
  return out;
}

}  // namespace crir::staterep
