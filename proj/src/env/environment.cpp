#include "crir/env/environment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string_view>
#include <unordered_map>

namespace crir::env {

RatingTable::RatingTable(std::vector<std::uint32_t> user_ids, std::vector<std::uint32_t> item_ids)
    : user_ids_(std::move(user_ids)), item_ids_(std::move(item_ids)) {
  grid_.assign(user_ids_.size() * item_ids_.size(), 0);
  genres_.assign(item_ids_.size(), 0);
  num_genres_ = item_ids_.empty() ? 0 : 1;
}

std::optional<int> RatingTable::rating(UserId user, ItemId item) const {
  if (user >= num_users() || item >= num_items()) return std::nullopt;
  const int r = grid_[static_cast<std::size_t>(user) * num_items() + item];
  if (r == 0) return std::nullopt;
  return r;
}

void RatingTable::set_rating(UserId user, ItemId item, int rating) {
  if (user >= num_users() || item >= num_items()) throw std::out_of_range("RatingTable: index out of range");
  if (rating < 1 || rating > 5) throw std::invalid_argument("RatingTable: rating outside 1..5");
  auto& cell = grid_[static_cast<std::size_t>(user) * num_items() + item];
  if (cell == 0) ++count_;
  cell = static_cast<std::int8_t>(rating);
}

std::optional<int> RatingTable::rating_by_id(std::uint32_t user_id, std::uint32_t item_id) const {
  auto u = std::lower_bound(user_ids_.begin(), user_ids_.end(), user_id);
  auto i = std::lower_bound(item_ids_.begin(), item_ids_.end(), item_id);
  if (u == user_ids_.end() || *u != user_id || i == item_ids_.end() || *i != item_id) return std::nullopt;
  return rating(static_cast<UserId>(u - user_ids_.begin()), static_cast<ItemId>(i - item_ids_.begin()));
}

void RatingTable::set_genres(std::vector<std::size_t> genres, std::size_t num_genres) {
  if (genres.size() != num_items()) throw std::invalid_argument("RatingTable: one genre per item expected");
  for (std::size_t g : genres) {
    if (g >= num_genres) throw std::invalid_argument("RatingTable: genre index out of range");
  }
  genres_ = std::move(genres);
  num_genres_ = num_genres;
}

namespace {

constexpr std::size_t kFallbackGenres = 18;

std::vector<std::string_view> split(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + sep.size();
  }
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

struct RawRating {
  std::uint32_t user, item;
  int rating;
};

}  // namespace

RatingTable load_ml1m(const std::filesystem::path& ratings_path, LoadReport* report) {
  std::ifstream in(ratings_path);
  if (!in) throw std::runtime_error("load_ml1m: cannot read " + ratings_path.string());
  LoadReport rep;
  std::vector<RawRating> raw;
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    ++rep.lines;
    const auto fields = split(text, "::");
    std::optional<std::uint32_t> user, item;
    std::optional<int> rating;
    std::optional<std::int64_t> stamp;
    if (fields.size() == 4) {
      user = parse_number<std::uint32_t>(fields[0]);
      item = parse_number<std::uint32_t>(fields[1]);
      rating = parse_number<int>(fields[2]);
      stamp = parse_number<std::int64_t>(fields[3]);
    }
    if (!user || !item || !rating || !stamp || *rating < 1 || *rating > 5) {
      ++rep.malformed;
      continue;
    }
    raw.push_back({*user, *item, *rating});
    ++rep.parsed;
  }
  if (in.bad()) throw std::runtime_error("load_ml1m: read error on " + ratings_path.string());
  if (rep.malformed * 100 > rep.lines) {
    throw std::runtime_error("load_ml1m: " + std::to_string(rep.malformed) + " of " + std::to_string(rep.lines) +
                             " lines malformed in " + ratings_path.string());
  }

  std::vector<std::uint32_t> users, items;
  for (const RawRating& r : raw) {
    users.push_back(r.user);
    items.push_back(r.item);
  }
  for (auto* v : {&users, &items}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  RatingTable table(users, items);
  for (const RawRating& r : raw) {
    const auto u = static_cast<UserId>(std::lower_bound(users.begin(), users.end(), r.user) - users.begin());
    const auto i = static_cast<ItemId>(std::lower_bound(items.begin(), items.end(), r.item) - items.begin());
    table.set_rating(u, i, r.rating);
  }

  // Primary (first listed) genre per movie; unlisted movies share one extra bucket.
  const auto movies_path = ratings_path.parent_path() / "movies.dat";
  std::vector<std::size_t> genres(items.size());
  std::ifstream movies(movies_path);
  if (movies && !items.empty()) {
    std::map<std::string, std::size_t, std::less<>> names;
    std::unordered_map<std::uint32_t, std::size_t> by_movie;
    while (std::getline(movies, line)) {
      const std::string_view text = trim(line);
      if (text.empty()) continue;
      const auto fields = split(text, "::");
      if (fields.size() < 3) continue;
      const auto id = parse_number<std::uint32_t>(fields[0]);
      if (!id) continue;
      const std::string_view first = split(fields.back(), "|").front();
      auto it = names.find(first);
      if (it == names.end()) it = names.emplace(std::string(first), names.size()).first;
      by_movie[*id] = it->second;
    }
    const std::size_t unknown = names.size();
    bool any_unknown = false;
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto it = by_movie.find(items[i]);
      any_unknown |= it == by_movie.end();
      genres[i] = it == by_movie.end() ? unknown : it->second;
    }
    table.set_genres(std::move(genres), unknown + (any_unknown ? 1 : 0));
    rep.genres_from_file = true;
  } else if (!items.empty()) {
    for (std::size_t i = 0; i < items.size(); ++i) genres[i] = items[i] % kFallbackGenres;
    table.set_genres(std::move(genres), kFallbackGenres);
  }
  if (report) *report = rep;
  return table;
}

double ml1m_reward(std::optional<int> rating, std::size_t repeat_count) {
  if (!rating || *rating == 1) return -1.0;
  double score = static_cast<double>((*rating - 1) * (*rating - 1));
  if (repeat_count > 0) {
    // 1.1 - 0.2 * count, clamped to [-1, 0.3], evaluated in tenths so the
    // result is the correctly rounded decimal.
    const long long tenths = 11 - 2 * static_cast<long long>(std::min<std::size_t>(repeat_count, 1000));
    score = static_cast<double>(std::clamp(tenths, -10LL, 3LL)) / 10.0;
  }
  if (score > 0.0) score /= 16.0;
  if (score < -1.0) score = -1.0;
  return score;
}

Ml1mEnvironment::Ml1mEnvironment(std::shared_ptr<const RatingTable> table, Ml1mConfig config)
    : table_(std::move(table)), config_(config) {
  if (!table_ || table_->num_users() == 0 || table_->num_items() == 0) {
    throw std::invalid_argument("Ml1mEnvironment: empty rating table");
  }
  if (config_.max_steps == 0) throw std::invalid_argument("Ml1mEnvironment: zero episode length");
  state_.done = true;
}

const EpisodeState& Ml1mEnvironment::reset(Rng& rng) {
  state_ = EpisodeState{};
  state_.user = static_cast<UserId>(std::uniform_int_distribution<std::size_t>(0, table_->num_users() - 1)(rng));
  state_.history = std::make_shared<BehaviorLog>();
  state_.history->reserve(config_.max_steps);
  genre_shift_.assign(table_->num_genres(), 0);
  item_counts_.assign(table_->num_items(), 0);
  negative_run_ = 0;
  return state_;
}

std::optional<int> Ml1mEnvironment::effective_rating(ItemId item) const {
  if (item >= table_->num_items()) throw std::out_of_range("Ml1mEnvironment: item outside catalog");
  auto r = table_->rating(std::get<UserId>(state_.user), item);
  if (!r) return r;
  return std::clamp(*r + genre_shift_[table_->genre(item)], 1, 5);
}

double Ml1mEnvironment::get_reward(ItemId item) const { return ml1m_reward(effective_rating(item), item_counts_[item]); }

StepOutcome Ml1mEnvironment::step(const Action& action, Rng& rng) {
  if (state_.done) throw std::logic_error("Ml1mEnvironment::step: episode is done");
  if (action.items.empty()) throw std::invalid_argument("Ml1mEnvironment::step: empty slate");
  double best = -1.0;
  ItemId chosen = action.items.front();
  for (ItemId item : action.items) {
    const double r = get_reward(item);
    if (r > best) {
      best = r;
      chosen = item;
    }
  }
  state_.history->push_back({chosen, best, state_.step});
  ++item_counts_[chosen];
  ++state_.step;
  negative_run_ = best < 0.0 ? negative_run_ + 1 : 0;

  if (config_.shift_every > 0 && state_.step % config_.shift_every == 0 && state_.step < config_.max_steps) {
    const std::size_t g = std::uniform_int_distribution<std::size_t>(0, genre_shift_.size() - 1)(rng);
    genre_shift_[g] += std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
  }
  state_.done = state_.step >= config_.max_steps ||
                (config_.early_stop_negatives > 0 && negative_run_ >= config_.early_stop_negatives);
  return {best, state_.done};
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

namespace {

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) throw std::domain_error("normalize: zero vector");
  for (double& x : v) x /= n;
}

std::vector<double> gaussian_vector(std::size_t n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

}  // namespace

SyntheticEnvironment::SyntheticEnvironment(SyntheticConfig config) : config_(config) {
  if (config.num_users == 0 || config.user_feature_width == 0 || config.action_dim == 0 || config.max_steps == 0) {
    throw std::invalid_argument("SyntheticEnvironment: sizes must be positive");
  }
  if (config.drift_weight < 0.0 || config.drift_weight > 1.0) {
    throw std::invalid_argument("SyntheticEnvironment: drift weight outside [0, 1]");
  }
  // Initial interest is a fixed random linear image of the static features,
  // so features are informative about preferences.
  Rng pop(config.population_seed);
  const auto mix = gaussian_vector(config.action_dim * config.user_feature_width, pop);
  for (std::size_t u = 0; u < config.num_users; ++u) {
    auto f = gaussian_vector(config.user_feature_width, pop);
    std::vector<double> interest(config.action_dim, 0.0);
    for (std::size_t d = 0; d < config.action_dim; ++d)
      for (std::size_t k = 0; k < f.size(); ++k) interest[d] += mix[d * f.size() + k] * f[k];
    normalize(interest);
    features_.push_back(std::move(f));
    initial_interest_.push_back(std::move(interest));
  }
  state_.done = true;
}

const EpisodeState& SyntheticEnvironment::reset(Rng& rng) {
  const std::size_t u = std::uniform_int_distribution<std::size_t>(0, features_.size() - 1)(rng);
  state_ = EpisodeState{};
  state_.user = features_[u];
  state_.history = std::make_shared<BehaviorLog>();
  state_.history->reserve(config_.max_steps);
  interest_ = initial_interest_[u];
  positives_ = 0;
  return state_;
}

void SyntheticEnvironment::set_interest(std::vector<double> interest) {
  if (interest.size() != config_.action_dim) throw std::invalid_argument("set_interest: width mismatch");
  normalize(interest);
  interest_ = std::move(interest);
}

double SyntheticEnvironment::reward_for(std::span<const double> action) const {
  if (action.size() != config_.action_dim) throw std::invalid_argument("SyntheticEnvironment: action width mismatch");
  const double c = cosine_similarity(action, interest_);
  if (c < config_.threshold) return 0.0;
  return std::min(c, 1.0);
}

StepOutcome SyntheticEnvironment::step(const Action& action, Rng& rng) {
  if (state_.done) throw std::logic_error("SyntheticEnvironment::step: episode is done");
  const double reward = reward_for(action.vector);
  state_.history->push_back({action.vector, reward, state_.step});
  ++state_.step;
  if (reward > 0.0) {
    ++positives_;
    if (config_.drift_weight > 0.0 && config_.drift_every > 0 && positives_ % config_.drift_every == 0) {
      auto noise = gaussian_vector(config_.action_dim, rng);
      normalize(noise);
      for (std::size_t d = 0; d < interest_.size(); ++d) {
        interest_[d] = (1.0 - config_.drift_weight) * interest_[d] + config_.drift_weight * noise[d];
      }
      normalize(interest_);
    }
  }
  state_.done = state_.step >= config_.max_steps;
  return {reward, state_.done};
}

}  // namespace crir::env
