#include "crir/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace crir::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config: bad value '" + value + "' for " + key);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v);
}

std::string fmt_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define SIZE_FIELD(name)                                                                               \
  {#name,                                                                                              \
   {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.name = parse_size(k, v); }, \
    [](const ExperimentConfig& c) { return std::to_string(c.name); }}}
#define DOUBLE_FIELD(name)                                                                               \
  {#name,                                                                                                \
   {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.name = parse_double(k, v); }, \
    [](const ExperimentConfig& c) { return fmt_double(c.name); }}}
#define BOOL_FIELD(name)                                                                               \
  {#name,                                                                                              \
   {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.name = parse_bool(k, v); }, \
    [](const ExperimentConfig& c) { return std::string(c.name ? "true" : "false"); }}}

template <typename E>
E parse_enum(const std::string& key, const std::string& v, const std::vector<std::pair<std::string, E>>& names) {
  for (const auto& [n, e] : names) {
    if (n == v) return e;
  }
  bad_value(key, v);
}

template <typename E>
std::string enum_name(E e, const std::vector<std::pair<std::string, E>>& names) {
  for (const auto& [n, x] : names) {
    if (x == e) return n;
  }
  return "?";
}

using Kind = prcl::CoefficientStrategy::Kind;
const std::vector<std::pair<std::string, EnvId>> kEnvNames{{"ml1m", EnvId::kMl1m}, {"synthetic", EnvId::kSynthetic}};
const std::vector<std::pair<std::string, Kind>> kCoefNames{{"positional", Kind::kPositional},
                                                           {"balanced", Kind::kBalanced}};
const std::vector<std::pair<std::string, prcl::SamplingMechanism>> kSamplingNames{
    {"mixed", prcl::SamplingMechanism::kMixed},
    {"divided", prcl::SamplingMechanism::kDivided},
    {"combined", prcl::SamplingMechanism::kCombined}};
const std::vector<std::pair<std::string, agent::Mechanism>> kMechNames{{"auxiliary", agent::Mechanism::kAuxiliary},
                                                                       {"constrained", agent::Mechanism::kConstrained}};
const std::vector<std::pair<std::string, agent::Routing>> kRoutingNames{{"only_rl", agent::Routing::kOnlyRl},
                                                                        {"only_prcl", agent::Routing::kOnlyPrcl},
                                                                        {"both", agent::Routing::kBoth}};

#define ENUM_FIELD(name, table)                                                                                   \
  {#name,                                                                                                         \
   {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.name = parse_enum(k, v, table); }, \
    [](const ExperimentConfig& c) { return enum_name(c.name, table); }}}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table{
      ENUM_FIELD(env, kEnvNames),
      {"data",
       {[](ExperimentConfig& c, const std::string&, const std::string& v) { c.data = v; },
        [](const ExperimentConfig& c) { return c.data; }}},
      {"episodes",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "auto") {
            c.episodes.reset();
          } else {
            c.episodes = parse_size(k, v);
          }
        },
        [](const ExperimentConfig& c) { return c.episodes ? std::to_string(*c.episodes) : std::string("auto"); }}},
      SIZE_FIELD(seeds),
      {"seed",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = parse_size(k, v); },
        [](const ExperimentConfig& c) { return std::to_string(c.seed); }}},
      SIZE_FIELD(batch_size),
      DOUBLE_FIELD(prcl_frequency),
      ENUM_FIELD(coefficient, kCoefNames),
      ENUM_FIELD(sampling, kSamplingNames),
      ENUM_FIELD(mechanism, kMechNames),
      DOUBLE_FIELD(gamma_prcl),
      ENUM_FIELD(routing, kRoutingNames),
      BOOL_FIELD(crir_without_cl),
      SIZE_FIELD(repr_dim),
      SIZE_FIELD(hidden),
      SIZE_FIELD(activation_hidden),
      SIZE_FIELD(feedback_buckets),
      SIZE_FIELD(max_history),
      DOUBLE_FIELD(learning_rate),
      DOUBLE_FIELD(gamma),
      DOUBLE_FIELD(tau),
      SIZE_FIELD(buffer_capacity),
      DOUBLE_FIELD(per_alpha),
      DOUBLE_FIELD(per_beta_start),
      DOUBLE_FIELD(per_beta_end),
      DOUBLE_FIELD(priority_epsilon),
      DOUBLE_FIELD(sigma_start),
      DOUBLE_FIELD(sigma_end),
      SIZE_FIELD(max_steps),
      SIZE_FIELD(top_k),
      SIZE_FIELD(shift_every),
      SIZE_FIELD(early_stop_negatives),
      SIZE_FIELD(synthetic_users),
      SIZE_FIELD(synthetic_user_features),
      DOUBLE_FIELD(synthetic_threshold),
      DOUBLE_FIELD(synthetic_drift),
      SIZE_FIELD(synthetic_drift_every),
      BOOL_FIELD(log_grad_norms),
      SIZE_FIELD(grad_log_every),
      SIZE_FIELD(smoothing_window),
      SIZE_FIELD(jobs),
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return &f;
  }
  return nullptr;
}

}  // namespace

std::size_t ExperimentConfig::episode_count() const {
  if (episodes) return *episodes;
  return env == EnvId::kMl1m ? 2000 : 20000;
}

void set_field(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw std::invalid_argument("config: unknown key '" + key + "'");
  f->set(config, key, value);
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  bool frequency_set = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (auto it = seen.find(key); it != seen.end()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": '" + key + "' already set on line " +
                                  std::to_string(it->second));
    }
    seen[key] = lineno;
    set_field(c, key, value);
    if (key == "prcl_frequency") frequency_set = true;
  }
  // The ablation flag pins the frequency unless it was given explicitly, in
  // which case validate() rejects a nonzero value.
  if (c.crir_without_cl && !frequency_set) c.prcl_frequency = 0.0;
  validate(c);
  return c;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot read " + path.string());
  return parse_config(in);
}

void validate(const ExperimentConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + what);
  };
  require(c.prcl_frequency >= 0.0 && c.prcl_frequency <= 1.0, "prcl_frequency must lie in [0, 1]");
  require(!c.crir_without_cl || c.prcl_frequency == 0.0, "crir_without_cl requires prcl_frequency = 0");
  require(c.seeds >= 1, "seeds must be at least 1");
  require(c.batch_size >= 1, "batch_size must be at least 1");
  require(c.gamma_prcl >= 0.0, "gamma_prcl must be non-negative");
  require(c.repr_dim >= 1 && c.hidden >= 1 && c.activation_hidden >= 1 && c.feedback_buckets >= 1,
          "network widths must be positive");
  require(c.max_history >= 1, "max_history must be positive");
  require(c.learning_rate >= 0.0, "learning_rate must be non-negative");
  require(c.gamma >= 0.0 && c.gamma <= 1.0, "gamma must lie in [0, 1]");
  require(c.tau >= 0.0 && c.tau <= 1.0, "tau must lie in [0, 1]");
  require(c.buffer_capacity >= c.batch_size, "buffer_capacity must hold one batch");
  require(c.per_alpha >= 0.0, "per_alpha must be non-negative");
  require(c.per_beta_start >= 0.0 && c.per_beta_end >= 0.0, "per_beta must be non-negative");
  require(c.priority_epsilon > 0.0, "priority_epsilon must be positive");
  require(c.sigma_start >= 0.0 && c.sigma_end >= 0.0, "sigma must be non-negative");
  require(c.max_steps >= 1, "max_steps must be positive");
  require(c.top_k >= 1, "top_k must be positive");
  require(c.synthetic_users >= 1 && c.synthetic_user_features >= 1, "synthetic population must be nonempty");
  require(c.synthetic_drift >= 0.0 && c.synthetic_drift <= 1.0, "synthetic_drift must lie in [0, 1]");
  require(c.grad_log_every >= 1, "grad_log_every must be positive");
  require(c.jobs >= 1, "jobs must be at least 1");
}

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream out;
  for (const auto& [name, f] : fields()) out << name << " = " << f.get(c) << '\n';
  return out.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [name, f] : fields()) out.push_back(name);
  return out;
}

std::string to_string(prcl::SamplingMechanism m) { return enum_name(m, kSamplingNames); }
std::string to_string(agent::Mechanism m) { return enum_name(m, kMechNames); }
std::string to_string(agent::Routing r) { return enum_name(r, kRoutingNames); }

}  // namespace crir::harness
