#include "crir/agent/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace crir::agent {

namespace nc = crir::numcore;
namespace sr = crir::staterep;

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t out, bool tanh_output, nc::Rng& rng)
    : l1_(in, hidden, rng),
      l2_(hidden, hidden, rng),
      l3_(hidden, out, rng),
      d1_(hidden),
      d2_(hidden),
      tanh_output_(tanh_output) {}

Var Mlp::forward(Tape& tape, Var x, DiceMode mode, bool trainable) {
  Var h = nc::dice(l1_.forward(tape, x, trainable), d1_, mode, trainable);
  h = nc::dice(l2_.forward(tape, h, trainable), d2_, mode, trainable);
  h = l3_.forward(tape, h, trainable);
  return tanh_output_ ? nc::tanh(h) : h;
}

std::vector<Tensor*> Mlp::parameters() {
  return {&l1_.weight, &l1_.bias, &d1_.alpha, &l2_.weight, &l2_.bias, &d2_.alpha, &l3_.weight, &l3_.bias};
}

std::vector<Tensor*> Mlp::state_tensors() {
  auto out = parameters();
  for (nc::Dice* d : {&d1_, &d2_}) {
    out.push_back(&d->running_mean);
    out.push_back(&d->running_var);
  }
  return out;
}

void Mlp::commit_statistics() {
  d1_.commit_statistics();
  d2_.commit_statistics();
}

std::size_t Mlp::parameter_count() {
  std::size_t n = 0;
  for (const Tensor* p : parameters()) n += p->size();
  return n;
}

void soft_update(std::span<Tensor* const> online, std::span<Tensor* const> target, double tau) {
  if (online.size() != target.size()) throw std::invalid_argument("soft_update: parameter lists differ in length");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("soft_update: tau outside [0, 1]");
  for (std::size_t k = 0; k < online.size(); ++k) {
    if (online[k]->shape() != target[k]->shape()) {
      throw std::invalid_argument("soft_update: shape mismatch " + nc::shape_string(online[k]->shape()) + " vs " +
                                  nc::shape_string(target[k]->shape()));
    }
  }
  for (std::size_t k = 0; k < online.size(); ++k) {
    auto o = online[k]->values();
    auto t = target[k]->values();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = tau * o[i] + (1.0 - tau) * t[i];
  }
}

double td_target(double reward, double gamma, double next_value, bool done) {
  return done ? reward : reward + gamma * next_value;
}

std::vector<ItemId> resolve_action(std::span<const double> action, const Tensor& embeddings, std::size_t top_k) {
  const std::size_t n = embeddings.rows(), d = embeddings.cols();
  if (action.size() != d) throw std::invalid_argument("resolve_action: action width differs from embedding width");
  if (top_k == 0) throw std::invalid_argument("resolve_action: top_k must be positive");
  double an = 0.0;
  for (double a : action) an += a * a;
  an = std::sqrt(an);

  std::vector<double> score(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double dp = 0.0, en = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double e = embeddings.at(i, c);
      dp += e * action[c];
      en += e * e;
    }
    en = std::sqrt(en);
    if (an > 0.0 && en > 0.0) score[i] = dp / (an * en);
  }
  std::vector<ItemId> ids(n);
  std::iota(ids.begin(), ids.end(), ItemId{0});
  const std::size_t k = std::min(top_k, n);
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), [&](ItemId a, ItemId b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  ids.resize(k);
  return ids;
}

std::vector<sr::StateInput> current_inputs(std::span<const replay::Transition* const> batch) {
  std::vector<sr::StateInput> out;
  out.reserve(batch.size());
  for (const auto* t : batch) out.push_back({t->user, t->history.records()});
  return out;
}

std::vector<sr::StateInput> next_inputs(std::span<const replay::Transition* const> batch) {
  std::vector<sr::StateInput> out;
  out.reserve(batch.size());
  for (const auto* t : batch) out.push_back({t->user, t->next_history.records()});
  return out;
}

Agent::Agent(const sr::RepresentationConfig& rep_config, const AgentConfig& config, nc::Rng& rng)
    : config_(config), net_(rep_config, rng) {
  const std::size_t ds = net_.state_dim(), da = net_.repr_dim();
  actor_ = Mlp(ds, config.hidden, da, true, rng);
  critic_ = Mlp(ds + da, config.hidden, 1, false, rng);
  actor_target_ = actor_;
  critic_target_ = critic_;

  nc::AdamHyper hyper;
  hyper.learning_rate = config.learning_rate;
  actor_opt_ = nc::Adam(actor_.parameters(), hyper);
  auto critic_params = critic_.parameters();
  for (Tensor* p : net_.state_parameters()) critic_params.push_back(p);
  critic_opt_ = nc::Adam(critic_params, hyper);
  rl_encoder_opt_ = nc::Adam(net_.encoder_parameters(), hyper);
  prcl_encoder_opt_ = nc::Adam(net_.encoder_parameters(), hyper);
}

std::vector<double> Agent::policy(const sr::StateInput& input) {
  Tape tape;
  sr::ForwardOptions opt;
  opt.weights_need_grad = false;
  auto reps = net_.forward(tape, std::span<const sr::StateInput>(&input, 1), opt);
  Var a = actor_.forward(tape, reps.states, DiceMode::kEval, false);
  const auto v = a.value().values();
  return {v.begin(), v.end()};
}

std::vector<double> Agent::select_action(const sr::StateInput& input, double sigma, Rng& rng) {
  auto a = policy(input);
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& x : a) x += noise(rng);
  }
  for (double& x : a) x = std::clamp(x, -1.0, 1.0);
  return a;
}

std::vector<double> Agent::compute_targets(std::span<const replay::Transition* const> batch) {
  Tape tape;
  sr::ForwardOptions opt;
  opt.weights_need_grad = false;
  const auto inputs = next_inputs(batch);
  auto reps = net_.forward(tape, inputs, opt);
  Var a = actor_target_.forward(tape, reps.states, DiceMode::kEval, false);
  Var v = critic_target_.forward(tape, nc::concat_cols({reps.states, a}), DiceMode::kEval, false);
  std::vector<double> y(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    y[b] = td_target(batch[b]->reward, config_.gamma, v.value()[b], batch[b]->done);
  }
  return y;
}

Agent::CriticLoss Agent::critic_loss(Tape& tape, std::span<const replay::Transition* const> batch,
                                     std::span<const double> targets, std::span<const double> weights,
                                     std::span<const sr::StateInput> prcl_batch, Rng& prcl_rng, bool encoder_from_rl,
                                     bool encoder_from_prcl) {
  const std::size_t n = batch.size(), da = action_dim();
  if (n == 0) throw std::invalid_argument("critic_loss: empty batch");
  if (targets.size() != n || weights.size() != n) throw std::invalid_argument("critic_loss: batch size mismatch");

  sr::ForwardOptions opt;
  opt.mode = DiceMode::kTrain;
  opt.train_encoder = encoder_from_rl;
  opt.train_state = true;
  const auto inputs = current_inputs(batch);
  auto reps = net_.forward(tape, inputs, opt);

  Tensor actions({n, da});
  for (std::size_t b = 0; b < n; ++b) {
    if (batch[b]->action.size() != da) throw std::invalid_argument("critic_loss: action width mismatch");
    std::copy(batch[b]->action.begin(), batch[b]->action.end(), actions.values().begin() + static_cast<std::ptrdiff_t>(b * da));
  }
  Var q = critic_.forward(tape, nc::concat_cols({reps.states, tape.constant(std::move(actions))}), DiceMode::kTrain,
                          true);
  Var y = tape.constant(Tensor::matrix(n, 1, {targets.begin(), targets.end()}));
  Var w = tape.constant(Tensor::vector({weights.begin(), weights.end()}));
  Var delta = nc::sub(y, q);

  CriticLoss out;
  out.loss = nc::scale(nc::mean(nc::scale_rows(nc::square(delta), w)), 0.5);
  out.q = q;
  out.states = reps.states;
  if (config_.mechanism == Mechanism::kConstrained && !prcl_batch.empty()) {
    auto pl = prcl::prcl_loss(tape, net_, prcl_batch, config_.coefficient, prcl_rng, encoder_from_prcl);
    out.prcl_samples = pl.samples;
    if (pl.loss.valid()) out.loss = nc::add(out.loss, nc::scale(pl.loss, config_.gamma_prcl));
  }
  return out;
}

CriticResult Agent::critic_update(std::span<const replay::Transition* const> batch, std::span<const double> weights,
                                  std::span<const sr::StateInput> prcl_batch, Rng& prcl_rng) {
  const auto targets = compute_targets(batch);
  // Under the Constrained mechanism both terms share one backward pass, so
  // routing is enforced by binding the encoder per term.
  const bool constrained = config_.mechanism == Mechanism::kConstrained && !prcl_batch.empty();
  const bool from_rl = constrained ? rl_updates_encoder() : true;
  const bool from_prcl = prcl_updates_encoder();

  Tape tape;
  auto cl = critic_loss(tape, batch, targets, weights, prcl_batch, prcl_rng, from_rl, from_prcl);
  tape.backward(cl.loss);

  CriticResult out;
  out.loss = cl.loss.value().item();
  out.prcl_samples = cl.prcl_samples;
  out.grad_norm_rl = nc::gradient_norm(net_.logged_encoder_layer());
  out.td_abs.resize(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) out.td_abs[b] = std::abs(targets[b] - cl.q.value()[b]);
  out.states = cl.states.value();

  critic_opt_.step();
  if (constrained || rl_updates_encoder()) {
    rl_encoder_opt_.step();
  } else {
    rl_encoder_opt_.zero_grad();
  }
  net_.commit_statistics();
  critic_.commit_statistics();
  return out;
}

Var Agent::actor_loss(Tape& tape, const Tensor& states) {
  Var s = tape.constant(states);
  Var a = actor_.forward(tape, s, DiceMode::kTrain, true);
  Var q = critic_.forward(tape, nc::concat_cols({s, a}), DiceMode::kEval, false);
  return nc::scale(nc::mean(q), -1.0);
}

ActorResult Agent::actor_update(const Tensor& states) {
  Tape tape;
  Var loss = actor_loss(tape, states);
  tape.backward(loss);
  actor_opt_.step();
  actor_.commit_statistics();
  return {-loss.value().item()};
}

prcl::PrclStepResult Agent::prcl_step(std::span<const sr::StateInput> batch, Rng& rng) {
  return prcl::prcl_update(net_, batch, config_.coefficient, rng,
                           prcl_updates_encoder() ? &prcl_encoder_opt_ : nullptr);
}

void Agent::soft_update_targets() {
  soft_update(actor_.state_tensors(), actor_target_.state_tensors(), config_.tau);
  soft_update(critic_.state_tensors(), critic_target_.state_tensors(), config_.tau);
}

}  // namespace crir::agent
