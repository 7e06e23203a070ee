#include "crir/prcl/prcl.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace crir::prcl {

namespace nc = numcore;

RankedHistory rank_behaviors(std::span<const double> weights, std::span<const std::uint32_t> step_indices) {
  if (weights.empty()) throw std::invalid_argument("rank_behaviors: empty history");
  if (weights.size() != step_indices.size()) throw std::invalid_argument("rank_behaviors: length mismatch");
  RankedHistory out;
  out.order.resize(weights.size());
  std::iota(out.order.begin(), out.order.end(), 0);
  std::sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) {
    if (weights[a] != weights[b]) return weights[a] > weights[b];
    if (step_indices[a] != step_indices[b]) return step_indices[a] > step_indices[b];
    return a > b;
  });
  out.ranks.resize(weights.size());
  for (std::size_t i = 0; i < out.order.size(); ++i) out.ranks[out.order[i]] = i + 1;
  return out;
}

std::optional<ContrastiveSample> build_contrastive_sample(const RankedHistory& ranked, Rng& rng) {
  const std::size_t n = ranked.order.size();
  if (n == 0) throw std::invalid_argument("build_contrastive_sample: empty history");
  const std::size_t half = n / 2;
  if (half < 2) return std::nullopt;
  ContrastiveSample s;
  s.anchor = ranked.order[0];
  s.positive_rank = std::uniform_int_distribution<std::size_t>(2, half)(rng);
  s.positive = ranked.order[s.positive_rank - 1];
  for (std::size_t r = half + 1; r <= n; ++r) s.negatives.push_back(ranked.order[r - 1]);
  return s;
}

double balanced_coefficient(std::size_t max_history) {
  const std::size_t half = max_history / 2;
  if (half < 2) throw std::invalid_argument("balanced_coefficient: history too short for a positive window");
  double acc = 0.0;
  for (std::size_t i = 2; i <= half; ++i) acc += 1.0 / std::sqrt(static_cast<double>(i));
  return acc / static_cast<double>(half - 1);
}

double CoefficientStrategy::coefficient(std::size_t rank) const {
  if (kind == Kind::kBalanced) return balanced_value;
  if (rank < 1) throw std::invalid_argument("coefficient: ranks start at 1");
  return 1.0 / std::sqrt(static_cast<double>(rank));
}

Var positional_infonce(Var behaviors, std::span<const ContrastiveSample> samples, const CoefficientStrategy& strategy) {
  if (samples.empty()) throw std::invalid_argument("positional_infonce: no samples");
  const std::size_t rows = behaviors.value().rows();
  std::vector<std::size_t> anchors, positives, neg_anchor, negatives, offsets{0};
  std::vector<double> coeffs;
  for (const ContrastiveSample& s : samples) {
    if (s.negatives.empty()) throw std::invalid_argument("positional_infonce: empty negative set");
    if (s.anchor >= rows || s.positive >= rows) throw std::out_of_range("positional_infonce: row out of range");
    anchors.push_back(s.anchor);
    positives.push_back(s.positive);
    for (std::size_t n : s.negatives) {
      if (n >= rows) throw std::out_of_range("positional_infonce: row out of range");
      neg_anchor.push_back(s.anchor);
      negatives.push_back(n);
    }
    offsets.push_back(negatives.size());
    coeffs.push_back(strategy.coefficient(s.positive_rank));
  }
  Tape& tape = behaviors.tape();
  Var pos = nc::rowwise_dot(nc::gather_rows(behaviors, anchors), nc::gather_rows(behaviors, positives));
  Var neg = nc::rowwise_dot(nc::gather_rows(behaviors, neg_anchor), nc::gather_rows(behaviors, negatives));
  Var per_sample = nc::sub(nc::segment_logsumexp(neg, std::move(offsets)), pos);
  Var weighted = nc::mul(per_sample, tape.constant(nc::Tensor::vector(std::move(coeffs))));
  return nc::mean(weighted);
}

std::vector<std::size_t> assemble_prcl_batch(const std::vector<std::size_t>& per_batch,
                                             const std::vector<std::size_t>& random_batch,
                                             SamplingMechanism mechanism) {
  switch (mechanism) {
    case SamplingMechanism::kCombined:
      return per_batch;
    case SamplingMechanism::kDivided:
      return random_batch;
    case SamplingMechanism::kMixed: {
      std::vector<std::size_t> out = per_batch;
      out.insert(out.end(), random_batch.begin(), random_batch.end());
      return out;
    }
  }
  throw std::invalid_argument("assemble_prcl_batch: unknown mechanism");
}

PrclLoss prcl_loss(Tape& tape, staterep::RepresentationNetwork& net, std::span<const staterep::StateInput> batch,
                   const CoefficientStrategy& strategy, Rng& rng, bool train_encoder) {
  staterep::ForwardOptions opt;
  opt.mode = nc::DiceMode::kEval;
  opt.train_encoder = train_encoder;
  opt.train_state = false;
  opt.need_state = false;
  opt.weights_need_grad = false;
  auto reps = net.forward(tape, batch, opt);

  PrclLoss out;
  std::vector<ContrastiveSample> samples;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const std::size_t begin = reps.offsets[s], n = reps.rows_of(s);
    if (n == 0) {
      ++out.skipped;
      continue;
    }
    const auto weights = reps.weights.value().values().subspan(begin, n);
    const auto steps = std::span<const std::uint32_t>(reps.step_indices).subspan(begin, n);
    auto sample = build_contrastive_sample(rank_behaviors(weights, steps), rng);
    if (!sample) {
      ++out.skipped;
      continue;
    }
    sample->anchor += begin;
    sample->positive += begin;
    for (std::size_t& i : sample->negatives) i += begin;
    samples.push_back(std::move(*sample));
  }
  out.samples = samples.size();
  if (!samples.empty()) out.loss = positional_infonce(reps.behaviors, samples, strategy);
  return out;
}

PrclStepResult prcl_update(staterep::RepresentationNetwork& net, std::span<const staterep::StateInput> batch,
                           const CoefficientStrategy& strategy, Rng& rng, nc::Adam* optimizer) {
  if (batch.empty()) throw std::invalid_argument("prcl_update: empty batch");
  Tape tape;
  PrclLoss loss = prcl_loss(tape, net, batch, strategy, rng, true);
  PrclStepResult out;
  out.samples = loss.samples;
  out.skipped = loss.skipped;
  if (!loss.loss.valid()) {
    spdlog::warn("prcl_update: all {} histories too short for a contrastive sample", batch.size());
    return out;
  }
  out.mean_loss = loss.loss.value().item();
  tape.backward(loss.loss);
  out.grad_norm = nc::gradient_norm(net.logged_encoder_layer());
  if (optimizer) {
    optimizer->step();
    out.applied = true;
  } else {
    for (nc::Tensor* p : net.encoder_parameters()) p->zero_grad();
  }
  return out;
}

}  // namespace crir::prcl
