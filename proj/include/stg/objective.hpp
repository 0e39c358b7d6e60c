#pragma once

// Training objective: squared-error reconstruction, beta-weighted diagonal
// Gaussian KL terms against the unit prior on f and the sequential prior on
// z_t, and the Monte-Carlo constraint penalty on synthesized trajectories.

#include "stg/autodiff.hpp"
#include "stg/constraints.hpp"
#include "stg/model.hpp"
#include "stg/nets.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace stg {

/// KL(N(mu1, sigma1) || N(mu2, sigma2)) summed over dimensions.
inline double gaussian_kl(std::span<const double> mu1, std::span<const double> sigma1, std::span<const double> mu2,
                          std::span<const double> sigma2) {
  const std::size_t n = mu1.size();
  if (sigma1.size() != n || mu2.size() != n || sigma2.size() != n)
    throw ShapeError("gaussian_kl: parameter vectors differ in length");
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sigma1[i] > 0.0) || !(sigma2[i] > 0.0)) throw std::invalid_argument("gaussian_kl: sigma must be positive");
    const double d = mu1[i] - mu2[i];
    kl += std::log(sigma2[i] / sigma1[i]) + (sigma1[i] * sigma1[i] + d * d) / (2.0 * sigma2[i] * sigma2[i]) - 0.5;
  }
  return kl;
}

/// Row-wise KL on a tape: [batch, d] operands (single-row operands broadcast) -> [batch, 1].
inline Tensor gaussian_kl(const Tensor& mu1, const Tensor& sigma1, const Tensor& mu2, const Tensor& sigma2) {
  const Tensor ratio = log(div(sigma2, sigma1));
  const Tensor num = add(square(sigma1), square(sub(mu1, mu2)));
  const Tensor quad = div(num, scale(square(sigma2), 2.0));
  return sum_last(shift(add(ratio, quad), -0.5));
}

/// Row-wise KL against N(0, I).
inline Tensor unit_gaussian_kl(const Tensor& mu, const Tensor& sigma) {
  const Tensor v = shift(sub(add(square(mu), square(sigma)), log(square(sigma))), -1.0);
  return scale(sum_last(v), 0.5);
}

struct LossBreakdown {
  double reconstruction = 0.0;
  double kl_f = 0.0;
  double kl_z = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  double beta = 0.0;
  double penalty_weight = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    reconstruction += o.reconstruction;
    kl_f += o.kl_f;
    kl_z += o.kl_z;
    penalty += o.penalty;
    total += o.total;
    return *this;
  }
  LossBreakdown scaled(double k) const {
    LossBreakdown r = *this;
    r.reconstruction *= k;
    r.kl_f *= k;
    r.kl_z *= k;
    r.penalty *= k;
    r.total *= k;
    return r;
  }
  bool operator==(const LossBreakdown&) const = default;
};

inline nlohmann::json to_json(const LossBreakdown& l) {
  return {{"reconstruction", l.reconstruction}, {"kl_f", l.kl_f}, {"kl_z", l.kl_z}, {"penalty", l.penalty},
          {"total", l.total}, {"beta", l.beta}, {"penalty_weight", l.penalty_weight}};
}

/// Loss terms as tape scalars (batch means).
struct LossTerms {
  Tensor reconstruction;
  Tensor kl_f;
  Tensor kl_z;
  Tensor penalty;
  Tensor total;
};

inline LossBreakdown breakdown(const LossTerms& t, double beta, double penalty_weight) {
  return {t.reconstruction.item(), t.kl_f.item(), t.kl_z.item(), t.penalty.item(), t.total.item(), beta, penalty_weight};
}

/// Sum over steps of squared distance, mean over batch rows.
inline Tensor reconstruction_loss(const std::vector<Tensor>& target, const std::vector<Tensor>& recon) {
  if (target.size() != recon.size())
    throw ShapeError("reconstruction: " + std::to_string(target.size()) + " target steps vs " +
                     std::to_string(recon.size()) + " reconstructed");
  if (target.empty()) throw ShapeError("reconstruction: empty sequence");
  Tape& tape = *target.front().tape();
  Tensor total = tape.scalar(0.0);
  for (std::size_t t = 0; t < target.size(); ++t) total = add(total, sum(square(sub(target[t], recon[t]))));
  return scale(total, 1.0 / static_cast<double>(target.front().value().rows()));
}

/// Reconstruction + beta (KL_f + KL_z). Penalty is zero here; see constraint_penalty.
inline LossTerms elbo_loss(const ForwardPass& fp, const std::vector<Tensor>& target, double beta) {
  Tape& tape = *target.front().tape();
  const double batch = static_cast<double>(target.front().value().rows());
  LossTerms terms;
  terms.reconstruction = reconstruction_loss(target, fp.recon);
  terms.kl_f = tape.scalar(0.0);
  if (fp.f_post) terms.kl_f = scale(sum(unit_gaussian_kl(fp.f_post->mu, fp.f_post->sigma)), 1.0 / batch);
  terms.kl_z = tape.scalar(0.0);
  if (!fp.z_post.empty()) {
    if (fp.prior.size() != fp.z_post.size()) throw ShapeError("elbo: prior and posterior lengths differ");
    Tensor acc = tape.scalar(0.0);
    for (std::size_t t = 0; t < fp.z_post.size(); ++t)
      acc = add(acc, sum(gaussian_kl(fp.z_post[t].mu, fp.z_post[t].sigma, fp.prior[t].mu, fp.prior[t].sigma)));
    terms.kl_z = scale(acc, 1.0 / batch);
  }
  terms.penalty = tape.scalar(0.0);
  terms.total = add(terms.reconstruction, scale(add(terms.kl_f, terms.kl_z), beta));
  return terms;
}

/// Mean hinge penalty of `constraint` over J synthesized trajectories,
/// differentiable through the reparameterized synthesis path. With
/// `use_sqrt`, returns sqrt(max(mean, 1e-12)).
inline Tensor constraint_penalty(const Model& model, const Bound& p, const ConstraintExpr& constraint,
                                 const Noise& noise, std::size_t T, bool use_sqrt) {
  const auto steps = model.synthesize_steps(p, T, noise);
  Tensor mean = mean_penalty(constraint, steps, model.config().interval, p.tape());
  if (use_sqrt) mean = sqrt(shift(hinge(shift(mean, -1e-12)), 1e-12));
  return mean;
}

/// Loss for a batch of windows. `noise` covers the posterior draws; the
/// penalty draws come from `penalty_noise` when a constraint is supplied.
inline LossTerms batch_loss(const Model& model, const Bound& p, const std::vector<Tensor>& steps, const Noise& noise,
                            const ConstraintExpr* constraint, const Noise* penalty_noise) {
  const ModelConfig& cfg = model.config();
  Tape& tape = p.tape();
  if (cfg.variant == Variant::lstm_baseline) {
    if (steps.size() < 2) throw ShapeError("baseline loss needs at least 2 steps");
    const std::vector<Tensor> inputs(steps.begin(), steps.end() - 1);
    const std::vector<Tensor> targets(steps.begin() + 1, steps.end());
    LossTerms t;
    t.reconstruction = reconstruction_loss(targets, model.baseline_forward(p, inputs));
    t.kl_f = tape.scalar(0.0);
    t.kl_z = tape.scalar(0.0);
    t.penalty = tape.scalar(0.0);
    t.total = t.reconstruction;
    return t;
  }
  LossTerms t = elbo_loss(model.forward(p, steps, noise), steps, cfg.beta);
  if (constraint && cfg.constrained) {
    if (!penalty_noise) throw std::invalid_argument("batch_loss: constraint penalty needs noise draws");
    t.penalty = constraint_penalty(model, p, *constraint, *penalty_noise, steps.size(), cfg.penalty_sqrt);
    t.total = add(t.total, scale(t.penalty, cfg.penalty_weight));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Training

struct EpochReport {
  std::size_t epoch = 0;
  LossBreakdown loss;
  std::size_t batches = 0;
  std::vector<std::string> skipped_updates;
};

class DivergenceError : public NumericError {
public:
  DivergenceError(const std::string& what, std::size_t batch) : NumericError(what), batch_index(batch) {}
  std::size_t batch_index;
};

class Trainer {
public:
  Trainer(Model& model, std::optional<ConstraintExpr> constraint = std::nullopt)
      : model_(&model),
        constraint_(std::move(constraint)),
        rng_(model.config().seed ^ 0x9e3779b97f4a7c15ULL),
        penalty_rng_(model.config().seed ^ 0xc2b2ae3d27d4eb4fULL) {
    optimizer_.learning_rate = model.config().learning_rate;
  }

  /// One pass over `data` in seeded shuffled mini-batches. Parameters are only
  /// updated after a batch's loss and gradients are finite; a non-finite loss
  /// aborts with DivergenceError naming the batch.
  EpochReport train_epoch(const Trajectories& data) {
    const ModelConfig& cfg = model_->config();
    if (data.empty()) throw std::invalid_argument("train_epoch: empty dataset");
    for (const auto& s : data)
      if (s.size() != cfg.T)
        throw ShapeError("train_epoch: window " + s.id + " has length " + std::to_string(s.size()) + ", expected " +
                         std::to_string(cfg.T));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);

    EpochReport report;
    report.epoch = ++epochs_done_;
    double weight_sum = 0.0;
    for (std::size_t begin = 0, index = 0; begin < order.size(); begin += cfg.batch_size, ++index) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      Trajectories batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(data[order[i]]);
      const LossBreakdown b = train_batch(batch, index, report.skipped_updates);
      const double w = static_cast<double>(batch.size());
      report.loss += b.scaled(w);
      weight_sum += w;
      ++report.batches;
    }
    report.loss = report.loss.scaled(1.0 / weight_sum);
    report.loss.beta = cfg.beta;
    report.loss.penalty_weight = cfg.penalty_weight;
    return report;
  }

  LossBreakdown train_batch(const Trajectories& batch, std::size_t index, std::vector<std::string>& skipped) {
    const ModelConfig& cfg = model_->config();
    const Noise noise = model_->draw_noise(rng_, batch.size(), cfg.T);
    std::optional<Noise> penalty_noise;
    const bool penalize = constraint_ && cfg.constrained && cfg.variant != Variant::lstm_baseline;
    if (penalize) penalty_noise = model_->draw_noise(penalty_rng_, cfg.penalty_samples, cfg.T);

    Tape tape;
    const Bound p(tape, model_->params());
    std::vector<Tensor> steps;
    for (const Mat& m : stack_steps(batch, cfg.T)) steps.push_back(tape.leaf(m, Shape{batch.size(), 2}));
    LossTerms terms;
    try {
      terms = batch_loss(*model_, p, steps, noise, penalize ? &*constraint_ : nullptr,
                         penalty_noise ? &*penalty_noise : nullptr);
    } catch (const NumericError& e) {
      throw DivergenceError(std::string("non-finite loss in batch ") + std::to_string(index) + ": " + e.what(), index);
    }
    if (!std::isfinite(terms.total.item()))
      throw DivergenceError("non-finite loss in batch " + std::to_string(index), index);
    tape.backward(terms.total);
    Grads grads = p.grads();
    clip_global_norm(grads, cfg.clip_norm);
    const auto s = optimizer_step(optimizer_, model_->params(), grads);
    skipped.insert(skipped.end(), s.begin(), s.end());
    return breakdown(terms, cfg.beta, cfg.penalty_weight);
  }

  OptimizerState& optimizer() { return optimizer_; }

private:
  Model* model_;
  std::optional<ConstraintExpr> constraint_;
  Rng rng_;
  Rng penalty_rng_;  // separate stream: the penalty never perturbs the posterior draws
  OptimizerState optimizer_;
  std::size_t epochs_done_ = 0;
};

}  // namespace stg
