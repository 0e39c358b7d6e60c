#pragma once

// The factorized sequential generative model: a time-invariant encoder for
// the global latent f, a time-variant encoder for per-step latents z_t, a
// recurrent generator for the sequential prior parameters (mu_t, sigma_t),
// and a bidirectional decoder. Also the ablation variants and the plain
// autoregressive LSTM baseline.

#include "stg/autodiff.hpp"
#include "stg/nets.hpp"
#include "stg/trajectory.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace stg {

enum class Variant { svae_y, svae_z, dsvae, fdsvae, lstm_baseline };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::svae_y: return "svae-y";
    case Variant::svae_z: return "svae-z";
    case Variant::dsvae: return "dsvae";
    case Variant::fdsvae: return "fdsvae";
    case Variant::lstm_baseline: return "lstm-baseline";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::svae_y, Variant::svae_z, Variant::dsvae, Variant::fdsvae, Variant::lstm_baseline})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

enum class PriorCondition { zero, f };

struct ModelConfig {
  Variant variant = Variant::fdsvae;
  bool constrained = false;  ///< the "-S" versions: train with the constraint penalty

  std::size_t T = 32;
  std::vector<std::size_t> embed_widths{48, 16};
  std::size_t hidden = 512;
  std::size_t f_dim = 256;
  std::size_t z_dim = 64;
  std::size_t prior_input = 16;
  std::vector<std::size_t> head_widths{128, 2};
  PriorCondition prior_condition = PriorCondition::zero;

  double beta = 100.0;
  double penalty_weight = 1.0;
  std::size_t penalty_samples = 32;
  bool penalty_sqrt = false;
  double learning_rate = 2e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  double interval = 15.0;

  // Coordinates enter the networks as (s - origin) / scale.
  double origin_x = 0.0;
  double origin_y = 0.0;
  double coord_scale = 1.0;

  /// Taxi settings (Porto / T-Drive).
  static ModelConfig taxi() { return ModelConfig{}; }

  /// Check-in settings (simulated campus / Gowalla).
  static ModelConfig checkin() {
    ModelConfig c;
    c.embed_widths = {48, 32};
    c.z_dim = 32;
    c.prior_input = 32;
    c.head_widths = {64, 32, 2};
    c.learning_rate = 2e-3;
    return c;
  }

  /// Reduced dimensions for single-core runs on the synthetic corpus.
  static ModelConfig toy() {
    ModelConfig c;
    c.T = 16;
    c.embed_widths = {16, 8};
    c.hidden = 16;
    c.f_dim = 8;
    c.z_dim = 4;
    c.prior_input = 4;
    c.head_widths = {16, 2};
    c.beta = 1.0;
    c.learning_rate = 2e-3;
    c.epochs = 30;
    return c;
  }

  bool has_f() const { return variant == Variant::svae_y || variant == Variant::dsvae || variant == Variant::fdsvae; }
  bool has_z() const { return variant == Variant::svae_z || variant == Variant::dsvae || variant == Variant::fdsvae; }
  bool full_posterior() const { return variant == Variant::dsvae; }

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v == 0) throw std::invalid_argument(std::string("ModelConfig: ") + what + " must be positive");
    };
    positive(T, "T");
    positive(hidden, "hidden");
    positive(f_dim, "f_dim");
    positive(z_dim, "z_dim");
    positive(prior_input, "prior_input");
    positive(batch_size, "batch_size");
    positive(penalty_samples, "penalty_samples");
    if (embed_widths.empty() || head_widths.empty()) throw std::invalid_argument("ModelConfig: empty MLP widths");
    for (auto w : embed_widths) positive(w, "embed width");
    for (auto w : head_widths) positive(w, "head width");
    if (head_widths.back() != 2) throw std::invalid_argument("ModelConfig: decoder head must end in 2 outputs");
    if (!(beta >= 0.0) || !(penalty_weight >= 0.0)) throw std::invalid_argument("ModelConfig: beta and penalty weight must be >= 0");
    if (!(coord_scale > 0.0) || !(interval > 0.0)) throw std::invalid_argument("ModelConfig: scale and interval must be positive");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("ModelConfig: learning rate must be >= 0");
    if (prior_condition == PriorCondition::f && !has_f())
      throw std::invalid_argument("ModelConfig: prior conditioned on f needs a variant with f");
  }
};

struct Gaussian {
  Tensor mu;
  Tensor sigma;
};

/// Unit-Gaussian draws used by one forward pass over a batch.
struct Noise {
  Mat f;               ///< [batch, f_dim]
  std::vector<Mat> z;  ///< T x [batch, z_dim]
};

struct ForwardPass {
  std::optional<Gaussian> f_post;
  Tensor f;
  std::vector<Gaussian> z_post;
  std::vector<Tensor> z;
  std::vector<Gaussian> prior;
  std::vector<Tensor> recon;  ///< T x [batch, 2], kilometres
};

inline constexpr double kSigmaFloor = 1e-6;

inline Mat gaussian_noise(Rng& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  return m;
}

/// Stacks step t of every trajectory into a [batch, 2] matrix.
inline std::vector<Mat> stack_steps(const Trajectories& batch, std::size_t T) {
  std::vector<Mat> steps(T, Mat(static_cast<Eigen::Index>(batch.size()), 2));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].size() != T)
      throw ShapeError("trajectory " + batch[b].id + " has " + std::to_string(batch[b].size()) + " points, expected " +
                       std::to_string(T));
    for (std::size_t t = 0; t < T; ++t) {
      steps[t](static_cast<Eigen::Index>(b), 0) = batch[b].points[t].x;
      steps[t](static_cast<Eigen::Index>(b), 1) = batch[b].points[t].y;
    }
  }
  return steps;
}

inline Trajectories unstack_steps(const std::vector<Mat>& steps, double interval) {
  Trajectories out;
  if (steps.empty()) return out;
  out.resize(static_cast<std::size_t>(steps.front().rows()));
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b].interval = interval;
    for (const Mat& m : steps)
      out[b].points.push_back(Point{m(static_cast<Eigen::Index>(b), 0), m(static_cast<Eigen::Index>(b), 1)});
  }
  return out;
}

class Model {
public:
  explicit Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(config_.seed);
    init(rng);
  }

  Model(ModelConfig config, ParamSet params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
  }

  const ModelConfig& config() const { return config_; }
  ModelConfig& config() { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  MlpSpec embed_spec() const { return {2, config_.embed_widths}; }
  RecurrentSpec f_rnn_spec() const { return {config_.embed_widths.back(), config_.hidden}; }
  RecurrentSpec z_birnn_spec() const {
    const bool with_f = config_.full_posterior();
    return {config_.embed_widths.back() + (with_f ? config_.f_dim : 0), config_.hidden};
  }
  RecurrentSpec z_rnn_spec() const {
    return {2 * config_.hidden, config_.hidden, Direction::forward, Cell::vanilla_rnn};
  }
  std::size_t prior_width() const {
    return config_.prior_condition == PriorCondition::f ? config_.f_dim : config_.prior_input;
  }
  RecurrentSpec prior_spec() const { return {prior_width(), config_.hidden}; }
  std::size_t decoder_input() const {
    return (config_.has_f() ? config_.f_dim : 0) + (config_.has_z() ? config_.z_dim : 0);
  }
  RecurrentSpec decoder_spec() const { return {decoder_input(), config_.hidden}; }
  MlpSpec head_spec() const { return {2 * config_.hidden, config_.head_widths}; }
  RecurrentSpec baseline_spec() const { return {2, config_.hidden, Direction::forward}; }
  MlpSpec baseline_head_spec() const { return {config_.hidden, config_.head_widths}; }

  /// (s - origin) / scale on a [batch, 2] step.
  Tensor normalize(const Tensor& step) const {
    Tape& tape = *step.tape();
    Mat origin(1, 2);
    origin << config_.origin_x, config_.origin_y;
    return scale(sub(step, tape.leaf(origin, Shape{2})), 1.0 / config_.coord_scale);
  }

  Tensor denormalize(const Tensor& step) const {
    Tape& tape = *step.tape();
    Mat origin(1, 2);
    origin << config_.origin_x, config_.origin_y;
    return add(scale(step, config_.coord_scale), tape.leaf(origin, Shape{2}));
  }

  std::vector<Tensor> embed(const Bound& p, const std::vector<Tensor>& steps) const {
    std::vector<Tensor> out;
    out.reserve(steps.size());
    for (const Tensor& s : steps) out.push_back(mlp_forward(embed_spec(), p, "embed", normalize(s)));
    return out;
  }

  static Tensor positive(const Tensor& raw) { return shift(softplus(raw), kSigmaFloor); }

  static Tensor reparameterize(const Gaussian& g, const Mat& eps) {
    Tape& tape = *g.mu.tape();
    return add(g.mu, mul(g.sigma, tape.leaf(eps, Shape{static_cast<std::size_t>(eps.rows()), static_cast<std::size_t>(eps.cols())})));
  }

  /// q(f | s): BiLSTM over embedded steps, heads on [forward@T ; backward@1].
  Gaussian encode_f(const Bound& p, const std::vector<Tensor>& embedded) const {
    require_f("encode_f");
    if (embedded.empty()) throw ShapeError("encode_f: empty trajectory");
    const auto out = recurrent_run(f_rnn_spec(), p, "f_rnn", embedded);
    const std::size_t h = config_.hidden;
    const Tensor summary = concat({slice(out.back(), 0, h), slice(out.front(), h, 2 * h)});
    return {mlp_forward(latent_head(config_.f_dim), p, "f_mu", summary),
            positive(mlp_forward(latent_head(config_.f_dim), p, "f_sigma", summary))};
  }

  /// q(z_t | s) (factorized) or q(z_t | s, f) (full).
  std::vector<Gaussian> encode_z(const Bound& p, const std::vector<Tensor>& embedded, const Tensor* f) const {
    require_z("encode_z");
    const bool full = config_.full_posterior();
    if (full && f == nullptr) throw std::invalid_argument("encode_z: full posterior requires f");
    std::vector<Tensor> inputs = embedded;
    if (full)
      for (Tensor& x : inputs) x = concat({x, *f});
    const auto bi = recurrent_run(z_birnn_spec(), p, "z_birnn", inputs);
    const auto a = recurrent_run(z_rnn_spec(), p, "z_rnn", bi);
    std::vector<Gaussian> out;
    for (const Tensor& at : a) {
      out.push_back({mlp_forward(z_head(config_.z_dim), p, "z_mu", at),
                     positive(mlp_forward(z_head(config_.z_dim), p, "z_sigma", at))});
    }
    return out;
  }

  /// Sequential prior parameters from recurrent nets over T copies of the
  /// condition: a zero vector (batch 1) or, when configured, the sampled f.
  std::vector<Gaussian> prior_generate(const Bound& p, std::size_t T, const Tensor* f) const {
    require_z("prior_generate");
    if (T == 0) throw ShapeError("prior_generate: T must be positive");
    Tensor cond;
    if (config_.prior_condition == PriorCondition::f) {
      if (f == nullptr) throw std::invalid_argument("prior_generate: f-conditioned prior needs f");
      cond = *f;
    } else {
      cond = zeros(p.tape(), 1, config_.prior_input);
    }
    const std::vector<Tensor> seq(T, cond);
    const auto mu_out = recurrent_run(prior_spec(), p, "prior_mu_rnn", seq);
    const auto sigma_out = recurrent_run(prior_spec(), p, "prior_sigma_rnn", seq);
    std::vector<Gaussian> out;
    for (std::size_t t = 0; t < T; ++t) {
      out.push_back({mlp_forward(latent_head(config_.z_dim), p, "prior_mu", mu_out[t]),
                     positive(mlp_forward(latent_head(config_.z_dim), p, "prior_sigma", sigma_out[t]))});
    }
    return out;
  }

  /// BiLSTM over per-step latent inputs (f || z_t, f alone, or z_t alone) and
  /// an MLP head to kilometre coordinates.
  std::vector<Tensor> decode(const Bound& p, const Tensor* f, const std::vector<Tensor>* z, std::size_t T) const {
    if (config_.variant == Variant::lstm_baseline) throw std::invalid_argument("decode: baseline has no decoder");
    if (config_.has_f() != (f != nullptr) || config_.has_z() != (z != nullptr))
      throw std::invalid_argument("decode: latent inputs do not match variant " + to_string(config_.variant));
    if (z && z->size() != T) throw ShapeError("decode: z sequence length does not match T");
    std::vector<Tensor> inputs(T);
    for (std::size_t t = 0; t < T; ++t) {
      if (f && z)
        inputs[t] = concat({*f, (*z)[t]});
      else
        inputs[t] = f ? *f : (*z)[t];
    }
    const auto b = recurrent_run(decoder_spec(), p, "dec_rnn", inputs);
    std::vector<Tensor> out;
    for (const Tensor& bt : b) out.push_back(denormalize(mlp_forward(head_spec(), p, "dec_head", bt)));
    return out;
  }

  Noise draw_noise(Rng& rng, std::size_t batch, std::size_t T) const {
    Noise n;
    if (config_.has_f()) n.f = gaussian_noise(rng, batch, config_.f_dim);
    if (config_.has_z())
      for (std::size_t t = 0; t < T; ++t) n.z.push_back(gaussian_noise(rng, batch, config_.z_dim));
    return n;
  }

  /// Training path: encode, sample posteriors, generate priors, decode.
  ForwardPass forward(const Bound& p, const std::vector<Tensor>& steps, const Noise& noise) const {
    if (config_.variant == Variant::lstm_baseline) throw std::invalid_argument("forward: use baseline_forward");
    const std::size_t T = steps.size();
    ForwardPass fp;
    const auto embedded = embed(p, steps);
    if (config_.has_f()) {
      fp.f_post = encode_f(p, embedded);
      fp.f = reparameterize(*fp.f_post, noise.f);
    }
    if (config_.has_z()) {
      fp.z_post = encode_z(p, embedded, config_.has_f() ? &fp.f : nullptr);
      for (std::size_t t = 0; t < T; ++t) fp.z.push_back(reparameterize(fp.z_post[t], noise.z.at(t)));
      fp.prior = prior_generate(p, T, config_.has_f() ? &fp.f : nullptr);
    }
    fp.recon = decode(p, config_.has_f() ? &fp.f : nullptr, config_.has_z() ? &fp.z : nullptr, T);
    return fp;
  }

  /// Synthesis path: f ~ N(0, I), Theta from the prior generator,
  /// z_t = mu_t + sigma_t * eps_t, then decode. Differentiable in the params.
  std::vector<Tensor> synthesize_steps(const Bound& p, std::size_t T, const Noise& noise) const {
    if (config_.variant == Variant::lstm_baseline) throw std::invalid_argument("synthesize: baseline needs start points");
    Tape& tape = p.tape();
    Tensor f;
    if (config_.has_f()) f = tape.leaf(noise.f, Shape{static_cast<std::size_t>(noise.f.rows()), config_.f_dim});
    std::vector<Tensor> z;
    if (config_.has_z()) {
      const auto prior = prior_generate(p, T, config_.has_f() ? &f : nullptr);
      for (std::size_t t = 0; t < T; ++t) z.push_back(reparameterize(prior[t], noise.z.at(t)));
    }
    return decode(p, config_.has_f() ? &f : nullptr, config_.has_z() ? &z : nullptr, T);
  }

  Trajectories synthesize(std::size_t n, std::size_t T, Rng& rng) const {
    if (n == 0) return {};
    const Noise noise = draw_noise(rng, n, T);
    return synthesize_with(noise, n, T);
  }

  Trajectories synthesize_with(const Noise& noise, std::size_t n, std::size_t T) const {
    if (n == 0) return {};
    Tape tape;
    const Bound p(tape, params_);
    const auto steps = synthesize_steps(p, T, noise);
    std::vector<Mat> values;
    for (const Tensor& s : steps) values.push_back(s.value());
    return unstack_steps(values, config_.interval);
  }

  // -- LSTM baseline --------------------------------------------------------

  /// Teacher-forced next-point predictions for inputs s_1..s_{T-1}.
  std::vector<Tensor> baseline_forward(const Bound& p, const std::vector<Tensor>& inputs) const {
    require_baseline();
    std::vector<Tensor> norm;
    for (const Tensor& s : inputs) norm.push_back(normalize(s));
    const auto h = recurrent_run(baseline_spec(), p, "base_rnn", norm);
    std::vector<Tensor> out;
    for (const Tensor& ht : h) out.push_back(denormalize(mlp_forward(baseline_head_spec(), p, "base_head", ht)));
    return out;
  }

  /// Autoregressive rollout: T predicted points, each fed back as the next input.
  Trajectory baseline_rollout(const Point& start, std::size_t T) const {
    require_baseline();
    Tape tape;
    const Bound p(tape, params_);
    Trajectory out;
    out.interval = config_.interval;
    Mat x(1, 2);
    x << start.x, start.y;
    Tensor input = tape.leaf(x, Shape{1, 2});
    LstmState state{zeros(tape, 1, config_.hidden), zeros(tape, 1, config_.hidden)};
    for (std::size_t t = 0; t < T; ++t) {
      state = lstm_cell(p, "base_rnn.fw", normalize(input), state);
      input = denormalize(mlp_forward(baseline_head_spec(), p, "base_head", state.h));
      out.points.push_back(Point{input.value()(0, 0), input.value()(0, 1)});
    }
    return out;
  }

private:
  MlpSpec latent_head(std::size_t out) const { return {2 * config_.hidden, {out}}; }
  MlpSpec z_head(std::size_t out) const { return {config_.hidden, {out}}; }

  void require_f(const char* op) const {
    if (!config_.has_f()) throw std::invalid_argument(std::string(op) + ": variant " + to_string(config_.variant) + " has no f");
  }
  void require_z(const char* op) const {
    if (!config_.has_z()) throw std::invalid_argument(std::string(op) + ": variant " + to_string(config_.variant) + " has no z");
  }
  void require_baseline() const {
    if (config_.variant != Variant::lstm_baseline) throw std::invalid_argument("baseline op on a latent-variable model");
  }

  void init(Rng& rng) {
    if (config_.variant == Variant::lstm_baseline) {
      init_recurrent(params_, "base_rnn", baseline_spec(), rng);
      init_mlp(params_, "base_head", baseline_head_spec(), rng);
      return;
    }
    init_mlp(params_, "embed", embed_spec(), rng);
    if (config_.has_f()) {
      init_recurrent(params_, "f_rnn", f_rnn_spec(), rng);
      init_mlp(params_, "f_mu", latent_head(config_.f_dim), rng);
      init_mlp(params_, "f_sigma", latent_head(config_.f_dim), rng);
    }
    if (config_.has_z()) {
      init_recurrent(params_, "z_birnn", z_birnn_spec(), rng);
      init_recurrent(params_, "z_rnn", z_rnn_spec(), rng);
      init_mlp(params_, "z_mu", z_head(config_.z_dim), rng);
      init_mlp(params_, "z_sigma", z_head(config_.z_dim), rng);
      init_recurrent(params_, "prior_mu_rnn", prior_spec(), rng);
      init_recurrent(params_, "prior_sigma_rnn", prior_spec(), rng);
      init_mlp(params_, "prior_mu", latent_head(config_.z_dim), rng);
      init_mlp(params_, "prior_sigma", latent_head(config_.z_dim), rng);
    }
    init_recurrent(params_, "dec_rnn", decoder_spec(), rng);
    init_mlp(params_, "dec_head", head_spec(), rng);
  }

  ModelConfig config_;
  ParamSet params_;
};

}  // namespace stg
