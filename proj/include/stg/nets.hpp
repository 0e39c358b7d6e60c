#pragma once

// Parameterized blocks: MLPs, LSTM / vanilla RNN cells and their sequence
// runners, seeded initialization and the Adam optimizer.

#include "stg/autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace stg {

using Rng = std::mt19937_64;

struct Param {
  Shape shape;
  Mat value;
};

/// Named parameters, ordered by path so iteration order is stable.
class ParamSet {
public:
  void add(const std::string& name, Shape shape, Mat value) {
    if (params_.count(name)) throw std::invalid_argument("ParamSet: duplicate parameter " + name);
    if (!value.allFinite()) throw NumericError("ParamSet: parameter " + name + " is non-finite");
    params_.emplace(name, Param{std::move(shape), std::move(value)});
  }

  const Param& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamSet: no parameter " + name);
    return it->second;
  }
  Param& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamSet: no parameter " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  bool operator==(const ParamSet& other) const {
    if (params_.size() != other.params_.size()) return false;
    for (auto a = params_.begin(), b = other.params_.begin(); a != params_.end(); ++a, ++b) {
      if (a->first != b->first || a->second.shape != b->second.shape || a->second.value != b->second.value)
        return false;
    }
    return true;
  }

private:
  std::map<std::string, Param> params_;
};

using Grads = std::map<std::string, Mat>;

/// A ParamSet's leaves on one tape.
class Bound {
public:
  Bound(Tape& tape, const ParamSet& params) : tape_(&tape) {
    for (const auto& [name, p] : params) leaves_.emplace(name, tape.leaf(p.value, p.shape));
  }

  const Tensor& operator[](const std::string& name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw std::out_of_range("Bound: no parameter " + name);
    return it->second;
  }

  Tape& tape() const { return *tape_; }

  /// Gradients after tape.backward().
  Grads grads() const {
    Grads out;
    for (const auto& [name, t] : leaves_) out.emplace(name, t.grad());
    return out;
  }

private:
  Tape* tape_;
  std::map<std::string, Tensor> leaves_;
};

// ---------------------------------------------------------------------------
// Initialization

/// Weight [fan_in, fan_out] uniform in +-1/sqrt(fan_in); bias zeros.
inline void init_affine(ParamSet& params, const std::string& prefix, std::size_t fan_in, std::size_t fan_out,
                        Rng& rng, double bias_value = 0.0) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat w(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  params.add(prefix + ".W", Shape{fan_in, fan_out}, std::move(w));
  params.add(prefix + ".b", Shape{fan_out}, Mat::Constant(1, static_cast<Eigen::Index>(fan_out), bias_value));
}

inline Tensor affine(const Bound& p, const std::string& prefix, const Tensor& x) {
  return add(matmul(x, p[prefix + ".W"]), p[prefix + ".b"]);
}

// ---------------------------------------------------------------------------
// MLP: tanh between layers, identity on the output.

struct MlpSpec {
  std::size_t input = 0;
  std::vector<std::size_t> widths;

  void validate() const {
    if (input == 0 || widths.empty()) throw std::invalid_argument("MlpSpec: needs an input width and a layer");
    for (std::size_t w : widths)
      if (w == 0) throw std::invalid_argument("MlpSpec: widths must be positive");
  }
  std::size_t output() const { return widths.back(); }
};

inline void init_mlp(ParamSet& params, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
  spec.validate();
  std::size_t fan_in = spec.input;
  for (std::size_t l = 0; l < spec.widths.size(); ++l) {
    init_affine(params, prefix + "." + std::to_string(l), fan_in, spec.widths[l], rng);
    fan_in = spec.widths[l];
  }
}

inline Tensor mlp_forward(const MlpSpec& spec, const Bound& p, const std::string& prefix, const Tensor& x) {
  if (x.shape().empty() || x.shape().back() != spec.input) {
    throw ShapeError("mlp " + prefix + ": input " + to_string(x.shape()) + " but layer expects width " +
                     std::to_string(spec.input));
  }
  Tensor h = x;
  for (std::size_t l = 0; l < spec.widths.size(); ++l) {
    h = affine(p, prefix + "." + std::to_string(l), h);
    if (l + 1 < spec.widths.size()) h = tanh(h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Recurrent cells

enum class Direction { forward, bidirectional };
enum class Cell { lstm, vanilla_rnn };

struct RecurrentSpec {
  std::size_t input = 0;
  std::size_t hidden = 512;
  Direction direction = Direction::bidirectional;
  Cell cell = Cell::lstm;

  std::size_t output() const { return direction == Direction::bidirectional ? 2 * hidden : hidden; }
};

/// Optional instrumentation: number of cell evaluations per time index.
struct StepCounter {
  std::vector<int> visits;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

// Gate layout in the fused weight [input + hidden, 4 * hidden]: i, f, g, o.
inline void init_lstm(ParamSet& params, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng) {
  init_affine(params, prefix, input + hidden, 4 * hidden, rng);
  Param& b = params.at(prefix + ".b");
  b.value.middleCols(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(hidden)).setOnes();
}

inline LstmState lstm_cell(const Bound& p, const std::string& prefix, const Tensor& x, const LstmState& state) {
  const Tensor& w = p[prefix + ".W"];
  const std::size_t hidden = w.shape()[1] / 4;
  if (state.h.shape().back() != hidden || x.shape().back() + hidden != w.shape()[0]) {
    throw ShapeError("lstm " + prefix + ": input " + to_string(x.shape()) + " and state " +
                     to_string(state.h.shape()) + " do not match weight " + to_string(w.shape()));
  }
  const Tensor gates = affine(p, prefix, concat({x, state.h}));
  const Tensor i = sigmoid(slice(gates, 0, hidden));
  const Tensor f = sigmoid(slice(gates, hidden, 2 * hidden));
  const Tensor g = tanh(slice(gates, 2 * hidden, 3 * hidden));
  const Tensor o = sigmoid(slice(gates, 3 * hidden, 4 * hidden));
  const Tensor c = f * state.c + i * g;
  return {o * tanh(c), c};
}

inline void init_rnn(ParamSet& params, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng) {
  init_affine(params, prefix, input + hidden, hidden, rng);
}

inline Tensor rnn_cell(const Bound& p, const std::string& prefix, const Tensor& x, const Tensor& h) {
  const Tensor& w = p[prefix + ".W"];
  if (x.shape().back() + h.shape().back() != w.shape()[0]) {
    throw ShapeError("rnn " + prefix + ": input " + to_string(x.shape()) + " and state " + to_string(h.shape()) +
                     " do not match weight " + to_string(w.shape()));
  }
  return tanh(affine(p, prefix, concat({x, h})));
}

inline Tensor zeros(Tape& tape, std::size_t rows, std::size_t cols) {
  return tape.leaf(Mat::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)), Shape{rows, cols});
}

/// Runs one direction over a sequence of [batch, input] steps from a zero state.
inline std::vector<Tensor> run_direction(const RecurrentSpec& spec, const Bound& p, const std::string& prefix,
                                         const std::vector<Tensor>& seq, bool reverse, StepCounter* counter) {
  if (seq.empty()) throw ShapeError("recurrent " + prefix + ": empty sequence");
  Tape& tape = p.tape();
  const std::size_t batch = seq.front().value().rows();
  const std::size_t n = seq.size();
  std::vector<Tensor> out(n);
  LstmState state{zeros(tape, batch, spec.hidden), zeros(tape, batch, spec.hidden)};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t t = reverse ? n - 1 - k : k;
    if (seq[t].shape().back() != spec.input) {
      throw ShapeError("recurrent " + prefix + ": step input " + to_string(seq[t].shape()) + " expected width " +
                       std::to_string(spec.input));
    }
    if (spec.cell == Cell::lstm) {
      state = lstm_cell(p, prefix, seq[t], state);
    } else {
      state.h = rnn_cell(p, prefix, seq[t], state.h);
    }
    if (counter) {
      if (counter->visits.size() < n) counter->visits.resize(n, 0);
      ++counter->visits[t];
    }
    out[t] = state.h;
  }
  return out;
}

inline void init_recurrent(ParamSet& params, const std::string& prefix, const RecurrentSpec& spec, Rng& rng) {
  if (spec.input == 0 || spec.hidden == 0) throw std::invalid_argument("RecurrentSpec: widths must be positive");
  auto init_one = [&](const std::string& name) {
    if (spec.cell == Cell::lstm)
      init_lstm(params, name, spec.input, spec.hidden, rng);
    else
      init_rnn(params, name, spec.input, spec.hidden, rng);
  };
  init_one(prefix + ".fw");
  if (spec.direction == Direction::bidirectional) init_one(prefix + ".bw");
}

/// Per-step outputs; bidirectional outputs are [forward ; backward].
inline std::vector<Tensor> recurrent_run(const RecurrentSpec& spec, const Bound& p, const std::string& prefix,
                                         const std::vector<Tensor>& seq, StepCounter* counter = nullptr) {
  std::vector<Tensor> fw = run_direction(spec, p, prefix + ".fw", seq, false, counter);
  if (spec.direction == Direction::forward) return fw;
  std::vector<Tensor> bw = run_direction(spec, p, prefix + ".bw", seq, true, counter);
  std::vector<Tensor> out(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) out[t] = concat({fw[t], bw[t]});
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct OptimizerState {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments;
};

/// One bias-corrected Adam update. Tensors whose gradient is non-finite or
/// shape-mismatched are left untouched; their names are returned.
inline std::vector<std::string> optimizer_step(OptimizerState& state, ParamSet& params, const Grads& grads) {
  std::vector<std::string> skipped;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    if (g->second.rows() != p.value.rows() || g->second.cols() != p.value.cols() || !g->second.allFinite()) {
      skipped.push_back(name);
      continue;
    }
    auto [it, fresh] = state.moments.try_emplace(name);
    auto& [m, v] = it->second;
    if (fresh) {
      m = Mat::Zero(p.value.rows(), p.value.cols());
      v = Mat::Zero(p.value.rows(), p.value.cols());
    }
    m = state.beta1 * m + (1.0 - state.beta1) * g->second;
    v = state.beta2 * v + (1.0 - state.beta2) * g->second.cwiseProduct(g->second);
    p.value.array() -= state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  }
  return skipped;
}

/// Scales all gradients so their joint L2 norm is at most max_norm; returns the pre-clip norm.
inline double clip_global_norm(Grads& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& [_, g] : grads) g *= k;
  }
  return norm;
}

}  // namespace stg
