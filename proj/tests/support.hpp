#pragma once

#include "stg/nets.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace stg::support {

// Max relative error (|a - n| / max(1, |a|)) of a scalar loss's gradient
// over every parameter entry, central differences with step h.
inline double param_grad_error(ParamSet params, const std::function<Tensor(const Bound&)>& loss_fn, double h = 1e-5) {
  Grads grads;
  {
    Tape tape;
    Bound p(tape, params);
    tape.backward(loss_fn(p));
    grads = p.grads();
  }
  auto eval = [&]() {
    Tape tape;
    Bound p(tape, params);
    return loss_fn(p).item();
  };
  double worst = 0.0;
  for (auto& [name, param] : params) {
    for (Eigen::Index i = 0; i < param.value.size(); ++i) {
      const double orig = param.value.data()[i];
      param.value.data()[i] = orig + h;
      const double up = eval();
      param.value.data()[i] = orig - h;
      const double down = eval();
      param.value.data()[i] = orig;
      const double a = grads.at(name).data()[i];
      worst = std::max(worst, std::abs(a - (up - down) / (2 * h)) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

inline std::vector<Tensor> leaves(Tape& tape, const std::vector<Mat>& seq) {
  std::vector<Tensor> out;
  for (const Mat& m : seq) out.push_back(tape.leaf(m));
  return out;
}

}  // namespace stg::support
