#pragma once

#include <cmath>
#include <cstdint>

#include "dpo/nn/network.hpp"

namespace dpo {

enum class Direction { descend, ascend };

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t t = 0;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(Eigen::Index n, double learning_rate = 0.001)
      : m(Vector::Zero(n)), v(Vector::Zero(n)), lr(learning_rate) {}
};

/// One bias-corrected Adam step on `params`. With Direction::ascend the step
/// follows +grad. A gradient with non-finite entries is rejected and leaves
/// both the state and the parameters untouched.
inline void adam_step(AdamState& state, Vector& params, const Gradient& grad,
                      Direction direction = Direction::descend) {
  if (grad.size() != params.size()) throw ShapeError("adam_step: gradient/parameter size mismatch");
  if (state.m.size() == 0) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state size mismatch");
  if (!grad.allFinite()) throw NumericError("adam_step: non-finite gradient, update rejected");

  const double sign = direction == Direction::ascend ? -1.0 : 1.0;
  state.t += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * (sign * grad);
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double m_correction = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double v_correction = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  params.array() -= state.lr * (state.m.array() / m_correction) /
                    ((state.v.array() / v_correction).sqrt() + state.eps);
}

inline void adam_step(AdamState& state, Network& net, const Gradient& grad,
                      Direction direction = Direction::descend) {
  adam_step(state, net.values(), grad, direction);
}

}  // namespace dpo
