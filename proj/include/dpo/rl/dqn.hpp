#pragma once

#include <cstdint>
#include <vector>

#include "dpo/core/error.hpp"
#include "dpo/nn/adam.hpp"
#include "dpo/nn/network.hpp"
#include "dpo/rl/actor_critic.hpp"
#include "dpo/rl/replay.hpp"

namespace dpo {

struct DqnConfig {
  double gamma = 0.99;
  int target_sync_period = 50;  ///< updates between hard target copies
  bool double_q = true;
  int batch_size = 64;
  double reward_scale = 1.0;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw SpecError("dqn: gamma must lie in [0, 1]");
    if (target_sync_period < 1) throw SpecError("dqn: target sync period must be at least 1");
    if (batch_size < 1) throw SpecError("dqn: batch size must be positive");
    if (!(reward_scale > 0.0)) throw SpecError("dqn: reward scale must be positive");
  }
};

/// Hard copy w- := w.
inline void sync_target(Network& target, const Network& online) {
  if (!target.same_spec(online)) throw SpecError("sync_target: spec mismatch");
  target.values() = online.values();
}

struct QLearner {
  Network online;
  Network target;
  AdamState opt;
  std::int64_t updates = 0;

  explicit QLearner(Network q, double lr = 0.001) : online(q), target(std::move(q)), opt(online.size(), lr) {}
};

namespace detail {

inline Matrix stack_beliefs(const std::vector<const Transition*>& batch, bool next, Eigen::Index dim) {
  Matrix m(dim, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const Vector& b = next ? batch[j]->next_belief : batch[j]->belief;
    if (b.size() != dim) throw ShapeError("dqn: belief dimension mismatch");
    m.col(static_cast<Eigen::Index>(j)) = b;
  }
  return m;
}

}  // namespace detail

/// Regression targets. Terminal: y = r. Otherwise
///   DQN:  y = r + gamma * max_a' Q_target(b', a')
///   DDQN: y = r + gamma * Q_target(b', argmax_a' Q_online(b', a'))
/// Rewards are divided by `reward_scale` first. The max / argmax run over the
/// actions in `next_mask` when one is stored.
inline Vector q_targets(const std::vector<const Transition*>& batch, const Network& online, const Network& target,
                        double gamma, bool double_q, double reward_scale = 1.0) {
  if (batch.empty()) throw SpecError("q_targets: empty batch");
  if (!online.same_spec(target)) throw SpecError("q_targets: online and target specs differ");
  const Eigen::Index dim = online.spec().input_dim;
  const Matrix next = detail::stack_beliefs(batch, true, dim);
  const Matrix q_target = target.forward(next).outputs();
  Matrix q_online;
  if (double_q) q_online = online.forward(next).outputs();
  Vector y(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    const double r = normalize_return(batch[j]->reward, reward_scale);
    if (batch[j]->done) {
      y[col] = r;
      continue;
    }
    const ActionMask& mask = batch[j]->next_mask;
    if (!mask.empty() && mask.size() != static_cast<std::size_t>(q_target.rows())) {
      throw ShapeError("q_targets: mask length mismatch");
    }
    auto allowed = [&](Eigen::Index a) { return mask.empty() || mask[static_cast<std::size_t>(a)]; };
    const Matrix& chooser = double_q ? q_online : q_target;
    Eigen::Index best = -1;
    for (Eigen::Index a = 0; a < q_target.rows(); ++a) {
      if (allowed(a) && (best < 0 || chooser(a, col) > chooser(best, col))) best = a;
    }
    if (best < 0) throw SpecError("q_targets: no executable next action");
    const double bootstrap = q_target(best, col);
    y[col] = r + gamma * bootstrap;
  }
  return y;
}

struct DqnLoss {
  double loss = 0.0;
  Gradient grad;
};

/// Mean over the batch of (y - Q(b, a))^2 and its gradient for fixed targets y.
inline DqnLoss dqn_loss(const std::vector<const Transition*>& batch, const Network& online, const Vector& y) {
  if (batch.empty()) throw SpecError("dqn_loss: empty batch");
  if (y.size() != static_cast<Eigen::Index>(batch.size())) throw ShapeError("dqn_loss: one target per transition");
  const Matrix beliefs = detail::stack_beliefs(batch, false, online.spec().input_dim);
  const auto trace = online.forward(beliefs);
  const double n = static_cast<double>(batch.size());
  Matrix dz = Matrix::Zero(online.spec().output.size, beliefs.cols());
  DqnLoss out;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    const int a = batch[j]->action;
    online.check_action(a);
    const double err = y[col] - trace.outputs()(a, col);
    out.loss += err * err / n;
    dz(a, col) = -2.0 * err / n;
  }
  out.grad = online.backward(trace, dz);
  return out;
}

/// One Adam step on the squared Bellman error; syncs the target every
/// `target_sync_period` updates. Returns the batch loss before the step.
inline double dqn_update(const std::vector<const Transition*>& batch, QLearner& learner, const DqnConfig& cfg) {
  const Vector y = q_targets(batch, learner.online, learner.target, cfg.gamma, cfg.double_q, cfg.reward_scale);
  const auto loss = dqn_loss(batch, learner.online, y);
  adam_step(learner.opt, learner.online, loss.grad, Direction::descend);
  ++learner.updates;
  if (learner.updates % cfg.target_sync_period == 0) sync_target(learner.target, learner.online);
  return loss.loss;
}

}  // namespace dpo
