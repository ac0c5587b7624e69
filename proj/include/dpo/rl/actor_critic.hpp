#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dpo/core/error.hpp"
#include "dpo/nn/adam.hpp"
#include "dpo/nn/network.hpp"
#include "dpo/rl/replay.hpp"

namespace dpo {

struct ClipRange {
  double lo = 0.8;
  double hi = 1.0;

  void validate() const {
    if (!(lo > 0.0 && lo <= hi)) throw SpecError("clip range: need 0 < lo <= hi");
  }
};

struct TracerConfig {
  double gamma = 0.99;
  double alpha_avg = 0.02;  ///< weight of the old average in theta_a <- a*theta_a + (1-a)*theta
  double xi = 0.01;         ///< trust-region radius
  ClipRange is_clip{0.8, 1.0};
  int batch_episodes = 64;
  int update_period_dialogues = 2;
  int warmup_samples = 192;
  double reward_scale = 1.0;  ///< |R|max used to normalise rewards and returns into [-1, 1]

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw SpecError("tracer: gamma must lie in (0, 1]");
    if (!(xi > 0.0)) throw SpecError("tracer: xi must be positive");
    if (!(alpha_avg >= 0.0 && alpha_avg <= 1.0)) throw SpecError("tracer: alpha must lie in [0, 1]");
    if (batch_episodes < 1 || update_period_dialogues < 1 || warmup_samples < 0) {
      throw SpecError("tracer: batch size and update period must be positive");
    }
    if (!(reward_scale > 0.0)) throw SpecError("tracer: reward scale must be positive");
    is_clip.validate();
  }
};

/// delta = r + gamma * v_next * (1 - done) - v_t
inline double td_error(double r, double v_t, double v_next, bool done, double gamma) {
  return r + (done ? 0.0 : gamma * v_next) - v_t;
}

/// Clipped importance ratio clamp(pi / mu, lo, hi).
inline double is_weight(double pi_prob, double mu_prob, const ClipRange& clip) {
  if (!(mu_prob > 0.0)) throw SpecError("is_weight: behaviour probability must be positive");
  return std::clamp(pi_prob / mu_prob, clip.lo, clip.hi);
}

/// Off-policy Monte-Carlo returns for every step of a reward sequence:
///   R_t = sum_k gamma^k r_{t+k} prod_{i=1..k} rho_{t+i}
/// computed backwards as R_t = r_t + gamma * rho_{t+1} * R_{t+1}.
inline std::vector<double> off_policy_returns(const std::vector<double>& rewards, const std::vector<double>& rho,
                                              double gamma) {
  if (rewards.size() != rho.size()) throw ShapeError("off_policy_returns: rewards and weights differ in length");
  std::vector<double> out(rewards.size());
  double next = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    const double carry = t + 1 < rewards.size() ? gamma * rho[t + 1] * next : 0.0;
    out[t] = rewards[t] + carry;
    next = out[t];
  }
  return out;
}

inline double off_policy_return(const std::vector<double>& rewards, std::size_t t, double gamma,
                                const std::vector<double>& rho) {
  if (t >= rewards.size()) throw ShapeError("off_policy_return: step index out of range");
  return off_policy_returns(rewards, rho, gamma)[t];
}

/// Scale x by 1 / rmax into [-1, 1]. Values outside are clamped and counted in
/// `clamped` when given.
inline double normalize_return(double x, double rmax = 1.0, std::size_t* clamped = nullptr) {
  const double y = x / rmax;
  if (y > 1.0 || y < -1.0) {
    if (clamped != nullptr) ++*clamped;
    return std::clamp(y, -1.0, 1.0);
  }
  return y;
}

/// Closed-form solution of min 1/2 ||delta - g||^2 s.t. k^T g <= xi:
///   g = delta - max((k^T delta - xi) / ||k||^2, 0) * k
///
/// A point whose k^T delta exceeds xi by no more than the rounding error of
/// the dot product counts as feasible, so a projected point projects to itself.
inline Gradient trust_region_project(const Gradient& delta, const Gradient& k, double xi) {
  if (delta.size() != k.size()) throw ShapeError("trust_region_project: size mismatch");
  const double kk = k.squaredNorm();
  if (kk == 0.0) return delta;
  const double eps = static_cast<double>(delta.size() + 2) * std::numeric_limits<double>::epsilon();
  // Excess over xi beyond the rounding error of the dot product, or 0.
  auto excess = [&](const Gradient& g) {
    const double e = k.dot(g) - xi;
    return e > eps * (k.cwiseAbs().dot(g.cwiseAbs()) + std::abs(xi)) ? e : 0.0;
  };
  double e = excess(delta);
  if (e == 0.0) return delta;
  Gradient g = delta;
  for (int pass = 0; pass < 8 && e > 0.0; ++pass) {
    g -= (e / kk) * k;
    e = excess(g);
  }
  return g;
}

/// Running average of past policies.
struct AveragePolicy {
  Network net;

  explicit AveragePolicy(const Network& policy) : net(policy) {}

  /// theta_a <- alpha * theta_a + (1 - alpha) * theta
  void update(const Network& policy, double alpha) {
    if (!net.same_spec(policy)) throw SpecError("average policy: spec mismatch");
    net.values() = alpha * net.values() + (1.0 - alpha) * policy.values();
  }
};

inline void update_average_policy(AveragePolicy& avg, const Network& policy, double alpha) {
  avg.update(policy, alpha);
}

// ---------------------------------------------------------------------------
// Batched gradient computation
// ---------------------------------------------------------------------------

/// All steps of a set of episodes laid out column-wise.
struct StepBatch {
  Matrix beliefs;
  std::vector<int> actions;
  std::vector<double> mu;
  std::vector<double> rewards;  ///< normalised
  std::vector<std::size_t> starts;  ///< first column of each episode, plus one past the end
  Matrix allowed;  ///< executable actions per column; empty when no step carries a mask
  std::size_t clamped = 0;

  std::size_t episode_count() const { return starts.size() - 1; }
  Eigen::Index step_count() const { return beliefs.cols(); }
};

inline StepBatch make_step_batch(const std::vector<const Episode*>& episodes, Eigen::Index input_dim,
                                 double reward_scale, Eigen::Index n_actions = 0) {
  if (episodes.empty()) throw SpecError("step batch: no episodes");
  std::size_t total = 0;
  for (const auto* e : episodes) {
    if (e->steps.empty()) throw SpecError("step batch: empty episode");
    total += e->steps.size();
  }
  StepBatch batch;
  batch.beliefs.resize(input_dim, static_cast<Eigen::Index>(total));
  batch.actions.reserve(total);
  batch.mu.reserve(total);
  batch.rewards.reserve(total);
  Eigen::Index col = 0;
  std::vector<const ActionMask*> masks;
  for (const auto* e : episodes) {
    batch.starts.push_back(static_cast<std::size_t>(col));
    for (const auto& s : e->steps) masks.push_back(&s.mask);
    for (const auto& s : e->steps) {
      if (s.belief.size() != input_dim) throw ShapeError("step batch: belief dimension mismatch");
      if (!(s.mu_prob > 0.0)) throw SpecError("step batch: behaviour probability must be positive");
      batch.beliefs.col(col++) = s.belief;
      batch.actions.push_back(s.action);
      batch.mu.push_back(s.mu_prob);
      batch.rewards.push_back(normalize_return(s.reward, reward_scale, &batch.clamped));
    }
  }
  batch.starts.push_back(total);
  const bool masked = std::any_of(masks.begin(), masks.end(), [](const ActionMask* m) { return !m->empty(); });
  if (masked) {
    if (n_actions <= 0) throw SpecError("step batch: action count required for masked steps");
    batch.allowed = mask_matrix(masks, n_actions);
  }
  return batch;
}

/// Raw actor and critic ascent directions for one batch, averaged over episodes.
struct ActorCriticGradients {
  Gradient policy;  ///< sum_t rho_t * grad log pi(a_t|b_t) * delta_t
  Gradient value;   ///< sum_t (R_t - V(b_t)) * grad V(b_t) * prod_{i<=t} rho_i
  double mean_rho = 1.0;
  double mean_abs_td = 0.0;
  double value_loss = 0.0;  ///< mean over steps of 1/2 (R_t - V(b_t))^2
};

/// With `importance_weights` false every rho is 1 (on-policy A2C).
inline ActorCriticGradients actor_critic_gradients(const StepBatch& batch, const Network& policy,
                                                   const Network& value, double gamma, const ClipRange& clip,
                                                   bool importance_weights) {
  const auto n_steps = batch.step_count();
  const auto p_trace = policy.forward(batch.beliefs);
  const auto v_trace = value.forward(batch.beliefs);
  const Matrix probs = masked_softmax_columns(p_trace.outputs(), batch.allowed);
  const auto v = v_trace.outputs().row(0);
  for (Eigen::Index j = 0; j < n_steps; ++j) policy.check_action(batch.actions[static_cast<std::size_t>(j)]);

  std::vector<double> rho(static_cast<std::size_t>(n_steps), 1.0);
  if (importance_weights) {
    for (Eigen::Index j = 0; j < n_steps; ++j) {
      const auto u = static_cast<std::size_t>(j);
      rho[u] = is_weight(probs(batch.actions[u], j), batch.mu[u], clip);
    }
  }

  const double per_episode = 1.0 / static_cast<double>(batch.episode_count());
  Matrix policy_dz = -probs;
  Matrix value_dz(1, n_steps);
  ActorCriticGradients out;
  double rho_sum = 0.0;
  double td_sum = 0.0;
  double loss_sum = 0.0;
  for (std::size_t e = 0; e < batch.episode_count(); ++e) {
    const std::size_t begin = batch.starts[e];
    const std::size_t end = batch.starts[e + 1];
    const std::vector<double> r(batch.rewards.begin() + static_cast<std::ptrdiff_t>(begin),
                                batch.rewards.begin() + static_cast<std::ptrdiff_t>(end));
    const std::vector<double> w(rho.begin() + static_cast<std::ptrdiff_t>(begin),
                                rho.begin() + static_cast<std::ptrdiff_t>(end));
    const auto returns = off_policy_returns(r, w, gamma);
    double cumulative = 1.0;
    for (std::size_t t = begin; t < end; ++t) {
      const auto j = static_cast<Eigen::Index>(t);
      cumulative *= rho[t];
      const bool last = t + 1 == end;
      const double delta = td_error(batch.rewards[t], v(j), last ? 0.0 : v(j + 1), last, gamma);
      const double residual = returns[t - begin] - v(j);
      policy_dz.col(j) *= rho[t] * delta * per_episode;
      policy_dz(batch.actions[t], j) += rho[t] * delta * per_episode;
      value_dz(0, j) = residual * cumulative * per_episode;
      rho_sum += rho[t];
      td_sum += std::abs(delta);
      loss_sum += 0.5 * residual * residual;
    }
  }
  out.policy = policy.backward(p_trace, policy_dz);
  out.value = value.backward(v_trace, value_dz);
  const double steps = static_cast<double>(n_steps);
  out.mean_rho = rho_sum / steps;
  out.mean_abs_td = td_sum / steps;
  out.value_loss = loss_sum / steps;
  return out;
}

/// Single-episode value gradient with explicit weights (one rho per step).
inline Gradient value_gradient_off_policy(const Episode& episode, const Network& value, double gamma,
                                          const std::vector<double>& rho) {
  if (rho.size() != episode.length()) throw ShapeError("value_gradient_off_policy: one weight per step required");
  std::vector<double> rewards;
  for (const auto& s : episode.steps) rewards.push_back(s.reward);
  const auto returns = off_policy_returns(rewards, rho, gamma);
  Gradient g = Gradient::Zero(value.size());
  double cumulative = 1.0;
  for (std::size_t t = 0; t < episode.length(); ++t) {
    cumulative *= rho[t];
    const auto& b = episode.steps[t].belief;
    g += (returns[t] - value.value(b)) * cumulative * value.grad_scalar_output(b);
  }
  return g;
}

/// Single-episode policy gradient with explicit weights.
inline Gradient policy_gradient_off_policy(const Episode& episode, const Network& policy, const Network& value,
                                           double gamma, const std::vector<double>& rho) {
  if (rho.size() != episode.length()) throw ShapeError("policy_gradient_off_policy: one weight per step required");
  Gradient g = Gradient::Zero(policy.size());
  for (std::size_t t = 0; t < episode.length(); ++t) {
    const auto& s = episode.steps[t];
    const bool last = t + 1 == episode.length();
    const double v_next = last ? 0.0 : value.value(episode.steps[t + 1].belief);
    const double delta = td_error(s.reward, value.value(s.belief), v_next, last, gamma);
    g += rho[t] * delta * policy.grad_log_prob(s.belief, s.action);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Updates
// ---------------------------------------------------------------------------

enum class ActorCriticVariant {
  a2c,     ///< on-policy: every rho is 1, no trust region
  a2c_er,  ///< clipped importance weights, no trust region
  tracer,  ///< clipped importance weights, trust region against the average policy
};

struct ActorCritic {
  Network policy;
  Network value;
  AdamState policy_opt;
  AdamState value_opt;
  AveragePolicy average;

  ActorCritic(Network policy_net, Network value_net, double lr = 0.001)
      : policy(std::move(policy_net)),
        value(std::move(value_net)),
        policy_opt(policy.size(), lr),
        value_opt(value.size(), lr),
        average(policy) {}
};

struct UpdateDiagnostics {
  double kl = 0.0;
  bool constraint_active = false;
  double policy_grad_norm = 0.0;
  double projected_norm = 0.0;
  double value_grad_norm = 0.0;
  double value_loss = 0.0;
  double mean_rho = 1.0;
  std::size_t steps = 0;
  std::size_t clamped_rewards = 0;
};

/// Maps the policy ascent direction g (after any projection) to the gradient
/// that Adam descends. The default is -g; demonstration replay adds its terms.
using PolicyObjective = std::function<Gradient(const Network& policy, const Gradient& ascent)>;

inline UpdateDiagnostics actor_critic_update(const std::vector<const Episode*>& episodes, ActorCritic& ac,
                                             const TracerConfig& cfg, ActorCriticVariant variant,
                                             const PolicyObjective& objective = {}) {
  const auto batch =
      make_step_batch(episodes, ac.policy.spec().input_dim, cfg.reward_scale, ac.policy.spec().output.size);
  const bool weighted = variant != ActorCriticVariant::a2c;
  const auto grads = actor_critic_gradients(batch, ac.policy, ac.value, cfg.gamma, cfg.is_clip, weighted);

  UpdateDiagnostics d;
  d.steps = static_cast<std::size_t>(batch.step_count());
  d.clamped_rewards = batch.clamped;
  d.mean_rho = grads.mean_rho;
  d.value_loss = grads.value_loss;
  d.policy_grad_norm = grads.policy.norm();
  d.value_grad_norm = grads.value.norm();

  Gradient ascent = grads.policy;
  if (variant == ActorCriticVariant::tracer) {
    const auto kl = kl_and_grad(ac.average.net, ac.policy, batch.beliefs, batch.allowed);
    d.kl = kl.kl;
    Gradient projected = trust_region_project(ascent, kl.grad, cfg.xi);
    d.constraint_active = projected != ascent;
    ascent = std::move(projected);
  }
  d.projected_norm = ascent.norm();

  adam_step(ac.value_opt, ac.value, grads.value, Direction::ascend);
  if (objective) {
    adam_step(ac.policy_opt, ac.policy, objective(ac.policy, ascent), Direction::descend);
  } else {
    adam_step(ac.policy_opt, ac.policy, ascent, Direction::ascend);
  }
  if (variant == ActorCriticVariant::tracer) ac.average.update(ac.policy, cfg.alpha_avg);
  return d;
}

inline UpdateDiagnostics a2c_update(const std::vector<const Episode*>& episodes, ActorCritic& ac,
                                    const TracerConfig& cfg, const PolicyObjective& objective = {}) {
  return actor_critic_update(episodes, ac, cfg, ActorCriticVariant::a2c, objective);
}

inline UpdateDiagnostics tracer_update(const std::vector<const Episode*>& episodes, ActorCritic& ac,
                                       const TracerConfig& cfg, const PolicyObjective& objective = {}) {
  return actor_critic_update(episodes, ac, cfg, ActorCriticVariant::tracer, objective);
}

}  // namespace dpo
