#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dpo/core/error.hpp"
#include "dpo/nn/adam.hpp"
#include "dpo/nn/network.hpp"
#include "dpo/rl/actor_critic.hpp"
#include "dpo/rl/replay.hpp"

namespace dpo {

struct EnacConfig {
  double gamma = 0.99;
  double ridge = 0.1;
  bool relative_ridge = true;  ///< scale ridge by the mean squared norm of the centred score features
  ClipRange is_clip{0.8, 1.0};
  int batch_episodes = 64;
  double reward_scale = 1.0;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw SpecError("enac: gamma must lie in (0, 1]");
    if (!(ridge >= 0.0)) throw SpecError("enac: ridge must be non-negative");
    if (batch_episodes < 1) throw SpecError("enac: batch size must be positive");
    is_clip.validate();
  }
};

/// Rows of the episodic least-squares problem: one score-feature vector and one
/// return per episode, stored column-wise in `psi`.
struct EnacBatch {
  Matrix psi;  ///< parameter_count x n_episodes
  Vector rbar0;

  Eigen::Index n_episodes() const { return psi.cols(); }
};

namespace detail {

/// Score features of one episode plus pi(a_t | b_t) for each of its steps.
inline Gradient episode_scores(const Episode& episode, const Network& policy, std::vector<double>* pi_taken) {
  if (episode.steps.empty()) throw SpecError("episode_features: empty episode");
  const auto len = static_cast<Eigen::Index>(episode.length());
  Matrix beliefs(policy.spec().input_dim, len);
  std::vector<const ActionMask*> masks;
  for (Eigen::Index t = 0; t < len; ++t) {
    const auto& s = episode.steps[static_cast<std::size_t>(t)];
    policy.check_action(s.action);
    beliefs.col(t) = s.belief;
    masks.push_back(&s.mask);
  }
  const auto trace = policy.forward(beliefs);
  const Matrix probs = masked_softmax_columns(trace.outputs(), mask_matrix(masks, policy.spec().output.size));
  Matrix dz = -probs;
  for (Eigen::Index t = 0; t < len; ++t) {
    const int a = episode.steps[static_cast<std::size_t>(t)].action;
    dz(a, t) += 1.0;
    if (pi_taken != nullptr) pi_taken->push_back(probs(a, t));
  }
  return policy.backward(trace, dz);
}

}  // namespace detail

/// sum_t grad log pi(a_t | b_t) at the current parameters.
inline Gradient episode_features(const Episode& episode, const Network& policy) {
  return detail::episode_scores(episode, policy, nullptr);
}

struct NaturalGradient {
  Gradient delta;   ///< natural-gradient estimate
  double c = 0.0;   ///< intercept (baseline)
  double residual_norm = 0.0;
  int effective_rank = 0;
};

namespace detail {

inline int effective_rank(const Matrix& symmetric) {
  if (symmetric.size() == 0) return 0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetric, Eigen::EigenvaluesOnly);
  const Vector values = eig.eigenvalues().cwiseAbs();
  const double top = values.maxCoeff();
  if (top == 0.0) return 0;
  return static_cast<int>((values.array() > 1e-10 * top).count());
}

/// Solve (A + ridge I) x = rhs for symmetric positive semi-definite A.
inline Matrix solve_spd(Matrix a, const Matrix& rhs, double ridge) {
  a.diagonal().array() += ridge;
  Eigen::LDLT<Matrix> ldlt(a);
  const double scale = a.diagonal().cwiseAbs().maxCoeff();
  const Vector d = ldlt.vectorD().cwiseAbs();
  const bool degenerate = scale == 0.0 || d.minCoeff() <= 1e-12 * scale;
  if (ldlt.info() != Eigen::Success || (ridge == 0.0 && degenerate)) {
    throw NumericError("natural gradient: least-squares system is singular; use a positive ridge");
  }
  return ldlt.solve(rhs);
}

}  // namespace detail

/// Least-squares fit of rbar0_n ~ psi_n^T delta + c with ridge on delta only.
///
/// The unregularised intercept is eliminated by centring. The remaining ridge
/// problem is solved in the n x n dual form when there are no more episodes
/// than parameters, otherwise in the primal form.
inline NaturalGradient solve_natural_gradient(const EnacBatch& batch, double ridge, bool relative_ridge = false) {
  const Eigen::Index n = batch.n_episodes();
  const Eigen::Index p = batch.psi.rows();
  if (n < 2) throw SpecError("natural gradient: at least two episodes are required");
  if (batch.rbar0.size() != n) throw ShapeError("natural gradient: one return per episode required");
  if (!(ridge >= 0.0)) throw SpecError("natural gradient: ridge must be non-negative");

  const Vector psi_mean = batch.psi.rowwise().mean();
  const double r_mean = batch.rbar0.mean();
  const Matrix centred = batch.psi.colwise() - psi_mean;
  const Vector r_centred = batch.rbar0.array() - r_mean;
  NaturalGradient out;
  const double spread = centred.squaredNorm();
  const bool regularised = ridge > 0.0;
  if (relative_ridge) ridge *= spread / static_cast<double>(n);
  if (regularised && (spread == 0.0 || ridge < std::numeric_limits<double>::min())) {
    // Features (numerically) identical across episodes: the ridge wins and delta is zero.
    out.delta = Gradient::Zero(p);
    out.c = r_mean;
    out.residual_norm = r_centred.norm();
    return out;
  }

  if (n <= p) {
    const Matrix gram = centred.transpose() * centred;
    out.effective_rank = detail::effective_rank(gram);
    const Vector alpha = detail::solve_spd(gram, r_centred, ridge);
    out.delta = centred * alpha;
  } else {
    const Matrix normal = centred * centred.transpose();
    out.effective_rank = detail::effective_rank(normal);
    out.delta = detail::solve_spd(normal, centred * r_centred, ridge);
  }
  out.c = r_mean - psi_mean.dot(out.delta);
  const Vector residual = batch.rbar0 - batch.psi.transpose() * out.delta - Vector::Constant(n, out.c);
  out.residual_norm = residual.norm();
  return out;
}

/// Score features at the current policy and clipped-IS returns at t = 0.
inline EnacBatch make_enac_batch(const std::vector<const Episode*>& episodes, const Network& policy,
                                 const EnacConfig& cfg, std::size_t* clamped = nullptr) {
  EnacBatch batch;
  batch.psi.resize(policy.size(), static_cast<Eigen::Index>(episodes.size()));
  batch.rbar0.resize(static_cast<Eigen::Index>(episodes.size()));
  for (std::size_t n = 0; n < episodes.size(); ++n) {
    const Episode& e = *episodes[n];
    const auto col = static_cast<Eigen::Index>(n);
    std::vector<double> pi_taken;
    batch.psi.col(col) = detail::episode_scores(e, policy, &pi_taken);
    std::vector<double> rewards;
    std::vector<double> rho;
    for (std::size_t t = 0; t < e.length(); ++t) {
      rewards.push_back(normalize_return(e.steps[t].reward, cfg.reward_scale, clamped));
      rho.push_back(is_weight(pi_taken[t], e.steps[t].mu_prob, cfg.is_clip));
    }
    batch.rbar0[col] = off_policy_returns(rewards, rho, cfg.gamma).front();
  }
  return batch;
}

struct EnacDiagnostics {
  double residual_norm = 0.0;
  int effective_rank = 0;
  double natural_grad_norm = 0.0;
  double baseline = 0.0;
};

/// One natural-gradient ascent step of the policy through Adam.
inline EnacDiagnostics enacer_update(const std::vector<const Episode*>& episodes, Network& policy,
                                     const EnacConfig& cfg, AdamState& opt) {
  const auto batch = make_enac_batch(episodes, policy, cfg);
  const auto ng = solve_natural_gradient(batch, cfg.ridge, cfg.relative_ridge);
  adam_step(opt, policy, ng.delta, Direction::ascend);
  return {ng.residual_norm, ng.effective_rank, ng.delta.norm(), ng.c};
}

}  // namespace dpo
