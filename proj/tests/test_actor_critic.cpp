#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dpo/rl/actor_critic.hpp"
#include "support/oracles.hpp"
#include "support/tiny_mdp.hpp"

using namespace dpo;
using dpo::testing::brute_force_return;
using dpo::testing::numeric_gradient;
using dpo::testing::random_vector;
using dpo::testing::relative_error;

namespace {

NetworkSpec spec(int in, OutputHead head, std::uint64_t seed = 0) {
  NetworkSpec s;
  s.input_dim = in;
  s.hidden_dims = {5, 4};
  s.output = head;
  s.activation = Activation::tanh;
  s.init_seed = seed;
  return s;
}

Network random_net(const NetworkSpec& s, Rng& rng, double scale = 0.8) {
  Network n(s);
  n.values() = random_vector(rng, n.size(), scale);
  return n;
}

Episode random_episode(Rng& rng, int dim, int n_actions, std::size_t length) {
  Episode e;
  for (std::size_t t = 0; t < length; ++t) {
    e.steps.push_back({random_vector(rng, dim), static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n_actions))),
                       uniform(rng, 0.2, 1.0), uniform(rng, -0.5, 1.0), {}});
  }
  return e;
}

}  // namespace

TEST(TdError, Examples) {
  EXPECT_EQ(td_error(1.0, 0.0, 123.0, true, 0.99), 1.0);
  EXPECT_EQ(td_error(0.0, 0.4, 0.4, false, 1.0), 0.0);
  EXPECT_NEAR(td_error(-0.05, 0.7, 0.8, false, 0.99), 0.042, 1e-12);
}

TEST(IsWeight, ClipsIntoRange) {
  const ClipRange clip{0.8, 1.0};
  EXPECT_EQ(is_weight(0.4, 0.4, clip), 1.0);
  EXPECT_EQ(is_weight(0.9, 0.3, clip), 1.0);
  EXPECT_EQ(is_weight(0.1, 0.5, clip), 0.8);
  EXPECT_THROW(is_weight(0.1, 0.0, clip), SpecError);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double w = is_weight(uniform01(rng), uniform(rng, 1e-3, 1.0), clip);
    EXPECT_GE(w, 0.8);
    EXPECT_LE(w, 1.0);
  }
}

TEST(OffPolicyReturn, UnitWeightsGiveDiscountedReturn) {
  const std::vector<double> r{-0.05, -0.05, -0.05, 0.95};
  const std::vector<double> ones(4, 1.0);
  double expected = 0.0;
  for (int k = 3; k >= 0; --k) expected = r[static_cast<std::size_t>(k)] + 0.99 * expected;
  EXPECT_EQ(off_policy_return(r, 0, 0.99, ones), expected);
}

TEST(OffPolicyReturn, TwoStepHandExample) {
  EXPECT_NEAR(off_policy_return({-0.05, 1.0}, 0, 0.99, {1.0, 1.0}), 0.94, 1e-15);
}

TEST(OffPolicyReturn, MatchesTermWiseSummation) {
  Rng rng(2);
  for (int draw = 0; draw < 2000; ++draw) {
    const std::size_t len = 1 + uniform_index(rng, 4);
    std::vector<double> r(len), rho(len);
    for (std::size_t t = 0; t < len; ++t) {
      r[t] = uniform(rng, -1.0, 1.0);
      rho[t] = uniform(rng, 0.8, 1.0);
    }
    const double gamma = uniform(rng, 0.5, 1.0);
    const auto all = off_policy_returns(r, rho, gamma);
    for (std::size_t t = 0; t < len; ++t) EXPECT_NEAR(all[t], brute_force_return(r, rho, gamma, t), 1e-12);
  }
}

TEST(NormalizeReturn, Examples) {
  EXPECT_EQ(normalize_return(0.75), 0.75);
  EXPECT_EQ(normalize_return(-1.0), -1.0);
  EXPECT_EQ(normalize_return(0.95), 0.95);
  std::size_t clamped = 0;
  EXPECT_EQ(normalize_return(1.5, 1.0, &clamped), 1.0);
  EXPECT_EQ(clamped, 1u);
  EXPECT_EQ(normalize_return(1.0, 2.0), 0.5);
}

TEST(ValueGradient, ZeroResidualGivesZeroGradient) {
  // Zero value net and zero rewards: every return equals V = 0.
  const auto vspec = spec(3, OutputHead::scalar());
  const Network value = Network::zeros(vspec);
  Rng rng(3);
  Episode e = random_episode(rng, 3, 4, 3);
  for (auto& s : e.steps) s.reward = 0.0;
  EXPECT_TRUE(value_gradient_off_policy(e, value, 0.99, {0.9, 0.8, 1.0}).isZero(0.0));
}

TEST(ValueGradient, SingleStepOnPolicy) {
  Rng rng(4);
  const Network value = random_net(spec(3, OutputHead::scalar()), rng);
  const Episode e = random_episode(rng, 3, 4, 1);
  const auto& b = e.steps[0].belief;
  const Gradient expected = (e.steps[0].reward - value.value(b)) * value.grad_scalar_output(b);
  EXPECT_LT(relative_error(value_gradient_off_policy(e, value, 0.99, {1.0}), expected), 1e-14);
}

TEST(ValueGradient, IsMinusGradientOfWeightedSquaredResidual) {
  Rng rng(5);
  const auto vspec = spec(3, OutputHead::scalar());
  for (int draw = 0; draw < 20; ++draw) {
    const Network value = random_net(vspec, rng);
    const Episode e = random_episode(rng, 3, 4, 1 + uniform_index(rng, 4));
    std::vector<double> rho, rewards;
    for (const auto& s : e.steps) {
      rho.push_back(uniform(rng, 0.8, 1.0));
      rewards.push_back(s.reward);
    }
    const auto returns = off_policy_returns(rewards, rho, 0.95);
    const auto objective = [&](const Vector& w) {
      const Network v(vspec, w);
      double total = 0.0, cumulative = 1.0;
      for (std::size_t t = 0; t < e.length(); ++t) {
        cumulative *= rho[t];
        const double res = returns[t] - v.value(e.steps[t].belief);
        total -= 0.5 * cumulative * res * res;
      }
      return total;
    };
    EXPECT_LT(relative_error(value_gradient_off_policy(e, value, 0.95, rho),
                             numeric_gradient(objective, value.values(), 1e-5)),
              1e-4);
  }
}

TEST(PolicyGradient, ZeroTdErrorGivesZeroGradient) {
  const Network value = Network::zeros(spec(3, OutputHead::scalar()));
  Rng rng(6);
  const Network policy = random_net(spec(3, OutputHead::softmax(4)), rng);
  Episode e = random_episode(rng, 3, 4, 3);
  for (auto& s : e.steps) s.reward = 0.0;
  EXPECT_TRUE(policy_gradient_off_policy(e, policy, value, 0.99, {1.0, 0.9, 0.8}).isZero(0.0));
}

TEST(PolicyGradient, SingleStepEqualsTdErrorTimesScore) {
  Rng rng(7);
  const Network policy = random_net(spec(3, OutputHead::softmax(4)), rng);
  const Network value = random_net(spec(3, OutputHead::scalar()), rng);
  const Episode e = random_episode(rng, 3, 4, 1);
  const auto& s = e.steps[0];
  const double delta = s.reward - value.value(s.belief);
  const Gradient expected = delta * policy.grad_log_prob(s.belief, s.action);
  EXPECT_LT(relative_error(policy_gradient_off_policy(e, policy, value, 0.99, {1.0}), expected), 1e-14);
}

TEST(PolicyGradient, LinearInRewardsWithZeroValues) {
  Rng rng(8);
  const Network policy = random_net(spec(3, OutputHead::softmax(4)), rng);
  const Network value = Network::zeros(spec(3, OutputHead::scalar()));
  const Episode e = random_episode(rng, 3, 4, 3);
  Episode scaled = e;
  for (auto& s : scaled.steps) s.reward *= -2.5;
  const std::vector<double> rho{1.0, 0.85, 0.9};
  EXPECT_LT(relative_error(policy_gradient_off_policy(scaled, policy, value, 0.99, rho),
                           -2.5 * policy_gradient_off_policy(e, policy, value, 0.99, rho)),
            1e-13);
}

TEST(BatchedGradients, MatchPerEpisodeOracleAveragedOverEpisodes) {
  Rng rng(9);
  const Network policy = random_net(spec(3, OutputHead::softmax(4)), rng);
  const Network value = random_net(spec(3, OutputHead::scalar()), rng);
  const ClipRange clip{0.8, 1.0};
  for (bool weighted : {false, true}) {
    std::vector<Episode> episodes;
    for (int i = 0; i < 5; ++i) episodes.push_back(random_episode(rng, 3, 4, 1 + uniform_index(rng, 5)));
    std::vector<const Episode*> ptrs;
    for (const auto& e : episodes) ptrs.push_back(&e);
    const auto batch = make_step_batch(ptrs, 3, 1.0);
    const auto g = actor_critic_gradients(batch, policy, value, 0.97, clip, weighted);
    Gradient pg = Gradient::Zero(policy.size());
    Gradient vg = Gradient::Zero(value.size());
    for (const auto& e : episodes) {
      std::vector<double> rho;
      for (const auto& s : e.steps) rho.push_back(weighted ? is_weight(policy.policy(s.belief)[s.action], s.mu_prob, clip) : 1.0);
      pg += policy_gradient_off_policy(e, policy, value, 0.97, rho) / 5.0;
      vg += value_gradient_off_policy(e, value, 0.97, rho) / 5.0;
    }
    EXPECT_LT(relative_error(g.policy, pg), 1e-12);
    EXPECT_LT(relative_error(g.value, vg), 1e-12);
    EXPECT_GE(g.mean_rho, 0.8);
    EXPECT_LE(g.mean_rho, 1.0);
  }
}

TEST(BatchedGradients, MaskedPolicyGradientMatchesFiniteDifferences) {
  // With a constant value net the policy gradient is the gradient of
  // sum_t rho_t delta_t log pi_mask(a_t | b_t) with rho and delta held fixed.
  Rng rng(10);
  const auto pspec = spec(3, OutputHead::softmax(4));
  const Network value = Network::zeros(spec(3, OutputHead::scalar()));
  for (int draw = 0; draw < 20; ++draw) {
    const Network policy = random_net(pspec, rng);
    Episode e = random_episode(rng, 3, 4, 3);
    for (auto& s : e.steps) {
      s.mask = {true, uniform01(rng) < 0.5, true, uniform01(rng) < 0.5};
      s.mask[static_cast<std::size_t>(s.action)] = true;
    }
    const auto batch = make_step_batch({&e}, 3, 1.0, 4);
    const auto g = actor_critic_gradients(batch, policy, value, 0.9, {0.8, 1.0}, false);
    const auto objective = [&](const Vector& theta) {
      const Network p(pspec, theta);
      const Matrix logp = masked_log_softmax_columns(p.forward(batch.beliefs).outputs(), batch.allowed);
      double total = 0.0;
      for (std::size_t t = 0; t < e.length(); ++t) {
        total += e.steps[t].reward * logp(e.steps[t].action, static_cast<Eigen::Index>(t));
      }
      return total;
    };
    EXPECT_LT(relative_error(g.policy, numeric_gradient(objective, policy.values(), 1e-5)), 1e-4);
  }
}

TEST(TrustRegion, InactiveConstraintLeavesGradientUnchanged) {
  Gradient delta(2), k(2);
  delta << 0.3, -0.2;
  k << 0.1, 0.1;
  EXPECT_EQ(trust_region_project(delta, k, 0.01), delta);
}

TEST(TrustRegion, HandExample) {
  Gradient delta(2), k(2), expected(2);
  delta << 1.0, 0.0;
  k << 1.0, 0.0;
  expected << 0.5, 0.0;
  EXPECT_EQ(trust_region_project(delta, k, 0.5), expected);
}

TEST(TrustRegion, RandomInstancesSatisfyConstraintAndAreIdempotent) {
  Rng rng(11);
  for (int draw = 0; draw < 1000; ++draw) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(uniform_index(rng, 20));
    const Gradient delta = random_vector(rng, n, 2.0);
    const Gradient k = random_vector(rng, n, 2.0);
    const double xi = uniform(rng, 0.0, 0.1);
    const Gradient g = trust_region_project(delta, k, xi);
    EXPECT_LE(k.dot(g), xi + 1e-10);
    EXPECT_EQ(trust_region_project(g, k, xi), g);
    if (k.dot(delta) <= xi) EXPECT_EQ(g, delta);
  }
}

TEST(TrustRegion, ProjectionSolvesTheConstrainedLeastSquaresProblem) {
  // KKT: g = delta - lambda k with lambda >= 0 and lambda (k^T g - xi) = 0.
  Rng rng(12);
  for (int draw = 0; draw < 200; ++draw) {
    const Gradient delta = random_vector(rng, 6);
    const Gradient k = random_vector(rng, 6);
    const double xi = uniform(rng, 0.0, 0.2);
    const Gradient g = trust_region_project(delta, k, xi);
    const double lambda = (delta - g).dot(k) / k.squaredNorm();
    EXPECT_GE(lambda, -1e-12);
    EXPECT_LT(((delta - g) - lambda * k).norm(), 1e-12);
    EXPECT_LT(std::abs(lambda * (k.dot(g) - xi)), 1e-12);
    if (lambda > 0.0) {
      const Gradient par = k.normalized() * delta.dot(k.normalized());
      if (delta.dot(k) > 0.0 && (delta - par).norm() < 1e-12) EXPECT_LE(g.norm(), delta.norm());
    }
  }
}

TEST(TrustRegion, ZeroKLeavesGradientUnchanged) {
  const Gradient delta = Gradient::Ones(3);
  EXPECT_EQ(trust_region_project(delta, Gradient::Zero(3), 0.01), delta);
}

TEST(AveragePolicy, UpdateRule) {
  const auto s = spec(2, OutputHead::softmax(3));
  Network theta = Network::zeros(s);
  theta.values().setOnes();
  AveragePolicy keep(Network::zeros(s));
  keep.update(theta, 1.0);
  EXPECT_TRUE(keep.net.values().isZero(0.0));
  AveragePolicy copy(Network::zeros(s));
  copy.update(theta, 0.0);
  EXPECT_EQ(copy.net.values(), theta.values());
  AveragePolicy avg(Network::zeros(s));
  update_average_policy(avg, theta, 0.02);
  for (Eigen::Index i = 0; i < avg.net.size(); ++i) EXPECT_NEAR(avg.net.values()[i], 0.98, 1e-15);
}

TEST(A2cUpdate, ZeroAdvantageBatchLeavesParametersUnchanged) {
  Rng rng(13);
  ActorCritic ac(random_net(spec(3, OutputHead::softmax(4)), rng), Network::zeros(spec(3, OutputHead::scalar())));
  Episode e = random_episode(rng, 3, 4, 3);
  for (auto& s : e.steps) s.reward = 0.0;
  const Vector policy_before = ac.policy.values();
  const Vector value_before = ac.value.values();
  TracerConfig cfg;
  a2c_update({&e}, ac, cfg);
  EXPECT_EQ(ac.policy.values(), policy_before);
  EXPECT_EQ(ac.value.values(), value_before);
  tracer_update({&e}, ac, cfg);
  EXPECT_EQ(ac.value.values(), value_before);
}

TEST(A2cUpdate, EqualsTracerWithUnitWeightsAndUnboundedRegion) {
  Rng rng(14);
  const Network policy = random_net(spec(3, OutputHead::softmax(4)), rng);
  const Network value = random_net(spec(3, OutputHead::scalar()), rng);
  std::vector<Episode> episodes;
  for (int i = 0; i < 4; ++i) {
    Episode e = random_episode(rng, 3, 4, 3);
    for (auto& s : e.steps) s.mu_prob = policy.policy(s.belief)[s.action];  // rho = 1
    episodes.push_back(e);
  }
  std::vector<const Episode*> ptrs;
  for (const auto& e : episodes) ptrs.push_back(&e);
  TracerConfig cfg;
  ActorCritic a(policy, value);
  ActorCritic t(policy, value);
  a2c_update(ptrs, a, cfg);
  cfg.xi = std::numeric_limits<double>::max();
  const auto diag = tracer_update(ptrs, t, cfg);
  EXPECT_FALSE(diag.constraint_active);
  EXPECT_NEAR(diag.mean_rho, 1.0, 1e-12);
  EXPECT_LT((a.policy.values() - t.policy.values()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.value.values() - t.value.values()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TracerUpdate, FreshAverageMeansInactiveConstraint) {
  Rng rng(15);
  ActorCritic ac(random_net(spec(3, OutputHead::softmax(4)), rng), random_net(spec(3, OutputHead::scalar()), rng));
  const Episode e = random_episode(rng, 3, 4, 2);
  const auto d = tracer_update({&e}, ac, TracerConfig{});
  EXPECT_EQ(d.kl, 0.0);
  EXPECT_FALSE(d.constraint_active);
  EXPECT_EQ(d.policy_grad_norm, d.projected_norm);
}

TEST(TracerUpdate, ConstraintFlagMatchesDefinition) {
  Rng rng(16);
  const auto pspec = spec(3, OutputHead::softmax(4));
  for (int draw = 0; draw < 30; ++draw) {
    ActorCritic ac(random_net(pspec, rng), random_net(spec(3, OutputHead::scalar()), rng));
    ac.average.net = random_net(pspec, rng);
    const Episode e = random_episode(rng, 3, 4, 3);
    TracerConfig cfg;
    cfg.xi = uniform(rng, 1e-4, 0.05);
    const auto batch = make_step_batch({&e}, 3, 1.0);
    const auto g = actor_critic_gradients(batch, ac.policy, ac.value, cfg.gamma, cfg.is_clip, true);
    const auto k = kl_and_grad(ac.average.net, ac.policy, batch.beliefs).grad;
    const auto d = tracer_update({&e}, ac, cfg);
    EXPECT_EQ(d.constraint_active, trust_region_project(g.policy, k, cfg.xi) != g.policy);
    EXPECT_GE(d.mean_rho, 0.8);
    EXPECT_LE(d.mean_rho, 1.0);
  }
}

TEST(TracerUpdate, AverageFollowsAlphaRule) {
  Rng rng(17);
  ActorCritic ac(random_net(spec(3, OutputHead::softmax(4)), rng), random_net(spec(3, OutputHead::scalar()), rng));
  const Vector avg_before = ac.average.net.values();
  const Episode e = random_episode(rng, 3, 4, 3);
  TracerConfig cfg;
  tracer_update({&e}, ac, cfg);
  const Vector expected = cfg.alpha_avg * avg_before + (1.0 - cfg.alpha_avg) * ac.policy.values();
  EXPECT_LT((ac.average.net.values() - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TracerConfig, Validation) {
  TracerConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.is_clip = {1.2, 1.0};
  EXPECT_THROW(cfg.validate(), SpecError);
}

TEST(Convergence, A2cSolvesTheChainMdp) {
  const auto m = dpo::testing::TinyMdp::chain();
  const auto r = dpo::testing::train_tiny_policy(m, dpo::testing::TinyLearner::a2c, 1000, 1);
  EXPECT_NEAR(r.greedy_return, m.optimal_return(), 0.02);
}

TEST(Convergence, TracerSolvesChainAndBandit) {
  for (const auto& m : {dpo::testing::TinyMdp::chain(), dpo::testing::TinyMdp::bandit()}) {
    const auto r = dpo::testing::train_tiny_policy(m, dpo::testing::TinyLearner::tracer, 2000, 2);
    EXPECT_NEAR(r.greedy_return, m.optimal_return(), 0.02);
  }
}
