#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dpo/rl/demonstration.hpp"
#include "support/oracles.hpp"

using namespace dpo;
using dpo::testing::numeric_gradient;
using dpo::testing::random_vector;
using dpo::testing::relative_error;

namespace {

std::shared_ptr<const Ontology> desk() { return std::make_shared<const Ontology>(Ontology::desk()); }

NetworkSpec policy_net(int in, int actions, std::vector<int> hidden = {16}) {
  NetworkSpec s;
  s.input_dim = in;
  s.hidden_dims = std::move(hidden);
  s.output = OutputHead::softmax(actions);
  s.activation = Activation::tanh;
  s.init_seed = 11;
  return s;
}

DemoCorpus corpus(std::int64_t n, std::uint64_t seed, double err = 0.0) {
  EnvConfig cfg;
  cfg.error_rate = err;
  Rng rng(seed);
  return generate_corpus(desk(), cfg, n, rng);
}

std::string bytes(const DemoCorpus& c) {
  std::ostringstream out;
  write_corpus_jsonl(c, out);
  return out.str();
}

std::vector<LabelledBelief> random_examples(Rng& rng, int n, int dim, int actions) {
  std::vector<LabelledBelief> out;
  for (int i = 0; i < n; ++i) out.push_back({random_vector(rng, dim), static_cast<int>(uniform_index(rng, static_cast<std::size_t>(actions)))});
  return out;
}

std::vector<const LabelledBelief*> ptrs(const std::vector<LabelledBelief>& xs) {
  std::vector<const LabelledBelief*> out;
  for (const auto& x : xs) out.push_back(&x);
  return out;
}

}  // namespace

TEST(Corpus, SameSeedGivesIdenticalBytes) {
  EXPECT_EQ(bytes(corpus(40, 7, 0.15)), bytes(corpus(40, 7, 0.15)));
  EXPECT_NE(bytes(corpus(40, 7, 0.15)), bytes(corpus(40, 8, 0.15)));
}

TEST(Corpus, SplitsAreByDialogueInFourOneOneProportion) {
  const DemoCorpus c = corpus(720, 1);
  EXPECT_EQ(c.episode_count("train"), 480);
  EXPECT_EQ(c.episode_count("valid"), 120);
  EXPECT_EQ(c.episode_count("test"), 120);
  for (const auto& e : c.examples) EXPECT_EQ(e.split, split_for_episode(e.episode, 720));
}

TEST(Corpus, LabelsAreValidActionsThatTheRulePolicyChose) {
  const DemoCorpus c = corpus(50, 2, 0.3);
  const BeliefLayout layout(Ontology::desk());
  for (const auto& e : c.examples) {
    EXPECT_GE(e.label, 0);
    EXPECT_LT(e.label, 14);
    EXPECT_EQ(e.label, rule_policy(layout, e.belief));
    EXPECT_EQ(e.belief.size(), 37);
    EXPECT_EQ(e.error_rate, 0.3);
  }
}

TEST(Corpus, JsonlRoundTripPreservesEveryField) {
  const DemoCorpus c = corpus(30, 3, 0.15);
  std::istringstream in(bytes(c));
  const DemoCorpus back = read_corpus_jsonl(in);
  ASSERT_EQ(back.examples.size(), c.examples.size());
  for (std::size_t i = 0; i < c.examples.size(); ++i) {
    EXPECT_EQ(back.examples[i].belief, c.examples[i].belief);
    EXPECT_EQ(back.examples[i].label, c.examples[i].label);
    EXPECT_EQ(back.examples[i].episode, c.examples[i].episode);
    EXPECT_EQ(back.examples[i].turn, c.examples[i].turn);
    EXPECT_EQ(back.examples[i].split, c.examples[i].split);
  }
  EXPECT_EQ(bytes(back), bytes(c));
}

TEST(Corpus, MalformedLinesAreRejected) {
  std::istringstream bad("{\"belief\": [0.1], \"label\": \"x\"}\n");
  EXPECT_THROW(read_corpus_jsonl(bad), Error);
}

TEST(Corpus, SupervisedPoolHoldsTheTrainingSplit) {
  const DemoCorpus c = corpus(60, 4);
  const auto pool = make_supervised_pool(c);
  EXPECT_EQ(pool.size(), c.split("train").size());
  EXPECT_THROW(make_supervised_pool(c, "nonexistent"), SpecError);
}

TEST(CrossEntropy, UniformPolicyGivesLogOfActionCount) {
  const Network p = Network::zeros(policy_net(5, 14));
  Rng rng(5);
  const auto xs = random_examples(rng, 20, 5, 14);
  EXPECT_NEAR(cross_entropy_loss(p, ptrs(xs)).loss, std::log(14.0), 1e-12);
}

TEST(CrossEntropy, NearCertainCorrectPolicyGivesNearZero) {
  NetworkSpec s = policy_net(1, 3, {});
  Network p = Network::zeros(s);
  p.values()[s.output.size + 2] = 50.0;  // bias of action 2
  const std::vector<LabelledBelief> xs{{Vector::Ones(1), 2}, {Vector::Zero(1), 2}};
  const auto ce = cross_entropy_loss(p, ptrs(xs));
  EXPECT_LT(ce.loss, 1e-15 + 2.0 * std::exp(-50.0));
  EXPECT_EQ(ce.accuracy, 1.0);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  const NetworkSpec s = policy_net(4, 5, {6});
  for (int draw = 0; draw < 20; ++draw) {
    Network p(s);
    p.values() = random_vector(rng, p.size());
    const auto xs = random_examples(rng, 8, 4, 5);
    const auto objective = [&](const Vector& w) { return cross_entropy_loss(Network(s, w), ptrs(xs)).loss; };
    EXPECT_LT(relative_error(cross_entropy_loss(p, ptrs(xs)).grad, numeric_gradient(objective, p.values(), 1e-5)), 1e-4);
  }
}

TEST(SlPretrain, MemorisesTenExamples) {
  Rng rng(7);
  const auto xs = random_examples(rng, 10, 6, 14);
  Network p(policy_net(6, 14, {32}));
  SlConfig cfg;
  cfg.max_epochs = 2000;
  cfg.patience = 2000;
  cfg.batch_size = 10;
  cfg.lr = 0.01;
  Rng train_rng(1);
  sl_pretrain(p, ptrs(xs), {}, cfg, train_rng);
  EXPECT_EQ(action_accuracy(p, ptrs(xs)), 1.0);
}

TEST(SlPretrain, GeneralisesToHeldOutDialogues) {
  const DemoCorpus c = corpus(300, 8);
  Network p(policy_net(37, 14, {64}));
  SlConfig cfg;
  cfg.max_epochs = 40;
  cfg.lr = 0.005;
  Rng rng(2);
  const auto trace = sl_pretrain(p, c.split("train"), c.split("valid"), cfg, rng);
  EXPECT_GE(trace.best_epoch, 0);
  EXPECT_GT(action_accuracy(p, c.split("test")), 0.8);
}

TEST(SlPretrain, KeepsTheBestValidationParameters) {
  const DemoCorpus c = corpus(60, 9);
  Network p(policy_net(37, 14));
  SlConfig cfg;
  cfg.max_epochs = 15;
  Rng rng(3);
  const auto trace = sl_pretrain(p, c.split("train"), c.split("valid"), cfg, rng);
  const double best = trace.valid_loss[static_cast<std::size_t>(trace.best_epoch)];
  for (double l : trace.valid_loss) EXPECT_GE(l, best);
  EXPECT_NEAR(cross_entropy_loss(p, c.split("valid")).loss, best, 1e-12);
}

TEST(CombinedLoss, ReducesToItsTerms) {
  Rng rng(10);
  const NetworkSpec s = policy_net(4, 5, {6});
  Network p(s);
  p.values() = random_vector(rng, p.size());
  const auto xs = random_examples(rng, 8, 4, 5);
  const Gradient gj = random_vector(rng, p.size());
  EXPECT_EQ(combined_loss(gj, p, ptrs(xs), {0.0, 0.0, 8}), -gj);
  const Gradient ce = cross_entropy_loss(p, ptrs(xs)).grad;
  EXPECT_LT(relative_error(combined_loss(Gradient::Zero(p.size()), p, ptrs(xs), {3.0, 0.0, 8}), 3.0 * ce), 1e-14);
  EXPECT_LT(relative_error(combined_loss(gj, p, ptrs(xs), {10.0, 0.01, 8}), -gj + 10.0 * ce + 0.02 * p.values()), 1e-14);
  EXPECT_THROW(combined_loss(Gradient::Zero(3), p, ptrs(xs), {}), ShapeError);
}

TEST(CombinedLoss, WeightDecayTermMatchesFiniteDifferences) {
  Rng rng(11);
  const NetworkSpec s = policy_net(4, 5, {6});
  Network p(s);
  p.values() = random_vector(rng, p.size());
  const auto objective = [](const Vector& w) { return 0.01 * w.squaredNorm(); };
  const std::vector<LabelledBelief> none{{Vector::Zero(4), 0}};
  EXPECT_LT(relative_error(combined_loss(Gradient::Zero(p.size()), p, ptrs(none), {0.0, 0.01, 1}),
                           numeric_gradient(objective, p.values(), 1e-5)),
            1e-8);
}

TEST(CombinedLoss, LargeSupervisedWeightMakesStepsReduceDemoLoss) {
  Rng rng(12);
  const NetworkSpec s = policy_net(4, 5, {6});
  for (int draw = 0; draw < 20; ++draw) {
    Network p(s);
    p.values() = random_vector(rng, p.size());
    const auto xs = random_examples(rng, 8, 4, 5);
    const Gradient gj = random_vector(rng, p.size(), 0.01);
    const Gradient g = combined_loss(gj, p, ptrs(xs), {100.0, 0.0, 8});
    const double before = cross_entropy_loss(p, ptrs(xs)).loss;
    const double after = cross_entropy_loss(Network(s, p.values() - 1e-4 * g / g.norm()), ptrs(xs)).loss;
    EXPECT_LT(after, before);
  }
}

TEST(CombinedLoss, ConfigValidation) {
  EXPECT_NO_THROW(CombinedLossConfig{}.validate());
  EXPECT_THROW((CombinedLossConfig{-1.0, 0.0, 8}.validate()), SpecError);
  EXPECT_THROW((CombinedLossConfig{1.0, 0.0, 0}.validate()), SpecError);
}
