#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <set>
#include <sstream>

#include "dpo/env/action_mask.hpp"
#include "dpo/env/dialogue_env.hpp"
#include "dpo/env/rule_policy.hpp"

using namespace dpo;

namespace {

std::shared_ptr<const Ontology> desk() { return std::make_shared<const Ontology>(Ontology::desk()); }

int act(SysActKind kind, int slot = -1) { return encode_action({kind, slot}, 3); }

/// A full goal over three slots that no database entity satisfies.
std::vector<int> unmatched_constraints(const Ontology& o) {
  for (int a = 0; a < 5; ++a) {
    for (int b = 0; b < 5; ++b) {
      for (int c = 0; c < 5; ++c) {
        if (o.matching({a, b, c}).empty()) return {a, b, c};
      }
    }
  }
  return {};
}

double run_rule_dialogue(DialogueEnv& env, Rng& rng) {
  Belief b = env.reset(rng);
  double ret = 0.0;
  while (!env.done()) {
    const auto s = env.step(rule_policy(env.layout(), b));
    ret += s.reward;
    b = s.next_belief;
  }
  return ret;
}

}  // namespace

TEST(Ontology, DeskShape) {
  const auto o = Ontology::desk();
  EXPECT_EQ(o.slot_count(), 3);
  EXPECT_EQ(o.requestable_count(), 3);
  EXPECT_EQ(o.entities.size(), 30u);
  EXPECT_EQ(o.action_count(), 14);
  EXPECT_EQ(BeliefLayout(o).size, 3 * 6 + 3 + 15 + 1);
}

TEST(Ontology, JsonRoundTrip) {
  const auto o = Ontology::desk();
  const auto back = ontology_from_json(ontology_to_json(o));
  EXPECT_EQ(back.slot_count(), o.slot_count());
  ASSERT_EQ(back.entities.size(), o.entities.size());
  for (std::size_t i = 0; i < o.entities.size(); ++i) {
    EXPECT_EQ(back.entities[i].constraints, o.entities[i].constraints);
    EXPECT_EQ(back.entities[i].informables, o.entities[i].informables);
  }
}

TEST(Ontology, UnknownValueIsRejected) {
  auto j = ontology_to_json(Ontology::desk());
  j["entities"][0]["food"] = "martian";
  EXPECT_THROW(ontology_from_json(j), SpecError);
}

TEST(Actions, EncodeDecodeRoundTrip) {
  for (int a = 0; a < 14; ++a) EXPECT_EQ(encode_action(decode_action(a, 3), 3), a);
  EXPECT_THROW(decode_action(14, 3), ShapeError);
  EXPECT_EQ(action_name(act(SysActKind::confirm, 1), Ontology::desk()), "confirm_area");
}

TEST(SampleGoal, DeterministicForSeed) {
  const auto o = Ontology::desk();
  Rng a(5), b(5);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_goal(o, {}, a), sample_goal(o, {}, b));
}

TEST(SampleGoal, FullSlotProbabilityConstrainsEverySlot) {
  const auto o = Ontology::desk();
  EnvConfig cfg;
  cfg.p_slot = 1.0;
  cfg.p_nomatch = 0.0;
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const auto g = sample_goal(o, cfg, rng);
    for (int v : g.constraints) EXPECT_NE(v, kUnconstrained);
    EXPECT_FALSE(o.matching(g.constraints).empty());
  }
}

TEST(SampleGoal, EveryValueAppears) {
  const auto o = Ontology::desk();
  Rng rng(7);
  std::set<std::pair<int, int>> seen;
  for (int i = 0; i < 10000; ++i) {
    const auto g = sample_goal(o, {}, rng);
    EXPECT_FALSE(g.requests.empty());
    for (int s = 0; s < 3; ++s) {
      if (g.constraints[static_cast<std::size_t>(s)] != kUnconstrained) {
        seen.insert({s, g.constraints[static_cast<std::size_t>(s)]});
      }
    }
  }
  EXPECT_EQ(seen.size(), 15u);
}

TEST(Reset, PriorBelief) {
  DialogueEnv env(desk());
  Rng rng(8);
  const Belief b = env.reset(rng);
  const auto& layout = env.layout();
  for (int s = 0; s < 3; ++s) {
    EXPECT_DOUBLE_EQ(slot_distribution(layout, b, s).sum(), 1.0);
    EXPECT_EQ(b[layout.none_index(s)], 1.0);
  }
  EXPECT_EQ(last_action(layout, b), -1);
  EXPECT_EQ(b[layout.no_last_act_index()], 1.0);
}

TEST(Reset, SameSeedSameBelief) {
  DialogueEnv a(desk()), b(desk());
  Rng ra(9), rb(9);
  EXPECT_EQ(a.reset(ra), b.reset(rb));
  EXPECT_EQ(a.goal(), b.goal());
}

TEST(ErrorChannel, ZeroErrorPassesActsThrough) {
  Rng rng(10);
  const UserAct truth{UserActKind::inform, 1, 3, 1.0};
  for (int i = 0; i < 100; ++i) {
    const auto heard = corrupt(truth, 5, 0.0, rng);
    EXPECT_EQ(heard.value, 3);
    EXPECT_EQ(heard.confidence, 1.0);
  }
}

TEST(ErrorChannel, FullErrorAlwaysChangesTheValue) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto heard = corrupt({UserActKind::inform, 0, 2, 1.0}, 5, 1.0, rng);
    EXPECT_NE(heard.value, 2);
    EXPECT_GE(heard.value, 0);
    EXPECT_LT(heard.value, 5);
    EXPECT_GE(heard.confidence, 0.2);
  }
}

TEST(ErrorChannel, EmpiricalCorruptionRateMatches) {
  Rng rng(12);
  const int trials = 100000;
  int wrong = 0;
  for (int i = 0; i < trials; ++i) wrong += corrupt({UserActKind::inform, 0, 1, 1.0}, 5, 0.15, rng).value != 1;
  EXPECT_NEAR(static_cast<double>(wrong) / trials, 0.15, 0.005);
}

TEST(ErrorChannel, ActsWithoutValuesAreUntouched) {
  Rng rng(13);
  const UserAct req{UserActKind::request, 2, kNoValue, 1.0};
  EXPECT_EQ(corrupt(req, 0, 0.9, rng), req);
}

TEST(BeliefUpdate, ConfidentInformGivesPointMass) {
  const BeliefLayout layout(Ontology::desk());
  const Belief b = belief_update(layout, prior_belief(layout), {{UserActKind::inform, 1, 2, 1.0}}, 0);
  const auto dist = slot_distribution(layout, b, 1);
  EXPECT_EQ(dist[2], 1.0);
  EXPECT_EQ(dist.sum(), 1.0);
}

TEST(BeliefUpdate, UnmentionedSlotsAreUnchanged) {
  const BeliefLayout layout(Ontology::desk());
  const Belief prior = prior_belief(layout);
  const Belief b = belief_update(layout, prior, {{UserActKind::inform, 1, 2, 0.7}}, 0);
  EXPECT_EQ(slot_distribution(layout, b, 0), slot_distribution(layout, prior, 0));
  EXPECT_EQ(slot_distribution(layout, b, 2), slot_distribution(layout, prior, 2));
}

TEST(BeliefUpdate, PartialConfidenceOnUniformPrior) {
  const BeliefLayout layout(Ontology::desk());
  Belief b = prior_belief(layout);
  slot_distribution(layout, b, 0).setConstant(1.0 / 6.0);
  b = belief_update(layout, b, {{UserActKind::inform, 0, 4, 0.6}}, 0);
  const auto dist = slot_distribution(layout, b, 0);
  for (int v = 0; v < 6; ++v) EXPECT_NEAR(dist[v], (v == 4 ? 0.6 : 0.0) + 0.4 / 6.0, 1e-15);
  EXPECT_NEAR(dist.sum(), 1.0, 1e-15);
}

TEST(BeliefUpdate, NegateRemovesMassAndRequestSetsFlag) {
  const BeliefLayout layout(Ontology::desk());
  Belief b = belief_update(layout, prior_belief(layout), {{UserActKind::inform, 2, 1, 0.7}}, 0);
  b = belief_update(layout, b, {{UserActKind::negate, 2, 1, 1.0}, {UserActKind::request, 1}}, 3);
  EXPECT_EQ(slot_distribution(layout, b, 2)[1], 0.0);
  EXPECT_NEAR(slot_distribution(layout, b, 2).sum(), 1.0, 1e-15);
  EXPECT_EQ(b[layout.requested_offset + 1], 1.0);
  EXPECT_DOUBLE_EQ(b[layout.match_offset], 2.0 / 3.0);
}

TEST(BeliefUpdate, DontcareSpreadsMassAndReadsAsDontcare) {
  const BeliefLayout layout(Ontology::desk());
  const Belief b = belief_update(layout, prior_belief(layout), {{UserActKind::inform, 0, kDontCare, 1.0}}, 0);
  EXPECT_EQ(read_slot(layout, b, 0).status, SlotStatus::dontcare);
  EXPECT_EQ(query_from_belief(layout, b)[0], kUnconstrained);
}

TEST(MatchBucket, Boundaries) {
  EXPECT_EQ(match_bucket(0), 0.0);
  EXPECT_EQ(match_bucket(1), 1.0 / 3.0);
  EXPECT_EQ(match_bucket(3), 2.0 / 3.0);
  EXPECT_EQ(match_bucket(4), 1.0);
}

TEST(Step, EveryNonFinalTurnCostsTheTurnPenalty) {
  DialogueEnv env(desk());
  Rng rng(14);
  env.reset(rng);
  for (int t = 0; t < 5 && !env.done(); ++t) {
    const auto s = env.step(act(SysActKind::request, 0));
    if (!s.done) EXPECT_EQ(s.reward, -0.05);
  }
}

TEST(Step, TwentyFruitlessTurnsEndInFailureWithReturnMinusOne) {
  DialogueEnv env(desk());
  Rng rng(15);
  env.reset(rng);
  double ret = 0.0;
  int turns = 0;
  while (!env.done()) {
    ret += env.step(act(SysActKind::request, 0)).reward;
    ++turns;
  }
  EXPECT_EQ(turns, 20);
  EXPECT_NEAR(ret, -1.0, 1e-12);
  EXPECT_FALSE(env.success());
}

TEST(Step, GoalServedAtTurnFiveEndsWithReturnThreeQuarters) {
  EnvConfig cfg;
  cfg.p_extra_inform = 0.0;
  DialogueEnv env(desk(), cfg);
  const auto row = Ontology::desk().entities[7];
  UserGoal goal{row.constraints, {1}, 20};
  Belief b = env.reset_with_goal(goal, 99);
  const std::vector<int> script{act(SysActKind::request, 0), act(SysActKind::request, 1),
                                act(SysActKind::request, 2), act(SysActKind::inform),
                                act(SysActKind::inform_requested)};
  double ret = 0.0;
  for (int a : script) {
    ASSERT_FALSE(env.done());
    const auto s = env.step(a);
    ret += s.reward;
    b = s.next_belief;
  }
  EXPECT_TRUE(env.done());
  EXPECT_EQ(env.turn(), 5);
  EXPECT_TRUE(env.success());
  EXPECT_NEAR(ret, 1.0 - 0.05 * 5, 1e-12);
}

TEST(Step, ByeEndsTheDialogueAsAFailureWhenTheGoalIsOpen) {
  DialogueEnv env(desk());
  Rng rng(16);
  env.reset(rng);
  env.step(act(SysActKind::request, 0));
  const auto s = env.step(act(SysActKind::bye));
  EXPECT_TRUE(s.done);
  EXPECT_EQ(s.reward, -0.05);
  EXPECT_FALSE(env.success());
  EXPECT_THROW(env.step(act(SysActKind::inform)), StateError);
}

TEST(GoalServed, UnansweredRequestIsNotServed) {
  EnvConfig cfg;
  cfg.p_extra_inform = 0.0;
  DialogueEnv env(desk(), cfg);
  const auto row = Ontology::desk().entities[3];
  env.reset_with_goal({row.constraints, {0, 2}, 20}, 5);
  for (int s = 0; s < 3; ++s) env.step(act(SysActKind::request, s));
  env.step(act(SysActKind::inform));
  env.step(act(SysActKind::inform_requested));  // answers the first request only
  EXPECT_FALSE(env.goal_served());
  EXPECT_FALSE(env.done());
  env.step(act(SysActKind::inform_requested));
  EXPECT_TRUE(env.goal_served());
  EXPECT_TRUE(env.done());
}

TEST(GoalServed, CorrectNoMatchStatementServesAnUnsatisfiableGoal) {
  const auto o = Ontology::desk();
  const auto constraints = unmatched_constraints(o);
  ASSERT_EQ(constraints.size(), 3u);
  EnvConfig cfg;
  cfg.p_extra_inform = 0.0;
  DialogueEnv env(desk(), cfg);
  env.reset_with_goal({constraints, {0}, 20}, 1);
  EXPECT_FALSE(env.goal_has_match());
  for (int s = 0; s < 3; ++s) env.step(act(SysActKind::request, s));
  EXPECT_FALSE(env.goal_served());
  env.step(act(SysActKind::inform_alternatives));
  EXPECT_TRUE(env.goal_served());
  EXPECT_TRUE(env.success());
}

TEST(Step, DeterministicGivenSeedAndActions) {
  EnvConfig cfg;
  cfg.error_rate = 0.3;
  DialogueEnv a(desk(), cfg), b(desk(), cfg);
  Rng ra(17), rb(17);
  a.reset(ra);
  b.reset(rb);
  for (int t = 0; t < 20 && !a.done(); ++t) {
    const int action = (t * 5) % 13;
    const auto sa = a.step(action);
    const auto sb = b.step(action);
    EXPECT_EQ(sa.next_belief, sb.next_belief);
    EXPECT_EQ(sa.reward, sb.reward);
    EXPECT_EQ(sa.done, sb.done);
  }
}

TEST(Step, BeliefStaysInUnitRangeAndReturnsStayBounded) {
  EnvConfig cfg;
  cfg.error_rate = 0.3;
  DialogueEnv env(desk(), cfg);
  Rng rng(18);
  for (int ep = 0; ep < 300; ++ep) {
    Belief b = env.reset(rng);
    double ret = 0.0;
    while (!env.done()) {
      const auto s = env.step(static_cast<int>(uniform_index(rng, 14)));
      ret += s.reward;
      b = s.next_belief;
      ASSERT_EQ(b.size(), 37);
      EXPECT_GE(b.minCoeff(), 0.0);
      EXPECT_LE(b.maxCoeff(), 1.0 + 1e-12);
    }
    EXPECT_GE(ret, -1.0 - 1e-12);
    EXPECT_LE(ret, 0.95 + 1e-12);
  }
}

TEST(Transcript, RecordsBothSpeakersAsJsonLines) {
  DialogueEnv env(desk());
  Rng rng(19);
  env.reset(rng);
  env.step(act(SysActKind::request, 0));
  std::ostringstream out;
  env.write_transcript_jsonl(out, 4);
  const auto text = out.str();
  EXPECT_NE(text.find("\"speaker\":\"system\""), std::string::npos);
  EXPECT_NE(text.find("\"speaker\":\"user\""), std::string::npos);
  EXPECT_NE(text.find("\"episode\":4"), std::string::npos);
}

TEST(RulePolicy, PriorBeliefRequestsFirstSlot) {
  const BeliefLayout layout(Ontology::desk());
  EXPECT_EQ(rule_policy(layout, prior_belief(layout)), act(SysActKind::request, 0));
}

TEST(RulePolicy, ConfidentSlotsWithPendingRequestInformRequested) {
  const BeliefLayout layout(Ontology::desk());
  Belief b = prior_belief(layout);
  b = belief_update(layout, b,
                    {{UserActKind::inform, 0, 1, 1.0},
                     {UserActKind::inform, 1, 2, 1.0},
                     {UserActKind::inform, 2, 0, 0.9},
                     {UserActKind::request, 2}},
                    1);
  EXPECT_EQ(rule_policy(layout, b), act(SysActKind::inform_requested));
  EXPECT_EQ(rule_policy(layout, b), rule_policy(layout, b));
}

TEST(RulePolicy, UncertainSlotIsConfirmedAndAmbiguousSlotSelected) {
  const BeliefLayout layout(Ontology::desk());
  Belief b = prior_belief(layout);
  b = belief_update(layout, b,
                    {{UserActKind::inform, 0, 1, 1.0}, {UserActKind::inform, 1, 2, 0.6}, {UserActKind::inform, 2, 0, 1.0}},
                    1);
  EXPECT_EQ(rule_policy(layout, b), act(SysActKind::confirm, 1));
  b = belief_update(layout, b, {{UserActKind::inform, 1, 3, 0.45}}, 1);
  EXPECT_EQ(read_slot(layout, b, 1).status, SlotStatus::ambiguous);
  EXPECT_EQ(rule_policy(layout, b), act(SysActKind::select, 1));
}

TEST(RulePolicy, SucceedsWithoutSemanticErrors) {
  DialogueEnv env(desk());
  Rng rng(20);
  int successes = 0;
  for (int i = 0; i < 1000; ++i) {
    run_rule_dialogue(env, rng);
    successes += env.success() ? 1 : 0;
  }
  EXPECT_GE(successes, 950);
}

TEST(ActionMask, PriorAllowsRequestsAndInformsOnly) {
  const BeliefLayout layout(Ontology::desk());
  const auto mask = executable_actions(layout, prior_belief(layout));
  for (int s = 0; s < 3; ++s) {
    EXPECT_TRUE(mask[act(SysActKind::request, s)]);
    EXPECT_FALSE(mask[act(SysActKind::confirm, s)]);
    EXPECT_FALSE(mask[act(SysActKind::select, s)]);
  }
  EXPECT_TRUE(mask[act(SysActKind::inform)]);
  EXPECT_TRUE(mask[act(SysActKind::inform_alternatives)]);
  EXPECT_FALSE(mask[act(SysActKind::inform_requested)]);
  EXPECT_FALSE(mask[act(SysActKind::reqmore)]);
  EXPECT_FALSE(mask[act(SysActKind::bye)]);
}

TEST(ActionMask, ClosingActsNeedFilledSlotsNoRequestsAndAnOffer) {
  const BeliefLayout layout(Ontology::desk());
  Belief b = belief_update(layout, prior_belief(layout),
                           {{UserActKind::inform, 0, 1, 1.0}, {UserActKind::inform, 1, 1, 1.0},
                            {UserActKind::inform, 2, 1, 1.0}},
                           1);
  EXPECT_FALSE(executable_actions(layout, b)[act(SysActKind::bye)]);
  set_last_action(layout, b, act(SysActKind::inform));
  auto mask = executable_actions(layout, b);
  EXPECT_TRUE(mask[act(SysActKind::bye)]);
  EXPECT_TRUE(mask[act(SysActKind::reqmore)]);
  EXPECT_FALSE(mask[act(SysActKind::request, 0)]);
  b[layout.requested_offset] = 1.0;
  mask = executable_actions(layout, b);
  EXPECT_FALSE(mask[act(SysActKind::bye)]);
  EXPECT_TRUE(mask[act(SysActKind::inform_requested)]);
}

TEST(ActionMask, RulePolicyOnlyChoosesExecutableActions) {
  for (double err : {0.0, 0.3}) {
    EnvConfig cfg;
    cfg.error_rate = err;
    DialogueEnv env(desk(), cfg);
    Rng rng(21);
    for (int i = 0; i < 300; ++i) {
      Belief b = env.reset(rng);
      while (!env.done()) {
        const int a = rule_policy(env.layout(), b);
        ASSERT_TRUE(executable_actions(env.layout(), b)[static_cast<std::size_t>(a)]);
        b = env.step(a).next_belief;
      }
    }
  }
}

TEST(EnvConfig, RejectsOutOfRangeProbabilities) {
  EnvConfig cfg;
  cfg.error_rate = 1.5;
  EXPECT_THROW(DialogueEnv(desk(), cfg), SpecError);
}
