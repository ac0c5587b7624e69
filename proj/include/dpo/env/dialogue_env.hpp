#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpo/core/error.hpp"
#include "dpo/core/random.hpp"
#include "dpo/env/acts.hpp"
#include "dpo/env/belief.hpp"
#include "dpo/env/ontology.hpp"

namespace dpo {

struct EnvConfig {
  double error_rate = 0.0;
  double p_slot = 0.8;          ///< probability a constraint slot is part of the goal
  double p_request = 0.5;       ///< probability a requestable slot is requested
  double p_nomatch = 0.1;       ///< probability the goal is perturbed off the database
  double p_extra_inform = 0.3;  ///< probability the user volunteers one more constraint
  int max_turns = 20;
  double turn_penalty = 0.05;
  double success_reward = 1.0;

  void validate() const {
    auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!in_unit(error_rate) || !in_unit(p_slot) || !in_unit(p_request) || !in_unit(p_nomatch) ||
        !in_unit(p_extra_inform)) {
      throw SpecError("env config: probabilities must lie in [0, 1]");
    }
    if (max_turns < 1) throw SpecError("env config: max_turns must be positive");
  }
};

struct UserGoal {
  std::vector<int> constraints;  ///< value per constraint slot, kUnconstrained if the user does not care
  std::vector<int> requests;     ///< requestable slot indices, sorted
  int patience = 20;

  friend bool operator==(const UserGoal&, const UserGoal&) = default;
};

/// Goal drawn from a random database row: each slot kept with probability
/// p_slot (at least one), each requestable with probability p_request (at
/// least one). With probability p_nomatch one kept slot is re-drawn uniformly,
/// which may leave the goal without any matching entity.
inline UserGoal sample_goal(const Ontology& o, const EnvConfig& cfg, Rng& rng) {
  UserGoal goal;
  const auto& row = o.entities[uniform_index(rng, o.entities.size())];
  goal.constraints.assign(static_cast<std::size_t>(o.slot_count()), kUnconstrained);
  std::vector<int> kept;
  for (int s = 0; s < o.slot_count(); ++s) {
    if (bernoulli(rng, cfg.p_slot)) {
      goal.constraints[static_cast<std::size_t>(s)] = row.constraints[static_cast<std::size_t>(s)];
      kept.push_back(s);
    }
  }
  if (kept.empty()) {
    const int s = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(o.slot_count())));
    goal.constraints[static_cast<std::size_t>(s)] = row.constraints[static_cast<std::size_t>(s)];
    kept.push_back(s);
  }
  if (bernoulli(rng, cfg.p_nomatch)) {
    const int s = kept[uniform_index(rng, kept.size())];
    goal.constraints[static_cast<std::size_t>(s)] =
        static_cast<int>(uniform_index(rng, static_cast<std::size_t>(o.value_count(s))));
  }
  for (int r = 0; r < o.requestable_count(); ++r) {
    if (bernoulli(rng, cfg.p_request)) goal.requests.push_back(r);
  }
  if (goal.requests.empty()) {
    goal.requests.push_back(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(o.requestable_count()))));
  }
  goal.patience = cfg.max_turns;
  return goal;
}

struct EnvStep {
  Belief next_belief;
  double reward = 0.0;
  bool done = false;
  bool success_so_far = false;
  int turn = 0;
};

struct TranscriptEntry {
  int turn = 0;
  std::string speaker;  ///< "system" or "user"
  std::string act;      ///< observed act for the user side
  std::string true_act; ///< user side only: act before the error channel
  double confidence = 1.0;
};

/// Slot-filling dialogue MDP with an agenda-based simulated user.
///
/// The user holds a goal and an agenda (stack) of constraints still to be
/// given. Each system turn is answered with one or more user acts, which pass
/// through the semantic error channel before updating the belief. Reward is
/// -turn_penalty per turn plus success_reward on the final turn if the goal
/// was served. The user hangs up as soon as the goal is served; otherwise the
/// dialogue ends when the system says bye or max_turns is reached.
class DialogueEnv {
 public:
  explicit DialogueEnv(std::shared_ptr<const Ontology> ontology, EnvConfig cfg = {})
      : ontology_(std::move(ontology)), cfg_(cfg), layout_(*ontology_) {
    ontology_->validate();
    cfg_.validate();
  }

  const Ontology& ontology() const { return *ontology_; }
  const EnvConfig& config() const { return cfg_; }
  const BeliefLayout& layout() const { return layout_; }
  int observation_dim() const { return layout_.size; }
  int action_count() const { return ontology_->action_count(); }

  /// Fresh goal and agenda drawn from `rng`; the episode's internal stream is
  /// seeded from the same generator.
  Belief reset(Rng& rng) {
    UserGoal goal = sample_goal(*ontology_, cfg_, rng);
    return reset_with_goal(std::move(goal), rng());
  }

  Belief reset_with_goal(UserGoal goal, std::uint64_t episode_seed) {
    if (static_cast<int>(goal.constraints.size()) != ontology_->slot_count()) {
      throw SpecError("goal: wrong number of constraint slots");
    }
    if (goal.requests.empty()) throw SpecError("goal: no requests");
    goal_ = std::move(goal);
    rng_.seed(episode_seed);
    agenda_.clear();
    for (int s = 0; s < ontology_->slot_count(); ++s) {
      if (goal_.constraints[static_cast<std::size_t>(s)] != kUnconstrained) agenda_.push_back(s);
    }
    for (std::size_t i = agenda_.size(); i > 1; --i) std::swap(agenda_[i - 1], agenda_[uniform_index(rng_, i)]);
    goal_matches_ = !ontology_->matching(goal_.constraints).empty();
    offered_ = -1;
    offered_consistent_ = false;
    provided_.clear();
    nomatch_asserted_ = false;
    turn_ = 0;
    done_ = false;
    transcript_.clear();
    belief_ = prior_belief(layout_);
    belief_[layout_.match_offset] = match_bucket(current_match_count());
    return belief_;
  }

  EnvStep step(int action) {
    if (done_) throw StateError("step called on a finished dialogue");
    const SystemAction act = decode_action(action, ontology_->slot_count());
    ++turn_;
    transcript_.push_back({turn_, "system", action_name(action, *ontology_), "", 1.0});

    std::vector<UserAct> reply;
    if (act.kind == SysActKind::bye) {
      done_ = true;
    } else {
      reply = respond(act);
    }

    if (!done_) {
      std::vector<UserAct> observed;
      observed.reserve(reply.size());
      for (const auto& true_act : reply) {
        const int n_values = true_act.carries_value() ? slot_values(true_act.slot) : 0;
        auto heard = corrupt(true_act, n_values, cfg_.error_rate, rng_);
        transcript_.push_back(
            {turn_, "user", describe(heard, *ontology_), describe(true_act, *ontology_), heard.confidence});
        observed.push_back(heard);
      }
      belief_ = belief_update(layout_, std::move(belief_), observed, 0);
      belief_[layout_.match_offset] = match_bucket(current_match_count());
      if (goal_served()) {
        // The user has what they came for and hangs up.
        transcript_.push_back({turn_, "user", "bye()", "bye()", 1.0});
        done_ = true;
      }
    }
    set_last_action(layout_, belief_, action);

    if (turn_ >= cfg_.max_turns) done_ = true;
    EnvStep out;
    out.turn = turn_;
    out.done = done_;
    out.success_so_far = goal_served();
    out.reward = -cfg_.turn_penalty;
    if (done_ && out.success_so_far) out.reward += cfg_.success_reward;
    out.next_belief = belief_;
    return out;
  }

  bool done() const { return done_; }
  int turn() const { return turn_; }
  const Belief& belief() const { return belief_; }
  const UserGoal& goal() const { return goal_; }
  bool goal_has_match() const { return goal_matches_; }
  int offered_entity() const { return offered_; }
  const std::vector<TranscriptEntry>& transcript() const { return transcript_; }

  /// True iff an entity consistent with every goal constraint was offered and
  /// all requested slots were provided for it, or, when no entity can satisfy
  /// the goal, the system stated that nothing matches the full goal.
  bool goal_served() const {
    if (!goal_matches_) return nomatch_asserted_;
    for (const auto& [entity, slots] : provided_) {
      if (!consistent(entity)) continue;
      if (std::all_of(goal_.requests.begin(), goal_.requests.end(),
                      [&](int r) { return slots.count(r) > 0; })) {
        return true;
      }
    }
    return false;
  }

  /// Outcome of a finished dialogue.
  bool success() const {
    if (!done_) throw StateError("success queried before the dialogue finished");
    return goal_served();
  }

  /// One JSON object per act.
  void write_transcript_jsonl(std::ostream& out, std::int64_t episode_id = 0) const {
    for (const auto& e : transcript_) {
      nlohmann::json j = {{"episode", episode_id}, {"turn", e.turn}, {"speaker", e.speaker}, {"act", e.act}};
      if (e.speaker == "user") {
        j["true_act"] = e.true_act;
        j["confidence"] = e.confidence;
      }
      out << j.dump() << '\n';
    }
  }

 private:
  int slot_values(int slot) const { return ontology_->value_count(slot); }

  int current_match_count() const {
    return static_cast<int>(ontology_->matching(query_from_belief(layout_, belief_)).size());
  }

  bool consistent(int entity) const {
    return ontology_->matches(ontology_->entities[static_cast<std::size_t>(entity)], goal_.constraints);
  }

  int goal_value(int s) const { return goal_.constraints[static_cast<std::size_t>(s)]; }

  UserAct inform_for(int s) const {
    const int v = goal_value(s);
    return {UserActKind::inform, s, v == kUnconstrained ? kDontCare : v, 1.0};
  }

  void drop_from_agenda(int s) { agenda_.erase(std::remove(agenda_.begin(), agenda_.end(), s), agenda_.end()); }

  std::vector<int> outstanding_requests() const {
    std::vector<int> out;
    const auto it = offered_ >= 0 ? provided_.find(offered_) : provided_.end();
    for (int r : goal_.requests) {
      if (it == provided_.end() || it->second.count(r) == 0) out.push_back(r);
    }
    return out;
  }

  /// Requests are asked one per turn, in slot order.
  std::vector<UserAct> next_request() const {
    const auto open = outstanding_requests();
    if (open.empty()) return {{UserActKind::thankyou}};
    return {{UserActKind::request, open.front()}};
  }

  std::vector<UserAct> correction(int s, int wrong_value) {
    drop_from_agenda(s);
    std::vector<UserAct> acts;
    if (goal_value(s) == kUnconstrained) {
      acts.push_back(inform_for(s));
    } else {
      if (wrong_value >= 0) acts.push_back({UserActKind::negate, s, wrong_value, 1.0});
      acts.push_back(inform_for(s));
    }
    return acts;
  }

  /// Reply when the system has nothing useful to say: volunteer the next agenda
  /// item, repeat outstanding requests, or say nothing.
  std::vector<UserAct> fallback() {
    if (goal_served()) return {{UserActKind::thankyou}};
    if (!agenda_.empty()) {
      const int s = agenda_.back();
      agenda_.pop_back();
      return {inform_for(s)};
    }
    if (offered_ >= 0 && offered_consistent_) return next_request();
    return {{UserActKind::null}};
  }

  std::vector<UserAct> offer(int entity) {
    offered_ = entity;
    offered_consistent_ = consistent(entity);
    const auto& row = ontology_->entities[static_cast<std::size_t>(entity)];
    if (offered_consistent_) return next_request();
    for (int s = 0; s < ontology_->slot_count(); ++s) {
      const int want = goal_value(s);
      if (want != kUnconstrained && row.constraints[static_cast<std::size_t>(s)] != want) {
        return correction(s, row.constraints[static_cast<std::size_t>(s)]);
      }
    }
    return fallback();
  }

  /// The system reported that nothing matches `query`.
  std::vector<UserAct> no_match(const std::vector<int>& query) {
    offered_ = -1;
    offered_consistent_ = false;
    if (query == goal_.constraints) {
      // Nothing matches `query` and it is exactly the goal, so the claim is correct.
      nomatch_asserted_ = true;
      return {{UserActKind::thankyou}};
    }
    for (int s = 0; s < ontology_->slot_count(); ++s) {
      if (query[static_cast<std::size_t>(s)] != goal_value(s)) return correction(s, query[static_cast<std::size_t>(s)]);
    }
    return fallback();
  }

  std::vector<UserAct> respond(const SystemAction& act) {
    switch (act.kind) {
      case SysActKind::request:
      case SysActKind::select: {
        drop_from_agenda(act.slot);
        std::vector<UserAct> acts{inform_for(act.slot)};
        if (!agenda_.empty() && bernoulli(rng_, cfg_.p_extra_inform)) {
          acts.push_back(inform_for(agenda_.back()));
          agenda_.pop_back();
        }
        return acts;
      }
      case SysActKind::confirm: {
        const int proposed = read_slot(layout_, belief_, act.slot).top_value;
        drop_from_agenda(act.slot);
        if (goal_value(act.slot) == kUnconstrained) return {inform_for(act.slot)};
        if (proposed == goal_value(act.slot)) return {{UserActKind::affirm, act.slot, proposed, 1.0}};
        return correction(act.slot, proposed);
      }
      case SysActKind::inform: {
        const auto query = query_from_belief(layout_, belief_);
        const auto hits = ontology_->matching(query);
        if (hits.empty()) return no_match(query);
        return offer(hits.front());
      }
      case SysActKind::inform_alternatives: {
        const auto query = query_from_belief(layout_, belief_);
        const auto exact = ontology_->matching(query);
        if (exact.empty()) return no_match(query);
        // Relax the least confident constrained slot and offer a venue outside the exact set.
        int relax = -1;
        double lowest = 2.0;
        for (int s = 0; s < ontology_->slot_count(); ++s) {
          if (query[static_cast<std::size_t>(s)] == kUnconstrained) continue;
          const double p = read_slot(layout_, belief_, s).top_prob;
          if (p < lowest) {
            lowest = p;
            relax = s;
          }
        }
        if (relax < 0) return offer(exact.front());
        auto relaxed = query;
        relaxed[static_cast<std::size_t>(relax)] = kUnconstrained;
        for (int e : ontology_->matching(relaxed)) {
          if (std::find(exact.begin(), exact.end(), e) == exact.end()) return offer(e);
        }
        return offer(exact.front());
      }
      case SysActKind::inform_requested: {
        bool answered = false;
        if (offered_ >= 0) {
          for (int r = 0; r < ontology_->requestable_count(); ++r) {
            if (belief_[layout_.requested_offset + r] >= 0.5) {
              provided_[offered_].insert(r);
              belief_[layout_.requested_offset + r] = 0.0;
              answered = true;
            }
          }
        }
        if (!answered) return fallback();
        if (offered_consistent_) return next_request();
        return fallback();
      }
      case SysActKind::reqmore:
        return fallback();
      case SysActKind::bye:
        return {};
    }
    return {};
  }

  std::shared_ptr<const Ontology> ontology_;
  EnvConfig cfg_;
  BeliefLayout layout_;
  Rng rng_;

  UserGoal goal_;
  std::vector<int> agenda_;
  bool goal_matches_ = false;
  int offered_ = -1;
  bool offered_consistent_ = false;
  std::map<int, std::set<int>> provided_;
  bool nomatch_asserted_ = false;

  Belief belief_;
  int turn_ = 0;
  bool done_ = false;
  std::vector<TranscriptEntry> transcript_;
};

}  // namespace dpo
