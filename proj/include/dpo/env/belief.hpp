#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <vector>

#include "dpo/env/acts.hpp"
#include "dpo/env/ontology.hpp"

namespace dpo {

using Belief = Eigen::VectorXd;

/// Offsets of the belief-vector blocks for an ontology:
///   per constraint slot: distribution over values followed by "none"
///   per requestable slot: requested flag
///   last system act one-hot (action_count entries followed by "none")
///   database match-count bucket for the current query
struct BeliefLayout {
  std::vector<int> slot_offset;
  std::vector<int> slot_width;  ///< value count + 1 ("none" is last)
  int requested_offset = 0;
  int requestable_count = 0;
  int last_act_offset = 0;
  int last_act_width = 0;  ///< action count + 1 ("none" is last)
  int match_offset = 0;
  int size = 0;

  BeliefLayout() = default;
  explicit BeliefLayout(const Ontology& o) {
    int offset = 0;
    for (int s = 0; s < o.slot_count(); ++s) {
      slot_offset.push_back(offset);
      slot_width.push_back(o.value_count(s) + 1);
      offset += o.value_count(s) + 1;
    }
    requested_offset = offset;
    requestable_count = o.requestable_count();
    offset += requestable_count;
    last_act_offset = offset;
    last_act_width = o.action_count() + 1;
    offset += last_act_width;
    match_offset = offset;
    size = offset + 1;
  }

  int slot_count() const { return static_cast<int>(slot_offset.size()); }
  int value_count(int s) const { return slot_width[static_cast<std::size_t>(s)] - 1; }
  int none_index(int s) const { return slot_offset[static_cast<std::size_t>(s)] + value_count(s); }
  int no_last_act_index() const { return last_act_offset + last_act_width - 1; }
};

inline auto slot_distribution(const BeliefLayout& layout, const Belief& b, int s) {
  return b.segment(layout.slot_offset[static_cast<std::size_t>(s)], layout.slot_width[static_cast<std::size_t>(s)]);
}

inline auto slot_distribution(const BeliefLayout& layout, Belief& b, int s) {
  return b.segment(layout.slot_offset[static_cast<std::size_t>(s)], layout.slot_width[static_cast<std::size_t>(s)]);
}

/// -1 for "no system act yet".
inline void set_last_action(const BeliefLayout& layout, Belief& b, int action) {
  b.segment(layout.last_act_offset, layout.last_act_width).setZero();
  b[action < 0 ? layout.no_last_act_index() : layout.last_act_offset + action] = 1.0;
}

inline int last_action(const BeliefLayout& layout, const Belief& b) {
  Eigen::Index idx = 0;
  b.segment(layout.last_act_offset, layout.last_act_width).maxCoeff(&idx);
  const int action = static_cast<int>(idx);
  return action == layout.last_act_width - 1 ? -1 : action;
}

/// 0, 1, 2-3 and 4+ matching entities map to 0, 1/3, 2/3 and 1.
inline double match_bucket(int match_count) {
  if (match_count <= 0) return 0.0;
  if (match_count == 1) return 1.0 / 3.0;
  if (match_count <= 3) return 2.0 / 3.0;
  return 1.0;
}

/// Dialogue-start belief: all slot mass on "none", nothing requested, no last act.
inline Belief prior_belief(const BeliefLayout& layout) {
  Belief b = Belief::Zero(layout.size);
  for (int s = 0; s < layout.slot_count(); ++s) b[layout.none_index(s)] = 1.0;
  set_last_action(layout, b, -1);
  return b;
}

/// Fold the observed acts of one user turn into the belief.
///
/// inform/affirm(s=v, c): dist <- c * e_v + (1 - c) * dist
/// inform(s=dontcare, c): dist <- c * uniform(values) + (1 - c) * dist
/// negate(s=v, c):        dist[v] *= (1 - c), renormalised
/// request(r):            flag[r] = 1
/// The match feature is set from `match_count`.
inline Belief belief_update(const BeliefLayout& layout, Belief b, const std::vector<UserAct>& acts,
                            int match_count) {
  for (const auto& act : acts) {
    switch (act.kind) {
      case UserActKind::inform:
      case UserActKind::affirm: {
        auto dist = slot_distribution(layout, b, act.slot);
        const double c = act.confidence;
        Eigen::VectorXd target = Eigen::VectorXd::Zero(dist.size());
        if (act.value == kDontCare) {
          target.head(dist.size() - 1).setConstant(1.0 / static_cast<double>(dist.size() - 1));
        } else {
          target[act.value] = 1.0;
        }
        dist = c * target + (1.0 - c) * dist;
        break;
      }
      case UserActKind::negate: {
        if (act.value < 0) break;
        auto dist = slot_distribution(layout, b, act.slot);
        dist[act.value] *= 1.0 - act.confidence;
        const double total = dist.sum();
        if (total <= 1e-12) {
          dist.setZero();
          dist[dist.size() - 1] = 1.0;
        } else {
          dist /= total;
        }
        break;
      }
      case UserActKind::request:
        b[layout.requested_offset + act.slot] = 1.0;
        break;
      case UserActKind::thankyou:
      case UserActKind::null:
        break;
    }
  }
  b[layout.match_offset] = match_bucket(match_count);
  return b;
}

enum class SlotStatus { unfilled, dontcare, confident, needs_confirm, ambiguous };

struct SlotReading {
  double none_prob = 1.0;
  int top_value = 0;
  double top_prob = 0.0;
  int second_value = 0;
  double second_prob = 0.0;
  SlotStatus status = SlotStatus::unfilled;
};

/// Summary of one slot distribution used by the heuristics and the rule policy.
///
/// unfilled:      P(none) >= 0.5
/// dontcare:      otherwise, values spread within 0.05 of each other
/// confident:     top value >= 0.8
/// needs_confirm: top value in (0.5, 0.8)
/// ambiguous:     top value <= 0.5
inline SlotReading read_slot(const BeliefLayout& layout, const Belief& b, int s) {
  const auto dist = slot_distribution(layout, b, s);
  const int n = static_cast<int>(dist.size()) - 1;
  SlotReading r;
  r.none_prob = dist[n];
  r.top_value = 0;
  r.top_prob = dist[0];
  r.second_value = -1;
  r.second_prob = -1.0;
  for (int v = 1; v < n; ++v) {
    if (dist[v] > r.top_prob) {
      r.second_value = r.top_value;
      r.second_prob = r.top_prob;
      r.top_value = v;
      r.top_prob = dist[v];
    } else if (dist[v] > r.second_prob) {
      r.second_value = v;
      r.second_prob = dist[v];
    }
  }
  if (r.second_value < 0) {
    r.second_value = r.top_value;
    r.second_prob = r.top_prob;
  }
  const double spread = r.top_prob - dist.head(n).minCoeff();
  if (r.none_prob >= 0.5) {
    r.status = SlotStatus::unfilled;
  } else if (n > 1 && spread < 0.05) {
    r.status = SlotStatus::dontcare;
  } else if (r.top_prob >= 0.8) {
    r.status = SlotStatus::confident;
  } else if (r.top_prob > 0.5) {
    r.status = SlotStatus::needs_confirm;
  } else {
    r.status = SlotStatus::ambiguous;
  }
  return r;
}

/// Database query implied by the belief: the top value of every filled slot,
/// unconstrained for unfilled and dontcare slots.
inline std::vector<int> query_from_belief(const BeliefLayout& layout, const Belief& b) {
  std::vector<int> query(static_cast<std::size_t>(layout.slot_count()), kUnconstrained);
  for (int s = 0; s < layout.slot_count(); ++s) {
    const auto r = read_slot(layout, b, s);
    if (r.status != SlotStatus::unfilled && r.status != SlotStatus::dontcare) {
      query[static_cast<std::size_t>(s)] = r.top_value;
    }
  }
  return query;
}

}  // namespace dpo
