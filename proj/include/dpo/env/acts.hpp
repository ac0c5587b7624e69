#pragma once

#include <algorithm>
#include <string>

#include "dpo/core/random.hpp"
#include "dpo/env/ontology.hpp"

namespace dpo {

// ---------------------------------------------------------------------------
// System actions
//
// Index layout for n constraint slots:
//   [0, n)      request(slot)
//   [n, 2n)     confirm(slot)
//   [2n, 3n)    select(slot)
//   3n + 0..4   inform, inform_alternatives, inform_requested, reqmore, bye
// ---------------------------------------------------------------------------

enum class SysActKind { request, confirm, select, inform, inform_alternatives, inform_requested, reqmore, bye };

struct SystemAction {
  SysActKind kind = SysActKind::request;
  int slot = -1;

  friend bool operator==(const SystemAction&, const SystemAction&) = default;
};

inline int action_count_for(int n_slots) { return 3 * n_slots + 5; }

inline SystemAction decode_action(int index, int n_slots) {
  if (index < 0 || index >= action_count_for(n_slots)) {
    throw ShapeError("system action index " + std::to_string(index) + " out of range");
  }
  if (index < n_slots) return {SysActKind::request, index};
  if (index < 2 * n_slots) return {SysActKind::confirm, index - n_slots};
  if (index < 3 * n_slots) return {SysActKind::select, index - 2 * n_slots};
  static constexpr SysActKind kSlotless[] = {SysActKind::inform, SysActKind::inform_alternatives,
                                             SysActKind::inform_requested, SysActKind::reqmore,
                                             SysActKind::bye};
  return {kSlotless[index - 3 * n_slots], -1};
}

inline int encode_action(const SystemAction& a, int n_slots) {
  switch (a.kind) {
    case SysActKind::request: return a.slot;
    case SysActKind::confirm: return n_slots + a.slot;
    case SysActKind::select: return 2 * n_slots + a.slot;
    case SysActKind::inform: return 3 * n_slots;
    case SysActKind::inform_alternatives: return 3 * n_slots + 1;
    case SysActKind::inform_requested: return 3 * n_slots + 2;
    case SysActKind::reqmore: return 3 * n_slots + 3;
    case SysActKind::bye: return 3 * n_slots + 4;
  }
  throw ShapeError("encode_action: unknown kind");
}

inline const char* to_string(SysActKind kind) {
  switch (kind) {
    case SysActKind::request: return "request";
    case SysActKind::confirm: return "confirm";
    case SysActKind::select: return "select";
    case SysActKind::inform: return "inform";
    case SysActKind::inform_alternatives: return "inform_alternatives";
    case SysActKind::inform_requested: return "inform_requested";
    case SysActKind::reqmore: return "reqmore";
    case SysActKind::bye: return "bye";
  }
  return "?";
}

inline std::string action_name(int index, const Ontology& ontology) {
  const auto a = decode_action(index, ontology.slot_count());
  std::string name = to_string(a.kind);
  if (a.slot >= 0) name += "_" + ontology.constraint_slots[static_cast<std::size_t>(a.slot)].name;
  return name;
}

// ---------------------------------------------------------------------------
// User acts
// ---------------------------------------------------------------------------

enum class UserActKind { inform, affirm, negate, request, thankyou, null };

/// Value sentinel for inform(slot = dontcare).
inline constexpr int kDontCare = -2;
inline constexpr int kNoValue = -1;

struct UserAct {
  UserActKind kind = UserActKind::null;
  int slot = -1;  ///< constraint slot, or requestable slot for request acts
  int value = kNoValue;
  double confidence = 1.0;

  bool carries_value() const {
    return (kind == UserActKind::inform || kind == UserActKind::affirm || kind == UserActKind::negate) &&
           value >= 0;
  }

  friend bool operator==(const UserAct&, const UserAct&) = default;
};

inline std::string describe(const UserAct& act, const Ontology& o) {
  auto slot_value = [&](const char* verb) {
    const auto& slot = o.constraint_slots.at(static_cast<std::size_t>(act.slot));
    const std::string value =
        act.value == kDontCare ? "dontcare" : slot.values.at(static_cast<std::size_t>(act.value));
    return std::string(verb) + "(" + slot.name + "=" + value + ")";
  };
  switch (act.kind) {
    case UserActKind::inform: return slot_value("inform");
    case UserActKind::affirm: return slot_value("affirm");
    case UserActKind::negate: return slot_value("negate");
    case UserActKind::request:
      return "request(" + o.requestable_slots.at(static_cast<std::size_t>(act.slot)) + ")";
    case UserActKind::thankyou: return "thankyou()";
    case UserActKind::null: return "null()";
  }
  return "?";
}

/// Semantic error channel. Each slot value is replaced by a uniformly drawn
/// different value with probability `error_rate`. The attached confidence is
/// 1 - error_rate shifted up by up to 0.1 for correct hypotheses and down by up
/// to 0.1 for corrupted ones, floored at 0.2 and clipped to [0, 1]. Acts without
/// a slot value pass through with confidence 1.
inline UserAct corrupt(const UserAct& act, int n_values, double error_rate, Rng& rng) {
  if (error_rate < 0.0 || error_rate > 1.0) throw SpecError("corrupt: error rate outside [0, 1]");
  UserAct observed = act;
  observed.confidence = 1.0;
  if (!act.carries_value()) return observed;
  const bool wrong = n_values >= 2 && bernoulli(rng, error_rate);
  if (wrong) {
    int replacement = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n_values - 1)));
    if (replacement >= act.value) ++replacement;
    observed.value = replacement;
  }
  const double noise = 0.1 * uniform01(rng);
  const double confidence = 1.0 - error_rate + (wrong ? -noise : noise);
  observed.confidence = std::clamp(std::max(0.2, confidence), 0.0, 1.0);
  return observed;
}

}  // namespace dpo
