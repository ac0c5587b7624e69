#pragma once

#include <vector>

#include "dpo/env/acts.hpp"
#include "dpo/env/belief.hpp"
#include "dpo/nn/network.hpp"

namespace dpo {

inline ActionMask all_executable(int action_count) { return ActionMask(static_cast<std::size_t>(action_count), true); }

/// Actions that make sense in belief `b`:
///   request(s)        slot s not yet confidently filled
///   confirm/select(s) slot s holds some value
///   inform_requested  some request flag is set
///   reqmore, bye      every slot filled, nothing requested, and the last
///                     system act offered a venue
///   inform, inform_alternatives  always
inline ActionMask executable_actions(const BeliefLayout& layout, const Belief& b) {
  const int n = layout.slot_count();
  ActionMask mask = all_executable(action_count_for(n));
  bool all_filled = true;
  for (int s = 0; s < n; ++s) {
    const auto status = read_slot(layout, b, s).status;
    const bool filled = status != SlotStatus::unfilled;
    all_filled = all_filled && filled;
    mask[static_cast<std::size_t>(encode_action({SysActKind::request, s}, n))] =
        status != SlotStatus::confident && status != SlotStatus::dontcare;
    mask[static_cast<std::size_t>(encode_action({SysActKind::confirm, s}, n))] = filled;
    mask[static_cast<std::size_t>(encode_action({SysActKind::select, s}, n))] = filled;
  }
  bool requested = false;
  for (int r = 0; r < layout.requestable_count; ++r) requested = requested || b[layout.requested_offset + r] >= 0.5;
  mask[static_cast<std::size_t>(encode_action({SysActKind::inform_requested}, n))] = requested;

  const int last = last_action(layout, b);
  bool offered = false;
  if (last >= 0) {
    const auto kind = decode_action(last, n).kind;
    offered = kind == SysActKind::inform || kind == SysActKind::inform_alternatives ||
              kind == SysActKind::inform_requested;
  }
  const bool wrap_up = all_filled && !requested && offered;
  mask[static_cast<std::size_t>(encode_action({SysActKind::reqmore}, n))] = wrap_up;
  mask[static_cast<std::size_t>(encode_action({SysActKind::bye}, n))] = wrap_up;
  return mask;
}

inline int executable_count(const ActionMask& mask) {
  int count = 0;
  for (bool m : mask) count += m ? 1 : 0;
  return count;
}

}  // namespace dpo
