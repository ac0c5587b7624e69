#pragma once

#include "dpo/env/acts.hpp"
#include "dpo/env/belief.hpp"

namespace dpo {

/// Hand-crafted slot-filling policy used to generate demonstrations.
///
///  1. request the unfilled slot with the most mass on "none" (lowest index on ties)
///  2. confirm / select the first slot whose top value is uncertain / ambiguous
///  3. inform_requested while any request flag is set
///  4. inform otherwise
inline int rule_policy(const BeliefLayout& layout, const Belief& b) {
  const int n = layout.slot_count();
  int to_request = -1;
  double most_none = -1.0;
  for (int s = 0; s < n; ++s) {
    const auto r = read_slot(layout, b, s);
    if (r.status == SlotStatus::unfilled && r.none_prob > most_none) {
      most_none = r.none_prob;
      to_request = s;
    }
  }
  if (to_request >= 0) return encode_action({SysActKind::request, to_request}, n);

  for (int s = 0; s < n; ++s) {
    const auto status = read_slot(layout, b, s).status;
    if (status == SlotStatus::needs_confirm) return encode_action({SysActKind::confirm, s}, n);
    if (status == SlotStatus::ambiguous) return encode_action({SysActKind::select, s}, n);
  }

  for (int r = 0; r < layout.requestable_count; ++r) {
    if (b[layout.requested_offset + r] >= 0.5) return encode_action({SysActKind::inform_requested}, n);
  }

  return encode_action({SysActKind::inform}, n);
}

}  // namespace dpo
