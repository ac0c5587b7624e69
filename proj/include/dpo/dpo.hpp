#pragma once

#include "dpo/core/error.hpp"
#include "dpo/core/random.hpp"
#include "dpo/env/action_mask.hpp"
#include "dpo/env/acts.hpp"
#include "dpo/env/belief.hpp"
#include "dpo/env/dialogue_env.hpp"
#include "dpo/env/ontology.hpp"
#include "dpo/env/rule_policy.hpp"
#include "dpo/harness/config.hpp"
#include "dpo/harness/training.hpp"
#include "dpo/nn/adam.hpp"
#include "dpo/nn/checkpoint.hpp"
#include "dpo/nn/network.hpp"
#include "dpo/rl/actor_critic.hpp"
#include "dpo/rl/demonstration.hpp"
#include "dpo/rl/dqn.hpp"
#include "dpo/rl/enacer.hpp"
#include "dpo/rl/replay.hpp"
