#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <type_traits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpo/core/error.hpp"
#include "dpo/env/dialogue_env.hpp"
#include "dpo/nn/network.hpp"
#include "dpo/rl/actor_critic.hpp"
#include "dpo/rl/demonstration.hpp"
#include "dpo/rl/dqn.hpp"
#include "dpo/rl/enacer.hpp"

namespace dpo {

enum class Learner { a2c, a2c_er, tracer, enacer, dqn, rule, random, sl_only };
enum class DemoMode { none, pretrain, replay, both };

inline const std::vector<std::pair<Learner, const char*>>& learner_names() {
  static const std::vector<std::pair<Learner, const char*>> names = {
      {Learner::a2c, "a2c"},   {Learner::a2c_er, "a2c_er"}, {Learner::tracer, "tracer"},
      {Learner::enacer, "enacer"}, {Learner::dqn, "dqn"},   {Learner::rule, "rule"},
      {Learner::random, "random"}, {Learner::sl_only, "sl_only"}};
  return names;
}

inline const std::vector<std::pair<DemoMode, const char*>>& demo_mode_names() {
  static const std::vector<std::pair<DemoMode, const char*>> names = {
      {DemoMode::none, "none"}, {DemoMode::pretrain, "pretrain"}, {DemoMode::replay, "replay"}, {DemoMode::both, "both"}};
  return names;
}

inline std::string to_string(Learner l) {
  for (const auto& [value, name] : learner_names()) {
    if (value == l) return name;
  }
  return "?";
}

inline std::string to_string(DemoMode m) {
  for (const auto& [value, name] : demo_mode_names()) {
    if (value == m) return name;
  }
  return "?";
}

inline Learner parse_learner(const std::string& text) {
  for (const auto& [value, name] : learner_names()) {
    if (text == name) return value;
  }
  throw SpecError("unknown learner '" + text + "'");
}

inline DemoMode parse_demo_mode(const std::string& text) {
  for (const auto& [value, name] : demo_mode_names()) {
    if (text == name) return value;
  }
  throw SpecError("unknown demo mode '" + text + "'");
}

inline bool uses_pretraining(DemoMode m) { return m == DemoMode::pretrain || m == DemoMode::both; }
inline bool uses_supervised_replay(DemoMode m) { return m == DemoMode::replay || m == DemoMode::both; }

/// Demonstration modes each learner accepts.
inline std::vector<DemoMode> supported_demo_modes(Learner l) {
  switch (l) {
    case Learner::a2c:
    case Learner::a2c_er:
    case Learner::tracer:
      return {DemoMode::none, DemoMode::pretrain, DemoMode::replay, DemoMode::both};
    case Learner::enacer:
      return {DemoMode::none, DemoMode::pretrain};
    case Learner::sl_only:
      return {DemoMode::pretrain};
    case Learner::dqn:
    case Learner::rule:
    case Learner::random:
      return {DemoMode::none};
  }
  return {};
}

inline std::string compatibility_table() {
  std::ostringstream out;
  for (const auto& [learner, name] : learner_names()) {
    out << "  " << name << ":";
    for (auto m : supported_demo_modes(learner)) out << ' ' << to_string(m);
    out << '\n';
  }
  return out.str();
}

struct ExperimentConfig {
  Learner learner = Learner::tracer;
  DemoMode demo_mode = DemoMode::none;
  double error_rate = 0.0;
  std::int64_t train_dialogues = 4000;
  int eval_every = 200;
  int eval_dialogues = 600;
  double epsilon_start = 0.3;
  double epsilon_end = 0.0;
  std::int64_t epsilon_horizon = 3500;       ///< used when learning from scratch
  std::int64_t epsilon_horizon_demo = 2000;  ///< used with any demonstration mode
  bool sample_behaviour = false;             ///< exploit by sampling from pi instead of argmax
  bool action_masking = true;                ///< learners act only among executable actions
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  std::vector<int> hidden_dims{130, 50};
  Activation activation = Activation::tanh;
  double learning_rate = 0.001;
  int replay_capacity = 1000;

  TracerConfig tracer;
  EnacConfig enac;
  DqnConfig dqn;
  CombinedLossConfig combined;
  SlConfig sl;
  bool enacer_sl_step = false;  ///< extra supervised step after each eNACER update

  std::int64_t corpus_dialogues = 720;
  double corpus_error_rate = 0.0;
  std::uint64_t corpus_seed = 2017;
  std::string corpus_path;  ///< empty: generate the corpus in memory

  EnvConfig env;  ///< error_rate here is overridden by `error_rate`

  std::int64_t effective_epsilon_horizon() const {
    return demo_mode == DemoMode::none ? epsilon_horizon : epsilon_horizon_demo;
  }

  EnvConfig env_config() const {
    EnvConfig e = env;
    e.error_rate = error_rate;
    return e;
  }

  /// Pool items needed before the first update: dialogues for the episode
  /// learners, transitions for DQN.
  int warmup_samples() const { return tracer.warmup_samples; }
  int update_period() const { return tracer.update_period_dialogues; }

  void validate() const {
    const auto modes = supported_demo_modes(learner);
    if (std::find(modes.begin(), modes.end(), demo_mode) == modes.end()) {
      throw SpecError("learner " + to_string(learner) + " does not support demo mode " + to_string(demo_mode) +
                      "; supported combinations:\n" + compatibility_table());
    }
    if (!(error_rate >= 0.0 && error_rate <= 1.0)) throw SpecError("error rate must lie in [0, 1]");
    if (!(corpus_error_rate >= 0.0 && corpus_error_rate <= 1.0)) throw SpecError("corpus error rate must lie in [0, 1]");
    if (train_dialogues < 0) throw SpecError("train_dialogues must be non-negative");
    if (eval_every < 1 || eval_dialogues < 1) throw SpecError("evaluation cadence and size must be positive");
    if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0)) {
      throw SpecError("epsilon endpoints must lie in [0, 1]");
    }
    if (epsilon_horizon < 1 || epsilon_horizon_demo < 1) throw SpecError("epsilon horizon must be positive");
    if (seeds.empty()) throw SpecError("at least one seed is required");
    auto sorted = seeds;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw SpecError("seeds must be distinct");
    if (replay_capacity < 1) throw SpecError("replay capacity must be positive");
    if (!(learning_rate > 0.0)) throw SpecError("learning rate must be positive");
    if (corpus_dialogues < 1) throw SpecError("corpus_dialogues must be positive");
    for (int h : hidden_dims) {
      if (h < 1) throw SpecError("hidden layer widths must be positive");
    }
    tracer.validate();
    enac.validate();
    dqn.validate();
    combined.validate();
    env_config().validate();
  }
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  return {
      {"learner", to_string(c.learner)},
      {"demo_mode", to_string(c.demo_mode)},
      {"error_rate", c.error_rate},
      {"train_dialogues", c.train_dialogues},
      {"eval_every", c.eval_every},
      {"eval_dialogues", c.eval_dialogues},
      {"epsilon_start", c.epsilon_start},
      {"epsilon_end", c.epsilon_end},
      {"epsilon_horizon", c.epsilon_horizon},
      {"epsilon_horizon_demo", c.epsilon_horizon_demo},
      {"sample_behaviour", c.sample_behaviour},
      {"action_masking", c.action_masking},
      {"seeds", c.seeds},
      {"hidden_dims", c.hidden_dims},
      {"activation", c.activation == Activation::relu ? "relu" : "tanh"},
      {"learning_rate", c.learning_rate},
      {"replay_capacity", c.replay_capacity},
      {"tracer",
       {{"gamma", c.tracer.gamma},
        {"alpha_avg", c.tracer.alpha_avg},
        {"xi", c.tracer.xi},
        {"is_clip", {c.tracer.is_clip.lo, c.tracer.is_clip.hi}},
        {"batch_episodes", c.tracer.batch_episodes},
        {"update_period_dialogues", c.tracer.update_period_dialogues},
        {"warmup_samples", c.tracer.warmup_samples},
        {"reward_scale", c.tracer.reward_scale}}},
      {"enac",
       {{"gamma", c.enac.gamma},
        {"ridge", c.enac.ridge},
        {"relative_ridge", c.enac.relative_ridge},
        {"is_clip", {c.enac.is_clip.lo, c.enac.is_clip.hi}},
        {"batch_episodes", c.enac.batch_episodes},
        {"reward_scale", c.enac.reward_scale}}},
      {"dqn",
       {{"gamma", c.dqn.gamma},
        {"target_sync_period", c.dqn.target_sync_period},
        {"double_q", c.dqn.double_q},
        {"batch_size", c.dqn.batch_size},
        {"reward_scale", c.dqn.reward_scale}}},
      {"combined", {{"lambda1", c.combined.lambda1}, {"lambda2", c.combined.lambda2}, {"demo_batch", c.combined.demo_batch}}},
      {"sl",
       {{"max_epochs", c.sl.max_epochs}, {"batch_size", c.sl.batch_size}, {"patience", c.sl.patience}, {"lr", c.sl.lr}}},
      {"enacer_sl_step", c.enacer_sl_step},
      {"corpus_dialogues", c.corpus_dialogues},
      {"corpus_error_rate", c.corpus_error_rate},
      {"corpus_seed", c.corpus_seed},
      {"corpus_path", c.corpus_path},
      {"env",
       {{"p_slot", c.env.p_slot},
        {"p_request", c.env.p_request},
        {"p_nomatch", c.env.p_nomatch},
        {"p_extra_inform", c.env.p_extra_inform},
        {"max_turns", c.env.max_turns},
        {"turn_penalty", c.env.turn_penalty},
        {"success_reward", c.env.success_reward}}},
  };
}

namespace detail {

template <class T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_clip(const nlohmann::json& j, ClipRange& clip) {
  if (!j.contains("is_clip")) return;
  const auto v = j.at("is_clip").get<std::vector<double>>();
  if (v.size() != 2) throw SpecError("is_clip must be [lo, hi]");
  clip = {v[0], v[1]};
}

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      throw SpecError("unknown key '" + item.key() + "' in " + where);
    }
  }
}

}  // namespace detail

/// Reads a (possibly partial) configuration on top of the defaults. Unknown
/// keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig c = {}) {
  using detail::read_if;
  try {
    const nlohmann::json defaults = config_to_json(c);
    std::vector<std::string> top;
    for (const auto& item : defaults.items()) top.push_back(item.key());
    detail::reject_unknown(j, top, "config");
    if (j.contains("learner")) c.learner = parse_learner(j.at("learner").get<std::string>());
    if (j.contains("demo_mode")) c.demo_mode = parse_demo_mode(j.at("demo_mode").get<std::string>());
    read_if(j, "error_rate", c.error_rate);
    read_if(j, "train_dialogues", c.train_dialogues);
    read_if(j, "eval_every", c.eval_every);
    read_if(j, "eval_dialogues", c.eval_dialogues);
    read_if(j, "epsilon_start", c.epsilon_start);
    read_if(j, "epsilon_end", c.epsilon_end);
    read_if(j, "epsilon_horizon", c.epsilon_horizon);
    read_if(j, "epsilon_horizon_demo", c.epsilon_horizon_demo);
    read_if(j, "sample_behaviour", c.sample_behaviour);
    read_if(j, "action_masking", c.action_masking);
    read_if(j, "seeds", c.seeds);
    read_if(j, "hidden_dims", c.hidden_dims);
    if (j.contains("activation")) {
      const auto a = j.at("activation").get<std::string>();
      if (a != "relu" && a != "tanh") throw SpecError("activation must be relu or tanh");
      c.activation = a == "relu" ? Activation::relu : Activation::tanh;
    }
    read_if(j, "learning_rate", c.learning_rate);
    read_if(j, "replay_capacity", c.replay_capacity);
    if (j.contains("tracer")) {
      const auto& t = j.at("tracer");
      detail::reject_unknown(t, {"gamma", "alpha_avg", "xi", "is_clip", "batch_episodes", "update_period_dialogues",
                                 "warmup_samples", "reward_scale"},
                             "tracer");
      read_if(t, "gamma", c.tracer.gamma);
      read_if(t, "alpha_avg", c.tracer.alpha_avg);
      read_if(t, "xi", c.tracer.xi);
      detail::read_clip(t, c.tracer.is_clip);
      read_if(t, "batch_episodes", c.tracer.batch_episodes);
      read_if(t, "update_period_dialogues", c.tracer.update_period_dialogues);
      read_if(t, "warmup_samples", c.tracer.warmup_samples);
      read_if(t, "reward_scale", c.tracer.reward_scale);
    }
    if (j.contains("enac")) {
      const auto& e = j.at("enac");
      detail::reject_unknown(e, {"gamma", "ridge", "relative_ridge", "is_clip", "batch_episodes", "reward_scale"},
                             "enac");
      read_if(e, "gamma", c.enac.gamma);
      read_if(e, "ridge", c.enac.ridge);
      read_if(e, "relative_ridge", c.enac.relative_ridge);
      detail::read_clip(e, c.enac.is_clip);
      read_if(e, "batch_episodes", c.enac.batch_episodes);
      read_if(e, "reward_scale", c.enac.reward_scale);
    }
    if (j.contains("dqn")) {
      const auto& d = j.at("dqn");
      detail::reject_unknown(d, {"gamma", "target_sync_period", "double_q", "batch_size", "reward_scale"}, "dqn");
      read_if(d, "gamma", c.dqn.gamma);
      read_if(d, "target_sync_period", c.dqn.target_sync_period);
      read_if(d, "double_q", c.dqn.double_q);
      read_if(d, "batch_size", c.dqn.batch_size);
      read_if(d, "reward_scale", c.dqn.reward_scale);
    }
    if (j.contains("combined")) {
      const auto& m = j.at("combined");
      detail::reject_unknown(m, {"lambda1", "lambda2", "demo_batch"}, "combined");
      read_if(m, "lambda1", c.combined.lambda1);
      read_if(m, "lambda2", c.combined.lambda2);
      read_if(m, "demo_batch", c.combined.demo_batch);
    }
    if (j.contains("sl")) {
      const auto& s = j.at("sl");
      detail::reject_unknown(s, {"max_epochs", "batch_size", "patience", "lr"}, "sl");
      read_if(s, "max_epochs", c.sl.max_epochs);
      read_if(s, "batch_size", c.sl.batch_size);
      read_if(s, "patience", c.sl.patience);
      read_if(s, "lr", c.sl.lr);
    }
    read_if(j, "enacer_sl_step", c.enacer_sl_step);
    read_if(j, "corpus_dialogues", c.corpus_dialogues);
    read_if(j, "corpus_error_rate", c.corpus_error_rate);
    read_if(j, "corpus_seed", c.corpus_seed);
    read_if(j, "corpus_path", c.corpus_path);
    if (j.contains("env")) {
      const auto& e = j.at("env");
      detail::reject_unknown(e, {"p_slot", "p_request", "p_nomatch", "p_extra_inform", "max_turns", "turn_penalty",
                                 "success_reward"},
                             "env");
      read_if(e, "p_slot", c.env.p_slot);
      read_if(e, "p_request", c.env.p_request);
      read_if(e, "p_nomatch", c.env.p_nomatch);
      read_if(e, "p_extra_inform", c.env.p_extra_inform);
      read_if(e, "max_turns", c.env.max_turns);
      read_if(e, "turn_penalty", c.env.turn_penalty);
      read_if(e, "success_reward", c.env.success_reward);
    }
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

// ---------------------------------------------------------------------------
// Protocol audit
// ---------------------------------------------------------------------------

struct AuditItem {
  std::string name;
  std::string actual;
  std::string expected;
  std::string meaning;
  bool ok = false;
};

namespace detail {

inline std::string fmt(double x) {
  std::ostringstream out;
  out << x;
  return out.str();
}

template <class T>
AuditItem audit(std::string name, const T& actual, const T& expected, std::string meaning) {
  AuditItem item;
  item.name = std::move(name);
  item.meaning = std::move(meaning);
  if constexpr (std::is_floating_point_v<T>) {
    item.actual = fmt(actual);
    item.expected = fmt(expected);
  } else {
    item.actual = std::to_string(actual);
    item.expected = std::to_string(expected);
  }
  item.ok = actual == expected;
  return item;
}

}  // namespace detail

/// Checks the training-protocol constants of a configuration against the
/// reference protocol.
inline std::vector<AuditItem> audit_config(const ExperimentConfig& c) {
  using detail::audit;
  std::vector<AuditItem> items;
  items.push_back(audit("warmup_samples", c.tracer.warmup_samples, 192, "pool items collected before the first update"));
  items.push_back(audit("update_period_dialogues", c.tracer.update_period_dialogues, 2, "dialogues between updates"));
  items.push_back(audit("replay_capacity", c.replay_capacity, 1000, "experience replay pool size"));
  items.push_back(audit("batch_episodes", c.tracer.batch_episodes, 64, "actor-critic minibatch (episodes)"));
  items.push_back(audit("enac.batch_episodes", c.enac.batch_episodes, 64, "natural-gradient minibatch (episodes)"));
  items.push_back(audit("dqn.batch_size", c.dqn.batch_size, 64, "DQN minibatch (transitions)"));
  items.push_back(audit("combined.demo_batch", c.combined.demo_batch, 64, "demonstrations sampled per update"));
  items.push_back(audit("epsilon_start", c.epsilon_start, 0.3, "initial exploration rate"));
  items.push_back(audit("epsilon_end", c.epsilon_end, 0.0, "final exploration rate"));
  items.push_back(audit("epsilon_horizon", c.epsilon_horizon, std::int64_t{3500}, "annealing length from scratch"));
  items.push_back(
      audit("epsilon_horizon_demo", c.epsilon_horizon_demo, std::int64_t{2000}, "annealing length with demonstrations"));
  items.push_back(audit("eval_every", c.eval_every, 200, "training dialogues between evaluations"));
  items.push_back(audit("eval_dialogues", c.eval_dialogues, 600, "dialogues per evaluation"));
  items.push_back(audit("lambda1", c.combined.lambda1, 10.0, "supervised loss weight"));
  items.push_back(audit("lambda2", c.combined.lambda2, 0.01, "L2 weight"));
  items.push_back(audit("is_clip.lo", c.tracer.is_clip.lo, 0.8, "importance ratio lower clip"));
  items.push_back(audit("is_clip.hi", c.tracer.is_clip.hi, 1.0, "importance ratio upper clip"));
  items.push_back(audit("alpha_avg", c.tracer.alpha_avg, 0.02, "average-policy weight"));
  items.push_back(audit("xi", c.tracer.xi, 0.01, "trust-region radius"));
  items.push_back(audit("gamma", c.tracer.gamma, 0.99, "discount factor"));
  items.push_back(audit("learning_rate", c.learning_rate, 0.001, "Adam learning rate"));
  items.push_back(audit("max_turns", c.env.max_turns, 20, "dialogue length limit"));
  items.push_back(audit("turn_penalty", c.env.turn_penalty, 0.05, "per-turn reward"));
  items.push_back(audit("success_reward", c.env.success_reward, 1.0, "reward for a successful dialogue"));
  items.push_back(audit("hidden_layers", static_cast<int>(c.hidden_dims.size()), 2, "number of hidden layers"));
  items.push_back(audit("hidden_dims[0]", c.hidden_dims.empty() ? 0 : c.hidden_dims[0], 130, "first hidden width"));
  items.push_back(audit("hidden_dims[1]", c.hidden_dims.size() < 2 ? 0 : c.hidden_dims[1], 50, "second hidden width"));
  return items;
}

}  // namespace dpo
