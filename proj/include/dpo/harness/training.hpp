#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dpo/core/error.hpp"
#include "dpo/core/random.hpp"
#include "dpo/env/action_mask.hpp"
#include "dpo/env/dialogue_env.hpp"
#include "dpo/env/rule_policy.hpp"
#include "dpo/harness/config.hpp"
#include "dpo/nn/adam.hpp"
#include "dpo/nn/checkpoint.hpp"
#include "dpo/nn/network.hpp"
#include "dpo/rl/actor_critic.hpp"
#include "dpo/rl/demonstration.hpp"
#include "dpo/rl/dqn.hpp"
#include "dpo/rl/enacer.hpp"
#include "dpo/rl/replay.hpp"

namespace dpo {

// ---------------------------------------------------------------------------
// Exploration
// ---------------------------------------------------------------------------

/// Linear interpolation from `start` at t = 0 to `end` at t = horizon, constant afterwards.
inline double epsilon_schedule(std::int64_t t, double start, double end, std::int64_t horizon) {
  if (t < 0) throw SpecError("epsilon_schedule: negative dialogue count");
  if (t >= horizon) return end;
  return start + (end - start) * static_cast<double>(t) / static_cast<double>(horizon);
}

inline double epsilon_schedule(std::int64_t t, const ExperimentConfig& cfg) {
  return epsilon_schedule(t, cfg.epsilon_start, cfg.epsilon_end, cfg.effective_epsilon_horizon());
}

/// Index of the largest entry; the lowest index wins ties. With a non-empty
/// mask only executable entries are considered.
inline int argmax(const Vector& v, const ActionMask& mask = {}) {
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(v.size())) throw ShapeError("argmax: mask size mismatch");
  int best = -1;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) continue;
    if (best < 0 || v[i] > v[best]) best = static_cast<int>(i);
  }
  if (best < 0) throw StateError("argmax: no executable action");
  return best;
}

inline int sample_categorical(const Vector& dist, Rng& rng) {
  const double u = uniform01(rng) * dist.sum();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < dist.size(); ++i) {
    acc += dist[i];
    if (u < acc) return static_cast<int>(i);
  }
  for (Eigen::Index i = dist.size(); i-- > 0;) {
    if (dist[i] > 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(dist.size() - 1);
}

struct BehaviourChoice {
  int action = 0;
  double mu = 1.0;  ///< probability the behaviour policy gave to `action`
};

/// Epsilon-greedy choice over `scores`: uniform over the executable actions
/// with probability epsilon, otherwise the executable argmax (or, with
/// `sample`, a draw from `scores` restricted to the executable actions and
/// renormalised). An empty mask allows every action.
inline BehaviourChoice behaviour_select(const Vector& scores, double epsilon, Rng& rng, bool sample = false,
                                        const ActionMask& mask = {}) {
  if (scores.size() == 0) throw ShapeError("behaviour_select: empty score vector");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw SpecError("behaviour_select: epsilon must lie in [0, 1]");
  const ActionMask allowed = mask.empty() ? all_executable(static_cast<int>(scores.size())) : mask;
  const int greedy = argmax(scores, allowed);
  std::vector<int> executable;
  Vector restricted = Vector::Zero(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!allowed[static_cast<std::size_t>(i)]) continue;
    executable.push_back(static_cast<int>(i));
    restricted[i] = scores[i];
  }
  const double mass = restricted.sum();
  const bool can_sample = sample && mass > 0.0;
  BehaviourChoice c;
  if (bernoulli(rng, epsilon)) {
    c.action = executable[uniform_index(rng, executable.size())];
  } else {
    c.action = can_sample ? sample_categorical(restricted, rng) : greedy;
  }
  const double exploit = can_sample ? restricted[c.action] / mass : (c.action == greedy ? 1.0 : 0.0);
  c.mu = epsilon / static_cast<double>(executable.size()) + (1.0 - epsilon) * exploit;
  return c;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

using GreedyPolicy = std::function<int(const Belief&)>;

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;
  double mean_turns = 0.0;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

/// `n` dialogues on fresh goals drawn from Rng(seed). Nothing outside the
/// local environment is modified. Transcripts are written when requested.
inline EvalResult evaluate(const GreedyPolicy& policy, std::shared_ptr<const Ontology> ontology,
                           const EnvConfig& env_cfg, int n, std::uint64_t seed, std::ostream* transcripts = nullptr) {
  if (n < 1) throw SpecError("evaluate: need at least one dialogue");
  DialogueEnv env(std::move(ontology), env_cfg);
  Rng rng(seed);
  EvalResult r;
  for (int i = 0; i < n; ++i) {
    Belief b = env.reset(rng);
    double ret = 0.0;
    while (!env.done()) {
      const auto step = env.step(policy(b));
      ret += step.reward;
      b = step.next_belief;
    }
    r.success_rate += env.success() ? 1.0 : 0.0;
    r.mean_return += ret;
    r.mean_turns += env.turn();
    if (transcripts != nullptr) env.write_transcript_jsonl(*transcripts, i);
  }
  r.success_rate /= n;
  r.mean_return /= n;
  r.mean_turns /= n;
  return r;
}

inline GreedyPolicy greedy_policy(const Network& net) {
  return [&net](const Belief& b) { return argmax(net.outputs(b)); };
}

/// Greedy over the actions executable in the current belief.
inline GreedyPolicy masked_greedy_policy(const Network& net, const BeliefLayout& layout) {
  return [&net, layout](const Belief& b) { return argmax(net.outputs(b), executable_actions(layout, b)); };
}

inline GreedyPolicy rule_based_policy(const BeliefLayout& layout) {
  return [layout](const Belief& b) { return rule_policy(layout, b); };
}

inline GreedyPolicy random_policy(int action_count, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  return [rng, action_count](const Belief&) {
    return static_cast<int>(uniform_index(*rng, static_cast<std::size_t>(action_count)));
  };
}

// ---------------------------------------------------------------------------
// Curves and CSV output
// ---------------------------------------------------------------------------

struct CurveRow {
  std::int64_t dialogues = 0;
  double success = 0.0;
  double mean_return = 0.0;
  double mean_turns = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const CurveRow&, const CurveRow&) = default;
};

struct LearningCurve {
  std::vector<CurveRow> rows;
};

/// Shortest text that parses back to exactly `x`.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& text) {
  double x = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), x);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) throw IoError("bad number '" + text + "'");
  return x;
}

inline constexpr const char* kCurveHeader = "dialogues,success,mean_return,mean_turns,seed";

inline void write_curve_rows(const LearningCurve& curve, std::ostream& out) {
  for (const auto& r : curve.rows) {
    out << r.dialogues << ',' << format_double(r.success) << ',' << format_double(r.mean_return) << ','
        << format_double(r.mean_turns) << ',' << r.seed << '\n';
  }
}

/// Writes the curve as CSV. With `append` an existing file gains rows and
/// keeps its header; otherwise the file is replaced.
inline void emit_curve(const LearningCurve& curve, const std::filesystem::path& path, bool append = false) {
  if (curve.rows.empty()) throw SpecError("emit_curve: empty curve");
  const bool header = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, append ? std::ios::app | std::ios::binary : std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write curve " + path.string());
  if (header) out << kCurveHeader << '\n';
  write_curve_rows(curve, out);
  if (!out) throw IoError("failed while writing curve " + path.string());
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline LearningCurve read_curve(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open curve " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) throw IoError(path.string() + ": missing curve header");
  LearningCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw IoError(path.string() + ": malformed row '" + line + "'");
    CurveRow r;
    r.dialogues = std::stoll(f[0]);
    r.success = parse_double(f[1]);
    r.mean_return = parse_double(f[2]);
    r.mean_turns = parse_double(f[3]);
    r.seed = std::stoull(f[4]);
    curve.rows.push_back(r);
  }
  return curve;
}

/// Violations of the curve invariants: success in [0, 1], returns within the
/// reward bounds, rows of each seed strictly increasing in dialogues.
inline std::vector<std::string> check_curve(const LearningCurve& curve, const EnvConfig& env) {
  std::vector<std::string> problems;
  const double lo = -env.turn_penalty * env.max_turns;
  const double hi = env.success_reward - env.turn_penalty;
  std::map<std::uint64_t, std::int64_t> last;
  for (const auto& r : curve.rows) {
    const std::string where = "seed " + std::to_string(r.seed) + " @" + std::to_string(r.dialogues);
    if (!(r.success >= 0.0 && r.success <= 1.0)) problems.push_back(where + ": success outside [0, 1]");
    if (!(r.mean_return >= lo - 1e-9 && r.mean_return <= hi + 1e-9)) problems.push_back(where + ": return out of bounds");
    const auto it = last.find(r.seed);
    if (it != last.end() && r.dialogues <= it->second) problems.push_back(where + ": rows not increasing");
    last[r.seed] = r.dialogues;
  }
  return problems;
}

struct AggregateRow {
  std::int64_t dialogues = 0;
  double mean_success = 0.0;
  double se_success = 0.0;
  double min_success = 0.0;
  double max_success = 0.0;
  double mean_return = 0.0;
  double mean_turns = 0.0;
  int n_seeds = 0;
};

/// Per-checkpoint statistics across seeds.
inline std::vector<AggregateRow> aggregate_curves(const std::vector<LearningCurve>& curves) {
  std::map<std::int64_t, std::vector<const CurveRow*>> by_checkpoint;
  for (const auto& c : curves) {
    for (const auto& r : c.rows) by_checkpoint[r.dialogues].push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (const auto& [dialogues, rows] : by_checkpoint) {
    AggregateRow a;
    a.dialogues = dialogues;
    a.n_seeds = static_cast<int>(rows.size());
    a.min_success = std::numeric_limits<double>::infinity();
    a.max_success = -std::numeric_limits<double>::infinity();
    for (const auto* r : rows) {
      a.mean_success += r->success / a.n_seeds;
      a.mean_return += r->mean_return / a.n_seeds;
      a.mean_turns += r->mean_turns / a.n_seeds;
      a.min_success = std::min(a.min_success, r->success);
      a.max_success = std::max(a.max_success, r->success);
    }
    if (a.n_seeds > 1) {
      double ss = 0.0;
      for (const auto* r : rows) ss += (r->success - a.mean_success) * (r->success - a.mean_success);
      a.se_success = std::sqrt(ss / (a.n_seeds - 1)) / std::sqrt(static_cast<double>(a.n_seeds));
    }
    out.push_back(a);
  }
  return out;
}

inline void emit_aggregate(const std::vector<AggregateRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "dialogues,mean_success,se_success,min_success,max_success,mean_return,mean_turns,n_seeds\n";
  for (const auto& a : rows) {
    out << a.dialogues << ',' << format_double(a.mean_success) << ',' << format_double(a.se_success) << ','
        << format_double(a.min_success) << ',' << format_double(a.max_success) << ',' << format_double(a.mean_return)
        << ',' << format_double(a.mean_turns) << ',' << a.n_seeds << '\n';
  }
}

/// One row per parameter update. Fields that do not apply to the learner are NaN.
struct DiagnosticsRow {
  std::uint64_t seed = 0;
  std::int64_t dialogues = 0;
  std::int64_t update = 0;
  double kl = std::nan("");
  double constraint_active = std::nan("");
  double policy_grad_norm = std::nan("");
  double projected_norm = std::nan("");
  double value_loss = std::nan("");
  double mean_rho = std::nan("");
  double enac_residual = std::nan("");
  double enac_rank = std::nan("");
  double natural_grad_norm = std::nan("");
  double dqn_loss = std::nan("");
};

inline void emit_diagnostics(const std::vector<DiagnosticsRow>& rows, const std::filesystem::path& path,
                             bool append = false) {
  const bool header = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, append ? std::ios::app | std::ios::binary : std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  auto cell = [](double x) { return std::isnan(x) ? std::string() : format_double(x); };
  if (header) {
    out << "seed,dialogues,update,kl,constraint_active,policy_grad_norm,projected_norm,value_loss,mean_rho,"
           "enac_residual,enac_rank,natural_grad_norm,dqn_loss\n";
  }
  for (const auto& r : rows) {
    out << r.seed << ',' << r.dialogues << ',' << r.update << ',' << cell(r.kl) << ',' << cell(r.constraint_active)
        << ',' << cell(r.policy_grad_norm) << ',' << cell(r.projected_norm) << ',' << cell(r.value_loss) << ','
        << cell(r.mean_rho) << ',' << cell(r.enac_residual) << ',' << cell(r.enac_rank) << ','
        << cell(r.natural_grad_norm) << ',' << cell(r.dqn_loss) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Networks and demonstrations
// ---------------------------------------------------------------------------

inline NetworkSpec policy_spec(const ExperimentConfig& cfg, const Ontology& o, std::uint64_t seed) {
  NetworkSpec s;
  s.input_dim = BeliefLayout(o).size;
  s.hidden_dims = cfg.hidden_dims;
  s.output = OutputHead::softmax(o.action_count());
  s.activation = cfg.activation;
  s.init_seed = derive_seed(seed, "policy-init");
  return s;
}

inline NetworkSpec value_spec(const ExperimentConfig& cfg, const Ontology& o, std::uint64_t seed) {
  NetworkSpec s = policy_spec(cfg, o, seed);
  s.output = OutputHead::scalar();
  s.init_seed = derive_seed(seed, "value-init");
  return s;
}

inline NetworkSpec q_spec(const ExperimentConfig& cfg, const Ontology& o, std::uint64_t seed) {
  NetworkSpec s = policy_spec(cfg, o, seed);
  s.output = OutputHead::linear(o.action_count());
  s.init_seed = derive_seed(seed, "q-init");
  return s;
}

/// The corpus named by the config, or one generated from the rule policy.
inline DemoCorpus load_or_generate_corpus(const ExperimentConfig& cfg, std::shared_ptr<const Ontology> ontology) {
  if (!cfg.corpus_path.empty()) return load_corpus(cfg.corpus_path);
  EnvConfig env = cfg.env_config();
  env.error_rate = cfg.corpus_error_rate;
  Rng rng(derive_seed(cfg.corpus_seed, "corpus"));
  return generate_corpus(std::move(ontology), env, cfg.corpus_dialogues, rng);
}

/// Supervised pre-training of a fresh policy for `seed`.
inline Network pretrained_policy(const ExperimentConfig& cfg, const Ontology& o, const DemoCorpus& corpus,
                                 std::uint64_t seed, SlTrace* trace = nullptr) {
  Network policy(policy_spec(cfg, o, seed));
  Rng rng(derive_seed(seed, "sl"));
  auto t = sl_pretrain(policy, corpus.split("train"), corpus.split("valid"), cfg.sl, rng);
  if (trace != nullptr) *trace = std::move(t);
  return policy;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct RunOptions {
  std::ostream* log = nullptr;
  std::filesystem::path checkpoint_dir;  ///< empty: no checkpoint files
  bool checkpoint_every_eval = false;
  bool record_diagnostics = true;
};

struct RunResult {
  LearningCurve curve;
  std::vector<DiagnosticsRow> diagnostics;
  std::optional<Network> policy;  ///< final policy (policy-based learners and sl_only)
  std::optional<Network> value;
  std::optional<Network> q;
  std::int64_t updates = 0;
  std::int64_t first_update_dialogue = -1;
  std::size_t samples_at_first_update = 0;
  std::size_t max_pool_size = 0;
};

namespace detail {

inline bool is_actor_critic(Learner l) { return l == Learner::a2c || l == Learner::a2c_er || l == Learner::tracer; }

inline ActorCriticVariant variant_of(Learner l) {
  switch (l) {
    case Learner::a2c: return ActorCriticVariant::a2c;
    case Learner::a2c_er: return ActorCriticVariant::a2c_er;
    default: return ActorCriticVariant::tracer;
  }
}

inline std::string checkpoint_name(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& what,
                                   std::int64_t dialogues) {
  std::string name = to_string(cfg.learner) + "_" + to_string(cfg.demo_mode) + "_seed" + std::to_string(seed);
  if (dialogues >= 0) name += "_d" + std::to_string(dialogues);
  return name + "_" + what + ".json";
}

}  // namespace detail

/// Train one learner for cfg.train_dialogues dialogues with seed `seed`,
/// evaluating the greedy policy at dialogue 0 and every cfg.eval_every
/// dialogues. `corpus` is required for every demonstration mode.
inline RunResult run_training(const ExperimentConfig& cfg, std::uint64_t seed, std::shared_ptr<const Ontology> ontology,
                              const DemoCorpus* corpus = nullptr, const RunOptions& options = {}) {
  cfg.validate();
  const Ontology& o = *ontology;
  const bool needs_corpus = cfg.demo_mode != DemoMode::none || cfg.learner == Learner::sl_only;
  if (needs_corpus && corpus == nullptr) throw SpecError("run_training: demonstration mode needs a corpus");

  const EnvConfig env_cfg = cfg.env_config();
  DialogueEnv env(ontology, env_cfg);
  const int n_actions = o.action_count();
  const bool actor_critic = detail::is_actor_critic(cfg.learner);
  const bool learns = actor_critic || cfg.learner == Learner::enacer || cfg.learner == Learner::dqn;

  Rng env_rng(derive_seed(seed, "train-env"));
  Rng behaviour_rng(derive_seed(seed, "behaviour"));
  Rng replay_rng(derive_seed(seed, "replay"));
  Rng demo_rng(derive_seed(seed, "demo"));

  std::optional<ActorCritic> ac;
  std::optional<Network> enac_policy;
  std::optional<AdamState> enac_opt;
  std::optional<AdamState> sl_step_opt;
  std::optional<QLearner> dqn;
  std::optional<Network> fixed_policy;

  TracerConfig tracer_cfg = cfg.tracer;
  EnacConfig enac_cfg = cfg.enac;
  DqnConfig dqn_cfg = cfg.dqn;

  std::optional<SupervisedPool> demos;
  if (uses_supervised_replay(cfg.demo_mode) || (cfg.learner == Learner::enacer && cfg.enacer_sl_step && corpus)) {
    demos = make_supervised_pool(*corpus, "train");
  }

  auto initial_policy = [&]() {
    if (uses_pretraining(cfg.demo_mode)) return pretrained_policy(cfg, o, *corpus, seed);
    return Network(policy_spec(cfg, o, seed));
  };

  if (actor_critic) {
    ac.emplace(initial_policy(), Network(value_spec(cfg, o, seed)), cfg.learning_rate);
  } else if (cfg.learner == Learner::enacer) {
    enac_policy.emplace(initial_policy());
    enac_opt.emplace(enac_policy->size(), cfg.learning_rate);
    if (demos) sl_step_opt.emplace(enac_policy->size(), cfg.learning_rate);
  } else if (cfg.learner == Learner::dqn) {
    dqn.emplace(Network(q_spec(cfg, o, seed)), cfg.learning_rate);
  } else if (cfg.learner == Learner::sl_only) {
    fixed_policy.emplace(pretrained_policy(cfg, o, *corpus, seed));
  }

  auto acting_net = [&]() -> const Network* {
    if (ac) return &ac->policy;
    if (enac_policy) return &*enac_policy;
    if (dqn) return &dqn->online;
    if (fixed_policy) return &*fixed_policy;
    return nullptr;
  };

  RunResult result;
  auto save_checkpoint = [&](std::int64_t dialogues) {
    if (options.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(options.checkpoint_dir);
    if (const Network* net = acting_net()) {
      save_network(*net, options.checkpoint_dir / detail::checkpoint_name(cfg, seed, dqn ? "q" : "policy", dialogues));
    }
    if (ac) save_network(ac->value, options.checkpoint_dir / detail::checkpoint_name(cfg, seed, "value", dialogues));
  };

  std::int64_t checkpoint_index = 0;
  auto run_eval = [&](std::int64_t dialogues) {
    const std::uint64_t eval_seed = derive_seed(seed, "eval", static_cast<std::uint64_t>(checkpoint_index));
    GreedyPolicy policy;
    if (const Network* net = acting_net()) {
      policy = cfg.action_masking ? masked_greedy_policy(*net, env.layout()) : greedy_policy(*net);
    } else if (cfg.learner == Learner::rule) {
      policy = rule_based_policy(env.layout());
    } else {
      policy = random_policy(n_actions, derive_seed(seed, "random-policy", static_cast<std::uint64_t>(checkpoint_index)));
    }
    const auto r = evaluate(policy, ontology, env_cfg, cfg.eval_dialogues, eval_seed);
    result.curve.rows.push_back({dialogues, r.success_rate, r.mean_return, r.mean_turns, seed});
    if (options.log != nullptr) {
      *options.log << to_string(cfg.learner) << '/' << to_string(cfg.demo_mode) << " seed " << seed << " dialogues "
                   << dialogues << " success " << r.success_rate << " return " << r.mean_return << " turns "
                   << r.mean_turns << '\n';
    }
    if (options.checkpoint_every_eval) save_checkpoint(dialogues);
    ++checkpoint_index;
  };

  run_eval(0);

  EpisodePool episodes(static_cast<std::size_t>(cfg.replay_capacity));
  TransitionPool transitions(static_cast<std::size_t>(cfg.replay_capacity));
  std::vector<Episode> recent;  // on-policy batch for a2c

  auto policy_objective = [&]() -> PolicyObjective {
    if (!demos) return {};
    return [&](const Network& policy, const Gradient& ascent) {
      const auto batch = demos->sample(static_cast<std::size_t>(cfg.combined.demo_batch), demo_rng);
      return combined_loss(ascent, policy, batch, cfg.combined);
    };
  };

  for (std::int64_t d = 1; d <= cfg.train_dialogues; ++d) {
    if (learns) {
      const double epsilon = epsilon_schedule(d - 1, cfg);
      Episode episode;
      Belief b = env.reset(env_rng);
      double ret = 0.0;
      while (!env.done()) {
        const ActionMask mask = cfg.action_masking ? executable_actions(env.layout(), b) : ActionMask{};
        BehaviourChoice choice;
        if (dqn) {
          choice = behaviour_select(dqn->online.outputs(b), epsilon, behaviour_rng, false, mask);
        } else {
          choice = behaviour_select(acting_net()->policy(b), epsilon, behaviour_rng, cfg.sample_behaviour, mask);
        }
        const auto step = env.step(choice.action);
        ret += step.reward;
        if (dqn) {
          ActionMask next_mask;
          if (cfg.action_masking && !step.done) next_mask = executable_actions(env.layout(), step.next_belief);
          transitions.push({b, choice.action, step.reward, step.next_belief, step.done, std::move(next_mask)});
        }
        episode.steps.push_back({std::move(b), choice.action, choice.mu, step.reward, mask});
        b = step.next_belief;
      }
      episode.total_return = ret;
      episode.validate(static_cast<std::size_t>(env_cfg.max_turns));
      if (cfg.learner == Learner::a2c) recent.push_back(episode);
      if (!dqn) episodes.push(std::move(episode));
      result.max_pool_size = std::max(result.max_pool_size, dqn ? transitions.size() : episodes.size());

      const std::size_t samples = dqn ? transitions.size() : static_cast<std::size_t>(d);
      const bool warm = samples >= static_cast<std::size_t>(cfg.warmup_samples());
      if (warm && d % cfg.update_period() == 0) {
        if (result.first_update_dialogue < 0) {
          result.first_update_dialogue = d;
          result.samples_at_first_update = samples;
        }
        DiagnosticsRow row;
        row.seed = seed;
        row.dialogues = d;
        row.update = result.updates;
        if (ac) {
          std::vector<const Episode*> batch;
          if (cfg.learner == Learner::a2c) {
            for (const auto& e : recent) batch.push_back(&e);
          } else {
            batch = episodes.sample(static_cast<std::size_t>(tracer_cfg.batch_episodes), replay_rng);
          }
          const auto diag =
              actor_critic_update(batch, *ac, tracer_cfg, detail::variant_of(cfg.learner), policy_objective());
          row.kl = cfg.learner == Learner::tracer ? diag.kl : std::nan("");
          row.constraint_active = cfg.learner == Learner::tracer ? (diag.constraint_active ? 1.0 : 0.0) : std::nan("");
          row.policy_grad_norm = diag.policy_grad_norm;
          row.projected_norm = diag.projected_norm;
          row.value_loss = diag.value_loss;
          row.mean_rho = diag.mean_rho;
        } else if (enac_policy) {
          const auto batch = episodes.sample(static_cast<std::size_t>(enac_cfg.batch_episodes), replay_rng);
          const auto diag = enacer_update(batch, *enac_policy, enac_cfg, *enac_opt);
          if (sl_step_opt) {
            const auto demo_batch = demos->sample(static_cast<std::size_t>(cfg.combined.demo_batch), demo_rng);
            const auto ce = cross_entropy_loss(*enac_policy, demo_batch);
            adam_step(*sl_step_opt, *enac_policy, ce.grad, Direction::descend);
          }
          row.enac_residual = diag.residual_norm;
          row.enac_rank = diag.effective_rank;
          row.natural_grad_norm = diag.natural_grad_norm;
        } else if (dqn) {
          const auto batch = transitions.sample(static_cast<std::size_t>(dqn_cfg.batch_size), replay_rng);
          row.dqn_loss = dqn_update(batch, *dqn, dqn_cfg);
        }
        ++result.updates;
        if (options.record_diagnostics) result.diagnostics.push_back(row);
        recent.clear();
        if (!acting_net()->all_finite()) throw NumericError("training produced non-finite parameters");
      }
      if (cfg.learner == Learner::a2c && static_cast<int>(recent.size()) > cfg.update_period()) {
        recent.erase(recent.begin());
      }
    }
    if (d % cfg.eval_every == 0) run_eval(d);
  }

  if (ac) {
    result.policy = ac->policy;
    result.value = ac->value;
  } else if (enac_policy) {
    result.policy = *enac_policy;
  } else if (fixed_policy) {
    result.policy = *fixed_policy;
  } else if (dqn) {
    result.q = dqn->online;
  }
  save_checkpoint(-1);
  return result;
}

// ---------------------------------------------------------------------------
// Error-rate sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  double error_rate = 0.0;
  std::string policy;  ///< random, sl, sl_rl
  std::uint64_t seed = 0;
  EvalResult result;
};

/// For every error rate and seed: the random policy, the supervised policy and
/// the supervised policy refined by `cfg.learner` with `cfg.demo_mode` for
/// cfg.train_dialogues dialogues, all evaluated on the same dialogues.
inline std::vector<SweepRow> run_error_sweep(const ExperimentConfig& cfg, const std::vector<double>& error_rates,
                                             std::shared_ptr<const Ontology> ontology, const DemoCorpus& corpus,
                                             std::ostream* log = nullptr) {
  // The refined row is only meaningful when RL starts from the supervised policy.
  if (cfg.demo_mode != DemoMode::pretrain && cfg.demo_mode != DemoMode::both) {
    throw SpecError("error sweep needs demo_mode pretrain or both, got " + to_string(cfg.demo_mode));
  }
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < error_rates.size(); ++i) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.error_rate = error_rates[i];
    run_cfg.eval_every = static_cast<int>(std::max<std::int64_t>(1, cfg.train_dialogues));
    run_cfg.validate();
    const EnvConfig env_cfg = run_cfg.env_config();
    for (std::uint64_t seed : cfg.seeds) {
      const std::uint64_t eval_seed = derive_seed(seed, "sweep-eval", i);
      const auto sl = pretrained_policy(run_cfg, *ontology, corpus, seed);
      RunOptions opts;
      opts.record_diagnostics = false;
      const auto trained = run_training(run_cfg, seed, ontology, &corpus, opts);
      const Network& refined = trained.policy ? *trained.policy : *trained.q;
      const auto r_random = evaluate(random_policy(ontology->action_count(), derive_seed(seed, "sweep-random", i)),
                                     ontology, env_cfg, cfg.eval_dialogues, eval_seed);
      const BeliefLayout layout(*ontology);
      auto greedy = [&](const Network& net) {
        return cfg.action_masking ? masked_greedy_policy(net, layout) : greedy_policy(net);
      };
      const auto r_sl = evaluate(greedy(sl), ontology, env_cfg, cfg.eval_dialogues, eval_seed);
      const auto r_rl = evaluate(greedy(refined), ontology, env_cfg, cfg.eval_dialogues, eval_seed);
      rows.push_back({error_rates[i], "random", seed, r_random});
      rows.push_back({error_rates[i], "sl", seed, r_sl});
      rows.push_back({error_rates[i], "sl_rl", seed, r_rl});
      if (log != nullptr) {
        *log << "error " << error_rates[i] << " seed " << seed << " random " << r_random.success_rate << " sl "
             << r_sl.success_rate << " sl_rl " << r_rl.success_rate << '\n';
      }
    }
  }
  return rows;
}

inline void emit_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "error_rate,policy,seed,success,mean_return,mean_turns\n";
  for (const auto& r : rows) {
    out << format_double(r.error_rate) << ',' << r.policy << ',' << r.seed << ',' << format_double(r.result.success_rate)
        << ',' << format_double(r.result.mean_return) << ',' << format_double(r.result.mean_turns) << '\n';
  }
}

}  // namespace dpo
