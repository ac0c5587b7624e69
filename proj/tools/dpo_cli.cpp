#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dpo/dpo.hpp"

namespace fs = std::filesystem;
using namespace dpo;

namespace {

/// Exit status for a violated invariant (bad curve, failed audit, library error).
constexpr int kViolation = 1;

/// Command-line overrides applied on top of the config file.
struct Overrides {
  std::string config_path;
  std::optional<std::string> learner;
  std::optional<std::string> demo_mode;
  std::optional<double> error_rate;
  std::optional<std::int64_t> dialogues;
  std::optional<int> eval_every;
  std::optional<int> eval_dialogues;
  std::vector<std::uint64_t> seeds;
  std::optional<double> lr;
  std::vector<int> hidden;
  std::optional<std::string> activation;
  std::optional<std::string> corpus;
  std::optional<double> corpus_error_rate;
  bool sample_behaviour = false;
  bool no_masking = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--learner", learner, "a2c | a2c_er | tracer | enacer | dqn | rule | random | sl_only");
    app->add_option("--demo-mode", demo_mode, "none | pretrain | replay | both");
    app->add_option("--error-rate", error_rate, "semantic error rate in [0, 1]");
    app->add_option("--dialogues", dialogues, "training dialogues");
    app->add_option("--eval-every", eval_every, "training dialogues between evaluations");
    app->add_option("--eval-dialogues", eval_dialogues, "dialogues per evaluation");
    app->add_option("--seeds", seeds, "seeds to run");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--hidden", hidden, "hidden layer widths");
    app->add_option("--activation", activation, "tanh | relu");
    app->add_option("--corpus", corpus, "demonstration corpus (JSONL); generated when absent");
    app->add_option("--corpus-error-rate", corpus_error_rate, "error rate used to generate the corpus");
    app->add_flag("--sample-behaviour", sample_behaviour, "exploit by sampling from pi instead of argmax");
    app->add_flag("--no-masking", no_masking, "let learners choose non-executable actions");
  }

  ExperimentConfig build() const {
    ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (learner) c.learner = parse_learner(*learner);
    if (demo_mode) c.demo_mode = parse_demo_mode(*demo_mode);
    if (error_rate) c.error_rate = *error_rate;
    if (dialogues) c.train_dialogues = *dialogues;
    if (eval_every) c.eval_every = *eval_every;
    if (eval_dialogues) c.eval_dialogues = *eval_dialogues;
    if (!seeds.empty()) c.seeds = seeds;
    if (lr) c.learning_rate = *lr;
    if (!hidden.empty()) c.hidden_dims = hidden;
    if (activation) {
      if (*activation != "tanh" && *activation != "relu") throw SpecError("activation must be tanh or relu");
      c.activation = *activation == "relu" ? Activation::relu : Activation::tanh;
    }
    if (corpus) c.corpus_path = *corpus;
    if (corpus_error_rate) c.corpus_error_rate = *corpus_error_rate;
    if (sample_behaviour) c.sample_behaviour = true;
    if (no_masking) c.action_masking = false;
    c.validate();
    return c;
  }
};

std::shared_ptr<const Ontology> desk() { return std::make_shared<const Ontology>(Ontology::desk()); }

bool needs_corpus(const ExperimentConfig& c) { return c.demo_mode != DemoMode::none || c.learner == Learner::sl_only; }

std::string run_name(const ExperimentConfig& c) { return to_string(c.learner) + "_" + to_string(c.demo_mode); }

int gen_demo(const Overrides& o, const fs::path& out, std::optional<std::int64_t> n) {
  ExperimentConfig c = o.build();
  if (n) c.corpus_dialogues = *n;
  c.corpus_path.clear();
  const auto corpus = load_or_generate_corpus(c, desk());
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_corpus(corpus, out);
  std::cout << "wrote " << corpus.examples.size() << " examples from " << c.corpus_dialogues << " dialogues to " << out
            << " (train " << corpus.episode_count("train") << ", valid " << corpus.episode_count("valid") << ", test "
            << corpus.episode_count("test") << " dialogues)\n";
  return 0;
}

int pretrain(const Overrides& o, const fs::path& out_dir) {
  const ExperimentConfig c = o.build();
  const auto ontology = desk();
  const auto corpus = load_or_generate_corpus(c, ontology);
  fs::create_directories(out_dir);
  for (std::uint64_t seed : c.seeds) {
    SlTrace trace;
    const Network policy = pretrained_policy(c, *ontology, corpus, seed, &trace);
    const auto path = out_dir / ("sl_seed" + std::to_string(seed) + "_policy.json");
    save_network(policy, path);
    const auto best = static_cast<std::size_t>(std::max(trace.best_epoch, 0));
    std::cout << "seed " << seed << " best epoch " << trace.best_epoch << " valid loss " << trace.valid_loss[best]
              << " valid accuracy " << trace.valid_accuracy[best] << " test accuracy "
              << action_accuracy(policy, corpus.split("test")) << " -> " << path.string() << '\n';
  }
  return 0;
}

int train(const Overrides& o, const fs::path& out_dir, bool checkpoints, bool quiet) {
  const ExperimentConfig c = o.build();
  const auto ontology = desk();
  std::optional<DemoCorpus> corpus;
  if (needs_corpus(c)) corpus = load_or_generate_corpus(c, ontology);
  fs::create_directories(out_dir);
  const std::string name = run_name(c);
  {
    std::ofstream cfg_out(out_dir / (name + "_config.json"));
    cfg_out << config_to_json(c).dump(2) << '\n';
  }
  std::vector<LearningCurve> curves;
  std::vector<std::string> problems;
  bool append = false;
  for (std::uint64_t seed : c.seeds) {
    RunOptions opts;
    opts.log = quiet ? nullptr : &std::cout;
    if (checkpoints) opts.checkpoint_dir = out_dir / "checkpoints";
    const auto r = run_training(c, seed, ontology, corpus ? &*corpus : nullptr, opts);
    for (auto& p : check_curve(r.curve, c.env_config())) problems.push_back(std::move(p));
    emit_curve(r.curve, out_dir / (name + "_curve.csv"), append);
    emit_diagnostics(r.diagnostics, out_dir / (name + "_diagnostics.csv"), append);
    append = true;
    curves.push_back(r.curve);
  }
  const auto agg = aggregate_curves(curves);
  emit_aggregate(agg, out_dir / (name + "_aggregate.csv"));
  const auto& last = agg.back();
  std::cout << name << " final @" << last.dialogues << ": success " << last.mean_success << " +- " << last.se_success
            << " over " << last.n_seeds << " seeds\n";
  for (const auto& p : problems) std::cerr << "invariant violated: " << p << '\n';
  return problems.empty() ? 0 : kViolation;
}

int eval(const Overrides& o, const std::string& policy, int n, std::uint64_t seed, const std::string& transcripts) {
  const ExperimentConfig c = o.build();
  const auto ontology = desk();
  const BeliefLayout layout(*ontology);
  std::optional<Network> net;
  GreedyPolicy chosen;
  if (policy == "rule") {
    chosen = rule_based_policy(layout);
  } else if (policy == "random") {
    chosen = random_policy(ontology->action_count(), derive_seed(seed, "random-policy"));
  } else {
    net = load_network(policy);
    if (net->spec().input_dim != layout.size) throw ShapeError("checkpoint input does not match the belief size");
    chosen = c.action_masking ? masked_greedy_policy(*net, layout) : greedy_policy(*net);
  }
  std::ofstream transcript_file;
  if (!transcripts.empty()) {
    transcript_file.open(transcripts, std::ios::binary);
    if (!transcript_file) throw IoError("cannot write " + transcripts);
  }
  const auto r = evaluate(chosen, ontology, c.env_config(), n, seed, transcripts.empty() ? nullptr : &transcript_file);
  std::cout << "success " << r.success_rate << " return " << r.mean_return << " turns " << r.mean_turns << " over " << n
            << " dialogues at error rate " << c.error_rate << '\n';
  const EnvConfig env = c.env_config();
  const bool sane = r.success_rate >= 0.0 && r.success_rate <= 1.0 &&
                    r.mean_return >= -env.turn_penalty * env.max_turns - 1e-9 &&
                    r.mean_return <= env.success_reward - env.turn_penalty + 1e-9;
  if (!sane) std::cerr << "invariant violated: evaluation statistics out of range\n";
  return sane ? 0 : kViolation;
}

int sweep(Overrides o, const std::vector<double>& rates, const fs::path& out) {
  if (!o.demo_mode && o.config_path.empty()) o.demo_mode = "both";
  const ExperimentConfig c = o.build();
  const auto ontology = desk();
  const auto corpus = load_or_generate_corpus(c, ontology);
  const auto rows = run_error_sweep(c, rates, ontology, corpus, &std::cout);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  emit_sweep(rows, out);
  std::cout << "wrote " << rows.size() << " rows to " << out.string() << '\n';
  for (const auto& r : rows) {
    if (r.result.success_rate < 0.0 || r.result.success_rate > 1.0) {
      std::cerr << "invariant violated: success outside [0, 1]\n";
      return kViolation;
    }
  }
  return 0;
}

int config_audit(const Overrides& o) {
  const ExperimentConfig c = o.build();
  const auto items = audit_config(c);
  std::size_t width = 0;
  for (const auto& i : items) width = std::max(width, i.name.size());
  int failures = 0;
  for (const auto& i : items) {
    std::cout << std::left << std::setw(static_cast<int>(width) + 2) << i.name << std::setw(10) << i.actual
              << "expected " << std::setw(10) << i.expected << (i.ok ? "ok    " : "DIFF  ") << i.meaning << '\n';
    failures += i.ok ? 0 : 1;
  }
  std::cout << items.size() - static_cast<std::size_t>(failures) << "/" << items.size() << " match the protocol\n";
  return failures == 0 ? 0 : kViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue policy optimisation toolkit"};
  app.require_subcommand(1);

  Overrides o;
  fs::path out = "out";
  std::optional<std::int64_t> n_dialogues;
  bool checkpoints = false;
  bool quiet = false;
  std::string policy;
  int eval_n = 600;
  std::uint64_t eval_seed = 1;
  std::string transcripts;
  std::vector<double> rates{0.0, 0.15, 0.30, 0.45};

  auto* gen = app.add_subcommand("gen-demo", "generate a demonstration corpus from the rule policy");
  o.attach(gen);
  gen->add_option("-o,--out", out, "output JSONL path")->required();
  gen->add_option("-n,--corpus-dialogues", n_dialogues, "dialogues to record");

  auto* pre = app.add_subcommand("pretrain", "supervised pre-training on the corpus, one policy per seed");
  o.attach(pre);
  pre->add_option("-o,--out", out, "output directory");

  auto* tr = app.add_subcommand("train", "train a learner and write learning curves");
  o.attach(tr);
  tr->add_option("-o,--out", out, "output directory");
  tr->add_flag("--checkpoints", checkpoints, "save networks at every evaluation");
  tr->add_flag("-q,--quiet", quiet, "no per-checkpoint log");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint or a reference policy");
  o.attach(ev);
  ev->add_option("-p,--policy", policy, "checkpoint path, 'rule' or 'random'")->required();
  ev->add_option("-n,--eval-n", eval_n, "dialogues")->check(CLI::PositiveNumber);
  ev->add_option("--seed", eval_seed, "evaluation seed");
  ev->add_option("--transcripts", transcripts, "write JSONL transcripts here");

  auto* sw = app.add_subcommand("sweep-error", "random vs SL vs SL+RL across error rates");
  o.attach(sw);
  sw->add_option("--rates", rates, "error rates")->check(CLI::Range(0.0, 1.0));
  sw->add_option("-o,--out", out, "output CSV path")->required();

  auto* cfg = app.add_subcommand("config", "inspect configurations");
  cfg->require_subcommand(1);
  auto* audit = cfg->add_subcommand("audit", "compare protocol constants with the reference values");
  o.attach(audit);
  auto* show = cfg->add_subcommand("show", "print the effective configuration as JSON");
  o.attach(show);
  auto* modes = cfg->add_subcommand("modes", "list the demonstration modes each learner supports");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return gen_demo(o, out, n_dialogues);
    if (pre->parsed()) return pretrain(o, out);
    if (tr->parsed()) return train(o, out, checkpoints, quiet);
    if (ev->parsed()) return eval(o, policy, eval_n, eval_seed, transcripts);
    if (sw->parsed()) return sweep(o, rates, out);
    if (audit->parsed()) return config_audit(o);
    if (show->parsed()) {
      std::cout << config_to_json(o.build()).dump(2) << '\n';
      return 0;
    }
    if (modes->parsed()) {
      std::cout << compatibility_table();
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kViolation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kViolation;
  }
  return 0;
}
