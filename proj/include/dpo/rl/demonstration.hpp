#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpo/core/error.hpp"
#include "dpo/core/random.hpp"
#include "dpo/env/dialogue_env.hpp"
#include "dpo/env/rule_policy.hpp"
#include "dpo/nn/adam.hpp"
#include "dpo/nn/network.hpp"
#include "dpo/rl/replay.hpp"

namespace dpo {

/// One labelled turn of a demonstration dialogue.
struct DemoExample : LabelledBelief {
  std::int64_t episode = 0;
  int turn = 0;
  double error_rate = 0.0;
  std::string split = "train";
};

struct DemoCorpus {
  std::vector<DemoExample> examples;

  std::vector<const LabelledBelief*> split(const std::string& name) const {
    std::vector<const LabelledBelief*> out;
    for (const auto& e : examples) {
      if (e.split == name) out.push_back(&e);
    }
    return out;
  }

  std::int64_t episode_count(const std::string& name) const {
    std::int64_t count = 0;
    std::int64_t last = -1;
    for (const auto& e : examples) {
      if (e.split == name && e.episode != last) {
        ++count;
        last = e.episode;
      }
    }
    return count;
  }
};

/// 4:1:1 train/valid/test assignment by episode index.
inline const char* split_for_episode(std::int64_t episode, std::int64_t n_episodes) {
  if (6 * episode < 4 * n_episodes) return "train";
  if (6 * episode < 5 * n_episodes) return "valid";
  return "test";
}

/// Runs the rule policy for `n_dialogues` dialogues and records every
/// (belief, action) pair it produced.
inline DemoCorpus generate_corpus(std::shared_ptr<const Ontology> ontology, const EnvConfig& env_cfg,
                                  std::int64_t n_dialogues, Rng& rng) {
  if (n_dialogues < 1) throw SpecError("generate_corpus: need at least one dialogue");
  DialogueEnv env(std::move(ontology), env_cfg);
  DemoCorpus corpus;
  for (std::int64_t i = 0; i < n_dialogues; ++i) {
    Belief b = env.reset(rng);
    while (!env.done()) {
      DemoExample ex;
      ex.belief = b;
      ex.label = rule_policy(env.layout(), b);
      ex.episode = i;
      ex.turn = env.turn();
      ex.error_rate = env_cfg.error_rate;
      ex.split = split_for_episode(i, n_dialogues);
      b = env.step(ex.label).next_belief;
      corpus.examples.push_back(std::move(ex));
    }
  }
  return corpus;
}

inline void write_corpus_jsonl(const DemoCorpus& corpus, std::ostream& out) {
  for (const auto& e : corpus.examples) {
    nlohmann::json j = {{"belief", std::vector<double>(e.belief.data(), e.belief.data() + e.belief.size())},
                        {"label", e.label},
                        {"episode", e.episode},
                        {"turn", e.turn},
                        {"split", e.split},
                        {"error_rate", e.error_rate}};
    out << j.dump() << '\n';
  }
}

inline void save_corpus(const DemoCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus " + path.string());
  write_corpus_jsonl(corpus, out);
  if (!out) throw IoError("failed while writing corpus " + path.string());
}

inline DemoCorpus read_corpus_jsonl(std::istream& in, const std::string& source = "corpus") {
  DemoCorpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DemoExample e;
      const auto belief = j.at("belief").get<std::vector<double>>();
      e.belief = Eigen::Map<const Vector>(belief.data(), static_cast<Eigen::Index>(belief.size()));
      e.label = j.at("label").get<int>();
      e.episode = j.at("episode").get<std::int64_t>();
      e.turn = j.at("turn").get<int>();
      e.split = j.at("split").get<std::string>();
      e.error_rate = j.value("error_rate", 0.0);
      if (e.split != "train" && e.split != "valid" && e.split != "test") {
        throw SpecError("unknown split '" + e.split + "'");
      }
      corpus.examples.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw IoError(source + ":" + std::to_string(line_no) + ": " + ex.what());
    } catch (const SpecError& ex) {
      throw IoError(source + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return corpus;
}

inline DemoCorpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus " + path.string());
  return read_corpus_jsonl(in, path.string());
}

/// Frozen pool over one split of a corpus.
inline SupervisedPool make_supervised_pool(const DemoCorpus& corpus, const std::string& split = "train") {
  std::vector<LabelledBelief> items;
  for (const auto* e : corpus.split(split)) items.push_back(*e);
  if (items.empty()) throw SpecError("supervised pool: split '" + split + "' is empty");
  return SupervisedPool(std::move(items));
}

// ---------------------------------------------------------------------------
// Supervised objective
// ---------------------------------------------------------------------------

struct CrossEntropy {
  double loss = 0.0;
  Gradient grad;
  double accuracy = 0.0;
};

inline Matrix stack_examples(const std::vector<const LabelledBelief*>& batch, Eigen::Index dim) {
  Matrix m(dim, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (batch[j]->belief.size() != dim) throw ShapeError("demonstration: belief dimension mismatch");
    m.col(static_cast<Eigen::Index>(j)) = batch[j]->belief;
  }
  return m;
}

/// Mean of -log pi(label | b) over the batch and its gradient.
inline CrossEntropy cross_entropy_loss(const Network& policy, const std::vector<const LabelledBelief*>& batch) {
  if (batch.empty()) throw SpecError("cross_entropy_loss: empty batch");
  const auto trace = policy.forward(stack_examples(batch, policy.spec().input_dim));
  if (trace.probabilities.size() == 0) throw SpecError("cross_entropy_loss: softmax head required");
  const Matrix log_p = Network::log_softmax_columns(trace.outputs());
  const double n = static_cast<double>(batch.size());
  Matrix dz = trace.probabilities / n;
  CrossEntropy out;
  int correct = 0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    const int label = batch[j]->label;
    policy.check_action(label);
    out.loss -= log_p(label, col) / n;
    dz(label, col) -= 1.0 / n;
    Eigen::Index top = 0;
    trace.probabilities.col(col).maxCoeff(&top);
    correct += top == label ? 1 : 0;
  }
  out.grad = policy.backward(trace, dz);
  out.accuracy = correct / n;
  return out;
}

/// Fraction of examples whose label is the policy's argmax action.
inline double action_accuracy(const Network& policy, const std::vector<const LabelledBelief*>& examples) {
  if (examples.empty()) throw SpecError("action_accuracy: no examples");
  const auto trace = policy.forward(stack_examples(examples, policy.spec().input_dim));
  int correct = 0;
  for (std::size_t j = 0; j < examples.size(); ++j) {
    Eigen::Index top = 0;
    trace.outputs().col(static_cast<Eigen::Index>(j)).maxCoeff(&top);
    correct += top == examples[j]->label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

struct SlConfig {
  int max_epochs = 100;
  int batch_size = 64;
  int patience = 10;  ///< epochs without validation improvement before stopping
  double lr = 0.001;
};

struct SlTrace {
  std::vector<double> train_loss;
  std::vector<double> valid_loss;
  std::vector<double> valid_accuracy;
  int best_epoch = -1;
};

/// Minibatch cross-entropy training on `train`; keeps the parameters with the
/// lowest validation loss. With an empty validation set the training set is
/// used for model selection.
inline SlTrace sl_pretrain(Network& policy, const std::vector<const LabelledBelief*>& train,
                           const std::vector<const LabelledBelief*>& valid, const SlConfig& cfg, Rng& rng) {
  if (train.empty()) throw SpecError("sl_pretrain: empty training split");
  const auto& select = valid.empty() ? train : valid;
  AdamState opt(policy.size(), cfg.lr);
  SlTrace trace;
  Vector best = policy.values();
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const LabelledBelief*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
      const auto ce = cross_entropy_loss(policy, batch);
      epoch_loss += ce.loss * static_cast<double>(batch.size());
      adam_step(opt, policy, ce.grad, Direction::descend);
    }
    trace.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    const auto held_out = cross_entropy_loss(policy, select);
    trace.valid_loss.push_back(held_out.loss);
    trace.valid_accuracy.push_back(held_out.accuracy);
    if (held_out.loss < best_loss) {
      best_loss = held_out.loss;
      best = policy.values();
      trace.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  policy.values() = best;
  return trace;
}

// ---------------------------------------------------------------------------
// Supervised replay
// ---------------------------------------------------------------------------

struct CombinedLossConfig {
  double lambda1 = 10.0;
  double lambda2 = 0.01;
  int demo_batch = 64;

  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0) throw SpecError("combined loss: lambdas must be non-negative");
    if (demo_batch < 1) throw SpecError("combined loss: demo batch must be positive");
  }
};

/// Gradient of  -J + lambda1 * L(demo) + lambda2 * ||theta||^2,  to be descended.
/// `grad_j` is the RL ascent direction.
inline Gradient combined_loss(const Gradient& grad_j, const Network& policy,
                              const std::vector<const LabelledBelief*>& demo_batch, const CombinedLossConfig& cfg) {
  if (grad_j.size() != policy.size()) throw ShapeError("combined_loss: gradient size mismatch");
  Gradient g = -grad_j;
  if (cfg.lambda1 != 0.0) g += cfg.lambda1 * cross_entropy_loss(policy, demo_batch).grad;
  if (cfg.lambda2 != 0.0) g += 2.0 * cfg.lambda2 * policy.values();
  return g;
}

}  // namespace dpo
