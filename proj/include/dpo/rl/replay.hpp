#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "dpo/core/error.hpp"
#include "dpo/core/random.hpp"
#include "dpo/nn/network.hpp"

namespace dpo {

/// One state transition, the replay unit of DQN.
struct Transition {
  Vector belief;
  int action = 0;
  double reward = 0.0;
  Vector next_belief;
  bool done = false;  ///< next_belief is terminal; its value is never bootstrapped
  ActionMask next_mask;  ///< actions executable in next_belief (empty: all)
};

/// One turn of a stored dialogue. `mu_prob` is the probability the behaviour
/// policy assigned to `action` when it was taken.
struct Step {
  Vector belief;
  int action = 0;
  double mu_prob = 1.0;
  double reward = 0.0;
  ActionMask mask;  ///< actions executable in `belief` (empty: all)
};

/// A whole dialogue, the replay unit of the policy-gradient learners.
struct Episode {
  std::vector<Step> steps;
  double total_return = 0.0;

  std::size_t length() const { return steps.size(); }

  void validate(std::size_t max_length = 20) const {
    if (steps.empty()) throw SpecError("episode: no steps");
    if (steps.size() > max_length) {
      throw SpecError("episode: " + std::to_string(steps.size()) + " steps exceeds the limit of " +
                      std::to_string(max_length));
    }
    for (const auto& s : steps) {
      if (!(s.mu_prob > 0.0 && s.mu_prob <= 1.0)) {
        throw SpecError("episode: behaviour probability must lie in (0, 1]");
      }
      if (!std::isfinite(s.reward)) throw NumericError("episode: non-finite reward");
      if (!s.mask.empty() && (s.action < 0 || static_cast<std::size_t>(s.action) >= s.mask.size() ||
                              !s.mask[static_cast<std::size_t>(s.action)])) {
        throw SpecError("episode: action not executable under the stored mask");
      }
    }
  }
};

/// Bounded FIFO pool sampled uniformly with replacement.
template <class T>
class ReplayPool {
 public:
  explicit ReplayPool(std::size_t capacity = 1000) : capacity_(capacity) {
    if (capacity == 0) throw SpecError("replay pool: capacity must be positive");
  }

  void push(T item) {
    items_.push_back(std::move(item));
    if (items_.size() > capacity_) items_.pop_front();
  }

  /// `n` items drawn uniformly with replacement. The pointers stay valid until
  /// the next push.
  std::vector<const T*> sample(std::size_t n, Rng& rng) const {
    if (items_.empty()) throw StateError("replay pool: cannot sample from an empty pool");
    std::vector<const T*> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[uniform_index(rng, items_.size())]);
    return out;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  const T& operator[](std::size_t i) const { return items_[i]; }
  const T& newest() const { return items_.back(); }
  void clear() { items_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
};

using EpisodePool = ReplayPool<Episode>;
using TransitionPool = ReplayPool<Transition>;

/// (belief, action label) pair from a demonstration corpus.
struct LabelledBelief {
  Vector belief;
  int label = 0;
};

/// Demonstration pool. Filled once, then frozen; never evicted or overwritten.
class SupervisedPool {
 public:
  SupervisedPool() = default;
  explicit SupervisedPool(std::vector<LabelledBelief> examples) : examples_(std::move(examples)) { freeze(); }

  void push(LabelledBelief example) {
    if (frozen_) throw StateError("supervised pool is frozen");
    examples_.push_back(std::move(example));
  }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  std::vector<const LabelledBelief*> sample(std::size_t n, Rng& rng) const {
    if (examples_.empty()) throw StateError("supervised pool: cannot sample from an empty pool");
    std::vector<const LabelledBelief*> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(&examples_[uniform_index(rng, examples_.size())]);
    return out;
  }

  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  const std::vector<LabelledBelief>& examples() const { return examples_; }

 private:
  std::vector<LabelledBelief> examples_;
  bool frozen_ = false;
};

}  // namespace dpo
