#pragma once

// Q-learning pieces shared by the active and passive learners: transitions,
// replay, epsilon-greedy selection and bootstrap-target construction.

#include <algorithm>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "tandem/env.hpp"
#include "tandem/error.hpp"
#include "tandem/neural.hpp"
#include "tandem/rng.hpp"

namespace tandem {

struct Transition {
  Observation state;
  int action = 0;
  double reward = 0.0;
  Observation next_state;
  /// Episode ended here (true termination or step-limit truncation).
  bool terminal = false;
  /// Action actually taken in next_state; only meaningful for on-policy data.
  int next_action = 0;
  std::optional<double> mc_return;

  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Fixed-capacity FIFO ring with uniform sampling over filled slots.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw UsageError("replay capacity must be positive");
    slots_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }

  void push(Transition t) {
    if (slots_.size() < capacity_) {
      slots_.push_back(std::move(t));
    } else {
      slots_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  /// Storage slot access (not chronological).
  const Transition& slot(std::size_t i) const { return slots_.at(i); }

  /// i-th oldest stored transition.
  const Transition& at(std::size_t i) const {
    if (i >= slots_.size()) throw UsageError("replay index out of range");
    const std::size_t oldest = slots_.size() < capacity_ ? 0 : cursor_;
    return slots_[(oldest + i) % capacity_];
  }

  /// Uniform with replacement over filled slots; returns slot indices.
  std::vector<std::size_t> sample_indices(std::size_t batch_size, Rng& rng) const {
    if (slots_.empty()) throw UsageError("cannot sample from an empty replay buffer");
    std::vector<std::size_t> idx(batch_size);
    for (auto& i : idx) i = rng.below(static_cast<std::uint64_t>(slots_.size()));
    return idx;
  }

  std::vector<Transition> sample(std::size_t batch_size, Rng& rng) const {
    std::vector<Transition> out;
    out.reserve(batch_size);
    for (std::size_t i : sample_indices(batch_size, rng)) out.push_back(slots_[i]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> slots_;
  std::size_t cursor_ = 0;
};

inline void replay_push(ReplayBuffer& buffer, Transition t) { buffer.push(std::move(t)); }

inline std::vector<Transition> replay_sample(const ReplayBuffer& buffer, std::size_t batch_size,
                                             Rng& rng) {
  return buffer.sample(batch_size, rng);
}

/// Training epsilon, optionally annealed linearly from `start` over
/// `warmup_steps`, and the evaluation epsilon.
struct EpsilonSchedule {
  double train = 0.1;
  double eval = 0.05;
  double start = 1.0;
  long warmup_steps = 0;

  double train_at(long step) const {
    if (warmup_steps <= 0 || step >= warmup_steps) return train;
    const double frac = static_cast<double>(step) / static_cast<double>(warmup_steps);
    return start + (train - start) * frac;
  }
};

enum class TargetVariant {
  vanilla,
  same_target_q,
  same_target_pi,
  same_target_both,
  sarsa,
  monte_carlo,
  distill
};

inline std::string_view to_string(TargetVariant v) {
  switch (v) {
    case TargetVariant::vanilla: return "vanilla";
    case TargetVariant::same_target_q: return "same_target_q";
    case TargetVariant::same_target_pi: return "same_target_pi";
    case TargetVariant::same_target_both: return "same_target_both";
    case TargetVariant::sarsa: return "sarsa";
    case TargetVariant::monte_carlo: return "monte_carlo";
    case TargetVariant::distill: return "distill";
  }
  return "?";
}

inline std::optional<TargetVariant> parse_target_variant(std::string_view s) {
  for (auto v : {TargetVariant::vanilla, TargetVariant::same_target_q, TargetVariant::same_target_pi,
                 TargetVariant::same_target_both, TargetVariant::sarsa, TargetVariant::monte_carlo,
                 TargetVariant::distill}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

/// Index of the largest entry; ties go to the lowest index.
template <typename Row>
int greedy_action(const Row& q) {
  int best = 0;
  for (int a = 1; a < static_cast<int>(q.size()); ++a) {
    if (q(a) > q(best)) best = a;
  }
  return best;
}

inline int select_action(const NetworkParams& params, std::span<const double> obs, double epsilon,
                         Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw UsageError("epsilon must lie in [0, 1]");
  if (rng.uniform() < epsilon) return rng.below(params.output_dim());
  return greedy_action(forward_one(params, obs));
}

/// Column-stacked view of a list of transitions, ready for the networks.
struct Batch {
  Matrix states;
  std::vector<int> actions;
  Vector rewards;
  Matrix next_states;
  std::vector<bool> terminal;
  std::vector<int> next_actions;
  std::vector<std::optional<double>> mc_returns;

  std::size_t size() const { return actions.size(); }
};

template <typename Range>
Batch make_batch(const Range& transitions) {
  const std::size_t n = std::size(transitions);
  if (n == 0) throw UsageError("make_batch: no transitions");
  auto first = [&]() -> const Transition& {
    const auto& t = *std::begin(transitions);
    if constexpr (std::is_pointer_v<std::decay_t<decltype(t)>>) {
      return *t;
    } else {
      return t;
    }
  };
  const auto dim = static_cast<Eigen::Index>(first().state.size());
  Batch b;
  b.states.resize(static_cast<Eigen::Index>(n), dim);
  b.next_states.resize(static_cast<Eigen::Index>(n), dim);
  b.rewards.resize(static_cast<Eigen::Index>(n));
  b.actions.reserve(n);
  b.terminal.reserve(n);
  b.next_actions.reserve(n);
  b.mc_returns.reserve(n);
  Eigen::Index r = 0;
  for (const auto& item : transitions) {
    const Transition* t = nullptr;
    if constexpr (std::is_pointer_v<std::decay_t<decltype(item)>>) {
      t = item;
    } else {
      t = &item;
    }
    if (static_cast<Eigen::Index>(t->state.size()) != dim ||
        static_cast<Eigen::Index>(t->next_state.size()) != dim) {
      throw UsageError("make_batch: inconsistent observation lengths");
    }
    for (Eigen::Index c = 0; c < dim; ++c) {
      b.states(r, c) = t->state[static_cast<std::size_t>(c)];
      b.next_states(r, c) = t->next_state[static_cast<std::size_t>(c)];
    }
    b.rewards(r) = t->reward;
    b.actions.push_back(t->action);
    b.terminal.push_back(t->terminal);
    b.next_actions.push_back(t->next_action);
    b.mc_returns.push_back(t->mc_return);
    ++r;
  }
  return b;
}

/// The four value functions of a tandem pair, as seen by a passive update.
struct ValueFunctions {
  const NetworkParams& active_online;
  const NetworkParams& active_target;
  const NetworkParams& passive_online;
  const NetworkParams& passive_target;
};

/// Regression targets for the learner whose online/target nets are the
/// passive ones in `nets`. Scalar targets come back as batch x 1; `distill`
/// returns the full batch x actions output of the active online net.
inline Matrix compute_targets(TargetVariant variant, const Batch& batch, const ValueFunctions& nets,
                              double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw UsageError("discount must lie in [0, 1)");
  const auto rows = static_cast<Eigen::Index>(batch.size());

  if (variant == TargetVariant::distill) return forward(nets.active_online, batch.states);

  Matrix targets(rows, 1);
  if (variant == TargetVariant::monte_carlo) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto& g = batch.mc_returns[static_cast<std::size_t>(r)];
      if (!g) throw UsageError("monte_carlo target requires a backfilled return");
      targets(r, 0) = *g;
    }
    return targets;
  }

  const NetworkParams* selector = nullptr;
  const NetworkParams* evaluator = nullptr;
  switch (variant) {
    case TargetVariant::vanilla:
      selector = &nets.passive_online;
      evaluator = &nets.passive_target;
      break;
    case TargetVariant::same_target_q:
      selector = &nets.passive_online;
      evaluator = &nets.active_target;
      break;
    case TargetVariant::same_target_pi:
      selector = &nets.active_online;
      evaluator = &nets.passive_target;
      break;
    case TargetVariant::same_target_both:
      selector = &nets.active_online;
      evaluator = &nets.active_target;
      break;
    case TargetVariant::sarsa:
      evaluator = &nets.passive_target;
      break;
    default:
      break;
  }

  const Matrix next_values = forward(*evaluator, batch.next_states);
  Matrix next_selector;
  if (selector) next_selector = forward(*selector, batch.next_states);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto i = static_cast<std::size_t>(r);
    double bootstrap = 0.0;
    if (!batch.terminal[i]) {
      const int a = selector ? greedy_action(next_selector.row(r)) : batch.next_actions[i];
      if (a < 0 || a >= next_values.cols()) throw UsageError("next action out of range");
      bootstrap = next_values(r, a);
    }
    targets(r, 0) = batch.rewards(r) + gamma * bootstrap;
  }
  return targets;
}

/// Double-DQN target for a learner bootstrapping from its own nets.
inline Matrix double_dqn_targets(const Batch& batch, const NetworkParams& online,
                                 const NetworkParams& target, double gamma) {
  return compute_targets(TargetVariant::vanilla, batch, {online, target, online, target}, gamma);
}

/// Discounted returns G_t = r_t + γ G_{t+1}, computed backward. The episode's
/// last transition bootstraps 0, whether it terminated or was truncated.
inline void backfill_mc_returns(std::span<Transition> episode, double gamma) {
  double g = 0.0;
  for (auto it = episode.rbegin(); it != episode.rend(); ++it) {
    g = it->reward + gamma * g;
    it->mc_return = g;
  }
}

}  // namespace tandem
