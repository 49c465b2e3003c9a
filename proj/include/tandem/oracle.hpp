#pragma once

// Ground truth for tests: exact value iteration on enumerable environments
// and Monte-Carlo rollout estimates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "tandem/agent.hpp"
#include "tandem/env.hpp"
#include "tandem/error.hpp"
#include "tandem/neural.hpp"
#include "tandem/rng.hpp"

namespace tandem {

/// Deterministic tabular MDP. Terminal states self-loop with zero reward.
struct TabularMDP {
  int num_states = 0;
  int num_actions = 0;
  std::vector<int> successor;     // [s * num_actions + a]
  std::vector<double> reward;     // [s * num_actions + a]
  std::vector<bool> terminal;     // [s]

  int next(int s, int a) const { return successor[static_cast<std::size_t>(s * num_actions + a)]; }
  double r(int s, int a) const { return reward[static_cast<std::size_t>(s * num_actions + a)]; }
  bool is_terminal(int s) const { return terminal[static_cast<std::size_t>(s)]; }
  int terminal_count() const { return static_cast<int>(std::count(terminal.begin(), terminal.end(), true)); }
};

struct QTable {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> values;

  QTable() = default;
  QTable(int states, int actions)
      : num_states(states), num_actions(actions),
        values(static_cast<std::size_t>(states * actions), 0.0) {}

  double& operator()(int s, int a) { return values[static_cast<std::size_t>(s * num_actions + a)]; }
  double operator()(int s, int a) const { return values[static_cast<std::size_t>(s * num_actions + a)]; }

  double max(int s) const {
    double best = (*this)(s, 0);
    for (int a = 1; a < num_actions; ++a) best = std::max(best, (*this)(s, a));
    return best;
  }
};

/// Tabulates a GridWorld by placing it in every cell and stepping each action
/// on a private copy. The environment must be sticky-free.
inline TabularMDP enumerate_mdp(const Environment& env) {
  if (dynamic_cast<const GridWorld*>(&env.dynamics()) == nullptr) {
    throw UsageError("enumerate_mdp: '" + std::string(env.name()) + "' is not enumerable");
  }
  if (env.sticky().repeat_probability != 0.0) {
    throw UsageError("enumerate_mdp: sticky actions make the model stochastic");
  }
  const EnvSpec spec = env.spec();
  TabularMDP mdp;
  mdp.num_states = GridWorld::kNumCells;
  mdp.num_actions = spec.num_actions;
  mdp.successor.resize(static_cast<std::size_t>(mdp.num_states * mdp.num_actions));
  mdp.reward.resize(mdp.successor.size());
  mdp.terminal.assign(static_cast<std::size_t>(mdp.num_states), false);
  mdp.terminal[GridWorld::kGoalCell] = true;

  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      const auto i = static_cast<std::size_t>(s * mdp.num_actions + a);
      if (mdp.is_terminal(s)) {
        mdp.successor[i] = s;
        mdp.reward[i] = 0.0;
        continue;
      }
      Environment probe = env;
      probe.reset();
      static_cast<GridWorld&>(probe.dynamics()).place(s);
      const StepResult res = probe.step(a);
      mdp.successor[i] = static_cast<const GridWorld&>(probe.dynamics()).cell();
      mdp.reward[i] = res.reward;
    }
  }
  return mdp;
}

/// Iterates Q(s,a) <- r(s,a) + γ max_a' Q(s',a') until the sup-norm change
/// drops below `tol`. Terminal rows stay at zero.
inline QTable value_iteration(const TabularMDP& mdp, double gamma, double tol = 1e-10) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw UsageError("value_iteration: gamma must lie in [0, 1)");
  if (!(tol > 0.0)) throw UsageError("value_iteration: tol must be positive");
  QTable q(mdp.num_states, mdp.num_actions);
  for (;;) {
    QTable next(mdp.num_states, mdp.num_actions);
    double change = 0.0;
    for (int s = 0; s < mdp.num_states; ++s) {
      if (mdp.is_terminal(s)) continue;
      for (int a = 0; a < mdp.num_actions; ++a) {
        const int sp = mdp.next(s, a);
        const double bootstrap = mdp.is_terminal(sp) ? 0.0 : q.max(sp);
        next(s, a) = mdp.r(s, a) + gamma * bootstrap;
        change = std::max(change, std::abs(next(s, a) - q(s, a)));
      }
    }
    q = std::move(next);
    if (change < tol) return q;
  }
}

/// Largest |Q - TQ| over all state-action pairs.
inline double bellman_residual(const TabularMDP& mdp, const QTable& q, double gamma) {
  double worst = 0.0;
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      double backup = 0.0;
      if (!mdp.is_terminal(s)) {
        const int sp = mdp.next(s, a);
        backup = mdp.r(s, a) + gamma * (mdp.is_terminal(sp) ? 0.0 : q.max(sp));
      }
      worst = std::max(worst, std::abs(q(s, a) - backup));
    }
  }
  return worst;
}

/// Fraction of non-terminal states whose greedy network action is optimal
/// under `q_star` (any action attaining the max, up to `tie_tol`, counts).
inline double policy_match(const NetworkParams& net, const QTable& q_star, const TabularMDP& mdp,
                           double tie_tol = 1e-9) {
  if (net.input_dim() != mdp.num_states) {
    throw UsageError("policy_match: network input must be the one-hot state encoding");
  }
  int matched = 0;
  int counted = 0;
  for (int s = 0; s < mdp.num_states; ++s) {
    if (mdp.is_terminal(s)) continue;
    const Observation obs = GridWorld::one_hot(s);
    const int a = greedy_action(forward_one(net, obs));
    ++counted;
    if (q_star(s, a) >= q_star.max(s) - tie_tol) ++matched;
  }
  return counted == 0 ? 1.0 : static_cast<double>(matched) / counted;
}

/// The ε-greedy policy induced by a Q-network.
struct EpsilonGreedyPolicy {
  const NetworkParams* params = nullptr;
  double epsilon = 0.0;

  int operator()(const Observation& obs, Rng& rng) const {
    return select_action(*params, obs, epsilon, rng);
  }
};

/// Greedy policy of a tabular Q on GridWorld one-hot observations.
struct TabularGreedyPolicy {
  const QTable* q = nullptr;

  int operator()(const Observation& obs, Rng&) const {
    const auto cell = static_cast<int>(std::find(obs.begin(), obs.end(), 1.0) - obs.begin());
    int best = 0;
    for (int a = 1; a < q->num_actions; ++a) {
      if ((*q)(cell, a) > (*q)(cell, best)) best = a;
    }
    return best;
  }
};

struct RolloutEstimate {
  double mean = 0.0;
  /// Standard error of the mean; 0 for a single episode.
  double standard_error = 0.0;
  int episodes = 0;
};

/// Mean return over `episodes` fresh episodes. Discounted when `gamma` is
/// given, undiscounted otherwise.
template <typename Policy>
RolloutEstimate rollout_value(std::string_view env_name, StickyConfig sticky, const Policy& policy,
                              int episodes, std::optional<double> gamma, std::uint64_t seed) {
  if (episodes < 1) throw UsageError("rollout_value: episodes must be >= 1");
  Environment env = make_env(env_name, sticky, derive_seed(seed, "rollout-env"));
  Rng rng(derive_seed(seed, "rollout-policy"));
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Observation obs = env.reset();
    double ret = 0.0;
    double discount = 1.0;
    for (;;) {
      const StepResult res = env.step(policy(obs, rng));
      ret += discount * res.reward;
      if (gamma) discount *= *gamma;
      if (res.terminal || res.truncated) break;
      obs = res.observation;
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  RolloutEstimate est;
  est.episodes = episodes;
  est.mean = sum / episodes;
  if (episodes > 1) {
    const double var = std::max(0.0, (sum_sq - episodes * est.mean * est.mean) / (episodes - 1));
    est.standard_error = std::sqrt(var / episodes);
  }
  return est;
}

}  // namespace tandem
