#pragma once

// Tandem and forked-tandem training runs.
//
// One run owns an active learner that generates all environment data and a
// passive learner that trains on that data without acting (except in
// self_data_mix, where it also feeds a replay of its own). Every source of
// randomness is a named stream derived from the master seed, so streams that a
// mode does not use leave the others untouched.

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "tandem/agent.hpp"
#include "tandem/config.hpp"
#include "tandem/env.hpp"
#include "tandem/metrics.hpp"
#include "tandem/neural.hpp"
#include "tandem/rng.hpp"

namespace tandem {

struct Learner {
  NetworkParams online;
  NetworkParams target;
  Optimizer optimizer;

  static Learner create(const NetworkConfig& net, const OptimizerSettings& opt, std::uint64_t seed) {
    Learner l;
    l.online = init_params(net, seed);
    l.target = l.online;
    l.optimizer = Optimizer(opt, l.online);
    return l;
  }
};

struct TandemPair {
  Learner active;
  Learner passive;
};

/// Starts passive training from the active learner. Without `fresh_init` the
/// passive nets become copies of the active online/target nets; with it the
/// passive online net is re-drawn from `seed` and its target synced to it.
/// The passive optimizer state restarts either way.
inline TandemPair fork(const TandemPair& pair, bool fresh_init, const NetworkConfig& net,
                       std::uint64_t seed) {
  TandemPair out = pair;
  if (fresh_init) {
    out.passive.online = init_params(net, seed);
    out.passive.target = out.passive.online;
  } else {
    out.passive.online = pair.active.online;
    out.passive.target = pair.active.target;
  }
  out.passive.optimizer = Optimizer(pair.passive.optimizer.settings(), out.passive.online);
  return out;
}

/// Restores the active learner (nets and optimizer state) to a snapshot.
inline void groundhog_reset(Learner& active, const Learner& snapshot) { active = snapshot; }

/// Mean undiscounted return of the ε-greedy policy of `params`, over whole
/// episodes run until at least `eval_steps` steps have elapsed.
inline double evaluate(const NetworkParams& params, std::string_view env_name, StickyConfig sticky,
                       double epsilon, int eval_steps, std::uint64_t seed) {
  if (eval_steps < 1) throw UsageError("evaluate: eval_steps must be >= 1");
  Environment env = make_env(env_name, sticky, derive_seed(seed, "eval-env"));
  Rng rng(derive_seed(seed, "eval-policy"));
  long steps = 0;
  double total = 0.0;
  int episodes = 0;
  while (steps < eval_steps) {
    Observation obs = env.reset();
    double ret = 0.0;
    for (;;) {
      const StepResult res = env.step(select_action(params, obs, epsilon, rng));
      ++steps;
      ret += res.reward;
      if (res.terminal || res.truncated) break;
      obs = res.observation;
    }
    total += ret;
    ++episodes;
  }
  return total / episodes;
}

/// Row-wise mixing: each row is independently replaced, with probability
/// p_self, by a uniform draw from `own`.
inline std::vector<const Transition*> mix_rows(std::vector<const Transition*> rows,
                                               const ReplayBuffer& own, double p_self, Rng& rng) {
  for (auto& row : rows) {
    if (rng.bernoulli(p_self)) {
      if (own.empty()) throw UsageError("self-data mixing needs a non-empty passive replay");
      row = &own.slot(rng.below(static_cast<std::uint64_t>(own.size())));
    }
  }
  return rows;
}

inline std::vector<const Transition*> draw_rows(const ReplayBuffer& replay, std::size_t n, Rng& rng) {
  std::vector<const Transition*> rows;
  rows.reserve(n);
  for (std::size_t i : replay.sample_indices(n, rng)) rows.push_back(&replay.slot(i));
  return rows;
}

/// The passive learner's training batch for `mode`. `frozen` is the fork-time
/// snapshot (fork_fixed_replay) and `passive` the passive agent's own replay
/// (self_data_mix) or on-policy replay (sarsa_eval, mc_eval).
inline std::vector<const Transition*> sample_training_batch(const ExperimentMode& mode,
                                                            const ReplayBuffer& active,
                                                            const ReplayBuffer* passive,
                                                            const ReplayBuffer* frozen,
                                                            std::size_t batch_size, Rng& rng) {
  switch (mode.kind) {
    case ModeKind::fork_fixed_replay:
      if (!frozen) throw UsageError("fork_fixed_replay: no frozen replay");
      return draw_rows(*frozen, batch_size, rng);
    case ModeKind::sarsa_eval:
    case ModeKind::mc_eval:
      if (!passive) throw UsageError("evaluation modes need the on-policy replay");
      return draw_rows(*passive, batch_size, rng);
    case ModeKind::self_data_mix:
      if (!passive) throw UsageError("self_data_mix needs the passive replay");
      return mix_rows(draw_rows(active, batch_size, rng), *passive, mode.p_self, rng);
    default:
      return draw_rows(active, batch_size, rng);
  }
}

/// One learner update tick, reported to an optional observer.
struct UpdateRecord {
  long index = 0;
  int iteration = 0;
  bool active_updated = false;
  int passive_updates = 0;
  std::span<const Transition* const> active_batch;
  std::span<const Transition* const> passive_batch;
  const Matrix* active_targets = nullptr;
  const Matrix* passive_targets = nullptr;
};

using UpdateObserver = std::function<void(const UpdateRecord&)>;

namespace detail {

// An ε-greedy actor with its own environment. Completed transitions are
// emitted one step late so that each carries the action actually taken next.
struct Actor {
  Environment env;
  Rng rng;
  Observation obs;
  std::optional<Transition> pending;

  Actor(Environment e, std::uint64_t seed) : env(std::move(e)), rng(seed) { obs = env.reset(); }

  template <typename Sink>
  void step(const NetworkParams& policy, double epsilon, Sink&& sink) {
    const int action = select_action(policy, obs, epsilon, rng);
    if (pending) {
      pending->next_action = action;
      sink(std::move(*pending));
      pending.reset();
    }
    StepResult res = env.step(action);
    Transition t{obs, action, res.reward, res.observation, res.terminal || res.truncated, 0, std::nullopt};
    if (t.terminal) {
      sink(std::move(t));
      obs = env.reset();
    } else {
      obs = std::move(res.observation);
      pending = std::move(t);
    }
  }
};

}  // namespace detail

class Experiment {
 public:
  explicit Experiment(const ExperimentConfig& config)
      : r_(validate_config(config)),
        c_(r_.config),
        actor_(make_env(c_.env, r_.sticky, derive_seed(c_.seed, "env")), derive_seed(c_.seed, "exploration")),
        active_replay_(static_cast<std::size_t>(c_.active_capacity)),
        replay_rng_(derive_seed(c_.seed, "replay-sampling")),
        passive_rng_(derive_seed(c_.seed, "passive-sampling")),
        passive_mask_(FreezeMask::all_trainable(r_.layer_count)),
        active_mask_(FreezeMask::all_trainable(r_.layer_count)) {
    pair_.active = Learner::create(r_.network, r_.optimizer, derive_seed(c_.seed, "init-active"));
    pair_.passive = Learner::create(r_.network, r_.optimizer, derive_seed(c_.seed, "init-passive"));

    const ModeKind kind = c_.mode.kind;
    if (kind == ModeKind::tied_layers) {
      passive_mask_ = FreezeMask::bottom_frozen(r_.layer_count, c_.mode.k);
      sync_params(pair_.active.online, pair_.passive.online, LayerSelection::bottom(c_.mode.k));
      sync_params(pair_.active.online, pair_.passive.target, LayerSelection::bottom(c_.mode.k));
    }
    if (kind == ModeKind::replay_size) {
      passive_replay_.emplace(static_cast<std::size_t>(c_.mode.passive_capacity));
    }
    if (kind == ModeKind::self_data_mix) {
      passive_replay_.emplace(static_cast<std::size_t>(c_.passive_capacity));
      passive_actor_.emplace(make_env(c_.env, r_.sticky, derive_seed(c_.seed, "passive-env")),
                             derive_seed(c_.seed, "passive-exploration"));
    }
    if (kind == ModeKind::sarsa_eval || kind == ModeKind::mc_eval) {
      passive_replay_.emplace(static_cast<std::size_t>(c_.passive_capacity));
    }
  }

  const ResolvedConfig& resolved() const { return r_; }
  const TandemPair& pair() const { return pair_; }
  const ReplayBuffer& active_replay() const { return active_replay_; }
  const ReplayBuffer* passive_replay() const { return passive_replay_ ? &*passive_replay_ : nullptr; }
  const ReplayBuffer* frozen_replay() const { return frozen_replay_ ? &*frozen_replay_ : nullptr; }
  long active_updates() const { return active_updates_; }
  long passive_updates() const { return passive_updates_; }

  void set_observer(UpdateObserver observer) { observer_ = std::move(observer); }
  /// Disables per-iteration evaluation (rows then carry zero returns). Used
  /// to check that evaluation does not perturb training.
  void set_evaluation_enabled(bool on) { evaluate_ = on; }
  /// Called after every iteration with the iteration index.
  void set_iteration_callback(std::function<void(int, const Experiment&)> cb) { on_iteration_ = std::move(cb); }

  std::vector<MetricsRow> run() {
    std::vector<MetricsRow> rows;
    rows.reserve(static_cast<std::size_t>(c_.iterations));
    for (int it = 0; it < c_.iterations; ++it) {
      const auto started = std::chrono::steady_clock::now();
      iteration_ = it;
      if (c_.mode.is_forked() && it == c_.mode.fork_iter) do_fork();

      loss_sum_ = {0.0, 0.0};
      loss_count_ = {0, 0};
      for (int s = 0; s < c_.steps_per_iteration; ++s) {
        generate_step();
        ++step_count_;
        if (step_count_ % c_.update_period == 0) update_tick();
      }

      MetricsRow row = measure(it);
      if (c_.mode.kind == ModeKind::groundhog && forked_) groundhog_reset(pair_.active, *fork_snapshot_);
      if (c_.wall_clock) {
        row.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      }
      rows.push_back(row);
      if (on_iteration_) on_iteration_(it, *this);
    }

    std::vector<double> ra, rp;
    for (const auto& row : rows) {
      ra.push_back(row.active_return);
      rp.push_back(row.passive_return);
    }
    const auto rel = relative_performance(ra, rp);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].relative_perf = rel[i];
    return rows;
  }

 private:
  bool active_trains() const {
    return !forked_ || c_.mode.kind == ModeKind::groundhog;
  }
  bool passive_trains() const { return !c_.mode.is_forked() || forked_; }

  double behaviour_epsilon() const {
    if (forked_ && c_.mode.kind != ModeKind::groundhog && c_.mode.fork_epsilon) return *c_.mode.fork_epsilon;
    return r_.epsilon.train_at(step_count_);
  }

  void do_fork() {
    pair_ = fork(pair_, c_.mode.fresh_init && c_.mode.kind == ModeKind::mc_eval, r_.network,
                 derive_seed(c_.seed, "init-fork"));
    forked_ = true;
    if (c_.mode.kind == ModeKind::fork_fixed_replay) frozen_replay_ = active_replay_;
    if (c_.mode.kind == ModeKind::groundhog) fork_snapshot_ = pair_.active;
  }

  void generate_step() {
    if (forked_ && c_.mode.kind == ModeKind::fork_fixed_replay) return;
    const bool on_policy_sink = forked_ && (c_.mode.kind == ModeKind::sarsa_eval || c_.mode.kind == ModeKind::mc_eval);
    actor_.step(pair_.active.online, behaviour_epsilon(), [&](Transition t) {
      if (on_policy_sink) {
        if (c_.mode.kind == ModeKind::mc_eval) {
          episode_.push_back(t);
          if (t.terminal) {
            backfill_mc_returns(episode_, c_.gamma);
            for (auto& e : episode_) passive_replay_->push(std::move(e));
            episode_.clear();
          }
        } else {
          passive_replay_->push(t);
        }
      }
      if (c_.mode.kind == ModeKind::replay_size) passive_replay_->push(t);
      active_replay_.push(std::move(t));
    });
    if (passive_actor_) {
      passive_actor_->step(pair_.passive.online, r_.epsilon.train_at(step_count_),
                           [&](Transition t) { passive_replay_->push(std::move(t)); });
    }
  }

  const ReplayBuffer& passive_source() const {
    switch (c_.mode.kind) {
      case ModeKind::fork_fixed_replay: return *frozen_replay_;
      case ModeKind::sarsa_eval:
      case ModeKind::mc_eval:
      case ModeKind::replay_size:
        return *passive_replay_;
      default:
        return active_replay_;
    }
  }

  std::vector<const Transition*> passive_rows(const std::vector<const Transition*>& shared) {
    const auto batch = static_cast<std::size_t>(c_.batch_size);
    switch (c_.mode.kind) {
      case ModeKind::replay_size:
      case ModeKind::fork_fixed_replay:
      case ModeKind::sarsa_eval:
      case ModeKind::mc_eval:
        return draw_rows(passive_source(), batch, passive_rng_);
      case ModeKind::self_data_mix:
        return mix_rows(shared, *passive_replay_, c_.mode.p_self, passive_rng_);
      default:
        if (!shared.empty()) return shared;
        return draw_rows(active_replay_, batch, replay_rng_);
    }
  }

  Matrix passive_targets(const Batch& batch) const {
    const ValueFunctions nets{pair_.active.online, pair_.active.target, pair_.passive.online,
                              pair_.passive.target};
    return compute_targets(c_.mode.passive_variant(), batch, nets, c_.gamma);
  }

  double apply_update(Learner& learner, const Batch& batch, const Matrix& targets, const FreezeMask& mask,
                      bool full_output) {
    auto result = full_output
                      ? loss_and_grads(learner.online, batch.states, targets, std::nullopt, mask)
                      : loss_and_grads(learner.online, batch.states, targets, std::span<const int>(batch.actions), mask);
    learner.optimizer.step(learner.online, result.grads, mask);
    return result.loss;
  }

  void passive_step(const Batch& batch, const Matrix& targets) {
    if (c_.mode.kind == ModeKind::tied_layers) {
      sync_params(pair_.active.online, pair_.passive.online, LayerSelection::bottom(c_.mode.k));
    }
    const bool full = c_.mode.passive_variant() == TargetVariant::distill;
    loss_sum_[1] += apply_update(pair_.passive, batch, targets, passive_mask_, full);
    ++loss_count_[1];
    ++passive_updates_;
  }

  void update_tick() {
    const bool act = active_trains() && active_replay_.size() >= static_cast<std::size_t>(c_.min_replay);
    bool pas = passive_trains();
    if (pas) {
      const ReplayBuffer& src = passive_source();
      pas = src.size() >= static_cast<std::size_t>(std::min<long>(c_.min_replay, static_cast<long>(src.capacity())));
      // Shared-batch modes wait for the active warm-up as well.
      if (&src == &active_replay_ && !act && active_trains()) pas = false;
      if (c_.mode.kind == ModeKind::self_data_mix && (passive_replay_->empty() || !act)) pas = false;
    }
    if (!act && !pas) return;

    const auto batch_size = static_cast<std::size_t>(c_.batch_size);
    std::vector<const Transition*> active_rows;
    if (act) active_rows = draw_rows(active_replay_, batch_size, replay_rng_);
    std::vector<const Transition*> prow;
    if (pas) prow = passive_rows(active_rows);

    // Both sets of targets come from the pre-update networks.
    std::optional<Batch> active_batch;
    Matrix active_targets;
    if (act) {
      active_batch = make_batch(active_rows);
      active_targets = double_dqn_targets(*active_batch, pair_.active.online, pair_.active.target, c_.gamma);
    }
    std::optional<Batch> pbatch;
    Matrix ptargets;
    if (pas) {
      pbatch = (act && prow == active_rows) ? *active_batch : make_batch(prow);
      ptargets = passive_targets(*pbatch);
    }

    if (act) {
      loss_sum_[0] += apply_update(pair_.active, *active_batch, active_targets, active_mask_, false);
      ++loss_count_[0];
      ++active_updates_;
    }
    int passive_done = 0;
    if (pas) {
      passive_step(*pbatch, ptargets);
      ++passive_done;
      if (c_.mode.kind == ModeKind::update_ratio) {
        for (int extra = 1; extra < c_.mode.n_passive; ++extra) {
          const auto rows = draw_rows(active_replay_, batch_size, passive_rng_);
          const Batch b = make_batch(rows);
          passive_step(b, passive_targets(b));
          ++passive_done;
        }
      }
    }

    if (observer_) {
      UpdateRecord rec;
      rec.index = updates_;
      rec.iteration = iteration_;
      rec.active_updated = act;
      rec.passive_updates = passive_done;
      rec.active_batch = active_rows;
      rec.passive_batch = prow;
      rec.active_targets = act ? &active_targets : nullptr;
      rec.passive_targets = pas ? &ptargets : nullptr;
      observer_(rec);
    }

    ++updates_;
    if (updates_ % c_.target_sync_period == 0) {
      if (act) pair_.active.target = pair_.active.online;
      if (pas) pair_.passive.target = pair_.passive.online;
    }
  }

  MetricsRow measure(int it) {
    MetricsRow row;
    row.iteration = it;
    const std::uint64_t eval_seed = derive_seed(c_.seed, "evaluation", static_cast<std::uint64_t>(it));
    if (evaluate_) {
      row.active_return = evaluate(pair_.active.online, c_.env, r_.sticky, r_.epsilon.eval, c_.eval_steps, eval_seed);
      row.passive_return = evaluate(pair_.passive.online, c_.env, r_.sticky, r_.epsilon.eval, c_.eval_steps, eval_seed);
    }
    Rng probe_rng(derive_seed(c_.seed, "probes", static_cast<std::uint64_t>(it)));
    const ReplayBuffer& probe_source = frozen_replay_ ? *frozen_replay_ : active_replay_;
    if (!probe_source.empty()) {
      const ProbeSet probes = ProbeSet::sample(probe_source, static_cast<std::size_t>(c_.n_probe), probe_rng);
      row.disagreement = policy_disagreement(pair_.active.online, pair_.passive.online, probes);
      row.overestimation = value_overestimation(pair_.active.online, pair_.passive.online, probes, c_.overestimation);
    }
    row.active_loss = loss_count_[0] ? loss_sum_[0] / static_cast<double>(loss_count_[0]) : 0.0;
    row.passive_loss = loss_count_[1] ? loss_sum_[1] / static_cast<double>(loss_count_[1]) : 0.0;
    if (c_.mode.kind == ModeKind::mc_eval && forked_ && !passive_replay_->empty()) {
      const auto rows = draw_rows(*passive_replay_, static_cast<std::size_t>(c_.n_probe), probe_rng);
      row.mc_error = mc_error(pair_.passive.online, rows);
    }
    return row;
  }

  ResolvedConfig r_;
  const ExperimentConfig& c_;
  TandemPair pair_;
  detail::Actor actor_;
  std::optional<detail::Actor> passive_actor_;
  ReplayBuffer active_replay_;
  std::optional<ReplayBuffer> passive_replay_;
  std::optional<ReplayBuffer> frozen_replay_;
  std::optional<Learner> fork_snapshot_;
  std::vector<Transition> episode_;
  Rng replay_rng_;
  Rng passive_rng_;
  FreezeMask passive_mask_;
  FreezeMask active_mask_;
  UpdateObserver observer_;
  std::function<void(int, const Experiment&)> on_iteration_;
  bool evaluate_ = true;
  bool forked_ = false;
  int iteration_ = 0;
  long step_count_ = 0;
  long updates_ = 0;
  long active_updates_ = 0;
  long passive_updates_ = 0;
  std::array<double, 2> loss_sum_{};
  std::array<long, 2> loss_count_{};
};

inline std::vector<MetricsRow> run_experiment(const ExperimentConfig& config, UpdateObserver observer = {}) {
  Experiment experiment(config);
  if (observer) experiment.set_observer(std::move(observer));
  return experiment.run();
}

}  // namespace tandem
