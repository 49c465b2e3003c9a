#pragma once

// Small episodic control environments with discrete actions.
//
// All environments are deterministic given their seed: the seed drives the
// initial-state distribution and the sticky-action coin flips, nothing else.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "tandem/error.hpp"
#include "tandem/rng.hpp"

namespace tandem {

using Observation = std::vector<double>;

struct EnvSpec {
  int obs_dim = 0;
  int num_actions = 0;
  int max_episode_steps = 0;

  friend bool operator==(const EnvSpec&, const EnvSpec&) = default;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool terminal = false;
  bool truncated = false;
};

struct StickyConfig {
  double repeat_probability = 0.0;
};

inline constexpr double kDefaultStickyProbability = 0.25;

/// Raw environment dynamics, without episode bookkeeping.
class Dynamics {
 public:
  struct Outcome {
    Observation observation;
    double reward = 0.0;
    bool terminal = false;
  };

  virtual ~Dynamics() = default;
  virtual std::string_view name() const = 0;
  virtual EnvSpec spec() const = 0;
  virtual Observation reset(Rng& rng) = 0;
  virtual Outcome advance(int action) = 0;
  virtual std::unique_ptr<Dynamics> clone() const = 0;
};

// Cart-pole balancing with the classic Barto/Sutton/Anderson constants and
// explicit Euler integration.
class CartPole final : public Dynamics {
 public:
  static constexpr double kGravity = 9.8;
  static constexpr double kMassCart = 1.0;
  static constexpr double kMassPole = 0.1;
  static constexpr double kTotalMass = kMassCart + kMassPole;
  static constexpr double kHalfLength = 0.5;
  static constexpr double kPoleMassLength = kMassPole * kHalfLength;
  static constexpr double kForceMag = 10.0;
  static constexpr double kTau = 0.02;
  static constexpr double kThetaThreshold = 12.0 * 2.0 * std::numbers::pi / 360.0;
  static constexpr double kXThreshold = 2.4;
  static constexpr int kMaxSteps = 200;
  static constexpr double kSuccessThreshold = 195.0;

  std::string_view name() const override { return "cartpole"; }
  EnvSpec spec() const override { return {4, 2, kMaxSteps}; }

  Observation reset(Rng& rng) override {
    for (double& v : state_) v = rng.uniform(-0.05, 0.05);
    return {state_.begin(), state_.end()};
  }

  Outcome advance(int action) override {
    auto [x, x_dot, theta, theta_dot] = state_;
    const double force = action == 1 ? kForceMag : -kForceMag;
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    const double temp = (force + kPoleMassLength * theta_dot * theta_dot * sin_t) / kTotalMass;
    const double theta_acc =
        (kGravity * sin_t - cos_t * temp) /
        (kHalfLength * (4.0 / 3.0 - kMassPole * cos_t * cos_t / kTotalMass));
    const double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;

    x += kTau * x_dot;
    x_dot += kTau * x_acc;
    theta += kTau * theta_dot;
    theta_dot += kTau * theta_acc;
    state_ = {x, x_dot, theta, theta_dot};

    const bool done = x < -kXThreshold || x > kXThreshold || theta < -kThetaThreshold ||
                      theta > kThetaThreshold;
    return {{state_.begin(), state_.end()}, 1.0, done};
  }

  std::unique_ptr<Dynamics> clone() const override { return std::make_unique<CartPole>(*this); }

 private:
  std::array<double, 4> state_{};
};

class MountainCar final : public Dynamics {
 public:
  static constexpr double kMinPosition = -1.2;
  static constexpr double kMaxPosition = 0.6;
  static constexpr double kMaxSpeed = 0.07;
  static constexpr double kGoalPosition = 0.5;
  static constexpr double kForce = 0.001;
  static constexpr double kGravity = 0.0025;
  static constexpr int kMaxSteps = 200;

  std::string_view name() const override { return "mountaincar"; }
  EnvSpec spec() const override { return {2, 3, kMaxSteps}; }

  Observation reset(Rng& rng) override {
    position_ = rng.uniform(-0.6, -0.4);
    velocity_ = 0.0;
    return {position_, velocity_};
  }

  Outcome advance(int action) override {
    velocity_ += (action - 1) * kForce + std::cos(3.0 * position_) * (-kGravity);
    velocity_ = std::clamp(velocity_, -kMaxSpeed, kMaxSpeed);
    position_ += velocity_;
    position_ = std::clamp(position_, kMinPosition, kMaxPosition);
    if (position_ == kMinPosition && velocity_ < 0.0) velocity_ = 0.0;
    const bool done = position_ >= kGoalPosition && velocity_ >= 0.0;
    return {{position_, velocity_}, -1.0, done};
  }

  std::unique_ptr<Dynamics> clone() const override { return std::make_unique<MountainCar>(*this); }

 private:
  double position_ = 0.0;
  double velocity_ = 0.0;
};

// Two-link underactuated swing-up ("book" dynamics), one RK4 step per action.
class Acrobot final : public Dynamics {
 public:
  static constexpr double kDt = 0.2;
  static constexpr double kLinkLength1 = 1.0;
  static constexpr double kLinkMass1 = 1.0;
  static constexpr double kLinkMass2 = 1.0;
  static constexpr double kLinkCom1 = 0.5;
  static constexpr double kLinkCom2 = 0.5;
  static constexpr double kLinkMoi = 1.0;
  static constexpr double kMaxVel1 = 4.0 * std::numbers::pi;
  static constexpr double kMaxVel2 = 9.0 * std::numbers::pi;
  static constexpr double kGravity = 9.8;
  static constexpr int kMaxSteps = 500;

  std::string_view name() const override { return "acrobot"; }
  EnvSpec spec() const override { return {6, 3, kMaxSteps}; }

  Observation reset(Rng& rng) override {
    for (double& v : state_) v = rng.uniform(-0.1, 0.1);
    return observe();
  }

  Outcome advance(int action) override {
    const double torque = static_cast<double>(action) - 1.0;
    State s = rk4(state_, torque);
    s[0] = wrap(s[0]);
    s[1] = wrap(s[1]);
    s[2] = std::clamp(s[2], -kMaxVel1, kMaxVel1);
    s[3] = std::clamp(s[3], -kMaxVel2, kMaxVel2);
    state_ = s;
    const bool done = -std::cos(s[0]) - std::cos(s[1] + s[0]) > 1.0;
    return {observe(), done ? 0.0 : -1.0, done};
  }

  std::unique_ptr<Dynamics> clone() const override { return std::make_unique<Acrobot>(*this); }

 private:
  using State = std::array<double, 4>;

  Observation observe() const {
    return {std::cos(state_[0]), std::sin(state_[0]), std::cos(state_[1]),
            std::sin(state_[1]), state_[2], state_[3]};
  }

  static double wrap(double x) {
    constexpr double pi = std::numbers::pi;
    const double range = 2.0 * pi;
    while (x > pi) x -= range;
    while (x < -pi) x += range;
    return x;
  }

  static State derivative(const State& s, double torque) {
    constexpr double m1 = kLinkMass1, m2 = kLinkMass2, l1 = kLinkLength1;
    constexpr double lc1 = kLinkCom1, lc2 = kLinkCom2, i1 = kLinkMoi, i2 = kLinkMoi;
    constexpr double g = kGravity;
    constexpr double half_pi = std::numbers::pi / 2.0;
    const auto [theta1, theta2, dtheta1, dtheta2] = s;
    const double d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * std::cos(theta2)) +
                      i1 + i2;
    const double d2 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(theta2)) + i2;
    const double phi2 = m2 * lc2 * g * std::cos(theta1 + theta2 - half_pi);
    const double phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * std::sin(theta2) -
                        2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * std::sin(theta2) +
                        (m1 * lc1 + m2 * l1) * g * std::cos(theta1 - half_pi) + phi2;
    const double ddtheta2 =
        (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * std::sin(theta2) - phi2) /
        (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    const double ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    return {dtheta1, dtheta2, ddtheta1, ddtheta2};
  }

  static State rk4(const State& s, double torque) {
    auto axpy = [](const State& y, double a, const State& k) {
      State out;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = y[i] + a * k[i];
      return out;
    };
    const State k1 = derivative(s, torque);
    const State k2 = derivative(axpy(s, kDt / 2.0, k1), torque);
    const State k3 = derivative(axpy(s, kDt / 2.0, k2), torque);
    const State k4 = derivative(axpy(s, kDt, k3), torque);
    State out;
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = s[i] + kDt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    return out;
  }

  State state_{};
};

/// Deterministic 5x5 grid. Cells are numbered row-major from the top-left
/// start cell (0,0); the goal (4,4) is terminal and pays +1 on entry.
/// Observations are one-hot cell indicators.
class GridWorld final : public Dynamics {
 public:
  static constexpr int kSize = 5;
  static constexpr int kNumCells = kSize * kSize;
  static constexpr int kStartCell = 0;
  static constexpr int kGoalCell = kNumCells - 1;
  static constexpr int kMaxSteps = 50;
  static constexpr double kGoalReward = 1.0;

  enum Action : int { kUp = 0, kRight = 1, kDown = 2, kLeft = 3 };

  std::string_view name() const override { return "gridworld"; }
  EnvSpec spec() const override { return {kNumCells, 4, kMaxSteps}; }

  Observation reset(Rng&) override {
    cell_ = kStartCell;
    return one_hot(cell_);
  }

  Outcome advance(int action) override {
    if (cell_ == kGoalCell) return {one_hot(cell_), 0.0, true};
    int row = cell_ / kSize;
    int col = cell_ % kSize;
    switch (action) {
      case kUp: row = std::max(row - 1, 0); break;
      case kRight: col = std::min(col + 1, kSize - 1); break;
      case kDown: row = std::min(row + 1, kSize - 1); break;
      case kLeft: col = std::max(col - 1, 0); break;
      default: throw UsageError("gridworld: invalid action");
    }
    cell_ = row * kSize + col;
    const bool reached = cell_ == kGoalCell;
    return {one_hot(cell_), reached ? kGoalReward : 0.0, reached};
  }

  std::unique_ptr<Dynamics> clone() const override { return std::make_unique<GridWorld>(*this); }

  int cell() const { return cell_; }

  /// Moves the agent to `cell` without touching episode bookkeeping. Used by
  /// model enumeration.
  Observation place(int cell) {
    if (cell < 0 || cell >= kNumCells) throw UsageError("gridworld: cell out of range");
    cell_ = cell;
    return one_hot(cell_);
  }

  static Observation one_hot(int cell) {
    Observation obs(kNumCells, 0.0);
    obs[static_cast<std::size_t>(cell)] = 1.0;
    return obs;
  }

 private:
  int cell_ = kStartCell;
};

/// Episode bookkeeping around a Dynamics: step limit, truncation, sticky
/// actions and call-order checks. Copyable; a copy continues independently
/// from the same state.
class Environment {
 public:
  Environment(std::unique_ptr<Dynamics> dynamics, StickyConfig sticky, std::uint64_t seed)
      : dynamics_(std::move(dynamics)), sticky_(sticky), rng_(seed), spec_(dynamics_->spec()) {
    if (!(sticky_.repeat_probability >= 0.0 && sticky_.repeat_probability <= 1.0)) {
      throw ConfigError("sticky repeat probability must lie in [0, 1]", "sticky");
    }
  }

  Environment(const Environment& other)
      : dynamics_(other.dynamics_->clone()),
        sticky_(other.sticky_),
        rng_(other.rng_),
        spec_(other.spec_),
        step_count_(other.step_count_),
        previous_action_(other.previous_action_),
        running_(other.running_),
        last_repeated_(other.last_repeated_) {}

  Environment& operator=(const Environment& other) {
    if (this != &other) *this = Environment(other);
    return *this;
  }

  Environment(Environment&&) noexcept = default;
  Environment& operator=(Environment&&) noexcept = default;

  const EnvSpec& spec() const { return spec_; }
  std::string_view name() const { return dynamics_->name(); }
  const StickyConfig& sticky() const { return sticky_; }

  Observation reset() {
    step_count_ = 0;
    previous_action_ = -1;
    running_ = true;
    last_repeated_ = false;
    return dynamics_->reset(rng_);
  }

  StepResult step(int action) {
    if (action < 0 || action >= spec_.num_actions) {
      throw UsageError("step: action " + std::to_string(action) + " out of range");
    }
    if (!running_) throw UsageError("step: episode has ended; call reset() first");

    int executed = action;
    last_repeated_ = false;
    if (previous_action_ >= 0 && sticky_.repeat_probability > 0.0 &&
        rng_.bernoulli(sticky_.repeat_probability)) {
      executed = previous_action_;
      last_repeated_ = true;
    }
    previous_action_ = executed;

    Dynamics::Outcome out = dynamics_->advance(executed);
    ++step_count_;
    StepResult result{std::move(out.observation), out.reward, out.terminal, false};
    if (!result.terminal && step_count_ >= spec_.max_episode_steps) result.truncated = true;
    if (result.terminal || result.truncated) running_ = false;
    return result;
  }

  int episode_steps() const { return step_count_; }
  bool running() const { return running_; }
  int last_executed_action() const { return previous_action_; }
  /// True when the sticky wrapper replaced the requested action on the most
  /// recent step.
  bool last_step_repeated() const { return last_repeated_; }

  Dynamics& dynamics() { return *dynamics_; }
  const Dynamics& dynamics() const { return *dynamics_; }

 private:
  std::unique_ptr<Dynamics> dynamics_;
  StickyConfig sticky_;
  Rng rng_;
  EnvSpec spec_;
  int step_count_ = 0;
  int previous_action_ = -1;
  bool running_ = false;
  bool last_repeated_ = false;
};

inline const std::vector<std::string>& env_names() {
  static const std::vector<std::string> names{"cartpole", "mountaincar", "acrobot", "gridworld"};
  return names;
}

inline Environment make_env(std::string_view name, StickyConfig sticky, std::uint64_t seed) {
  std::unique_ptr<Dynamics> dynamics;
  if (name == "cartpole") {
    dynamics = std::make_unique<CartPole>();
  } else if (name == "mountaincar") {
    dynamics = std::make_unique<MountainCar>();
  } else if (name == "acrobot") {
    dynamics = std::make_unique<Acrobot>();
  } else if (name == "gridworld") {
    dynamics = std::make_unique<GridWorld>();
  } else {
    throw ConfigError("unknown environment '" + std::string(name) + "'", "env.name");
  }
  return Environment(std::move(dynamics), sticky, seed);
}

/// Spec of a named environment without constructing a seeded instance.
inline EnvSpec env_spec(std::string_view name) { return make_env(name, {}, 0).spec(); }

}  // namespace tandem
