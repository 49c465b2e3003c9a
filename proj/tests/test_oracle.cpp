#include <gtest/gtest.h>

#include <numeric>

#include "tandem/oracle.hpp"

using namespace tandem;

namespace {

// 1x3 chain: cells 0,1,2 with the goal at 2; actions 0=left, 1=right.
TabularMDP chain3() {
  TabularMDP m;
  m.num_states = 3;
  m.num_actions = 2;
  m.successor = {0, 1, 0, 2, 2, 2};
  m.reward = {0, 0, 0, 1, 0, 0};
  m.terminal = {false, false, true};
  return m;
}

// A network whose one-hot forward pass returns `q` row by row: a single
// linear layer with W(a, s) = q(s, a) and zero bias.
NetworkParams table_net(const QTable& q, double sign = 1.0) {
  NetworkParams p;
  Matrix w(q.num_actions, q.num_states);
  for (int s = 0; s < q.num_states; ++s)
    for (int a = 0; a < q.num_actions; ++a) w(a, s) = sign * q(s, a);
  p.layers.push_back({w, Vector::Zero(q.num_actions)});
  return p;
}

TabularMDP grid() { return enumerate_mdp(make_env("gridworld", {0.0}, 0)); }

}  // namespace

TEST(EnumerateMdp, GridShape) {
  const TabularMDP m = grid();
  EXPECT_EQ(m.num_states, 25);
  EXPECT_EQ(m.num_actions, 4);
  EXPECT_EQ(m.terminal_count(), 1);
  EXPECT_TRUE(m.is_terminal(24));
}

TEST(EnumerateMdp, HandCheckedTransitions) {
  const TabularMDP m = grid();
  EXPECT_EQ(m.next(0, GridWorld::kRight), 1);
  EXPECT_EQ(m.next(0, GridWorld::kDown), 5);
  EXPECT_EQ(m.next(0, GridWorld::kUp), 0);
  EXPECT_EQ(m.next(12, GridWorld::kLeft), 11);
  EXPECT_EQ(m.next(23, GridWorld::kRight), 24);
  EXPECT_EQ(m.r(23, GridWorld::kRight), 1.0);
  EXPECT_EQ(m.r(22, GridWorld::kRight), 0.0);
}

TEST(EnumerateMdp, RejectsContinuousAndSticky) {
  EXPECT_THROW(enumerate_mdp(make_env("cartpole", {0.0}, 0)), UsageError);
  EXPECT_THROW(enumerate_mdp(make_env("gridworld", {0.25}, 0)), UsageError);
}

TEST(ValueIteration, ChainValues) {
  const QTable q = value_iteration(chain3(), 0.9, 1e-12);
  EXPECT_NEAR(q(1, 1), 1.0, 1e-12);
  EXPECT_NEAR(q(0, 1), 0.9, 1e-12);
  EXPECT_NEAR(q(1, 0), 0.81, 1e-12);
  EXPECT_NEAR(q(0, 0), 0.81, 1e-12);
}

TEST(ValueIteration, MyopicIsImmediateReward) {
  const TabularMDP m = grid();
  const QTable q = value_iteration(m, 0.0);
  for (int s = 0; s < 25; ++s)
    for (int a = 0; a < 4; ++a) EXPECT_EQ(q(s, a), m.is_terminal(s) ? 0.0 : m.r(s, a));
}

TEST(ValueIteration, ZeroRewardsGiveZero) {
  TabularMDP m = grid();
  std::fill(m.reward.begin(), m.reward.end(), 0.0);
  const QTable q = value_iteration(m, 0.95);
  for (double v : q.values) EXPECT_EQ(v, 0.0);
}

TEST(ValueIteration, GridValuesFollowManhattanDistance) {
  // Entering the goal from distance d pays 1 after d steps: V = γ^(d-1).
  const double gamma = 0.99;
  const QTable q = value_iteration(grid(), gamma);
  for (int s = 0; s < 24; ++s) {
    const int d = (4 - s / 5) + (4 - s % 5);
    EXPECT_NEAR(q.max(s), std::pow(gamma, d - 1), 1e-9) << "cell " << s;
  }
  EXPECT_NEAR(q.max(0), 0.9320653479069899, 1e-9);
}

TEST(ValueIteration, BellmanResidualBelowTolerance) {
  for (double gamma : {0.5, 0.9, 0.99}) {
    const TabularMDP m = grid();
    const double tol = 1e-10;
    const QTable q = value_iteration(m, gamma, tol);
    // One more backup moves Q by at most γ·tol.
    EXPECT_LT(bellman_residual(m, q, gamma), tol);
  }
}

TEST(ValueIteration, InvariantUnderStateRelabelling) {
  const TabularMDP m = grid();
  std::vector<int> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(3);
  for (int i = 24; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
  TabularMDP p = m;
  for (int s = 0; s < 25; ++s) {
    const int ps = perm[static_cast<std::size_t>(s)];
    p.terminal[static_cast<std::size_t>(ps)] = m.terminal[static_cast<std::size_t>(s)];
    for (int a = 0; a < 4; ++a) {
      p.successor[static_cast<std::size_t>(ps * 4 + a)] = perm[static_cast<std::size_t>(m.next(s, a))];
      p.reward[static_cast<std::size_t>(ps * 4 + a)] = m.r(s, a);
    }
  }
  const QTable q = value_iteration(m, 0.9);
  const QTable qp = value_iteration(p, 0.9);
  for (int s = 0; s < 25; ++s)
    for (int a = 0; a < 4; ++a) EXPECT_EQ(q(s, a), qp(perm[static_cast<std::size_t>(s)], a));
}

TEST(ValueIteration, RejectsBadArguments) {
  EXPECT_THROW(value_iteration(chain3(), 1.0), UsageError);
  EXPECT_THROW(value_iteration(chain3(), 0.9, 0.0), UsageError);
}

TEST(PolicyMatch, ExactNetMatchesEverywhere) {
  const TabularMDP m = grid();
  const QTable q = value_iteration(m, 0.9);
  EXPECT_EQ(policy_match(table_net(q), q, m), 1.0);
}

TEST(PolicyMatch, NegatedNetMissesUniqueWorstStates) {
  const TabularMDP m = grid();
  const QTable q = value_iteration(m, 0.9);
  const double score = policy_match(table_net(q, -1.0), q, m);
  // The negated net picks a worst action; a worst action is never optimal
  // in this grid, where every state has at least one improving move.
  EXPECT_EQ(score, 0.0);
}

TEST(PolicyMatch, RandomNetInRange) {
  const TabularMDP m = grid();
  const QTable q = value_iteration(m, 0.9);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const double v = policy_match(init_params({25, 2, 16, 4}, s), q, m);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(PolicyMatch, RejectsWrongInputWidth) {
  const TabularMDP m = grid();
  EXPECT_THROW(policy_match(init_params({4, 1, 8, 4}, 0), value_iteration(m, 0.9), m), UsageError);
}

TEST(Rollout, OptimalGridPolicyReturnsOne) {
  const QTable q = value_iteration(grid(), 0.9);
  const auto est = rollout_value("gridworld", {0.0}, TabularGreedyPolicy{&q}, 20, std::nullopt, 1);
  EXPECT_EQ(est.mean, 1.0);
  EXPECT_EQ(est.standard_error, 0.0);
}

TEST(Rollout, DiscountedOptimalMatchesValue) {
  const QTable q = value_iteration(grid(), 0.9);
  const auto est = rollout_value("gridworld", {0.0}, TabularGreedyPolicy{&q}, 3, 0.9, 1);
  EXPECT_NEAR(est.mean, q.max(0), 1e-12);
}

TEST(Rollout, SingleEpisodeHasZeroStandardError) {
  const NetworkParams net = init_params({4, 1, 8, 2}, 0);
  const auto est = rollout_value("cartpole", {0.0}, EpsilonGreedyPolicy{&net, 0.5}, 1, std::nullopt, 9);
  EXPECT_EQ(est.episodes, 1);
  EXPECT_EQ(est.standard_error, 0.0);
  EXPECT_GT(est.mean, 0.0);
}

TEST(Rollout, SeedsAgreeWithinThreeStandardErrors) {
  const NetworkParams net = init_params({25, 1, 8, 4}, 0);
  const EpsilonGreedyPolicy policy{&net, 0.3};
  const auto a = rollout_value("gridworld", {0.0}, policy, 10'000, std::nullopt, 1);
  const auto b = rollout_value("gridworld", {0.0}, policy, 10'000, std::nullopt, 2);
  EXPECT_NE(a.mean, b.mean);
  EXPECT_LT(std::abs(a.mean - b.mean), 3.0 * std::hypot(a.standard_error, b.standard_error));
}

TEST(Rollout, RejectsNoEpisodes) {
  const QTable q = value_iteration(grid(), 0.9);
  EXPECT_THROW(rollout_value("gridworld", {0.0}, TabularGreedyPolicy{&q}, 0, std::nullopt, 1), UsageError);
}
