#include <gtest/gtest.h>

#include <sstream>

#include "tandem/neural.hpp"

using namespace tandem;

namespace {

// Plain-loop reference MLP, independent of the Eigen code paths.
std::vector<double> ref_forward(const NetworkParams& p, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (int l = 0; l < p.num_layers(); ++l) {
    const auto& layer = p.layers[static_cast<std::size_t>(l)];
    std::vector<double> z(static_cast<std::size_t>(layer.weight.rows()));
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      double acc = layer.bias(i);
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) acc += layer.weight(i, j) * h[static_cast<std::size_t>(j)];
      z[static_cast<std::size_t>(i)] = (l + 1 < p.num_layers()) ? std::max(0.0, acc) : acc;
    }
    h = std::move(z);
  }
  return h;
}

double ref_loss(const NetworkParams& p, const Matrix& batch, const Matrix& targets, const std::vector<int>* actions) {
  double sum = 0.0;
  double count = 0.0;
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    std::vector<double> x(static_cast<std::size_t>(batch.cols()));
    for (Eigen::Index c = 0; c < batch.cols(); ++c) x[static_cast<std::size_t>(c)] = batch(r, c);
    const auto q = ref_forward(p, x);
    if (actions) {
      const double e = q[static_cast<std::size_t>((*actions)[static_cast<std::size_t>(r)])] - targets(r, 0);
      sum += e * e;
      count += 1.0;
    } else {
      for (std::size_t a = 0; a < q.size(); ++a) {
        const double e = q[a] - targets(r, static_cast<Eigen::Index>(a));
        sum += e * e;
        count += 1.0;
      }
    }
  }
  return sum / count;
}

NetworkParams linear_1d(double w, double b) {
  NetworkParams p;
  p.layers.push_back({Matrix::Constant(1, 1, w), Vector::Constant(1, b)});
  return p;
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

TEST(InitParams, DeterministicForSeed) {
  const NetworkConfig cfg{4, 2, 16, 2};
  EXPECT_TRUE(init_params(cfg, 3) == init_params(cfg, 3));
}

TEST(InitParams, SeedsDiffer) {
  const NetworkConfig cfg{4, 2, 16, 2};
  EXPECT_FALSE(init_params(cfg, 1) == init_params(cfg, 2));
}

TEST(InitParams, ZeroHiddenLayersIsOneLinearMap) {
  const NetworkParams p = init_params({5, 0, 64, 3}, 0);
  ASSERT_EQ(p.num_layers(), 1);
  EXPECT_EQ(p.layers[0].weight.rows(), 3);
  EXPECT_EQ(p.layers[0].weight.cols(), 5);
}

TEST(InitParams, FanInScaledUniformZeroBias) {
  const NetworkParams p = init_params({10, 2, 50, 4}, 9);
  ASSERT_EQ(p.num_layers(), 3);
  for (int l = 0; l < 3; ++l) {
    const auto& layer = p.layers[static_cast<std::size_t>(l)];
    const double fan_in = static_cast<double>(layer.weight.cols());
    const double limit = l < 2 ? std::sqrt(6.0 / fan_in) : std::sqrt(3.0 / fan_in);
    EXPECT_LE(layer.weight.cwiseAbs().maxCoeff(), limit);
    EXPECT_TRUE(layer.bias.isZero());
  }
  EXPECT_EQ(p.parameter_count(), 10u * 50 + 50 + 50 * 50 + 50 + 50 * 4 + 4);
}

TEST(InitParams, RejectsBadConfig) {
  EXPECT_THROW(init_params({0, 2, 8, 2}, 0), ConfigError);
  EXPECT_THROW(init_params({4, 2, 0, 2}, 0), ConfigError);
  EXPECT_THROW(init_params({4, -1, 8, 2}, 0), ConfigError);
}

TEST(Forward, LinearNetIsAffineMap) {
  NetworkParams p;
  Matrix w(2, 3);
  w << 1, 2, 3, -4, 5, -6;
  Vector b(2);
  b << 0.5, -1;
  p.layers.push_back({w, b});
  Matrix x(1, 3);
  x << 1, -1, 2;
  const Matrix q = forward(p, x);
  EXPECT_EQ(q(0, 0), 1 - 2 + 6 + 0.5);
  EXPECT_EQ(q(0, 1), -4 - 5 - 12 - 1.0);
}

TEST(Forward, MatchesReferenceImplementation) {
  Rng rng(1);
  const NetworkParams p = init_params({6, 3, 12, 4}, 5);
  const Matrix x = random_matrix(7, 6, rng);
  const Matrix q = forward(p, x);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    std::vector<double> row(6);
    for (int c = 0; c < 6; ++c) row[static_cast<std::size_t>(c)] = x(r, c);
    const auto ref = ref_forward(p, row);
    for (int a = 0; a < 4; ++a) EXPECT_NEAR(q(r, a), ref[static_cast<std::size_t>(a)], 1e-12);
    const Vector one = forward_one(p, row);
    for (int a = 0; a < 4; ++a) EXPECT_NEAR(one(a), q(r, a), 1e-13);
  }
}

TEST(Forward, PureAndRepeatable) {
  Rng rng(2);
  const NetworkParams p = init_params({4, 2, 8, 2}, 1);
  const NetworkParams copy = p;
  const Matrix x = random_matrix(5, 4, rng);
  const Matrix y = random_matrix(5, 4, rng);
  const Matrix a1 = forward(p, x);
  const Matrix b1 = forward(copy, y);
  const Matrix b2 = forward(p, y);
  const Matrix a2 = forward(copy, x);
  EXPECT_EQ(a1, a2);
  EXPECT_EQ(b1, b2);
  EXPECT_TRUE(p == copy);
}

TEST(Forward, ZeroParamsGiveZeroOutput) {
  Rng rng(3);
  const NetworkParams p = init_params({4, 2, 8, 3}, 1).zeros_like();
  EXPECT_TRUE(forward(p, random_matrix(6, 4, rng)).isZero());
}

TEST(Forward, WrongInputWidth) {
  const NetworkParams p = init_params({4, 1, 8, 2}, 1);
  EXPECT_THROW(forward(p, Matrix::Zero(2, 3)), UsageError);
  const std::vector<double> x(5, 0.0);
  EXPECT_THROW(forward_one(p, x), UsageError);
}

TEST(LossAndGrads, HandComputedLinearCase) {
  const NetworkParams p = linear_1d(2.0, 0.0);
  const Matrix x = Matrix::Constant(1, 1, 1.0);
  const Matrix t = Matrix::Constant(1, 1, 0.0);
  const std::vector<int> actions{0};
  const auto out = loss_and_grads(p, x, t, std::span<const int>(actions), FreezeMask::all_trainable(1));
  EXPECT_EQ(out.loss, 4.0);
  EXPECT_EQ(out.grads.layers[0].weight(0, 0), 4.0);
  EXPECT_EQ(out.grads.layers[0].bias(0), 4.0);
}

TEST(LossAndGrads, ZeroAtTargets) {
  Rng rng(4);
  const NetworkParams p = init_params({3, 2, 8, 2}, 7);
  const Matrix x = random_matrix(5, 3, rng);
  const Matrix q = forward(p, x);
  const auto full = loss_and_grads(p, x, q, std::nullopt, FreezeMask::all_trainable(3));
  EXPECT_EQ(full.loss, 0.0);
  for (const auto& l : full.grads.layers) {
    EXPECT_TRUE(l.weight.isZero());
    EXPECT_TRUE(l.bias.isZero());
  }
  std::vector<int> actions{0, 1, 1, 0, 1};
  Matrix t(5, 1);
  for (int r = 0; r < 5; ++r) t(r, 0) = q(r, actions[static_cast<std::size_t>(r)]);
  const auto sel = loss_and_grads(p, x, t, std::span<const int>(actions), FreezeMask::all_trainable(3));
  EXPECT_EQ(sel.loss, 0.0);
}

TEST(LossAndGrads, FullyFrozenMaskGivesZeroGrads) {
  Rng rng(5);
  const NetworkParams p = init_params({3, 2, 8, 2}, 7);
  const Matrix x = random_matrix(5, 3, rng);
  const auto out = loss_and_grads(p, x, Matrix::Zero(5, 2), std::nullopt, FreezeMask::bottom_frozen(3, 3));
  EXPECT_GT(out.loss, 0.0);
  for (const auto& l : out.grads.layers) {
    EXPECT_TRUE(l.weight.isZero());
    EXPECT_TRUE(l.bias.isZero());
  }
}

TEST(LossAndGrads, PartialMaskKeepsUpperGradients) {
  Rng rng(6);
  const NetworkParams p = init_params({3, 2, 8, 2}, 8);
  const Matrix x = random_matrix(6, 3, rng);
  const Matrix t = random_matrix(6, 2, rng);
  const auto all = loss_and_grads(p, x, t, std::nullopt, FreezeMask::all_trainable(3));
  const auto top = loss_and_grads(p, x, t, std::nullopt, FreezeMask::bottom_frozen(3, 2));
  EXPECT_TRUE(top.grads.layers[0].weight.isZero());
  EXPECT_TRUE(top.grads.layers[1].weight.isZero());
  EXPECT_EQ(top.grads.layers[2].weight, all.grads.layers[2].weight);
  EXPECT_EQ(top.grads.layers[2].bias, all.grads.layers[2].bias);
}

TEST(LossAndGrads, LossMatchesReference) {
  Rng rng(7);
  const NetworkParams p = init_params({4, 2, 10, 3}, 2);
  const Matrix x = random_matrix(8, 4, rng);
  const Matrix tf = random_matrix(8, 3, rng);
  EXPECT_NEAR(loss_and_grads(p, x, tf, std::nullopt, FreezeMask::all_trainable(3)).loss,
              ref_loss(p, x, tf, nullptr), 1e-12);
  std::vector<int> actions(8);
  for (auto& a : actions) a = rng.below(3);
  const Matrix ts = random_matrix(8, 1, rng);
  EXPECT_NEAR(loss_and_grads(p, x, ts, std::span<const int>(actions), FreezeMask::all_trainable(3)).loss,
              ref_loss(p, x, ts, &actions), 1e-12);
}

TEST(LossAndGrads, ShapeErrors) {
  const NetworkParams p = init_params({3, 1, 4, 2}, 0);
  const Matrix x = Matrix::Zero(2, 3);
  const std::vector<int> actions{0, 2};
  EXPECT_THROW(loss_and_grads(p, x, Matrix::Zero(2, 1), std::span<const int>(actions), FreezeMask::all_trainable(2)),
               UsageError);
  EXPECT_THROW(loss_and_grads(p, x, Matrix::Zero(2, 1), std::nullopt, FreezeMask::all_trainable(2)), UsageError);
  EXPECT_THROW(loss_and_grads(p, x, Matrix::Zero(2, 2), std::nullopt, FreezeMask::all_trainable(3)), UsageError);
}

// Central differences on the reference loss, computed independently of
// finite_diff_check.
TEST(LossAndGrads, AgreesWithReferenceCentralDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int depth = trial % 4;
    const NetworkParams p = init_params({3, depth, 4 + trial, 2}, static_cast<std::uint64_t>(trial));
    const Matrix x = random_matrix(5, 3, rng);
    const Matrix t = random_matrix(5, 2, rng);
    const auto exact = loss_and_grads(p, x, t, std::nullopt, FreezeMask::all_trainable(p.num_layers()));
    for (int l = 0; l < p.num_layers(); ++l) {
      const auto li = static_cast<std::size_t>(l);
      for (int k = 0; k < 3; ++k) {
        const auto r = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.layers[li].weight.rows())));
        const auto c = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.layers[li].weight.cols())));
        NetworkParams plus = p, minus = p;
        plus.layers[li].weight(r, c) += 1e-6;
        minus.layers[li].weight(r, c) -= 1e-6;
        const double numeric = (ref_loss(plus, x, t, nullptr) - ref_loss(minus, x, t, nullptr)) / 2e-6;
        EXPECT_NEAR(exact.grads.layers[li].weight(r, c), numeric, 1e-6 + 1e-4 * std::abs(numeric));
      }
    }
  }
}

TEST(Optimizer, RmspropSingleStep) {
  NetworkParams p = linear_1d(0.0, 0.0);
  OptimizerSettings s = OptimizerSettings::rmsprop_defaults(0.1);
  s.rho = 0.9;
  s.epsilon = 0.0;
  Optimizer opt(s, p);
  const NetworkParams g = linear_1d(1.0, 1.0);
  opt.step(p, g, FreezeMask::all_trainable(1));
  EXPECT_NEAR(opt.second_moment().layers[0].weight(0, 0), 0.1, 1e-15);
  // -0.1 / sqrt(0.1)
  EXPECT_NEAR(p.layers[0].weight(0, 0), -0.316227766016838, 1e-12);
  EXPECT_NEAR(p.layers[0].bias(0), -0.316227766016838, 1e-12);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  NetworkParams p = linear_1d(0.0, 0.0);
  OptimizerSettings s = OptimizerSettings::adam_defaults(0.01);
  s.epsilon = 1e-12;
  Optimizer opt(s, p);
  opt.step(p, linear_1d(1.0, -3.0), FreezeMask::all_trainable(1));
  EXPECT_NEAR(p.layers[0].weight(0, 0), -0.01, 1e-9);
  EXPECT_NEAR(p.layers[0].bias(0), 0.01, 1e-9);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Optimizer, AdamSecondStepMatchesHandRecursion) {
  NetworkParams p = linear_1d(0.0, 0.0);
  Optimizer opt(OptimizerSettings::adam_defaults(0.1), p);
  opt.step(p, linear_1d(1.0, 0.0), FreezeMask::all_trainable(1));
  opt.step(p, linear_1d(0.5, 0.0), FreezeMask::all_trainable(1));
  double m = 0.0, v = 0.0, theta = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? 1.0 : 0.5;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    theta -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(p.layers[0].weight(0, 0), theta, 1e-12);
}

TEST(Optimizer, ZeroGradientIsFixedPoint) {
  for (auto s : {OptimizerSettings::rmsprop_defaults(), OptimizerSettings::adam_defaults()}) {
    NetworkParams p = init_params({3, 2, 5, 2}, 4);
    const NetworkParams before = p;
    Optimizer opt(s, p);
    for (int i = 0; i < 3; ++i) opt.step(p, p.zeros_like(), FreezeMask::all_trainable(3));
    EXPECT_TRUE(p == before);
  }
}

TEST(Optimizer, Defaults) {
  const auto r = OptimizerSettings::rmsprop_defaults();
  EXPECT_EQ(r.rho, 0.95);
  EXPECT_EQ(r.epsilon, 1e-5);
  EXPECT_EQ(r.learning_rate, 1e-3);
  const auto a = OptimizerSettings::adam_defaults();
  EXPECT_EQ(a.beta1, 0.9);
  EXPECT_EQ(a.beta2, 0.999);
  EXPECT_EQ(a.epsilon, 1e-8);
}

TEST(Optimizer, FrozenBlocksStayBitIdentical) {
  Rng rng(9);
  NetworkParams p = init_params({3, 3, 6, 2}, 12);
  const NetworkParams initial = p;
  const FreezeMask mask = FreezeMask::bottom_frozen(4, 2);
  for (auto s : {OptimizerSettings::rmsprop_defaults(0.01), OptimizerSettings::adam_defaults(0.01)}) {
    Optimizer opt(s, p);
    for (int step = 0; step < 25; ++step) {
      const Matrix x = random_matrix(4, 3, rng);
      const Matrix t = random_matrix(4, 2, rng);
      opt.step(p, loss_and_grads(p, x, t, std::nullopt, mask).grads, mask);
    }
  }
  EXPECT_EQ(p.layers[0].weight, initial.layers[0].weight);
  EXPECT_EQ(p.layers[1].bias, initial.layers[1].bias);
  EXPECT_NE(p.layers[3].weight, initial.layers[3].weight);
}

TEST(Optimizer, ShapeMismatch) {
  NetworkParams p = init_params({3, 1, 5, 2}, 0);
  Optimizer opt(OptimizerSettings::adam_defaults(), p);
  EXPECT_THROW(opt.step(p, init_params({3, 1, 6, 2}, 0), FreezeMask::all_trainable(2)), UsageError);
}

TEST(SyncParams, AllCopiesOutputs) {
  Rng rng(10);
  const NetworkParams src = init_params({4, 2, 8, 2}, 1);
  NetworkParams dst = init_params({4, 2, 8, 2}, 2);
  sync_params(src, dst, LayerSelection::all());
  const Matrix x = random_matrix(9, 4, rng, 10.0);
  EXPECT_EQ(forward(src, x), forward(dst, x));
}

TEST(SyncParams, BottomZeroIsNoOp) {
  const NetworkParams src = init_params({4, 2, 8, 2}, 1);
  NetworkParams dst = init_params({4, 2, 8, 2}, 2);
  const NetworkParams before = dst;
  sync_params(src, dst, LayerSelection::bottom(0));
  EXPECT_TRUE(dst == before);
}

TEST(SyncParams, BottomLEqualsAll) {
  const NetworkParams src = init_params({4, 2, 8, 2}, 1);
  NetworkParams a = init_params({4, 2, 8, 2}, 2);
  NetworkParams b = a;
  sync_params(src, a, LayerSelection::bottom(3));
  sync_params(src, b, LayerSelection::all());
  EXPECT_TRUE(a == b);
  EXPECT_TRUE(a == src);
}

TEST(SyncParams, BottomKCopiesOnlyLowerLayers) {
  const NetworkParams src = init_params({4, 3, 8, 2}, 1);
  NetworkParams dst = init_params({4, 3, 8, 2}, 2);
  const NetworkParams before = dst;
  sync_params(src, dst, LayerSelection::bottom(2));
  EXPECT_EQ(dst.layers[0].weight, src.layers[0].weight);
  EXPECT_EQ(dst.layers[1].weight, src.layers[1].weight);
  EXPECT_EQ(dst.layers[2].weight, before.layers[2].weight);
  EXPECT_EQ(dst.layers[3].weight, before.layers[3].weight);
}

TEST(SyncParams, RejectsBadSelection) {
  const NetworkParams src = init_params({4, 2, 8, 2}, 1);
  NetworkParams dst = init_params({4, 2, 8, 2}, 2);
  EXPECT_THROW(sync_params(src, dst, LayerSelection::bottom(4)), UsageError);
  NetworkParams other = init_params({4, 2, 9, 2}, 2);
  EXPECT_THROW(sync_params(src, other, LayerSelection::all()), UsageError);
}

TEST(FiniteDiff, LinearHandCase) {
  const NetworkParams p = linear_1d(2.0, 0.0);
  const std::vector<int> actions{0};
  const auto rep = finite_diff_check(p, Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.0),
                                     std::span<const int>(actions));
  EXPECT_LT(rep.max_relative_error, 1e-6);
  EXPECT_EQ(rep.checked, 2);
}

TEST(FiniteDiff, RandomSmallNet) {
  Rng rng(11);
  const NetworkParams p = init_params({2, 1, 16, 2}, 3);
  const Matrix x = random_matrix(8, 2, rng);
  const Matrix t = random_matrix(8, 2, rng);
  const auto rep = finite_diff_check(p, x, t, std::nullopt);
  EXPECT_LT(rep.max_relative_error, 1e-4);
  EXPECT_GT(rep.checked, 0);
}

TEST(FiniteDiff, ZeroGradientCase) {
  Rng rng(12);
  const NetworkParams p = init_params({3, 2, 6, 2}, 3);
  const Matrix x = random_matrix(4, 3, rng);
  const auto rep = finite_diff_check(p, x, forward(p, x), std::nullopt);
  EXPECT_LT(rep.max_numeric_magnitude, 1e-8);
}

TEST(FiniteDiff, SelectedActionsDeepNet) {
  Rng rng(13);
  const NetworkParams p = init_params({5, 3, 12, 4}, 6);
  const Matrix x = random_matrix(10, 5, rng);
  const Matrix t = random_matrix(10, 1, rng);
  std::vector<int> actions(10);
  for (auto& a : actions) a = rng.below(4);
  const auto rep = finite_diff_check(p, x, t, std::span<const int>(actions));
  EXPECT_LT(rep.max_relative_error, 1e-4);
}

TEST(Checkpoint, RoundTripIsExact) {
  const NetworkParams p = init_params({4, 2, 7, 3}, 21);
  std::stringstream ss;
  save_params(p, ss);
  EXPECT_TRUE(load_params(ss) == p);
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream ss("not a checkpoint");
  EXPECT_THROW(load_params(ss), IoError);
}
