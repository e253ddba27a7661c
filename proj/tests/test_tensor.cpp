#include <gtest/gtest.h>

#include <cmath>

#include "resflow/adam.hpp"
#include "resflow/ops.hpp"
#include "support/gradcheck.hpp"

using namespace resflow;
using namespace resflow::ad;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = true) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST(Ops, SoftmaxExamples) {
  auto a = softmax(Tensor({2}, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(a.at(0), 0.5);
  EXPECT_DOUBLE_EQ(a.at(1), 0.5);
  // e / (e + 1) = 0.7310585786..., evaluated by hand.
  auto b = softmax(Tensor({2}, {1.0, 0.0}));
  EXPECT_NEAR(b.at(0), 0.7311, 1e-4);
  EXPECT_NEAR(b.at(1), 0.2689, 1e-4);
}

TEST(Ops, MatmulOfOnesCountsInnerDim) {
  auto c = matmul(Tensor::full({2, 3}, 1.0), Tensor::full({3, 2}, 1.0));
  ASSERT_EQ(c.shape(), (Shape{2, 2}));
  for (double v : c.values()) EXPECT_EQ(v, 3.0);
}

TEST(Ops, ShapeErrorNamesOperationAndShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[4,2]"), std::string::npos);
  }
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ShapeError);
  EXPECT_THROW(concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 2})}, 0), ShapeError);
  EXPECT_THROW(slice(Tensor::zeros({2, 3}), 1, 2, 5), ShapeError);
}

TEST(Ops, NonFiniteOutputIsAnError) {
  EXPECT_THROW(scale(Tensor({1}, {1e300}, false), 1e300), NumericError);
}

TEST(Backward, LinearGradient) {
  Tensor w({3}, {0.5, -0.2, 0.1}, true);
  Tensor x({3}, {1.0, 2.0, 3.0});
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum_all(mul(w, x));
  }
  tape.backward(loss);
  EXPECT_EQ(w.grad()[0], 1.0);
  EXPECT_EQ(w.grad()[1], 2.0);
  EXPECT_EQ(w.grad()[2], 3.0);
  EXPECT_TRUE(tape.empty());
}

TEST(Backward, ReluGate) {
  Tensor w({2}, {-1.0, 2.0}, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum_all(relu(w));
  }
  tape.backward(loss);
  EXPECT_EQ(w.grad()[0], 0.0);
  EXPECT_EQ(w.grad()[1], 1.0);
}

TEST(Backward, UnusedTensorHasZeroGradientAndNonScalarIsRejected) {
  Tensor used({2}, {1.0, 2.0}, true);
  Tensor unused({2}, {3.0, 4.0}, true);
  Tape tape;
  Tensor loss, vec;
  {
    TapeScope scope(tape);
    vec = scale(used, 2.0);
    loss = sum_all(vec);
  }
  EXPECT_THROW(tape.backward(vec), ShapeError);
  tape.backward(loss);
  EXPECT_EQ(unused.grad()[0], 0.0);
  EXPECT_EQ(unused.grad()[1], 0.0);
  Tape empty;
  EXPECT_THROW(empty.backward(Tensor::scalar(1.0)), std::logic_error);
}

// Every primitive against central differences, 5 seeds, 64-bit.
TEST(Backward, PrimitivesMatchFiniteDifferences) {
  PrecisionScope f64(Precision::f64);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    Tensor a = random_tensor(rng, {2, 3, 4});
    Tensor b = random_tensor(rng, {4, 5});
    Tensor c = random_tensor(rng, {2, 4, 3});
    Tensor bias = random_tensor(rng, {5});
    Tensor gain = random_tensor(rng, {5});
    Tensor mixed = random_tensor(rng, {2, 1, 5});
    ParameterList params{{"a", a}, {"b", b}, {"c", c}, {"bias", bias}, {"gain", gain}, {"mixed", mixed}};
    Tensor target = random_tensor(rng, {2, 3, 5}, false);
    Mask mask{{3, 5}, {1, 0, 1, 1, 0, 1, 1, 1, 1, 1, 0, 0, 1, 0, 1}};
    auto loss_fn = [&]() {
      auto h = add(matmul(a, b), bias);                        // [2,3,5]
      auto n = layer_norm(h, gain, bias);                     // [2,3,5]
      auto s = masked_softmax(mul(n, mixed), mask);           // [2,3,5]
      auto t = leaky_relu(sub(h, scale(s, 0.7)), 0.2);        // [2,3,5]
      auto bm = matmul(c, a);                                 // [2,4,3] x [2,3,4] -> [2,4,4]
      auto p = permute(softmax(bm, 1), {0, 2, 1});            // [2,4,4]
      auto cat = concat({t, slice(h, 1, 0, 2)}, 1);           // [2,5,5]
      auto ls = log_softmax(reshape(cat, {10, 5}));           // [10,5]
      auto cos = l2_normalize(square(t) + target);            // [2,3,5]
      return add(add(add(mse_loss(t, target), mean_all(ls)), mean_all(mean(p, -1))),
                 add(mean_all(relu(cos)), sum_all(sum(s, 0))));
    };
    auto r = oracle::check_gradients(params, loss_fn);
    EXPECT_LT(r.rel_error, 1e-4) << "seed " << seed;
    EXPECT_GT(r.analytic_norm, 0.0);
  }
}

TEST(Properties, SoftmaxRowsSumToOneOverAnyAxis) {
  PrecisionScope f64(Precision::f64);
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(rng, {3, 4, 5}, false);
    x = scale(x, 3.0);
    for (std::ptrdiff_t axis = 0; axis < 3; ++axis) {
      auto y = softmax(x, axis);
      auto s = sum(y, axis);
      for (double v : s.values()) EXPECT_NEAR(v, 1.0, 1e-6);
      for (double v : y.values()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
      }
    }
  }
}

TEST(Properties, ForwardIsBitDeterministic) {
  auto run = [] {
    Rng rng(11);
    Tensor a = random_tensor(rng, {4, 6}, false);
    Tensor b = random_tensor(rng, {6, 3}, false);
    Rng drop(3);
    return dropout(softmax(matmul(a, b)), 0.2, drop, true);
  };
  auto x = run();
  auto y = run();
  ASSERT_EQ(x.numel(), y.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x.at(i), y.at(i));
}

TEST(Dropout, EvaluationModeIsIdentityAndRateIsValidated) {
  Rng rng(5);
  Tensor x = random_tensor(rng, {10, 10}, false);
  auto e1 = dropout(x, 0.2, rng, false);
  auto e2 = dropout(x, 0.2, rng, false);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(e1.at(i), x.at(i));
    EXPECT_EQ(e2.at(i), x.at(i));
  }
  EXPECT_THROW(dropout(x, 1.0, rng, true), std::invalid_argument);
  auto t = dropout(Tensor::full({100000}, 1.0), 0.2, rng, true);
  double zeros = 0, total = 0;
  for (double v : t.values()) {
    zeros += v == 0.0;
    total += v;
  }
  EXPECT_NEAR(zeros / 100000.0, 0.2, 0.01);
  EXPECT_NEAR(total / 100000.0, 1.0, 0.02);
}

TEST(Precision, Float32ModeRoundsOutputs) {
  Tensor a({1}, {1.0 / 3.0});
  EXPECT_EQ(a.at(0), static_cast<double>(static_cast<float>(1.0 / 3.0)));
  PrecisionScope f64(Precision::f64);
  Tensor b({1}, {1.0 / 3.0});
  EXPECT_EQ(b.at(0), 1.0 / 3.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  PrecisionScope f64(Precision::f64);
  Tensor p({3}, {1.0, -2.0, 0.5}, true);
  Adam opt({{"p", p}}, AdamConfig{.lr = 1e-3});
  p.mutable_grad()[0] = 0.7;
  p.mutable_grad()[1] = -3.0;
  p.mutable_grad()[2] = 1e-2;
  opt.step();
  // m_hat = g, v_hat = g^2 after one bias-corrected step, so the move is lr * g / (|g| + eps).
  EXPECT_NEAR(p.at(0), 1.0 - 1e-3, 1e-9);
  EXPECT_NEAR(p.at(1), -2.0 + 1e-3, 1e-9);
  EXPECT_NEAR(p.at(2), 0.5 - 1e-3, 1e-8);
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p({2}, {1.5, -0.25}, true);
  Adam opt({{"p", p}});
  opt.zero_grad();
  opt.step();
  opt.step();
  EXPECT_EQ(p.at(0), 1.5);
  EXPECT_EQ(p.at(1), -0.25);
  EXPECT_EQ(opt.step_count(), 2u);
  EXPECT_EQ(opt.first_moments()[0].size(), p.numel());
}

TEST(Adam, NanGradientNamesParameter) {
  Tensor p({2}, {1.0, 1.0}, true);
  Adam opt({{"encoder.l0.weight", p}});
  p.mutable_grad()[1] = std::nan("");
  try {
    opt.step();
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.l0.weight"), std::string::npos);
  }
  EXPECT_EQ(opt.step_count(), 0u);
  EXPECT_THROW(opt.set_lr(0.0), std::invalid_argument);
}

TEST(Adam, LearningRateHalvesEveryEpoch) {
  for (int e = 0; e < 10; ++e) EXPECT_DOUBLE_EQ(scheduled_lr(1e-3, 0.5, e), 1e-3 * std::pow(0.5, e));
  EXPECT_DOUBLE_EQ(scheduled_lr(1e-3, 0.5, 3), 1.25e-4);
}
