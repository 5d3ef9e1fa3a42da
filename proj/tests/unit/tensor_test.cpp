// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "r2g/errors.hpp"
#include "r2g/gradcheck.hpp"
#include "r2g/nn.hpp"
#include "r2g/ops.hpp"

namespace r2g {
namespace {

using oracle::Vec;

TEST(Matmul, IdentityTimesColumn) {
  const Tensor a = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::from({2, 1}, {3, 4});
  EXPECT_EQ(oracle::values(matmul(a, b)), (Vec{3, 4}));
}

TEST(Matmul, RowTimesColumn) {
  const Tensor y = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  EXPECT_EQ(y.shape(), (Shape{1, 1}));
  EXPECT_EQ(y.item(), 11.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  CounterRng rng(1);
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const std::size_t M = 1 + rng.below(16), K = 1 + rng.below(16), N = 1 + rng.below(16);
    const Vec a = oracle::random_vec(M * K, rng), b = oracle::random_vec(K * N, rng);
    const Tensor y = matmul(Tensor::from({M, K}, a), Tensor::from({K, N}, b));
    EXPECT_LT(oracle::max_abs_diff(oracle::values(y), oracle::matmul(a, b, M, K, N)), 1e-12);
  }
}

TEST(Matmul, BroadcastsBatchExtents) {
  CounterRng rng(2);
  const Vec a = oracle::random_vec(3 * 4 * 5, rng), b = oracle::random_vec(5 * 2, rng);
  const Tensor y = matmul(Tensor::from({3, 4, 5}, a), Tensor::from({5, 2}, b));
  ASSERT_EQ(y.shape(), (Shape{3, 4, 2}));
  for (std::size_t i = 0; i < 3; ++i) {
    const Vec ai(a.begin() + i * 20, a.begin() + (i + 1) * 20);
    const Vec ref = oracle::matmul(ai, b, 4, 5, 2);
    const Vec got(y.values().begin() + i * 8, y.values().begin() + (i + 1) * 8);
    EXPECT_LT(oracle::max_abs_diff(got, ref), 1e-12);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(shape_str({2, 3})), std::string::npos) << msg;
    EXPECT_NE(msg.find(shape_str({4, 2})), std::string::npos) << msg;
  }
}

TEST(Softmax, UniformOnEqualInputs) {
  const Vec y = oracle::values(softmax(Tensor::from({3}, {0, 0, 0}), 0));
  for (double v : y) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Vec y = oracle::values(softmax(Tensor::from({2}, {1000, 0}), 0));
  EXPECT_EQ(y[0], 1.0);
  EXPECT_EQ(y[1], 0.0);
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
  const Vec y = oracle::values(softmax(Tensor::from({3}, {1, 2, 3}), 0, Mask{true, true, false}));
  const double z = std::exp(1.0) + std::exp(2.0);
  EXPECT_NEAR(y[0], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(y[1], std::exp(2.0) / z, 1e-15);
  EXPECT_EQ(y[2], 0.0);
}

TEST(Softmax, SlicesSumToOneAlongAnyAxis) {
  CounterRng rng(3);
  const Tensor x = Tensor::randn({3, 4, 5}, rng, 5.0);
  for (int axis = 0; axis < 3; ++axis) {
    const Tensor s = softmax(x, axis);
    const Vec sums = oracle::values(sum(s, axis));
    for (double v : sums) EXPECT_NEAR(v, 1.0, 1e-9);
  }
}

TEST(Softmax, FullyMaskedSliceIsDegenerate) {
  EXPECT_THROW(softmax(Tensor::from({2}, {1, 2}), 0, Mask{false, false}), DegenerateError);
}

TEST(Conv1d, IdentityTap) {
  const Tensor x = Tensor::from({3, 1}, {1, 2, 3});
  const Tensor w = Tensor::from({3, 1, 1}, {0, 1, 0});
  const Tensor y = conv1d(x, w, Tensor::zeros({1}), 1, 1);
  EXPECT_EQ(oracle::values(y), (Vec{1, 2, 3}));
}

TEST(Conv1d, StridedOutputLength) {
  CounterRng rng(4);
  const Tensor y = conv1d(Tensor::randn({8, 2}, rng), Tensor::randn({3, 2, 5}, rng), Tensor::zeros({5}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{4, 5}));
}

TEST(Conv1d, MatchesSlidingWindowOracle) {
  CounterRng rng(5);
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const std::size_t T = 3 + rng.below(14), cin = 1 + rng.below(6), cout = 1 + rng.below(6);
    const std::size_t kernel = 1 + 2 * rng.below(2), stride = 1 + rng.below(2), pad = rng.below(2);
    const Vec x = oracle::random_vec(T * cin, rng), w = oracle::random_vec(kernel * cin * cout, rng);
    const Vec b = oracle::random_vec(cout, rng);
    const Tensor y = conv1d(Tensor::from({T, cin}, x), Tensor::from({kernel, cin, cout}, w), Tensor::from({cout}, b),
                            stride, pad);
    EXPECT_LT(oracle::max_abs_diff(oracle::values(y), oracle::conv1d(x, w, b, T, cin, cout, kernel, stride, pad)),
              1e-12);
  }
}

TEST(Conv1d, TooShortInputIsRejected) {
  EXPECT_THROW(conv1d(Tensor::zeros({1, 1}), Tensor::zeros({5, 1, 1}), Tensor::zeros({1}), 1, 0), DimensionError);
}

TEST(Backward, SumGivesOnes) {
  const Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  sum(x).backward();
  EXPECT_EQ(oracle::values(Tensor::from({3}, Vec(x.grad().begin(), x.grad().end()))), (Vec{1, 1, 1}));
}

TEST(Backward, SquareGivesTwiceInput) {
  const Tensor x = Tensor::from({2}, {1, 2}, true);
  sum(mul(x, x)).backward();
  EXPECT_EQ(Vec(x.grad().begin(), x.grad().end()), (Vec{2, 4}));
}

TEST(Backward, NonScalarLossIsAContractError) {
  const Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(scale(x, 2.0).backward(), ContractError);
}

TEST(Backward, FrozenInputsNeverReceiveGradients) {
  CounterRng rng(6);
  const Tensor frozen = Tensor::randn({4, 3}, rng);
  const Tensor w = Tensor::randn({3, 2}, rng, 1.0, true);
  sum(tanh(matmul(frozen, w))).backward();
  EXPECT_TRUE(w.has_grad());
  EXPECT_FALSE(frozen.has_grad());
}

TEST(Backward, NoGradGuardBuildsNoGraph) {
  const Tensor w = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  const Tensor y = sum(mul(w, w));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Numerics, NonFiniteFromFiniteInputsIsAnError) {
  EXPECT_THROW(log(Tensor::from({1}, {-1.0})), NumericError);
}

TEST(FiniteDiff, QuadraticIsExact) {
  const Tensor w = Tensor::from({1}, {3.0}, true);
  const auto r = finite_diff_check([&] { return sum(mul(w, w)); }, {{"w", w}});
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(r.entries_checked, 1u);
}

TEST(FiniteDiff, DetectsWrongGradient) {
  // A custom op whose backward is deliberately off by a factor of two.
  const Tensor w = Tensor::from({1}, {1.5}, true);
  auto bad_square = [&] {
    const double v = w.values()[0];
    return Tensor::make_result({}, {v * v}, "bad_square", {w}, [](detail::Node& self) {
      auto& p = *self.parents[0];
      p.grad_buffer()[0] += self.grad[0] * 4.0 * p.value[0];
    });
  };
  EXPECT_GT(finite_diff_check(bad_square, {{"w", w}}).max_rel_error, 0.1);
}

TEST(FiniteDiff, NonDeterministicLossIsReported) {
  const Tensor w = Tensor::from({1}, {1.0}, true);
  double drift = 0.0;
  auto f = [&] {
    drift += 1e-3;
    return add_scalar(sum(w), drift);
  };
  EXPECT_THROW(finite_diff_check(f, {{"w", w}}), DeterminismError);
}

TEST(FiniteDiff, AttentionSublayer) {
  DeterministicScope det;
  CounterRng rng(7);
  MultiHeadAttention mha(8, 2, rng);
  const Tensor x = Tensor::randn({3, 8}, rng, 1.0, true);
  const Tensor mem = Tensor::randn({4, 8}, rng, 1.0, true);
  const Tensor wt = Tensor::randn({3, 8}, rng);
  const Mask valid{true, true, false, true};
  ParamList pl;
  pl.add("x", x);
  pl.add("mem", mem);
  mha.collect(pl, "mha");
  const auto r = finite_diff_check([&] { return sum(mul(mha(x, mem, valid), wt)); }, pl.items(), 1e-3,
                                   Stencil::FivePoint);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(FiniteDiff, ElementwiseOpsAndReductions) {
  CounterRng rng(8);
  const Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
  const Tensor b = Tensor::uniform({4}, rng, 0.5, 2.0, true);
  const Tensor g = Tensor::full({4}, 1.0, true), beta = Tensor::zeros({4}, true);
  auto f = [&] {
    Tensor y = add(mul(gelu(a), b), softplus(a));
    y = add(y, div(sigmoid(a), b));
    y = layer_norm(y, g, beta);
    Tensor z = log_softmax(y, 1);
    z = add(z, max(exp(scale(a, 0.3)), 0, true));
    return add(sum(mul(z, z)), sum(l2_normalize(a)));
  };
  const auto r = finite_diff_check(f, {{"a", a}, {"b", b}, {"g", g}, {"beta", beta}}, 1e-3, Stencil::FivePoint);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(FiniteDiff, ShapeOps) {
  CounterRng rng(9);
  const Tensor a = Tensor::randn({2, 3, 4}, rng, 1.0, true);
  const Tensor w = Tensor::randn({3, 4, 2}, rng, 1.0, true);
  auto f = [&] {
    const Tensor p = permute(a, {1, 2, 0});                // [3, 4, 2]
    const Tensor c = concat({p, w}, 2);                    // [3, 4, 4]
    const Tensor s = slice(c, 1, 1, 2);                    // [3, 2, 4]
    const Tensor i = index_select(s, 0, {2, 0, 2});        // [3, 2, 4]
    const Tensor t = transpose(reshape(i, {6, 4}), 0, 1);  // [4, 6]
    return sum(mul(t, t));
  };
  const auto r = finite_diff_check(f, {{"a", a}, {"w", w}}, 1e-3, Stencil::FivePoint);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(FiniteDiff, ConvolutionMatchesCentralDifferences) {
  CounterRng rng(10);
  const Tensor x = Tensor::randn({7, 3}, rng, 1.0, true);
  const Tensor w = Tensor::randn({3, 3, 2}, rng, 1.0, true);
  const Tensor b = Tensor::randn({2}, rng, 1.0, true);
  const auto r = finite_diff_check([&] { return sum(square(conv1d(x, w, b, 2, 1))); },
                                   {{"x", x}, {"w", w}, {"b", b}});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

}  // namespace
}  // namespace r2g
