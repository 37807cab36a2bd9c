// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "fdimtd/autodiff/adam.hpp"
#include "fdimtd/autodiff/finite_diff.hpp"
#include "fdimtd/autodiff/tape.hpp"

namespace fdimtd::ad {
namespace {

Mat random_mat(int r, int c, Rng& rng, double s = 1.0) {
  std::normal_distribution<double> nd(0.0, s);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

TEST(Tape, SquaredNormGradientIsTwoX) {
  Rng rng(1);
  Mat x = random_mat(5, 3, rng);
  Tape t;
  Var v = t.leaf(x);
  t.backward(t.sq_norm(v));
  EXPECT_EQ(t.grad(v), 2.0 * x);
}

TEST(Tape, SineOfDifference) {
  Tape t;
  Var a = t.leaf(Mat::Constant(1, 1, 0.7));
  Var b = t.leaf(Mat::Constant(1, 1, -0.2));
  t.backward(t.sin(t.sub(a, b)));
  EXPECT_NEAR(t.grad(a)(0, 0), std::cos(0.9), 1e-15);
  EXPECT_NEAR(t.grad(b)(0, 0), -std::cos(0.9), 1e-15);
}

TEST(Tape, ThreeLayerTanhNetworkMatchesFiniteDifferences) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    Mat w1 = random_mat(8, 4, rng, 0.5), w2 = random_mat(6, 8, rng, 0.5),
        w3 = random_mat(1, 6, rng, 0.5), b1 = random_mat(8, 1, rng);
    Mat x = random_mat(4, 3, rng);
    ScalarBuilder f = [&](Tape& t, Var in) {
      Var h1 = t.tanh(t.add(t.matmul(t.constant(w1), in), t.constant(b1)));
      Var h2 = t.tanh(t.matmul(t.constant(w2), h1));
      Var h3 = t.sigmoid(t.matmul(t.constant(w3), h2));
      return t.scale(t.sq_norm(h3), 0.5);
    };
    FdReport rep = finite_diff_check(f, x);
    EXPECT_LT(rep.max_rel_error, 1e-4);
    EXPECT_TRUE(rep.kinks.empty());
  }
}

TEST(Tape, ParameterGradientsThroughBroadcastSliceConcat) {
  Rng rng(9);
  Mat x = random_mat(6, 4, rng);
  Mat bias = random_mat(3, 1, rng);
  ScalarBuilder f = [&](Tape& t, Var b) {
    Var xv = t.constant(x);
    Var top = t.slice_rows(xv, 0, 3);
    Var bot = t.slice_rows(xv, 3, 3);
    Var u = t.add(top, b);
    Var v = t.sub(bot, b);
    Var w = t.concat_rows({t.cos(u), t.mul(v, v)});
    return t.add(t.sq_norm(w), t.l1_norm(t.slice_rows(w, 1, 2)));
  };
  EXPECT_LT(finite_diff_check(f, bias).max_rel_error, 1e-6);
}

TEST(Tape, GradientOfSumIsSumOfGradients) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Mat w = random_mat(4, 4, rng);
    Mat x = random_mat(4, 2, rng);
    ScalarBuilder f1 = [&](Tape& t, Var v) {
      return t.sq_norm(t.tanh(t.matmul(t.constant(w), v)));
    };
    ScalarBuilder f2 = [&](Tape& t, Var v) { return t.l1_norm(t.sin(v)); };
    ScalarBuilder both = [&](Tape& t, Var v) { return t.add(f1(t, v), f2(t, v)); };
    Mat g = tape_gradient(both, x);
    Mat gs = tape_gradient(f1, x) + tape_gradient(f2, x);
    EXPECT_LT((g - gs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Tape, BackwardDoesNotRecomputeForwardValues) {
  Rng rng(3);
  Tape t;
  Var x = t.leaf(random_mat(3, 3, rng));
  Var y = t.sq_norm(t.sigmoid(t.matmul(x, x)));
  std::size_t before = t.forward_evals();
  t.backward(y);
  t.backward(y);
  EXPECT_EQ(t.forward_evals(), before);
  EXPECT_EQ(t.size(), before);
}

TEST(Tape, Errors) {
  Tape t;
  Var x = t.leaf(Mat::Ones(2, 2));
  EXPECT_THROW(t.backward(x), DomainError);
  EXPECT_THROW(t.apply("relu", x), DomainError);
  EXPECT_THROW(t.matmul(x, t.leaf(Mat::Ones(3, 1))), DimensionError);
  EXPECT_NO_THROW(t.apply("tanh", x));
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape t;
  Var c = t.constant(Mat::Ones(2, 1));
  Var x = t.leaf(Mat::Ones(2, 1));
  t.backward(t.sq_norm(t.mul(c, x)));
  EXPECT_EQ(t.grad(c), Mat::Zero(2, 1));
  EXPECT_EQ(t.grad(x), 2.0 * Mat::Ones(2, 1));
}

TEST(FiniteDiff, QuadraticIsTight) {
  Rng rng(2);
  Mat a = random_mat(5, 5, rng);
  ScalarBuilder f = [&](Tape& t, Var x) {
    return t.sq_norm(t.matmul(t.constant(a), x));
  };
  EXPECT_LT(finite_diff_check(f, random_mat(5, 1, rng), 1e-4).max_rel_error, 1e-8);
}

TEST(FiniteDiff, LstmCellStep) {
  Rng rng(4);
  const int in = 5, hid = 4;
  Mat w = random_mat(4 * hid, in, rng, 0.4), u = random_mat(4 * hid, hid, rng, 0.4);
  Mat b = random_mat(4 * hid, 1, rng), h0 = random_mat(hid, 1, rng),
      c0 = random_mat(hid, 1, rng);
  ScalarBuilder f = [&](Tape& t, Var x) {
    Var z = t.add(t.add(t.matmul(t.constant(w), x),
                        t.matmul(t.constant(u), t.constant(h0))),
                  t.constant(b));
    Var i = t.sigmoid(t.slice_rows(z, 0, hid));
    Var fg = t.sigmoid(t.slice_rows(z, hid, hid));
    Var o = t.sigmoid(t.slice_rows(z, 2 * hid, hid));
    Var g = t.tanh(t.slice_rows(z, 3 * hid, hid));
    Var c = t.add(t.mul(fg, t.constant(c0)), t.mul(i, g));
    return t.sq_norm(t.mul(o, t.tanh(c)));
  };
  EXPECT_LT(finite_diff_check(f, random_mat(in, 1, rng)).max_rel_error, 1e-4);
}

TEST(FiniteDiff, L1KinkIsFlagged) {
  Mat x(3, 1);
  x << 0.0, 0.5, -1.0;
  ScalarBuilder f = [](Tape& t, Var v) { return t.l1_norm(v); };
  FdReport rep = finite_diff_check(f, x);
  ASSERT_EQ(rep.kinks.size(), 1u);
  EXPECT_EQ(rep.kinks[0], 0);
  EXPECT_LT(rep.max_rel_error, 1e-8);
  EXPECT_EQ(tape_gradient(f, x)(0, 0), 0.0);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Mat p = Mat::Constant(2, 2, 3.0);
  AdamState st({&p}, AdamConfig{});
  for (int i = 0; i < 10; ++i) adam_step(st, {&p}, {Mat::Zero(2, 2)});
  EXPECT_EQ(p, Mat::Constant(2, 2, 3.0));
  EXPECT_EQ(st.steps(), 10);
}

TEST(Adam, DefaultLearningRate) { EXPECT_EQ(AdamConfig{}.lr, 0.001); }

TEST(Adam, ConstantGradientStepsAtLearningRate) {
  Mat p = Mat::Zero(1, 1);
  AdamState st({&p}, AdamConfig{0.01});
  for (int i = 0; i < 50; ++i) {
    double before = p(0, 0);
    adam_step(st, {&p}, {Mat::Constant(1, 1, 7.0)});
    EXPECT_NEAR(before - p(0, 0), 0.01, 1e-6);
  }
}

TEST(Adam, DescendsQuadraticBowl) {
  Rng rng(5);
  Mat p = random_mat(4, 1, rng, 2.0);
  AdamState st({&p}, AdamConfig{0.05});
  double prev = p.squaredNorm();
  for (int i = 0; i < 2000; ++i) adam_step(st, {&p}, {2.0 * p});
  EXPECT_LT(p.squaredNorm(), 1e-3 * prev);
}

TEST(Adam, ShapeMismatchThrows) {
  Mat p = Mat::Zero(2, 2);
  AdamState st({&p}, AdamConfig{});
  EXPECT_THROW(adam_step(st, {&p}, {Mat::Zero(3, 2)}), DimensionError);
}

}  // namespace
}  // namespace fdimtd::ad
