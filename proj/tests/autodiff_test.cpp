#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "vsor/autodiff.hpp"
#include "vsor/gradcheck.hpp"
#include "vsor/gradcheck_suite.hpp"
#include "vsor/rng.hpp"

namespace vsor {
namespace {

void ExpectValues(const Tensor& t, const std::vector<double>& expected, double tol = 1e-12) {
  ASSERT_EQ(t.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t[i], expected[i], tol) << "index " << i;
}

TEST(Tensor, RejectsZeroExtentAndBadData) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, MultiIndexIsRowMajor) {
  Tensor t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at({1, 2}), 5);
  EXPECT_EQ(t.at({0, 1}), 1);
  EXPECT_THROW(t.at({2, 0}), DimensionError);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Tape tape;
  Var eye = tape.constant(Tensor({2, 2}, std::vector<double>{1, 0, 0, 1}));
  Var b = tape.constant(Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}));
  ExpectValues(matmul(eye, b).value(), {1, 2, 3, 4});
}

TEST(Matmul, RowTimesColumn) {
  Tape tape;
  Var a = tape.constant(Tensor({1, 2}, std::vector<double>{1, 2}));
  Var b = tape.constant(Tensor({2, 1}, std::vector<double>{3, 4}));
  Var c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c.value()[0], 11.0);
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(3);
  const double err = grad_check([](Tape&, std::span<const Var> v) { return sum(matmul(v[0], v[1])); },
                                {uniform_tensor({3, 2}, 1, rng), uniform_tensor({2, 4}, 1, rng)});
  EXPECT_LT(err, 1e-6);
}

TEST(Conv1x1, IdentityWeightIsNoOp) {
  Rng rng(4);
  Tape tape;
  Tensor x = uniform_tensor({2, 3, 2, 2}, 1, rng);
  Tensor eye({3, 3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1;
  Var y = conv1x1(tape.constant(x), tape.constant(eye), tape.constant(Tensor({3}, 0.0)));
  ExpectValues(y.value(), x.vector(), 0.0);
}

TEST(Conv1x1, HandExample) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 2, 1, 1}, std::vector<double>{1, 2}));
  Var w = tape.constant(Tensor({2, 2}, std::vector<double>{1, 1, 0, 1}));
  Var b = tape.constant(Tensor({2}, 0.0));
  ExpectValues(conv1x1(x, w, b).value(), {3, 2});
}

TEST(Conv1x1, GradientCheck) {
  Rng rng(5);
  Tensor r = uniform_tensor({2, 3, 2, 2}, 1, rng);
  const double err = grad_check(
      [&r](Tape& t, std::span<const Var> v) { return sum(mul(conv1x1(v[0], v[1], v[2]), t.constant(r))); },
      {uniform_tensor({2, 3, 2, 2}, 1, rng), uniform_tensor({3, 3}, 1, rng), uniform_tensor({3}, 1, rng)});
  EXPECT_LT(err, 1e-6);
}

TEST(Conv1x1, ChannelMismatchThrows) {
  Tape tape;
  EXPECT_THROW(conv1x1(tape.constant(Tensor({1, 2, 1, 1})), tape.constant(Tensor({2, 3})),
                       tape.constant(Tensor({2}))),
               DimensionError);
}

TEST(ScaledSoftmax, ConstantRowIsUniform) {
  Tape tape;
  for (std::size_t d : {1u, 4u, 256u}) {
    Var y = scaled_softmax(tape.constant(Tensor({1, 3}, 7.25)), d);
    ExpectValues(y.value(), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
  }
}

TEST(ScaledSoftmax, HandExample) {
  Tape tape;
  Var y = scaled_softmax(tape.constant(Tensor({1, 2}, std::vector<double>{0, std::log(3.0) * 2})), 4);
  ExpectValues(y.value(), {0.25, 0.75}, 1e-15);
}

TEST(ScaledSoftmax, LargeLogitsStayFinite) {
  Tape tape;
  Var y = scaled_softmax(tape.constant(Tensor({1, 3}, std::vector<double>{1000, 999, -1000})), 1);
  for (double v : y.value().data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(y.value()[0] + y.value()[1] + y.value()[2], 1.0, 1e-15);
}

TEST(ScaledSoftmax, ZeroScaleDimThrows) {
  Tape tape;
  EXPECT_THROW(scaled_softmax(tape.constant(Tensor({1, 2})), 0), DimensionError);
}

TEST(ScaledSoftmax, SelfWeightedSumGradient) {
  Rng rng(6);
  const double err = grad_check([](Tape&, Var x) { return sum(mul(scaled_softmax(x, 4), x)); },
                                uniform_tensor({1, 4}, 1, rng));
  EXPECT_LT(err, 1e-6);
}

TEST(MeanAxis, HandExample) {
  Tape tape;
  Var y = mean_axis(tape.constant(Tensor({2, 2}, std::vector<double>{1, 3, 5, 7})), 0);
  EXPECT_EQ(y.shape(), (Shape{2}));
  ExpectValues(y.value(), {3, 5});
}

TEST(MeanAxis, UnitExtentSqueezes) {
  Tape tape;
  Var y = mean_axis(tape.constant(Tensor({1, 3}, std::vector<double>{1, 2, 3})), 0);
  EXPECT_EQ(y.shape(), (Shape{3}));
  ExpectValues(y.value(), {1, 2, 3}, 0.0);
}

TEST(MeanAxis, AxisOutOfRangeThrows) {
  Tape tape;
  EXPECT_THROW(mean_axis(tape.constant(Tensor({2, 2})), 2), DimensionError);
}

TEST(Linear, IdentityAndHandExample) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 2}, std::vector<double>{1, 2}));
  Var eye = tape.constant(Tensor({2, 2}, std::vector<double>{1, 0, 0, 1}));
  ExpectValues(linear(x, eye, tape.constant(Tensor({2}, 0.0))).value(), {1, 2}, 0.0);
  Var w = tape.constant(Tensor({1, 2}, std::vector<double>{1, -1}));
  ExpectValues(linear(x, w, tape.constant(Tensor({1}, 0.5))).value(), {-0.5});
}

TEST(Linear, GradientCheck) {
  Rng rng(8);
  Tensor r = uniform_tensor({2, 3}, 1, rng);
  const double err = grad_check(
      [&r](Tape& t, std::span<const Var> v) { return sum(mul(linear(v[0], v[1], v[2]), t.constant(r))); },
      {uniform_tensor({2, 5}, 1, rng), uniform_tensor({3, 5}, 1, rng), uniform_tensor({3}, 1, rng)});
  EXPECT_LT(err, 1e-6);
}

TEST(Linear, MismatchThrows) {
  Tape tape;
  EXPECT_THROW(linear(tape.constant(Tensor({1, 3})), tape.constant(Tensor({2, 2})), tape.constant(Tensor({2}))),
               DimensionError);
}

TEST(GradCheck, SumHasUnitGradient) {
  Rng rng(9);
  Tape tape;
  Var x = tape.variable(uniform_tensor({2, 3}, 1, rng));
  tape.backward(sum(x));
  ExpectValues(tape.grad(x), std::vector<double>(6, 1.0), 0.0);
  EXPECT_LT(grad_check([](Tape&, Var v) { return sum(v); }, uniform_tensor({2, 3}, 1, rng)), 1e-9);
}

TEST(GradCheck, MatmulSoftmaxMeanComposite) {
  Rng rng(10);
  const double err = grad_check(
      [](Tape&, std::span<const Var> v) {
        Var logits = matmul(v[0], v[1]);
        return sum(mul(mean_axis(scaled_softmax(logits, 3), 0), mean_axis(logits, 0)));
      },
      {uniform_tensor({3, 2}, 1, rng), uniform_tensor({2, 3}, 1, rng)});
  EXPECT_LT(err, 1e-5);
}

TEST(GradCheck, InjectedFaultIsDetected) {
  Rng rng(11);
  const double err = grad_check([](Tape&, Var v) { return sum(mul(v, v)); }, uniform_tensor({3}, 1, rng),
                                {.eps = 1e-5, .fault_factor = 1.01});
  EXPECT_GT(err, 1e-3);
}

TEST(GradCheck, NonFiniteValueThrows) {
  EXPECT_THROW(grad_check([](Tape&, Var v) { return sum(affine(v, 1e308, 0) ); },
                          Tensor({2}, std::vector<double>{10, 10})),
               NumericError);
}

TEST(GradCheckSuite, EveryCasePassesOnTwentySeeds) {
  for (const GradCheckRow& row : run_gradcheck_suite(2024)) {
    EXPECT_TRUE(row.passed) << row.name << " max error " << row.max_error;
    EXPECT_EQ(row.seeds, 20u);
  }
}

TEST(GradCheckSuite, SameSeedGivesIdenticalTable) {
  const auto a = run_gradcheck_suite(5, 3);
  const auto b = run_gradcheck_suite(5, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].max_error, b[i].max_error) << a[i].name;
}

TEST(Tape, BackwardRequiresScalar) {
  Tape tape;
  Var x = tape.variable(Tensor({2}, 1.0));
  EXPECT_THROW(tape.backward(x), DimensionError);
}

TEST(Tape, ForeignVariableRejected) {
  Tape a, b;
  Var x = a.variable(Tensor({2}, 1.0));
  Var y = b.variable(Tensor({2}, 1.0));
  EXPECT_THROW(add(x, y), Error);
}

TEST(Tape, GradientsAccumulateOverFanOut) {
  Tape tape;
  Var x = tape.variable(Tensor({1}, 3.0));
  tape.backward(sum(add(mul(x, x), x)));
  EXPECT_EQ(tape.grad(x)[0], 7.0);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape tape;
  Var c = tape.constant(Tensor({2}, 2.0));
  Var x = tape.variable(Tensor({2}, 1.0));
  tape.backward(sum(mul(c, x)));
  ExpectValues(tape.grad(c), {0, 0}, 0.0);
  ExpectValues(tape.grad(x), {2, 2}, 0.0);
}

}  // namespace
}  // namespace vsor
