#include <gtest/gtest.h>

#include <cmath>

#include "tfilm/autodiff.hpp"
#include "tfilm/rng.hpp"

using namespace tfilm;

namespace {

Tensor random(Shape s, SplitMix64& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST(Autodiff, SumOfSquares) {
  const ad::Var w = ad::parameter(Tensor(Shape{2}, {1, 2}));
  ad::backward(ad::sum(ad::mul(w, w)));
  EXPECT_EQ(w.grad(), Tensor(Shape{2}, {2, 4}));
}

TEST(Autodiff, IndependentLeafGetsZeros) {
  const ad::Var a = ad::parameter(Tensor(Shape{3}, 1.0));
  const ad::Var b = ad::parameter(Tensor(Shape{3}, 2.0));
  ad::backward(ad::sum(a));
  EXPECT_EQ(b.grad(), Tensor::zeros(Shape{3}));
}

TEST(Autodiff, MseAgainstDetachedCopyHasZeroGradient) {
  SplitMix64 rng(1);
  const ad::Var x = ad::parameter(random({4}, rng));
  const ad::Var d = ad::sub(x, ad::detach(x));
  ad::backward(ad::mean(ad::mul(d, d)));
  EXPECT_EQ(x.grad(), Tensor::zeros(Shape{4}));
}

TEST(Autodiff, RepeatedBackwardAccumulates) {
  const ad::Var w = ad::parameter(Tensor(Shape{2}, {1, 2}));
  ad::backward(ad::sum(ad::mul(w, w)));
  ad::backward(ad::sum(ad::mul(w, w)));
  EXPECT_EQ(w.grad(), Tensor(Shape{2}, {4, 8}));
  ad::Var v = w;
  v.zero_grad();
  EXPECT_FALSE(w.has_grad());
}

TEST(Autodiff, NonScalarRootRejected) {
  const ad::Var w = ad::parameter(Tensor(Shape{2}, {1, 2}));
  try {
    ad::backward(ad::mul(w, w));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonScalarRoot);
  }
}

TEST(Autodiff, SharedSubexpressionCountsTwice) {
  const ad::Var x = ad::parameter(Tensor(Shape{1}, {3.0}));
  const ad::Var y = ad::mul(x, x);
  ad::backward(ad::sum(ad::add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Autodiff, GradientOfSumIsSumOfGradients) {
  SplitMix64 rng(2);
  const ad::Var a = ad::parameter(random({3, 4}, rng));
  const ad::Var b = ad::parameter(random({4, 2}, rng));
  auto f1 = [&] { return ad::sum(ad::tanh(ad::matmul(a, b))); };
  auto f2 = [&] { return ad::sum(ad::sigmoid(ad::matmul(a, b))); };
  ad::backward(f1());
  const Tensor g1 = a.grad();
  ad::Var(a).zero_grad();
  ad::backward(f2());
  const Tensor g2 = a.grad();
  ad::Var(a).zero_grad();
  ad::backward(ad::add(f1(), f2()));
  const Tensor g = a.grad();
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], g1[i] + g2[i], 1e-14);
}

TEST(Autodiff, ConstantsCarryNoGradient) {
  SplitMix64 rng(3);
  const ad::Var c = ad::constant(random({3}, rng));
  const ad::Var p = ad::parameter(random({3}, rng));
  const ad::Var out = ad::sum(ad::mul(c, p));
  ad::backward(out);
  EXPECT_FALSE(c.requires_grad());
  EXPECT_FALSE(c.has_grad());
  EXPECT_EQ(p.grad(), c.value());
}

TEST(GradCheck, SumOfSquaresTightTolerance) {
  SplitMix64 rng(4);
  const ad::Var p = ad::parameter(random({5}, rng));
  ad::GradCheckOptions o;
  o.tol = 1e-6;
  const auto rep = ad::finite_diff_check([&] { return ad::sum(ad::mul(p, p)); }, {{"p", p}}, o);
  EXPECT_TRUE(rep.pass) << rep.max_rel_error;
  EXPECT_EQ(rep.h, 1e-5);
}

TEST(GradCheck, ConstantFunctionPasses) {
  const ad::Var p = ad::parameter(Tensor(Shape{3}, 1.0));
  const auto rep = ad::finite_diff_check([&] { return ad::constant(Tensor::scalar(2.0)); }, {{"p", p}});
  EXPECT_TRUE(rep.pass);
  EXPECT_EQ(rep.max_rel_error, 0.0);
}

TEST(GradCheck, ReluKinkIsExcluded) {
  const ad::Var p = ad::parameter(Tensor(Shape{3}, {0.0, 0.5, -0.5}));
  const auto rep = ad::finite_diff_check([&] { return ad::sum(ad::relu(p)); }, {{"p", p}});
  EXPECT_TRUE(rep.pass);
  EXPECT_EQ(rep.excluded, 1u);
  EXPECT_EQ(rep.entries[0].checked, 2u);
}

TEST(GradCheck, WrongGradientIsCaught) {
  const ad::Var p = ad::parameter(Tensor(Shape{2}, {0.3, -0.7}));
  auto bad_square = [&] {
    Tensor v = p.value();
    for (double& x : v.data()) x *= x;
    return ad::sum(ad::make_op("bad", std::move(v), {p}, [](ad::Node& n) {
      ad::accumulate(*n.inputs[0], n.inputs[0]->value);  // should be 2x
    }));
  };
  EXPECT_FALSE(ad::finite_diff_check(bad_square, {{"p", p}}).pass);
}

TEST(GradCheck, NonDeterministicFunctionDetected) {
  const ad::Var p = ad::parameter(Tensor(Shape{1}, 1.0));
  int calls = 0;
  try {
    ad::finite_diff_check([&] { return ad::add_scalar(ad::sum(p), static_cast<double>(++calls)); }, {{"p", p}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonDeterministicFunction);
  }
}

TEST(GradCheck, RelativeErrorDefinition) {
  EXPECT_DOUBLE_EQ(ad::relative_error(1.0, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(ad::relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(ad::relative_error(1e-9, 0.0), 0.1);
}

TEST(GradCheck, ElementaryOps) {
  SplitMix64 rng(5);
  const ad::Var a = ad::parameter(random({3, 4}, rng));
  const ad::Var b = ad::parameter(random({4, 2}, rng));
  const ad::Var bias = ad::parameter(random({2}, rng));
  const ad::Var c = ad::parameter(random({3, 4}, rng));
  auto f = [&] {
    const ad::Var h = ad::add_bias(ad::matmul(ad::tanh(ad::mul(a, c)), b), bias);
    const ad::Var s = ad::concat({ad::sigmoid(h), ad::slice(ad::sub(a, c), 1, 1, 3)}, 1);
    const ad::Var m = ad::reduce_max(ad::reshape(s, {3, 2, 2}), 1);
    return ad::add(ad::mean(ad::scale(m, 3.0)), ad::sum(ad::stack({ad::add_scalar(bias, 1.0), bias}, 0)));
  };
  const auto rep = ad::finite_diff_check(f, {{"a", a}, {"b", b}, {"bias", bias}, {"c", c}});
  EXPECT_TRUE(rep.pass) << rep.max_rel_error;
}
