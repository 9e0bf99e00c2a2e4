#include <gtest/gtest.h>

#include <functional>

#include "tfilm/rng.hpp"
#include "tfilm/tensor.hpp"

using namespace tfilm;

namespace {

Tensor random(Shape s, SplitMix64& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Naive triple loop, kept separate from the library kernel.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c(Shape{a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) s += a.at({i, k}) * b.at({k, j});
      c.at({i, j}) = s;
    }
  return c;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::Io;
}

}  // namespace

TEST(Tensor, ShapeAndSizeAgree) {
  Tensor t(Shape{2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.at({1, 2, 3}), 1.5);
  EXPECT_EQ(code_of([] { Tensor(Shape{2, 0}); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([] { Tensor(Shape{}); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([] { Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}); }), ErrorCode::ShapeMismatch);
}

TEST(Tensor, FlattenUnflattenRoundTrip) {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Shape s(1 + rng.below(4));
    for (auto& e : s) e = 1 + rng.below(5);
    const Tensor t(s);
    for (std::size_t off = 0; off < t.size(); ++off) {
      const auto idx = t.unflatten(off);
      EXPECT_EQ(t.offset(idx), off);
    }
  }
}

TEST(Tensor, RowMajorOffsets) {
  const Tensor t(Shape{2, 3, 4});
  const std::vector<std::size_t> idx{1, 2, 3};
  EXPECT_EQ(t.offset(idx), 1u * 12 + 2u * 4 + 3u);
}

TEST(Tensor, MatmulSmallCase) {
  const Tensor a(Shape{1, 2}, {1, 2});
  const Tensor b(Shape{2, 1}, {3, 4});
  EXPECT_EQ(matmul(a, b), Tensor(Shape{1, 1}, {11}));
}

TEST(Tensor, MatmulMatchesNaiveAndIsAssociative) {
  SplitMix64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), n = 1 + rng.below(5), p = 1 + rng.below(5);
    const Tensor a = random({m, k}, rng), b = random({k, n}, rng), c = random({n, p}, rng);
    const Tensor ab = matmul(a, b);
    const Tensor ref = naive_matmul(a, b);
    for (std::size_t i = 0; i < ab.size(); ++i) EXPECT_NEAR(ab[i], ref[i], 1e-14);
    const Tensor left = matmul(ab, c), right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i)
      EXPECT_LE(std::abs(left[i] - right[i]), 1e-12 * std::max(1.0, std::abs(left[i])));
  }
}

TEST(Tensor, MatmulShapeErrorNamesBothShapes) {
  try {
    matmul(Tensor(Shape{2, 3}), Tensor(Shape{2, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos) << e.what();
  }
}

TEST(Tensor, ElementwiseKernels) {
  SplitMix64 rng(2);
  const Tensor x = random({3, 4}, rng);
  EXPECT_EQ(add(x, Tensor::zeros_like(x)), x);
  EXPECT_EQ(mul(x, Tensor::ones(x.shape())), x);
  EXPECT_EQ(sub(x, x), Tensor::zeros_like(x));
  EXPECT_EQ(scale(x, 2.0), add(x, x));
  EXPECT_EQ(add_scalar(Tensor(Shape{2}, {1, 2}), 0.5), Tensor(Shape{2}, {1.5, 2.5}));
  EXPECT_EQ(code_of([&] { add(x, Tensor(Shape{4, 3})); }), ErrorCode::ShapeMismatch);
}

TEST(Tensor, TransposeTwiceIsIdentity) {
  SplitMix64 rng(3);
  const Tensor x = random({3, 5}, rng);
  EXPECT_EQ(transpose(transpose(x)), x);
  EXPECT_EQ(transpose(x).at({4, 2}), x.at({2, 4}));
}

TEST(Tensor, ReduceMax) {
  EXPECT_EQ(reduce_max(Tensor(Shape{3}, {3, 1, 4}), 0)[0], 4.0);
  std::vector<std::size_t> arg;
  const Tensor m = reduce_max(Tensor(Shape{2, 3}, {1, 5, 5, 7, 2, 7}), 1, &arg);
  EXPECT_EQ(m, Tensor(Shape{2}, {5, 7}));
  EXPECT_EQ(arg, (std::vector<std::size_t>{1, 0}));  // ties go to the earliest index
}

TEST(Tensor, ReduceMean) {
  EXPECT_EQ(reduce_mean(Tensor(Shape{2, 2}, {1, 2, 3, 4}), 0), Tensor(Shape{2}, {2, 3}));
}

TEST(Tensor, ConcatThenSliceRecoversOperands) {
  SplitMix64 rng(4);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Shape sa{2, 3, 4}, sb{2, 3, 4};
    sb[axis] = 5;
    const Tensor a = random(sa, rng), b = random(sb, rng);
    const Tensor c = concat({a, b}, axis);
    EXPECT_EQ(slice(c, axis, 0, sa[axis]), a);
    EXPECT_EQ(slice(c, axis, sa[axis], sa[axis] + sb[axis]), b);
  }
}

TEST(Tensor, BlocksFromDefinition) {
  const Tensor f(Shape{4, 1}, {1, 2, 3, 4});
  const BlockTensor b = reshape_to_blocks(f, 2);
  EXPECT_EQ(b.num_blocks, 2u);
  EXPECT_EQ(b.data, Tensor(Shape{2, 2, 1}, {1, 2, 3, 4}));
  EXPECT_EQ(reshape_from_blocks(b), f);
}

TEST(Tensor, FigureShapes) {
  SplitMix64 rng(6);
  const Tensor f = random({8, 2}, rng);
  const BlockTensor b = reshape_to_blocks(f, 2);
  EXPECT_EQ(b.data.shape(), (Shape{4, 2, 2}));
  EXPECT_EQ(reshape_from_blocks(b).shape(), (Shape{8, 2}));
  for (std::size_t blk = 0; blk < 4; ++blk)
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(b.data.at({blk, t, c}), f.at({blk * 2 + t, c}));
}

TEST(Tensor, BlockRoundTripIsBitExact) {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t B = 1 + rng.below(6), nb = 1 + rng.below(6), C = 1 + rng.below(4);
    const Tensor f = random({B * nb, C}, rng);
    EXPECT_EQ(reshape_from_blocks(reshape_to_blocks(f, B)), f);
  }
}

TEST(Tensor, NonDivisibleBlockLength) {
  EXPECT_EQ(code_of([] { reshape_to_blocks(Tensor(Shape{10, 1}), 3); }), ErrorCode::NonDivisibleLength);
}
