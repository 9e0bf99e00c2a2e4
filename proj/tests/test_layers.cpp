#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "tfilm/gradcheck.hpp"
#include "tfilm/layers.hpp"

using namespace tfilm;

namespace {

Tensor random(Shape s, SplitMix64& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

Conv1dParams fixed_conv(Shape w_shape, std::vector<double> w, std::size_t stride, std::size_t dil, Padding pad) {
  const std::size_t O = w_shape[0];
  return Conv1dParams{ad::parameter(Tensor(std::move(w_shape), std::move(w))), ad::parameter(Tensor(Shape{O})), stride,
                      dil, pad};
}

// Direct evaluation of the cross-correlation definition, independent of the
// packed kernel used by the library.
Tensor conv_oracle(const Tensor& x, const Conv1dParams& p) {
  const Tensor& w = p.weight.value();
  const std::size_t N = x.dim(0), T = x.dim(1), C = x.dim(2), O = w.dim(0), K = w.dim(2);
  const std::size_t keff = (K - 1) * p.dilation + 1;
  const long left = p.padding == Padding::Same ? static_cast<long>((keff - 1) / 2) : 0;
  const std::size_t Tout = p.padding == Padding::Same ? (T + p.stride - 1) / p.stride : (T - keff) / p.stride + 1;
  Tensor y(Shape{N, Tout, O});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < Tout; ++t)
      for (std::size_t o = 0; o < O; ++o) {
        double s = p.bias.value()[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t j = 0; j < K; ++j) {
            const long ti = static_cast<long>(t * p.stride + j * p.dilation) - left;
            if (ti >= 0 && ti < static_cast<long>(T)) s += w.at({o, c, j}) * x.at({n, static_cast<std::size_t>(ti), c});
          }
        y.at({n, t, o}) = s;
      }
  return y;
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

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST(Conv1d, DifferenceKernelValid) {
  const auto p = fixed_conv({1, 1, 2}, {1, -1}, 1, 1, Padding::Valid);
  const Tensor y = conv1d(ad::constant(Tensor(Shape{1, 4, 1}, {1, 2, 3, 4})), p).value();
  EXPECT_EQ(y, Tensor(Shape{1, 3, 1}, {-1, -1, -1}));
}

TEST(Conv1d, IdentityKernel) {
  SplitMix64 rng(1);
  const Tensor x = random({2, 7, 1}, rng);
  const auto p = fixed_conv({1, 1, 1}, {1}, 1, 1, Padding::Same);
  EXPECT_EQ(conv1d(ad::constant(x), p).value(), x);
}

TEST(Conv1d, SameLengthIsCeilOfStride) {
  SplitMix64 rng(2);
  for (std::size_t T : {7u, 8u, 9u})
    for (std::size_t s : {1u, 2u, 3u}) {
      const Conv1dParams p = make_conv1d(2, 3, 5, s, 2, rng);
      const Tensor y = conv1d(ad::constant(random({1, T, 2}, rng)), p).value();
      EXPECT_EQ(y.dim(1), (T + s - 1) / s);
    }
  const Conv1dParams p = make_conv1d(1, 1, 4, 1, 3, rng);
  EXPECT_EQ(p.effective_kernel(), 10u);
}

TEST(Conv1d, MatchesDefinitionOracle) {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = 1 + rng.below(3), O = 1 + rng.below(3), K = 1 + rng.below(5);
    const std::size_t s = 1 + rng.below(3), d = 1 + rng.below(3), T = 12 + rng.below(8);
    const Padding pad = trial % 3 == 0 ? Padding::Valid : Padding::Same;
    Conv1dParams p = make_conv1d(C, O, K, s, d, rng, false, pad);
    for (double& v : p.bias.mutable_value().data()) v = rng.uniform(-1, 1);
    const Tensor x = random({2, T, C}, rng);
    const Tensor y = conv1d(ad::constant(x), p).value(), ref = conv_oracle(x, p);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-13);
  }
}

TEST(Conv1d, OutputChangesOnlyInsideReceptiveField) {
  SplitMix64 rng(4);
  const Conv1dParams p = make_conv1d(1, 2, 3, 1, 2, rng);  // taps at t-2, t, t+2
  const Tensor x = random({1, 16, 1}, rng);
  Tensor x2 = x;
  x2[7] += 1.0;
  const Tensor a = conv1d(ad::constant(x), p).value(), b = conv1d(ad::constant(x2), p).value();
  for (std::size_t t = 0; t < 16; ++t) {
    const bool inside = t == 5 || t == 7 || t == 9;
    for (std::size_t o = 0; o < 2; ++o) EXPECT_EQ(a.at({0, t, o}) != b.at({0, t, o}), inside) << "t=" << t;
  }
}

TEST(Conv1d, Errors) {
  SplitMix64 rng(5);
  const Conv1dParams p = make_conv1d(2, 1, 3, 1, 1, rng);
  EXPECT_EQ(code_of([&] { conv1d(ad::constant(Tensor(Shape{1, 5, 3})), p); }), ErrorCode::ChannelMismatch);
  const Conv1dParams v = make_conv1d(1, 1, 4, 1, 2, rng, false, Padding::Valid);
  EXPECT_EQ(code_of([&] { conv1d(ad::constant(Tensor(Shape{1, 6, 1})), v); }), ErrorCode::KernelLargerThanInput);
}

TEST(MaxPool, WindowEnumeration) {
  const Tensor y = maxpool1d(ad::constant(Tensor(Shape{1, 4, 1}, {3, 1, 4, 1})), 2, 2).value();
  EXPECT_EQ(y, Tensor(Shape{1, 2, 1}, {3, 4}));
}

TEST(MaxPool, IdentityAndConstant) {
  SplitMix64 rng(6);
  const Tensor x = random({2, 9, 3}, rng);
  EXPECT_EQ(maxpool1d(ad::constant(x), 1, 1).value(), x);
  const Tensor y = maxpool1d(ad::constant(Tensor(Shape{1, 9, 2}, 0.25)), 3, 2).value();
  EXPECT_EQ(y.dim(1), 4u);
  for (double v : y.data()) EXPECT_EQ(v, 0.25);
}

TEST(MaxPool, SubsetAndMonotone) {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random({1, 11, 2}, rng);
    Tensor z = x;
    for (double& v : z.data()) v += rng.uniform();
    const Tensor px = maxpool1d(ad::constant(x), 3, 2).value(), pz = maxpool1d(ad::constant(z), 3, 2).value();
    for (std::size_t i = 0; i < px.size(); ++i) {
      EXPECT_NE(std::find(x.data().begin(), x.data().end(), px[i]), x.data().end());
      EXPECT_LE(px[i], pz[i]);
    }
  }
}

TEST(MaxPool, WindowLargerThanInput) {
  EXPECT_EQ(code_of([] { maxpool1d(ad::constant(Tensor(Shape{1, 2, 1})), 3, 1); }), ErrorCode::WindowLargerThanInput);
}

TEST(Subpixel, IndexFormulaExample) {
  const Tensor x(Shape{1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor y = subpixel_shuffle(ad::constant(x), 2).value();
  EXPECT_EQ(y, Tensor(Shape{1, 4, 2}, {1, 3, 2, 4, 5, 7, 6, 8}));
}

TEST(Subpixel, IdentityShapeAndBijection) {
  SplitMix64 rng(8);
  const Tensor x = random({2, 5, 6}, rng);
  EXPECT_EQ(subpixel_shuffle(ad::constant(x), 1).value(), x);
  const Tensor y = subpixel_shuffle(ad::constant(x), 2).value();
  EXPECT_EQ(y.shape(), (Shape{2, 10, 3}));
  // Inverse index map.
  Tensor back(x.shape());
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < 2; ++p) back.at({n, t, c * 2 + p}) = y.at({n, t * 2 + p, c});
  EXPECT_EQ(back, x);
  std::vector<double> a(x.data().begin(), x.data().end()), b(y.data().begin(), y.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(code_of([&] { subpixel_shuffle(ad::constant(x), 4); }), ErrorCode::ChannelsNotDivisible);
}

TEST(Activations, ReluAndDropout) {
  EXPECT_EQ(tfilm::relu(ad::constant(Tensor(Shape{2}, {-1, 2}))).value(), Tensor(Shape{2}, {0, 2}));
  SplitMix64 rng(9);
  const Tensor x = random({2, 50, 3}, rng);
  EXPECT_EQ(dropout(ad::constant(x), 0.0, 1, Mode::Train).value(), x);
  EXPECT_EQ(dropout(ad::constant(x), 0.0, 1, Mode::Eval).value(), x);
  EXPECT_EQ(dropout(ad::constant(x), 0.7, 1, Mode::Eval).value(), x);
  const Tensor y = dropout(ad::constant(x), 0.5, 1, Mode::Train).value();
  EXPECT_EQ(y, dropout(ad::constant(x), 0.5, 1, Mode::Train).value());
  std::size_t kept = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] != 0.0) {
      ++kept;
      EXPECT_DOUBLE_EQ(y[i], 2.0 * x[i]);
    }
  }
  EXPECT_GT(kept, 100u);
  EXPECT_LT(kept, 200u);
  EXPECT_EQ(code_of([&] { dropout(ad::constant(x), 1.0, 1, Mode::Train); }), ErrorCode::InvalidRate);
  EXPECT_EQ(code_of([&] { dropout(ad::constant(x), -0.1, 1, Mode::Eval); }), ErrorCode::InvalidRate);
}

TEST(Lstm, ZeroWeightsGiveZeroOutput) {
  const LstmWeights w{ad::parameter(Tensor(Shape{3, 8})), ad::parameter(Tensor(Shape{2, 8})),
                      ad::parameter(Tensor(Shape{8}))};
  const LstmState s = lstm_step(ad::constant(Tensor(Shape{1, 3}, {1, 2, 3})), lstm_zero_state(1, 2), w);
  EXPECT_EQ(s.h.value(), Tensor::zeros(Shape{1, 2}));
  EXPECT_EQ(s.c.value(), Tensor::zeros(Shape{1, 2}));
}

TEST(Lstm, BiasOnlyClosedForm) {
  // H = 1, gate biases (i, f, o, g) = (0.3, -0.2, 0.5, 0.7), previous c = 0.4.
  const LstmWeights w{ad::parameter(Tensor(Shape{1, 4})), ad::parameter(Tensor(Shape{1, 4})),
                      ad::parameter(Tensor(Shape{4}, {0.3, -0.2, 0.5, 0.7}))};
  const LstmState s0{ad::constant(Tensor(Shape{1, 1}, 0.9)), ad::constant(Tensor(Shape{1, 1}, 0.4))};
  const LstmState s = lstm_step(ad::constant(Tensor(Shape{1, 1})), s0, w);
  const double c = sigmoid(-0.2) * 0.4 + sigmoid(0.3) * std::tanh(0.7);
  EXPECT_NEAR(s.c.value()[0], c, 1e-15);
  EXPECT_NEAR(s.h.value()[0], sigmoid(0.5) * std::tanh(c), 1e-15);
}

TEST(Lstm, StateIsCarried) {
  const LstmWeights w{ad::parameter(Tensor(Shape{1, 4}, {0.5, 0.5, 0.5, 0.5})),
                      ad::parameter(Tensor(Shape{1, 4}, {0.3, 0.3, 0.3, 0.3})), ad::parameter(Tensor(Shape{4}))};
  const ad::Var x = ad::constant(Tensor(Shape{1, 1}, 1.0));
  const LstmState one = lstm_step(x, lstm_zero_state(1, 1), w);
  const LstmState two = lstm_step(x, one, w);
  // Scalar oracle for the second step.
  const double h1 = one.h.value()[0], c1 = one.c.value()[0];
  const double z = 0.5 + 0.3 * h1;
  const double c2 = sigmoid(z) * c1 + sigmoid(z) * std::tanh(z);
  EXPECT_NEAR(two.c.value()[0], c2, 1e-15);
  EXPECT_NEAR(two.h.value()[0], sigmoid(z) * std::tanh(c2), 1e-15);
  EXPECT_NE(two.h.value()[0], h1);
}

TEST(Lstm, ShapesAndInit) {
  SplitMix64 rng(10);
  const LstmParams p = make_lstm(3, 4, true, rng);
  EXPECT_EQ(p.output_size(), 8u);
  const Tensor& b = p.fwd.b.value();
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(b[i], (i >= 4 && i < 8) ? 1.0 : 0.0);
  for (double v : p.fwd.u.value().data()) EXPECT_LE(std::abs(v), 0.5);
  std::vector<ad::Var> xs(5, ad::constant(Tensor(Shape{2, 3}, 0.1)));
  const auto out = lstm_sequence(xs, p);
  ASSERT_EQ(out.size(), 5u);
  EXPECT_EQ(out[0].shape(), (Shape{2, 8}));
  EXPECT_EQ(code_of([&] { lstm_step(ad::constant(Tensor(Shape{2, 2})), lstm_zero_state(2, 4), p.fwd); }),
            ErrorCode::ShapeMismatch);
}

TEST(LayerGradients, AllPassFiniteDifferences) {
  for (const auto& r : gradcheck::run("layers")) {
    EXPECT_TRUE(r.report.pass) << r.name << " max rel error " << r.report.max_rel_error;
    EXPECT_EQ(r.report.unresolved, 0u) << r.name;
  }
}
