#pragma once

// 1D building blocks over [N, T, C] activations: convolution, max pooling,
// LSTM cell, subpixel shuffle, ReLU and inverted dropout. Each op is a tape
// node with a hand-written backward pass.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tfilm/autodiff.hpp"
#include "tfilm/rng.hpp"
#include "tfilm/tensor.hpp"

namespace tfilm {

enum class Padding { Same, Valid };

enum class Mode { Train, Eval };

struct Conv1dParams {
  ad::Var weight;  // [outC, inC, kLen]
  ad::Var bias;    // [outC]
  std::size_t stride = 1;
  std::size_t dilation = 1;
  Padding padding = Padding::Same;

  std::size_t out_channels() const { return weight.value().dim(0); }
  std::size_t in_channels() const { return weight.value().dim(1); }
  std::size_t kernel_len() const { return weight.value().dim(2); }
  std::size_t effective_kernel() const { return (kernel_len() - 1) * dilation + 1; }

  std::size_t output_length(std::size_t t) const {
    if (padding == Padding::Same) return (t + stride - 1) / stride;
    const std::size_t k = effective_kernel();
    return k > t ? 0 : (t - k) / stride + 1;
  }
};

// Uniform(-a, a) with a = sqrt(6 / fanIn); `zero` gives an all-zero kernel.
inline Conv1dParams make_conv1d(std::size_t in_c, std::size_t out_c, std::size_t k_len, std::size_t stride,
                                std::size_t dilation, SplitMix64& rng, bool zero = false,
                                Padding padding = Padding::Same) {
  Tensor w(Shape{out_c, in_c, k_len});
  if (!zero) {
    const double a = std::sqrt(6.0 / static_cast<double>(in_c * k_len));
    for (double& v : w.data()) v = rng.uniform(-a, a);
  }
  return Conv1dParams{ad::parameter(std::move(w), "conv.weight"), ad::parameter(Tensor(Shape{out_c}), "conv.bias"),
                      stride, dilation, padding};
}

// Cross-correlation: y[n,t,o] = b[o] + sum_{c,j} w[o,c,j] x~[n, t*stride + j*dilation, c]
// where x~ is x zero-padded by (kEff-1)/2 on the left in Same mode.
inline ad::Var conv1d(const ad::Var& x, const Conv1dParams& p) {
  const Tensor& xv = x.value();
  const Tensor& wv = p.weight.value();
  if (xv.rank() != 3) fail(ErrorCode::ShapeMismatch, "conv1d expects [N,T,C], got " + shape_str(xv.shape()));
  const std::size_t N = xv.dim(0), T = xv.dim(1), C = xv.dim(2);
  const std::size_t O = wv.dim(0), K = wv.dim(2);
  if (wv.dim(1) != C)
    fail(ErrorCode::ChannelMismatch, "conv1d input has " + std::to_string(C) + " channels, kernel expects " +
                                         std::to_string(wv.dim(1)));
  if (p.stride == 0 || p.dilation == 0) fail(ErrorCode::ShapeMismatch, "conv1d stride/dilation must be >= 1");
  const std::size_t k_eff = p.effective_kernel();
  if (p.padding == Padding::Valid && k_eff > T)
    fail(ErrorCode::KernelLargerThanInput, "effective kernel " + std::to_string(k_eff) + " > T=" + std::to_string(T));
  const std::size_t Tout = p.output_length(T);
  const std::ptrdiff_t left = p.padding == Padding::Same ? static_cast<std::ptrdiff_t>((k_eff - 1) / 2) : 0;
  const std::size_t stride = p.stride, dil = p.dilation;

  // Packed as [K][C][O] so the innermost loop runs over contiguous outputs.
  auto packed = std::make_shared<std::vector<double>>(K * C * O);
  {
    auto w = wv.data();
    auto& wp = *packed;
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < K; ++j) wp[(j * C + c) * O + o] = w[(o * C + c) * K + j];
  }

  Tensor y(Shape{N, Tout, O});
  auto yd = y.data();
  auto xd = xv.data();
  auto bd = p.bias.value().data();
  const auto& wp = *packed;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < Tout; ++t) {
      double* yrow = yd.data() + (n * Tout + t) * O;
      for (std::size_t o = 0; o < O; ++o) yrow[o] = bd[o];
      for (std::size_t j = 0; j < K; ++j) {
        const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(t * stride + j * dil) - left;
        if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)) continue;
        const double* xrow = xd.data() + (n * T + static_cast<std::size_t>(ti)) * C;
        const double* wj = wp.data() + j * C * O;
        for (std::size_t c = 0; c < C; ++c) {
          const double xvc = xrow[c];
          const double* wrow = wj + c * O;
          for (std::size_t o = 0; o < O; ++o) yrow[o] += xvc * wrow[o];
        }
      }
    }

  return ad::make_op("conv1d", std::move(y), {x, p.weight, p.bias},
                     [packed, N, T, C, O, K, Tout, left, stride, dil](ad::Node& node) {
    const auto gd = node.grad.data();
    const auto xd = node.inputs[0]->value.data();
    const auto& wp = *packed;
    const bool need_x = node.inputs[0]->requires_grad;
    const bool need_w = node.inputs[1]->requires_grad;
    const bool need_b = node.inputs[2]->requires_grad;
    Tensor dx = need_x ? Tensor(Shape{N, T, C}) : Tensor();
    std::vector<double> dwp(need_w ? K * C * O : 0, 0.0);
    Tensor db = need_b ? Tensor(Shape{O}) : Tensor();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < Tout; ++t) {
        const double* g = gd.data() + (n * Tout + t) * O;
        if (need_b)
          for (std::size_t o = 0; o < O; ++o) db[o] += g[o];
        for (std::size_t j = 0; j < K; ++j) {
          const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(t * stride + j * dil) - left;
          if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)) continue;
          const std::size_t row = (n * T + static_cast<std::size_t>(ti)) * C;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t wofs = (j * C + c) * O;
            if (need_x) {
              const double* wrow = wp.data() + wofs;
              double s = 0.0;
              for (std::size_t o = 0; o < O; ++o) s += g[o] * wrow[o];
              dx[row + c] += s;
            }
            if (need_w) {
              const double xvc = xd[row + c];
              double* dwrow = dwp.data() + wofs;
              for (std::size_t o = 0; o < O; ++o) dwrow[o] += xvc * g[o];
            }
          }
        }
      }
    if (need_x) ad::accumulate(*node.inputs[0], dx);
    if (need_w) {
      Tensor dw(Shape{O, C, K});
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t j = 0; j < K; ++j) dw[(o * C + c) * K + j] = dwp[(j * C + c) * O + o];
      ad::accumulate(*node.inputs[1], dw);
    }
    if (need_b) ad::accumulate(*node.inputs[2], db);
  });
}

// Window maxima over time, per channel. Ties go to the earliest index.
inline ad::Var maxpool1d(const ad::Var& x, std::size_t extent, std::size_t stride) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) fail(ErrorCode::ShapeMismatch, "maxpool1d expects [N,T,C], got " + shape_str(xv.shape()));
  if (extent == 0 || stride == 0) fail(ErrorCode::ShapeMismatch, "maxpool1d extent/stride must be >= 1");
  const std::size_t N = xv.dim(0), T = xv.dim(1), C = xv.dim(2);
  if (extent > T)
    fail(ErrorCode::WindowLargerThanInput, "window " + std::to_string(extent) + " > T=" + std::to_string(T));
  const std::size_t Tout = (T - extent) / stride + 1;
  Tensor y(Shape{N, Tout, C});
  std::vector<std::size_t> arg(y.size());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < Tout; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best_i = t * stride;
        double best = xv[(n * T + best_i) * C + c];
        for (std::size_t k = 1; k < extent; ++k) {
          const std::size_t ti = t * stride + k;
          const double v = xv[(n * T + ti) * C + c];
          if (v > best) {
            best = v;
            best_i = ti;
          }
        }
        const std::size_t o = (n * Tout + t) * C + c;
        y[o] = best;
        arg[o] = (n * T + best_i) * C + c;
      }
  return ad::make_op("maxpool1d", std::move(y), {x}, [arg = std::move(arg)](ad::Node& node) {
    Tensor g = Tensor::zeros_like(node.inputs[0]->value);
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += node.grad[i];
    ad::accumulate(*node.inputs[0], g);
  });
}

// [N, T, C] -> [N, r*T, C/r] with out[n, t*r + p, c] = x[n, t, c*r + p].
inline ad::Var subpixel_shuffle(const ad::Var& x, std::size_t r) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) fail(ErrorCode::ShapeMismatch, "subpixel expects [N,T,C], got " + shape_str(xv.shape()));
  const std::size_t N = xv.dim(0), T = xv.dim(1), C = xv.dim(2);
  if (r == 0 || C % r != 0)
    fail(ErrorCode::ChannelsNotDivisible, std::to_string(C) + " channels not divisible by r=" + std::to_string(r));
  const std::size_t Co = C / r;
  auto index = [=](std::size_t n, std::size_t t, std::size_t p, std::size_t c) {
    return std::pair{((n * T + t) * r + p) * Co + c, (n * T + t) * C + c * r + p};
  };
  Tensor y(Shape{N, T * r, Co});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t p = 0; p < r; ++p)
        for (std::size_t c = 0; c < Co; ++c) {
          const auto [o, i] = index(n, t, p, c);
          y[o] = xv[i];
        }
  return ad::make_op("subpixel", std::move(y), {x}, [=](ad::Node& node) {
    Tensor g(Shape{N, T, C});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t p = 0; p < r; ++p)
          for (std::size_t c = 0; c < Co; ++c) {
            const auto [o, i] = index(n, t, p, c);
            g[i] = node.grad[o];
          }
    ad::accumulate(*node.inputs[0], g);
  });
}

inline ad::Var relu(const ad::Var& x) { return ad::relu(x); }

// Inverted dropout: in Train mode each element is kept with probability
// 1 - rate and scaled by 1/(1 - rate); Eval mode is the identity.
inline ad::Var dropout(const ad::Var& x, double rate, std::uint64_t seed, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorCode::InvalidRate, "dropout rate " + std::to_string(rate));
  if (mode == Mode::Eval || rate == 0.0) return x;
  SplitMix64 rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.value().size());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor y = x.value();
  for (std::size_t i = 0; i < mask.size(); ++i) y[i] *= mask[i];
  return ad::make_op("dropout", std::move(y), {x}, [mask = std::move(mask)](ad::Node& node) {
    Tensor g = node.grad;
    for (std::size_t i = 0; i < mask.size(); ++i) g[i] *= mask[i];
    ad::accumulate(*node.inputs[0], g);
  });
}

// ---- LSTM ----

// One direction of an LSTM. Gate blocks along the 4H axis are ordered
// (input, forget, output, candidate).
struct LstmWeights {
  ad::Var w;  // [D, 4H]
  ad::Var u;  // [H, 4H]
  ad::Var b;  // [4H]
};

struct LstmParams {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  bool bidirectional = false;
  LstmWeights fwd;
  LstmWeights bwd;  // only used when bidirectional

  std::size_t output_size() const { return bidirectional ? 2 * hidden_size : hidden_size; }
};

inline LstmWeights make_lstm_weights(std::size_t d, std::size_t h, SplitMix64& rng, const std::string& prefix) {
  const double a = 1.0 / std::sqrt(static_cast<double>(h));
  Tensor w(Shape{d, 4 * h}), u(Shape{h, 4 * h}), b(Shape{4 * h});
  for (double& v : w.data()) v = rng.uniform(-a, a);
  for (double& v : u.data()) v = rng.uniform(-a, a);
  for (std::size_t i = h; i < 2 * h; ++i) b[i] = 1.0;  // forget gate
  return {ad::parameter(std::move(w), prefix + ".w"), ad::parameter(std::move(u), prefix + ".u"),
          ad::parameter(std::move(b), prefix + ".b")};
}

inline LstmParams make_lstm(std::size_t d, std::size_t h, bool bidirectional, SplitMix64& rng) {
  LstmParams p{d, h, bidirectional, make_lstm_weights(d, h, rng, "lstm.fwd"), {}};
  if (bidirectional) p.bwd = make_lstm_weights(d, h, rng, "lstm.bwd");
  return p;
}

struct LstmState {
  ad::Var h;  // [N, H]
  ad::Var c;  // [N, H]
};

inline LstmState lstm_zero_state(std::size_t batch, std::size_t hidden) {
  return {ad::constant(Tensor(Shape{batch, hidden})), ad::constant(Tensor(Shape{batch, hidden}))};
}

// Standard cell: i,f,o = sigmoid, g = tanh, c' = f*c + i*g, h' = o*tanh(c').
// Returns the new state; the step output is the new hidden state.
inline LstmState lstm_step(const ad::Var& x, const LstmState& s, const LstmWeights& p) {
  const Tensor& xv = x.value();
  const std::size_t H = p.u.value().dim(0);
  if (xv.rank() != 2 || xv.dim(1) != p.w.value().dim(0) || s.h.shape() != Shape{xv.dim(0), H} ||
      s.c.shape() != Shape{xv.dim(0), H})
    fail(ErrorCode::ShapeMismatch, "lstm_step: x " + shape_str(xv.shape()) + ", h " + shape_str(s.h.shape()) +
                                       ", W " + shape_str(p.w.shape()));
  const ad::Var z = ad::add_bias(ad::add(ad::matmul(x, p.w), ad::matmul(s.h, p.u)), p.b);
  const ad::Var i = ad::sigmoid(ad::slice(z, 1, 0, H));
  const ad::Var f = ad::sigmoid(ad::slice(z, 1, H, 2 * H));
  const ad::Var o = ad::sigmoid(ad::slice(z, 1, 2 * H, 3 * H));
  const ad::Var g = ad::tanh(ad::slice(z, 1, 3 * H, 4 * H));
  const ad::Var c = ad::add(ad::mul(f, s.c), ad::mul(i, g));
  const ad::Var h = ad::mul(o, ad::tanh(c));
  return {h, c};
}

// Runs the LSTM over a sequence of [N, D] inputs from a zero state.
// Bidirectional mode concatenates forward and reversed-direction hidden states.
inline std::vector<ad::Var> lstm_sequence(const std::vector<ad::Var>& xs, const LstmParams& p) {
  if (xs.empty()) return {};
  const std::size_t N = xs.front().value().dim(0);
  std::vector<ad::Var> out(xs.size());
  LstmState s = lstm_zero_state(N, p.hidden_size);
  for (std::size_t t = 0; t < xs.size(); ++t) {
    s = lstm_step(xs[t], s, p.fwd);
    out[t] = s.h;
  }
  if (!p.bidirectional) return out;
  LstmState r = lstm_zero_state(N, p.hidden_size);
  for (std::size_t t = xs.size(); t-- > 0;) {
    r = lstm_step(xs[t], r, p.bwd);
    out[t] = ad::concat({out[t], r.h}, 1);
  }
  return out;
}

}  // namespace tfilm
