#pragma once

// Temporal Feature-Wise Linear Modulation.
//
// Activations F[N, T, C] are cut into T/B blocks of B steps. Each block is
// max-pooled over time to one C-vector, an LSTM scans the pooled blocks in
// temporal order from a zero state, and a linear head maps each hidden state
// to per-channel (gamma, beta). Every activation in block b is then replaced
// by gamma[b,c] * F + beta[b,c].

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "tfilm/autodiff.hpp"
#include "tfilm/layers.hpp"
#include "tfilm/rng.hpp"
#include "tfilm/tensor.hpp"

namespace tfilm {

struct TfilmLayerParams {
  std::size_t block_len = 1;
  std::size_t channels = 0;
  LstmParams lstm;       // input C, hidden H
  ad::Var proj_weight;   // [H or 2H, 2C]; first C columns -> gamma, last C -> beta
  ad::Var proj_bias;     // [2C]
  // Intermediate pooling window. A (f, s) max pool followed by the block-wide
  // max equals the block-wide max, so only the latter is computed.
  std::size_t pool_extent = 2;
  std::size_t pool_stride = 2;

  bool bidirectional() const { return lstm.bidirectional; }
};

// With `zero_projection` the layer starts as the exact identity (gamma = 1,
// beta = 0) regardless of the LSTM weights.
inline TfilmLayerParams make_tfilm(std::size_t channels, std::size_t block_len, bool bidirectional, SplitMix64& rng,
                                   bool zero_projection = true) {
  TfilmLayerParams p;
  p.block_len = block_len;
  p.channels = channels;
  p.lstm = make_lstm(channels, channels, bidirectional, rng);
  Tensor w(Shape{p.lstm.output_size(), 2 * channels});
  if (!zero_projection) {
    const double a = 1.0 / std::sqrt(static_cast<double>(p.lstm.output_size()));
    for (double& v : w.data()) v = rng.uniform(-a, a);
  }
  p.proj_weight = ad::parameter(std::move(w), "tfilm.proj.w");
  p.proj_bias = ad::parameter(Tensor(Shape{2 * channels}), "tfilm.proj.b");
  return p;
}

inline std::vector<std::pair<std::string, ad::Var>> tfilm_parameters(const TfilmLayerParams& p) {
  std::vector<std::pair<std::string, ad::Var>> out{{"lstm.fwd.w", p.lstm.fwd.w},
                                                   {"lstm.fwd.u", p.lstm.fwd.u},
                                                   {"lstm.fwd.b", p.lstm.fwd.b}};
  if (p.bidirectional()) {
    out.emplace_back("lstm.bwd.w", p.lstm.bwd.w);
    out.emplace_back("lstm.bwd.u", p.lstm.bwd.u);
    out.emplace_back("lstm.bwd.b", p.lstm.bwd.b);
  }
  out.emplace_back("proj.w", p.proj_weight);
  out.emplace_back("proj.b", p.proj_bias);
  return out;
}

// out[n, b, t, c] = gamma[n, b, c] * x[n, b, t, c] + beta[n, b, c]
inline ad::Var modulate_blocks(const ad::Var& x, const ad::Var& gamma, const ad::Var& beta) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) fail(ErrorCode::ShapeMismatch, "modulate_blocks expects [N,nb,B,C]");
  const std::size_t N = xv.dim(0), NB = xv.dim(1), B = xv.dim(2), C = xv.dim(3);
  const Shape gs{N, NB, C};
  if (gamma.shape() != gs || beta.shape() != gs)
    fail(ErrorCode::ShapeMismatch, "modulate_blocks: x " + shape_str(xv.shape()) + ", gamma " +
                                       shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  Tensor y(xv.shape());
  const auto& g = gamma.value();
  const auto& be = beta.value();
  for (std::size_t nb = 0; nb < N * NB; ++nb)
    for (std::size_t t = 0; t < B; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = (nb * B + t) * C + c;
        y[i] = g[nb * C + c] * xv[i] + be[nb * C + c];
      }
  return ad::make_op("modulate_blocks", std::move(y), {x, gamma, beta}, [=](ad::Node& node) {
    const Tensor& xv = node.inputs[0]->value;
    const Tensor& g = node.inputs[1]->value;
    Tensor dx(xv.shape()), dg(gs), db(gs);
    for (std::size_t nb = 0; nb < N * NB; ++nb)
      for (std::size_t t = 0; t < B; ++t)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t i = (nb * B + t) * C + c;
          const double go = node.grad[i];
          dx[i] = go * g[nb * C + c];
          dg[nb * C + c] += go * xv[i];
          db[nb * C + c] += go;
        }
    ad::accumulate(*node.inputs[0], dx);
    ad::accumulate(*node.inputs[1], dg);
    ad::accumulate(*node.inputs[2], db);
  });
}

// Intermediate values of one forward pass, exposed for inspection.
struct TfilmTrace {
  ad::Var blocks;   // [N, T/B, B, C]
  ad::Var pooled;   // [N, T/B, C]
  ad::Var gamma;    // [N, T/B, C]
  ad::Var beta;     // [N, T/B, C]
  ad::Var output;   // [N, T, C]
};

inline TfilmTrace tfilm_trace(const ad::Var& f, const TfilmLayerParams& p, std::size_t block_len) {
  const Tensor& fv = f.value();
  if (fv.rank() != 3) fail(ErrorCode::ShapeMismatch, "tfilm expects [N,T,C], got " + shape_str(fv.shape()));
  const std::size_t N = fv.dim(0), T = fv.dim(1), C = fv.dim(2);
  if (C != p.channels)
    fail(ErrorCode::ChannelMismatch, "tfilm layer built for " + std::to_string(p.channels) + " channels, got " +
                                         std::to_string(C));
  if (block_len == 0 || T % block_len != 0)
    fail(ErrorCode::NonDivisibleLength, "T=" + std::to_string(T) + " not divisible by B=" + std::to_string(block_len));
  const std::size_t nb = T / block_len;

  TfilmTrace tr;
  tr.blocks = ad::reshape(f, {N, nb, block_len, C});
  tr.pooled = ad::reduce_max(tr.blocks, 2);

  std::vector<ad::Var> steps;
  steps.reserve(nb);
  for (std::size_t b = 0; b < nb; ++b) steps.push_back(ad::reshape(ad::slice(tr.pooled, 1, b, b + 1), {N, C}));
  const std::vector<ad::Var> hidden = lstm_sequence(steps, p.lstm);

  const std::size_t hout = p.lstm.output_size();
  const ad::Var hs = ad::reshape(ad::stack(hidden, 1), {N * nb, hout});
  const ad::Var proj = ad::reshape(ad::add_bias(ad::matmul(hs, p.proj_weight), p.proj_bias), {N, nb, 2 * C});
  tr.gamma = ad::add_scalar(ad::slice(proj, 2, 0, C), 1.0);
  tr.beta = ad::slice(proj, 2, C, 2 * C);

  tr.output = ad::reshape(modulate_blocks(tr.blocks, tr.gamma, tr.beta), {N, T, C});
  return tr;
}

inline ad::Var tfilm_forward(const ad::Var& f, const TfilmLayerParams& p, std::size_t block_len) {
  return tfilm_trace(f, p, block_len).output;
}

inline ad::Var tfilm_forward(const ad::Var& f, const TfilmLayerParams& p) {
  return tfilm_forward(f, p, p.block_len);
}

// Perturbs only block `j` of F[N, T, C] and reports the earliest output block
// that changes at all (bitwise). For a unidirectional LSTM this is j; a
// bidirectional one may report an earlier block. nullopt if nothing changed.
inline std::optional<std::size_t> tfilm_causality_probe(const Tensor& f, const TfilmLayerParams& p, std::size_t j,
                                                        std::uint64_t seed = 0) {
  const std::size_t B = p.block_len;
  if (f.rank() != 3 || B == 0 || f.dim(1) % B != 0)
    fail(ErrorCode::NonDivisibleLength, "probe input " + shape_str(f.shape()) + " with B=" + std::to_string(B));
  const std::size_t N = f.dim(0), T = f.dim(1), C = f.dim(2), nb = T / B;
  if (j >= nb) fail(ErrorCode::ShapeMismatch, "block index out of range");

  Tensor g = f;
  SplitMix64 rng(seed);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = j * B; t < (j + 1) * B; ++t)
      for (std::size_t c = 0; c < C; ++c) g[(n * T + t) * C + c] += 0.5 + rng.uniform();

  const Tensor a = tfilm_forward(ad::constant(f), p).value();
  const Tensor b = tfilm_forward(ad::constant(g), p).value();
  for (std::size_t blk = 0; blk < nb; ++blk)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = blk * B; t < (blk + 1) * B; ++t)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t i = (n * T + t) * C + c;
          const double av = a[i], bv = b[i];
          if (std::memcmp(&av, &bv, sizeof(double)) != 0) return blk;
        }
  return std::nullopt;
}

}  // namespace tfilm
