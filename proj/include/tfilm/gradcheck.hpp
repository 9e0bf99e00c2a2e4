#pragma once

// Finite-difference checks of every differentiable layer and of a miniature
// end-to-end network, grouped by module.

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "tfilm/autodiff.hpp"
#include "tfilm/layers.hpp"
#include "tfilm/model.hpp"
#include "tfilm/rng.hpp"
#include "tfilm/tfilm.hpp"

namespace tfilm::gradcheck {

struct CaseResult {
  std::string module;
  std::string name;
  ad::GradReport report;
  double seconds = 0.0;
};

struct Case {
  std::string module;
  std::string name;
  std::function<ad::GradReport(const ad::GradCheckOptions&)> run;
};

inline Tensor random_tensor(Shape s, SplitMix64& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

// sum(out * w) with a fixed random w, so every output coordinate matters.
inline ad::Var probe_sum(const ad::Var& out, const Tensor& w) { return ad::sum(ad::mul(out, ad::constant(w))); }

// The miniature network used for end-to-end checks.
inline ModelConfig miniature_config(bool bidirectional = false) {
  ModelConfig c;
  c.K = 2;
  c.patch_length = 64;
  c.max_channels = 8;
  c.blocks_per_tfilm = 4;
  c.bidirectional = bidirectional;
  return c;
}

// Convolution with generic (non-zero) final weights, so gradients reach every
// layer on the first backward pass.
inline void randomize_final(Model& m, std::uint64_t seed, double scale = 0.5) {
  SplitMix64 rng(seed);
  for (auto [name, v] : m.parameters())
    if (name.rfind("final.", 0) == 0 || name.find("proj") != std::string::npos)
      for (double& x : v.mutable_value().data()) x = scale * rng.uniform(-1.0, 1.0);
}

inline std::vector<Case> cases() {
  std::vector<Case> out;

  auto conv_case = [&out](std::string name, std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                          std::size_t dil, Padding pad, std::size_t T) {
    out.push_back({"layers", std::move(name), [=](const ad::GradCheckOptions& o) {
                     SplitMix64 rng(101 + k * 7 + stride * 3 + dil);
                     Conv1dParams p = make_conv1d(c_in, c_out, k, stride, dil, rng, false, pad);
                     for (double& v : p.bias.mutable_value().data()) v = rng.uniform(-0.5, 0.5);
                     const ad::Var x = ad::parameter(random_tensor({2, T, c_in}, rng), "x");
                     const Tensor w = random_tensor({2, p.output_length(T), c_out}, rng);
                     return ad::finite_diff_check([&] { return probe_sum(conv1d(x, p), w); },
                                                  {{"x", x}, {"weight", p.weight}, {"bias", p.bias}}, o);
                   }});
  };
  conv_case("conv1d", 3, 4, 5, 1, 1, Padding::Same, 12);
  conv_case("conv1d stride 2", 3, 4, 5, 2, 1, Padding::Same, 12);
  conv_case("conv1d dilation 2", 2, 3, 3, 1, 2, Padding::Same, 12);
  conv_case("conv1d stride 2 dilation 2", 2, 3, 4, 2, 2, Padding::Same, 13);
  conv_case("conv1d valid", 2, 3, 3, 1, 1, Padding::Valid, 9);

  out.push_back({"layers", "maxpool1d", [](const ad::GradCheckOptions& o) {
                   SplitMix64 rng(7);
                   const ad::Var x = ad::parameter(random_tensor({2, 10, 3}, rng), "x");
                   const Tensor w = random_tensor({2, 4, 3}, rng);
                   return ad::finite_diff_check([&] { return probe_sum(maxpool1d(x, 3, 2), w); }, {{"x", x}}, o);
                 }});

  out.push_back({"layers", "lstm step", [](const ad::GradCheckOptions& o) {
                   SplitMix64 rng(11);
                   const LstmWeights wts = make_lstm_weights(3, 4, rng, "lstm");
                   const ad::Var x = ad::parameter(random_tensor({2, 3}, rng), "x");
                   const ad::Var h0 = ad::parameter(random_tensor({2, 4}, rng, 0.5), "h0");
                   const ad::Var c0 = ad::parameter(random_tensor({2, 4}, rng, 0.5), "c0");
                   const Tensor wh = random_tensor({2, 4}, rng), wc = random_tensor({2, 4}, rng);
                   return ad::finite_diff_check(
                       [&] {
                         const LstmState s = lstm_step(x, {h0, c0}, wts);
                         return ad::add(probe_sum(s.h, wh), probe_sum(s.c, wc));
                       },
                       {{"x", x}, {"h0", h0}, {"c0", c0}, {"w", wts.w}, {"u", wts.u}, {"b", wts.b}}, o);
                 }});

  out.push_back({"layers", "lstm sequence", [](const ad::GradCheckOptions& o) {
                   SplitMix64 rng(13);
                   const LstmParams p = make_lstm(3, 3, false, rng);
                   std::vector<ad::Var> xs;
                   for (int t = 0; t < 4; ++t) xs.push_back(ad::parameter(random_tensor({1, 3}, rng), "x"));
                   const Tensor w = random_tensor({1, 4, 3}, rng);
                   return ad::finite_diff_check(
                       [&] { return probe_sum(ad::stack(lstm_sequence(xs, p), 1), w); },
                       {{"x0", xs[0]}, {"x3", xs[3]}, {"w", p.fwd.w}, {"u", p.fwd.u}, {"b", p.fwd.b}}, o);
                 }});

  out.push_back({"layers", "subpixel", [](const ad::GradCheckOptions& o) {
                   SplitMix64 rng(17);
                   const ad::Var x = ad::parameter(random_tensor({2, 5, 6}, rng), "x");
                   const Tensor w = random_tensor({2, 10, 3}, rng);
                   return ad::finite_diff_check([&] { return probe_sum(subpixel_shuffle(x, 2), w); }, {{"x", x}}, o);
                 }});

  out.push_back({"layers", "dropout (train mode, fixed mask)", [](const ad::GradCheckOptions& o) {
                   SplitMix64 rng(19);
                   const ad::Var x = ad::parameter(random_tensor({2, 6, 3}, rng), "x");
                   const Tensor w = random_tensor({2, 6, 3}, rng);
                   return ad::finite_diff_check([&] { return probe_sum(dropout(x, 0.5, 5, Mode::Train), w); },
                                                {{"x", x}}, o);
                 }});

  auto tfilm_case = [&out](std::string name, bool bidir) {
    out.push_back({"tfilm", std::move(name), [bidir](const ad::GradCheckOptions& o) {
                     SplitMix64 rng(bidir ? 23 : 29);
                     const TfilmLayerParams p = make_tfilm(3, 2, bidir, rng, /*zero_projection=*/false);
                     const ad::Var f = ad::parameter(random_tensor({2, 8, 3}, rng), "F");
                     const Tensor w = random_tensor({2, 8, 3}, rng);
                     std::vector<std::pair<std::string, ad::Var>> params{{"F", f}};
                     for (auto& pr : tfilm_parameters(p)) params.push_back(pr);
                     return ad::finite_diff_check([&] { return probe_sum(tfilm_forward(f, p), w); }, params, o);
                   }});
  };
  tfilm_case("tfilm", false);
  tfilm_case("tfilm bidirectional", true);

  auto model_case = [&out](std::string name, bool bidir) {
    out.push_back({"model", std::move(name), [bidir](const ad::GradCheckOptions& o) {
                     const ModelConfig cfg = miniature_config(bidir);
                     Model m = build_model(cfg, 31);
                     randomize_final(m, 37);
                     SplitMix64 rng(41);
                     const ad::Var x = ad::constant(random_tensor({1, cfg.patch_length, 1}, rng));
                     const Tensor w = random_tensor({1, cfg.patch_length, 1}, rng);
                     return ad::finite_diff_check([&] { return probe_sum(m.forward(x, Mode::Eval), w); },
                                                  m.parameters(), o);
                   }});
  };
  model_case("miniature network K=2 T=64", false);
  model_case("miniature network K=2 T=64 bidirectional", true);
  return out;
}

inline std::vector<std::string> modules() { return {"layers", "tfilm", "model"}; }

// `module` is "all" or one of modules().
inline std::vector<CaseResult> run(const std::string& module, const ad::GradCheckOptions& opt = {}) {
  bool known = module == "all";
  for (const auto& m : modules()) known = known || m == module;
  if (!known) fail(ErrorCode::InvalidSpec, "unknown module '" + module + "' (expected all, layers, tfilm or model)");
  std::vector<CaseResult> results;
  for (const auto& c : cases()) {
    if (module != "all" && module != c.module) continue;
    const auto t0 = std::chrono::steady_clock::now();
    CaseResult r{c.module, c.name, c.run(opt)};
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace tfilm::gradcheck
