#pragma once

// Scaled-down comparative runs: super-resolution (Spline vs conv-only vs
// TFiLM network) and zero-out imputation, each repeated over several seeds.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfilm/data.hpp"
#include "tfilm/model.hpp"
#include "tfilm/train.hpp"

namespace tfilm::experiments {

using nlohmann::json;

// Width multiplier for which the conv-only variant of `full` has the
// parameter count closest to the full model's.
inline double matched_width(const ModelConfig& full, double* ratio = nullptr) {
  const double target = static_cast<double>(build_model(full, 0).count_params());
  ModelConfig conv = full;
  conv.use_tfilm = false;
  double best_w = 1.0, best_gap = 1e300, best_ratio = 0.0;
  for (double w = 1.0; w <= 4.0; w += 0.01) {
    conv.width = w;
    const double n = static_cast<double>(build_model(conv, 0).count_params());
    const double gap = std::abs(n - target);
    if (gap < best_gap) {
      best_gap = gap;
      best_w = w;
      best_ratio = n / target;
    }
  }
  if (ratio) *ratio = best_ratio;
  return best_w;
}

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<double> means;  // per column, in EvalReport column order
  std::vector<double> masked_means;
  std::size_t full_params = 0;
  std::size_t conv_params = 0;
  double seconds = 0.0;
};

struct Outcome {
  std::vector<std::string> columns;
  std::vector<SeedResult> seeds;

  std::vector<double> mean_of_means() const {
    std::vector<double> m(columns.size(), 0.0);
    for (const auto& s : seeds)
      for (std::size_t c = 0; c < m.size(); ++c) m[c] += s.means[c] / static_cast<double>(seeds.size());
    return m;
  }
  std::vector<double> masked_mean_of_means() const {
    std::vector<double> m(columns.size(), 0.0);
    for (const auto& s : seeds)
      for (std::size_t c = 0; c < m.size(); ++c) m[c] += s.masked_means[c] / static_cast<double>(seeds.size());
    return m;
  }
};

using Progress = std::function<void(const std::string&)>;

// ---- super-resolution ----

struct SuperResConfig {
  std::size_t signals = 64;
  std::size_t test_signals = 16;
  std::size_t length = 8192;
  std::size_t ratio = 2;
  json generator = {{"kind", "harmonic"},   {"length", 8192},      {"sampleRate", 16000},
                    {"f0Min", 200.0},       {"f0Max", 800.0},      {"harmonics", 40},
                    {"rolloffMin", 0.6},    {"rolloffMax", 0.95},  {"ampMin", 0.2},
                    {"ampMax", 1.0},        {"phaseLocked", true}, {"notes", 16}};
  ModelConfig model = [] {
    ModelConfig c;
    c.K = 2;
    c.patch_length = 1024;
    c.max_channels = 16;
    c.blocks_per_tfilm = 32;
    return c;
  }();
  TrainConfig train = [] {
    TrainConfig t;
    t.epochs = 50;
    t.lr = 3e-4;
    t.batch_size = 16;
    return t;
  }();
  std::size_t patch_stride = 0;  // 0: patch length (non-overlapping)
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct Corpus {
  std::vector<data::SignalPair> train, test;
};

inline Corpus superres_corpus(const SuperResConfig& cfg, std::uint64_t seed) {
  Corpus c;
  json gen = cfg.generator;
  gen["length"] = cfg.length;
  for (std::size_t i = 0; i < cfg.signals; ++i) {
    const data::SignalAsset y = data::synth_signal(gen, mix_seed(derive_seed(seed, "corpus"), i));
    (i < cfg.signals - cfg.test_signals ? c.train : c.test).push_back(data::make_pairs(y, cfg.ratio));
  }
  return c;
}

inline data::PatchDataset patches_of(const std::vector<data::SignalPair>& pairs, std::size_t patch, std::size_t stride) {
  data::PatchDataset ds;
  ds.patch_length = patch;
  ds.stride = stride == 0 ? patch : stride;
  for (std::size_t i = 0; i < pairs.size(); ++i) data::append_patches(ds, pairs[i], i);
  return ds;
}

// Columns: Spline, Conv, Full. Metric: SNR (dB), mean over test signals.
inline Outcome run_superres(const SuperResConfig& cfg, const Progress& progress = {}) {
  Outcome out;
  out.columns = {"Spline", "Conv", "Full"};
  ModelConfig full = cfg.model;
  full.use_tfilm = true;
  ModelConfig conv = cfg.model;
  conv.use_tfilm = false;
  conv.width = matched_width(full);
  for (std::uint64_t seed : cfg.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    const Corpus corpus = superres_corpus(cfg, seed);
    const data::PatchDataset ds = patches_of(corpus.train, full.patch_length, cfg.patch_stride);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    Model mf = build_model(full, seed);
    Model mc = build_model(conv, seed);
    train(mf, ds, tc);
    if (progress) progress("seed " + std::to_string(seed) + ": full model trained");
    train(mc, ds, tc);
    if (progress) progress("seed " + std::to_string(seed) + ": conv-only model trained");
    const EvalReport rep = evaluate({{"Conv", &mc}, {"Full", &mf}}, corpus.test, {{Metric::Snr}});
    SeedResult r;
    r.seed = seed;
    for (const auto& c : out.columns) r.means.push_back(rep.mean(c, Metric::Snr));
    r.masked_means = r.means;
    r.full_params = mf.count_params();
    r.conv_params = mc.count_params();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.seeds.push_back(r);
  }
  return out;
}

// ---- imputation ----

struct ImputationConfig {
  std::size_t series = 32;
  std::size_t train_length = 1024;  // leading part of each series
  std::size_t test_length = 256;    // trailing part, held out
  json generator = {{"kind", "random-walk"}, {"start", 1.0},      {"sigma", 0.05},
                    {"drift", 0.0},          {"seasonAmp", 0.3}, {"seasonPeriod", 7.0}};
  std::vector<double> rates{0.1, 0.2, 0.3};
  ModelConfig model = [] {
    ModelConfig c;
    c.K = 2;
    c.patch_length = 256;
    c.max_channels = 16;
    c.blocks_per_tfilm = 32;
    // Stride 2 with dilation 2 only ever reads even input samples, so a zero at
    // an odd position would be invisible.
    c.dilation = 1;
    return c;
  }();
  TrainConfig train = [] {
    TrainConfig t;
    t.epochs = 50;
    t.lr = 3e-4;
    t.batch_size = 16;
    return t;
  }();
  std::size_t patch_stride = 0;  // 0: patch length / 2
  std::vector<std::uint64_t> seeds{1, 2, 3};
  // Divide each series by the mean of its observed training samples. Keeps the
  // held-out tail on a scale the networks have seen.
  bool normalize = true;
};

// Time split: each series' first train_length samples train, the rest test.
inline Corpus imputation_corpus(const ImputationConfig& cfg, double rate, std::uint64_t seed) {
  Corpus c;
  json gen = cfg.generator;
  gen["length"] = cfg.train_length + cfg.test_length;
  gen["sampleRate"] = 0;
  for (std::size_t i = 0; i < cfg.series; ++i) {
    const data::SignalAsset y = data::synth_signal(gen, mix_seed(derive_seed(seed, "series"), i));
    std::vector<double> v = y.channel(0);
    data::MaskResult m = data::zero_mask(v, rate, mix_seed(derive_seed(seed, "mask"), i));
    double scale = 1.0;
    if (cfg.normalize) {
      double s = 0.0;
      std::size_t n = 0;
      for (std::size_t t = 0; t < cfg.train_length; ++t)
        if (m.masked[t] != 0.0) s += m.masked[t], ++n;
      if (n && s > 0.0) scale = s / static_cast<double>(n);
    }
    for (double& x : v) x /= scale;
    for (double& x : m.masked) x /= scale;
    auto part = [&](std::size_t b, std::size_t e) {
      std::vector<double> src(m.masked.begin() + static_cast<std::ptrdiff_t>(b), m.masked.begin() + static_cast<std::ptrdiff_t>(e));
      std::vector<double> tgt(v.begin() + static_cast<std::ptrdiff_t>(b), v.begin() + static_cast<std::ptrdiff_t>(e));
      json prov = y.provenance;
      prov["mask"] = {{"rate", rate}, {"range", {b, e}}, {"scale", scale}};
      return data::SignalPair{data::make_asset({std::move(src)}, 0, prov), data::make_asset({std::move(tgt)}, 0, prov)};
    };
    c.train.push_back(part(0, cfg.train_length));
    c.test.push_back(part(cfg.train_length, cfg.train_length + cfg.test_length));
  }
  return c;
}

struct ImputationOutcome {
  std::vector<double> rates;
  std::vector<Outcome> per_rate;  // columns Spline, Conv, Full; metric L2 (RMSE)
};

inline ImputationOutcome run_imputation(const ImputationConfig& cfg, const Progress& progress = {}) {
  ImputationOutcome out;
  out.rates = cfg.rates;
  ModelConfig full = cfg.model;
  full.use_tfilm = true;
  ModelConfig conv = cfg.model;
  conv.use_tfilm = false;
  conv.width = matched_width(full);
  for (double rate : cfg.rates) {
    Outcome o;
    o.columns = {"Spline", "Conv", "Full"};
    for (std::uint64_t seed : cfg.seeds) {
      const auto t0 = std::chrono::steady_clock::now();
      const Corpus corpus = imputation_corpus(cfg, rate, seed);
      const std::size_t stride = cfg.patch_stride == 0 ? full.patch_length / 2 : cfg.patch_stride;
      const data::PatchDataset ds = patches_of(corpus.train, full.patch_length, stride);
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      Model mf = build_model(full, seed);
      Model mc = build_model(conv, seed);
      train(mf, ds, tc);
      train(mc, ds, tc);
      EvalOptions eo;
      eo.metrics = {Metric::L2};
      eo.baseline = Baseline::SplineFill;
      const EvalReport rep = evaluate({{"Conv", &mc}, {"Full", &mf}}, corpus.test, eo);
      SeedResult r;
      r.seed = seed;
      for (std::size_t c = 0; c < o.columns.size(); ++c) {
        const auto a = rep.aggregate(c, 0);
        r.means.push_back(a.mean);
        r.masked_means.push_back(a.masked_mean);
      }
      r.full_params = mf.count_params();
      r.conv_params = mc.count_params();
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      o.seeds.push_back(r);
      if (progress) progress("rate " + std::to_string(rate) + " seed " + std::to_string(seed) + " done");
    }
    out.per_rate.push_back(std::move(o));
  }
  return out;
}

}  // namespace tfilm::experiments
