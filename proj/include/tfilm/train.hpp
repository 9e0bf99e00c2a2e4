#pragma once

// Objective, optimizer, training loop with checkpoints, and the evaluation
// harness that reports baseline and model columns side by side.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfilm/autodiff.hpp"
#include "tfilm/data.hpp"
#include "tfilm/dsp.hpp"
#include "tfilm/model.hpp"

namespace tfilm {

// mean((yhat - y)^2), fused into a single node.
inline ad::Var mse_loss(const ad::Var& yhat, const Tensor& y) {
  const Tensor& p = yhat.value();
  detail::require_same_shape(p, y, "mse_loss");
  const double inv = 1.0 / static_cast<double>(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - y[i]) * (p[i] - y[i]);
  return ad::make_op("mse", Tensor::scalar(s * inv), {yhat}, [y, inv](ad::Node& n) {
    const Tensor& p = n.inputs[0]->value;
    Tensor g(p.shape());
    const double go = n.grad[0] * 2.0 * inv;
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = go * (p[i] - y[i]);
    ad::accumulate(*n.inputs[0], g);
  });
}

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t t = 0;
  std::vector<Tensor> m, v;
};

// One bias-corrected update of every params[i] from grads[i].
inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& s) {
  if (params.size() != grads.size()) fail(ErrorCode::ShapeMismatch, "adam: parameter and gradient counts differ");
  if (s.m.empty()) {
    for (const Tensor* p : params) {
      s.m.push_back(Tensor::zeros_like(*p));
      s.v.push_back(Tensor::zeros_like(*p));
    }
  }
  if (s.m.size() != params.size()) fail(ErrorCode::ShapeMismatch, "adam: state built for a different parameter set");
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (g.shape() != p.shape() || s.m[i].shape() != p.shape())
      fail(ErrorCode::ShapeMismatch, "adam: shape mismatch for parameter " + std::to_string(i));
    Tensor& m = s.m[i];
    Tensor& v = s.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * g[j];
      v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * g[j] * g[j];
      const double mh = m[j] / c1, vh = v[j] / c2;
      p[j] -= s.lr * mh / (std::sqrt(vh) + s.eps);
    }
  }
}

inline void adam_step(const std::vector<std::pair<std::string, ad::Var>>& params, AdamState& s) {
  std::vector<Tensor*> ps;
  std::vector<Tensor> gs;
  for (auto [name, v] : params) {
    ps.push_back(&v.mutable_value());
    gs.push_back(v.grad());
  }
  adam_step(ps, gs, s);
}

// ---- inference over whole signals ----

// Runs the model over x [T, k] in non-overlapping tiles of the configured
// patch length; a ragged tail is covered by one extra tile aligned to the end.
inline std::vector<double> predict_signal(const Model& m, const Tensor& x) {
  const std::size_t P = m.config().patch_length, T = x.dim(0), k = x.dim(1);
  if (T < P)
    fail(ErrorCode::LengthInvariantViolation, "signal of length " + std::to_string(T) + " shorter than patch length " +
                                                  std::to_string(P));
  std::vector<double> out(T, 0.0);
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + P <= T; s += P) starts.push_back(s);
  if (starts.back() + P < T) starts.push_back(T - P);
  std::size_t filled = 0;
  for (std::size_t s : starts) {
    Tensor tile(Shape{1, P, k});
    std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(s * k),
              x.data().begin() + static_cast<std::ptrdiff_t>((s + P) * k), tile.data().begin());
    const Tensor y = m.predict(tile);
    for (std::size_t t = std::max(filled, s); t < s + P; ++t) out[t] = y[t - s];
    filled = s + P;
  }
  return out;
}

// ---- training ----

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 3e-4;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  std::string out_dir;  // empty: no checkpoints written
  nlohmann::json meta = nlohmann::json::object();  // stored in checkpoints
  std::function<void(std::size_t epoch, double train_loss, double val_loss)> on_epoch;

  nlohmann::json to_json() const {
    return {{"epochs", epochs}, {"lr", lr}, {"batchSize", batch_size}, {"seed", seed}, {"valFraction", val_fraction}};
  }
};

struct TrainRun {
  nlohmann::json config;
  std::vector<double> epoch_losses;  // mean train MSE per epoch
  std::vector<double> val_losses;    // NaN when there is no validation split
  std::vector<double> val_snr;
  std::vector<std::string> checkpoints;
  std::vector<double> wall_seconds;
  nlohmann::json seeds;
  std::size_t best_epoch = 0;
  std::size_t train_patches = 0;
  std::size_t val_patches = 0;

  nlohmann::json to_json() const {
    auto num = [](const std::vector<double>& v) {
      nlohmann::json a = nlohmann::json::array();
      for (double x : v) a.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
      return a;
    };
    return {{"config", config},        {"epochLosses", num(epoch_losses)}, {"valLosses", num(val_losses)},
            {"valSnr", num(val_snr)},  {"checkpoints", checkpoints},       {"wallSeconds", wall_seconds},
            {"seeds", seeds},          {"bestEpoch", best_epoch},          {"trainPatches", train_patches},
            {"valPatches", val_patches}};
  }
};

// Validation membership by a seeded hash of (signal, offset).
inline bool is_validation_patch(const data::Patch& p, std::uint64_t seed, double fraction) {
  const std::uint64_t h = mix_seed(mix_seed(derive_seed(seed, "split"), p.signal), p.offset);
  return static_cast<double>(h >> 11) * 0x1.0p-53 < fraction;
}

inline void shuffle_indices(std::vector<std::size_t>& idx, std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
}

inline double eval_loss(const Model& m, const data::PatchDataset& ds, const std::vector<std::size_t>& idx,
                        std::size_t batch, double* mean_snr = nullptr) {
  double total = 0.0, snr_sum = 0.0;
  std::size_t snr_n = 0;
  for (std::size_t b = 0; b < idx.size(); b += batch) {
    const std::size_t e = std::min(idx.size(), b + batch);
    auto [src, tgt] = data::make_batch(ds, std::span(idx).subspan(b, e - b));
    const Tensor y = m.predict(src);
    const std::size_t P = y.dim(1);
    for (std::size_t i = 0; i < e - b; ++i) {
      const std::span<const double> yi(y.data().data() + i * P, P), ti(tgt.data().data() + i * P, P);
      total += dsp::mse(yi, ti) * static_cast<double>(P);
      double sig = 0.0;
      for (double v : ti) sig += v * v;
      if (sig > 0.0) {
        const double s = dsp::snr(yi, ti);
        if (std::isfinite(s)) {
          snr_sum += s;
          ++snr_n;
        }
      }
    }
  }
  if (mean_snr) *mean_snr = snr_n ? snr_sum / static_cast<double>(snr_n) : std::numeric_limits<double>::quiet_NaN();
  return total / static_cast<double>(idx.size() * ds.patch_length);
}

// Mutates `model` in place. Checkpoints "last.tflm" (every epoch) and
// "best.tflm" (lowest validation loss, or train loss without a split) go to
// cfg.out_dir when set. A non-finite batch loss aborts before any update or
// checkpoint, so files on disk always hold finite parameters.
inline TrainRun train(Model& model, const data::PatchDataset& ds, const TrainConfig& cfg) {
  if (ds.empty()) fail(ErrorCode::EmptyDataset, "training set has no patches");
  if (cfg.batch_size == 0) fail(ErrorCode::InvalidSpec, "batch size must be >= 1");
  if (ds.patch_length != model.config().patch_length)
    fail(ErrorCode::LengthInvariantViolation, "patch length " + std::to_string(ds.patch_length) +
                                                  " differs from model patch length " +
                                                  std::to_string(model.config().patch_length));

  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    (is_validation_patch(ds.patches[i], cfg.seed, cfg.val_fraction) ? val_idx : train_idx).push_back(i);
  if (train_idx.empty()) {
    train_idx.swap(val_idx);
  }

  TrainRun run;
  run.config = {{"train", cfg.to_json()}, {"model", model.config().to_json()}};
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, "shuffle");
  const std::uint64_t dropout_seed = derive_seed(cfg.seed, "dropout");
  run.seeds = {{"run", cfg.seed}, {"shuffle", shuffle_seed}, {"dropout", dropout_seed}};
  run.train_patches = train_idx.size();
  run.val_patches = val_idx.size();

  const auto params = model.parameters();
  AdamState opt;
  opt.lr = cfg.lr;
  double best = std::numeric_limits<double>::infinity();
  std::size_t step = 0;
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = train_idx;
    shuffle_indices(order, mix_seed(shuffle_seed, epoch));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      auto [src, tgt] = data::make_batch(ds, std::span(order).subspan(b, e - b));
      for (auto [name, v] : params) v.zero_grad();
      const ad::Var loss = mse_loss(model.forward(ad::constant(std::move(src)), Mode::Train, mix_seed(dropout_seed, step)), tgt);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv))
        fail(ErrorCode::NonFiniteLoss, "loss became " + std::to_string(lv) + " at epoch " + std::to_string(epoch) +
                                           ", step " + std::to_string(step));
      ad::backward(loss);
      adam_step(params, opt);
      loss_sum += lv * static_cast<double>(e - b);
      seen += e - b;
      ++step;
    }
    const double train_loss = loss_sum / static_cast<double>(seen);
    double val_snr = std::numeric_limits<double>::quiet_NaN();
    const double val_loss = val_idx.empty() ? std::numeric_limits<double>::quiet_NaN()
                                            : eval_loss(model, ds, val_idx, cfg.batch_size, &val_snr);
    run.epoch_losses.push_back(train_loss);
    run.val_losses.push_back(val_loss);
    run.val_snr.push_back(val_snr);

    const double score = val_idx.empty() ? train_loss : val_loss;
    if (!cfg.out_dir.empty()) {
      nlohmann::json meta = cfg.meta;
      meta["epoch"] = epoch + 1;
      const std::string last = (std::filesystem::path(cfg.out_dir) / "last.tflm").string();
      save_checkpoint(last, model, meta);
      if (score < best) save_checkpoint((std::filesystem::path(cfg.out_dir) / "best.tflm").string(), model, meta);
    }
    if (score < best) {
      best = score;
      run.best_epoch = epoch + 1;
    }
    run.wall_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (cfg.on_epoch) cfg.on_epoch(epoch + 1, train_loss, val_loss);
  }
  if (!cfg.out_dir.empty() && cfg.epochs > 0)
    run.checkpoints = {(std::filesystem::path(cfg.out_dir) / "last.tflm").string(),
                       (std::filesystem::path(cfg.out_dir) / "best.tflm").string()};
  return run;
}

// ---- evaluation ----

enum class Metric { Snr, Lsd, L2 };

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::Snr: return "snr";
    case Metric::Lsd: return "lsd";
    case Metric::L2: return "l2";
  }
  return "?";
}

inline Metric parse_metric(const std::string& s) {
  if (s == "snr") return Metric::Snr;
  if (s == "lsd") return Metric::Lsd;
  if (s == "l2") return Metric::L2;
  fail(ErrorCode::InvalidSpec, "unknown metric '" + s + "' (expected snr, lsd or l2)");
}

// How the model-free column is produced from a pair's source signal.
enum class Baseline {
  Source,      // the source already is the spline-upscaled signal
  SplineFill,  // re-fill zeroed samples by spline through the rest
};

struct EvalOptions {
  std::vector<Metric> metrics{Metric::Snr, Metric::Lsd};
  dsp::StftConfig stft{};
  Baseline baseline = Baseline::Source;
};

struct EvalCell {
  double value = 0.0;
  double masked_value = std::numeric_limits<double>::quiet_NaN();  // L2 over masked positions only
};

struct EvalReport {
  std::vector<std::string> columns;  // "Spline" first, then models in given order
  std::vector<Metric> metrics;
  // rows[pair][column][metric]
  std::vector<std::vector<std::vector<EvalCell>>> rows;

  struct Aggregate {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double masked_mean = std::numeric_limits<double>::quiet_NaN();
    std::size_t count = 0;
    std::size_t infinite = 0;  // +inf SNR values excluded from the mean
  };

  Aggregate aggregate(std::size_t column, std::size_t metric) const {
    Aggregate a;
    double s = 0.0, ms = 0.0;
    std::size_t mn = 0;
    for (const auto& row : rows) {
      const EvalCell& c = row[column][metric];
      if (std::isinf(c.value)) {
        ++a.infinite;
        continue;
      }
      s += c.value;
      ++a.count;
      if (std::isfinite(c.masked_value)) {
        ms += c.masked_value;
        ++mn;
      }
    }
    if (a.count) a.mean = s / static_cast<double>(a.count);
    if (mn) a.masked_mean = ms / static_cast<double>(mn);
    return a;
  }

  std::size_t column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    fail(ErrorCode::InvalidSpec, "no column " + name);
  }
  std::size_t metric_index(Metric m) const {
    for (std::size_t i = 0; i < metrics.size(); ++i)
      if (metrics[i] == m) return i;
    fail(ErrorCode::InvalidSpec, std::string("metric not evaluated: ") + to_string(m));
  }
  double mean(const std::string& column, Metric m) const { return aggregate(column_index(column), metric_index(m)).mean; }

  std::string csv() const {
    std::ostringstream os;
    os << "pair";
    for (const auto& m : metrics)
      for (const auto& c : columns) os << ',' << c << '_' << to_string(m);
    os << '\n';
    os << std::setprecision(17);
    auto cell = [&os](double v) {
      if (std::isinf(v)) os << (v > 0 ? "inf" : "-inf");
      else os << v;
    };
    for (std::size_t r = 0; r < rows.size(); ++r) {
      os << r;
      for (std::size_t m = 0; m < metrics.size(); ++m)
        for (std::size_t c = 0; c < columns.size(); ++c) {
          os << ',';
          cell(rows[r][c][m].value);
        }
      os << '\n';
    }
    os << "mean";
    for (std::size_t m = 0; m < metrics.size(); ++m)
      for (std::size_t c = 0; c < columns.size(); ++c) {
        os << ',';
        cell(aggregate(c, m).mean);
      }
    os << '\n';
    return os.str();
  }

  std::string table() const {
    std::ostringstream os;
    os << std::left << std::setw(10) << "metric";
    for (const auto& c : columns) os << std::right << std::setw(12) << c;
    os << '\n';
    os << std::fixed << std::setprecision(4);
    for (std::size_t m = 0; m < metrics.size(); ++m) {
      os << std::left << std::setw(10) << to_string(metrics[m]);
      std::size_t inf_count = 0;
      for (std::size_t c = 0; c < columns.size(); ++c) {
        const Aggregate a = aggregate(c, m);
        inf_count += a.infinite;
        os << std::right << std::setw(12) << a.mean;
      }
      os << '\n';
      bool any_masked = false;
      for (std::size_t c = 0; c < columns.size(); ++c) any_masked = any_masked || std::isfinite(aggregate(c, m).masked_mean);
      if (metrics[m] == Metric::L2 && any_masked) {
        os << std::left << std::setw(10) << "l2-masked";
        for (std::size_t c = 0; c < columns.size(); ++c) os << std::right << std::setw(12) << aggregate(c, m).masked_mean;
        os << '\n';
      }
      if (inf_count) os << "  (" << inf_count << " infinite values excluded from means)\n";
    }
    return os.str();
  }
};

namespace detail {

inline std::vector<EvalCell> score(std::span<const double> approx, std::span<const double> ref,
                                   const std::vector<std::size_t>& masked, const EvalOptions& opt) {
  std::vector<EvalCell> out;
  for (Metric m : opt.metrics) {
    EvalCell c;
    switch (m) {
      case Metric::Snr: c.value = dsp::snr(approx, ref); break;
      case Metric::Lsd: c.value = dsp::lsd(approx, ref, opt.stft); break;
      case Metric::L2: {
        c.value = std::sqrt(dsp::mse(approx, ref));
        if (!masked.empty()) {
          double s = 0.0;
          for (std::size_t i : masked) s += (approx[i] - ref[i]) * (approx[i] - ref[i]);
          c.masked_value = std::sqrt(s / static_cast<double>(masked.size()));
        }
        break;
      }
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace detail

// Scores the baseline and every model against each pair's target (channel 0).
// L2 is the root-mean-square error; with SplineFill, zeroed source samples
// also get a masked-only L2.
inline EvalReport evaluate(const std::vector<std::pair<std::string, const Model*>>& models,
                           const std::vector<data::SignalPair>& pairs, const EvalOptions& opt = {}) {
  EvalReport rep;
  rep.columns.push_back("Spline");
  for (const auto& [name, m] : models) rep.columns.push_back(name);
  rep.metrics = opt.metrics;
  for (const auto& pair : pairs) {
    const std::vector<double> ref = pair.target.channel(0);
    const std::vector<double> src = pair.source.channel(0);
    std::vector<std::size_t> masked;
    std::vector<double> base = src;
    if (opt.baseline == Baseline::SplineFill) {
      std::vector<bool> flags(src.size());
      for (std::size_t i = 0; i < src.size(); ++i)
        if (src[i] == 0.0) {
          flags[i] = true;
          masked.push_back(i);
        }
      base = dsp::spline_fill(src, flags);
    }
    std::vector<std::vector<EvalCell>> row;
    row.push_back(detail::score(base, ref, masked, opt));
    for (const auto& [name, m] : models) row.push_back(detail::score(predict_signal(*m, pair.source.samples), ref, masked, opt));
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

}  // namespace tfilm
