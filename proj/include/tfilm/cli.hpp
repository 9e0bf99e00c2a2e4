#pragma once

// Command-line front end. Lives in a header so tests can drive it in-process;
// tools/tfilm_cli.cpp only forwards argv.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tfilm/data.hpp"
#include "tfilm/gradcheck.hpp"
#include "tfilm/model.hpp"
#include "tfilm/train.hpp"

namespace tfilm::cli {

using nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kCheck = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Data and format problems exit 2; violated invariants and failed checks exit 3.
inline int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::Io:
    case ErrorCode::BadMagic:
    case ErrorCode::TruncatedFile:
    case ErrorCode::UnsupportedWavEncoding:
    case ErrorCode::InvalidSpec:
    case ErrorCode::EmptyDataset:
    case ErrorCode::LengthMismatch:
    case ErrorCode::TooShort:
    case ErrorCode::SignalTooShort:
    case ErrorCode::PatchTooLong:
    case ErrorCode::ZeroReference:
    case ErrorCode::InvalidRate:
    case ErrorCode::InvalidCutoff:
    case ErrorCode::InvalidRipple:
      return kData;
    default:
      return kCheck;
  }
}

// ---- flat dotted configuration ----

inline void flatten_into(const json& j, const std::string& prefix, json& out) {
  if (j.is_object() && !(prefix.empty() && j.empty())) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten_into(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else if (!prefix.empty()) {
    out[prefix] = j;
  }
}

inline json flatten(const json& j) {
  json out = json::object();
  flatten_into(j, "", out);
  return out;
}

inline json default_train_config() {
  json flat = json::object();
  flat["seed"] = 0;
  flat["task"] = "superres";
  flat["data.ratio"] = 2;
  flat["data.rate"] = 0.1;
  flat["data.patchStride"] = 0;
  const json m = ModelConfig{}.to_json();
  for (auto& [k, v] : m.items()) flat["model." + k] = v;
  const json t = TrainConfig{}.to_json();
  for (auto& [k, v] : t.items())
    if (k != "seed") flat["train." + k] = v;
  return flat;
}

inline bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

inline void apply_override(json& flat, const std::string& key, const json& value) {
  if (!flat.contains(key)) throw UsageError("unknown config key '" + key + "'");
  if (!same_kind(flat[key], value))
    throw UsageError("config key '" + key + "' expects " + std::string(flat[key].type_name()) + ", got " +
                     value.dump());
  flat[key] = value;
}

// "key=value"; the value is read as JSON when it parses, else as a string.
inline std::pair<std::string, json> parse_set(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq), text = kv.substr(eq + 1);
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) v = text;
  return {key, v};
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::Io, "cannot open " + path);
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::InvalidSpec, path + " is not valid JSON");
  return j;
}

inline ModelConfig model_config_of(const json& flat) {
  json m = json::object();
  for (auto& [k, v] : flat.items())
    if (k.rfind("model.", 0) == 0) m[k.substr(6)] = v;
  return ModelConfig::from_json(m);
}

inline TrainConfig train_config_of(const json& flat) {
  TrainConfig t;
  t.epochs = flat.at("train.epochs").get<std::size_t>();
  t.lr = flat.at("train.lr").get<double>();
  t.batch_size = flat.at("train.batchSize").get<std::size_t>();
  t.val_fraction = flat.at("train.valFraction").get<double>();
  t.seed = flat.at("seed").get<std::uint64_t>();
  return t;
}

// ---- data directories ----

inline std::vector<std::string> list_signals(const std::string& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::Io, dir + " is not a directory");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".raw" || ext == ".tfs" || ext == ".f32" || ext == ".wav" || ext == ".csv") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) fail(ErrorCode::EmptyDataset, "no signal files (.raw .tfs .f32 .wav .csv) in " + dir);
  return out;
}

inline data::SignalAsset trim_to_multiple(const data::SignalAsset& a, std::size_t r) {
  const std::size_t T = a.length() / r * r;
  if (T == a.length()) return a;
  if (T == 0) fail(ErrorCode::TooShort, "signal shorter than the ratio");
  data::SignalAsset b = a;
  b.samples = Tensor(Shape{T, a.channels},
                     std::vector<double>(a.samples.data().begin(), a.samples.data().begin() + static_cast<std::ptrdiff_t>(T * a.channels)));
  return b;
}

// Channel 0 is masked; other channels pass through as covariates.
inline data::SignalPair mask_pair(const data::SignalAsset& y, double rate, std::uint64_t seed) {
  const data::MaskResult m = data::zero_mask(y.channel(0), rate, seed);
  std::vector<std::vector<double>> chans{m.masked};
  for (std::size_t c = 1; c < y.channels; ++c) chans.push_back(y.channel(c));
  json prov = y.provenance;
  prov["mask"] = {{"rate", rate}, {"seed", seed}, {"zeroed", m.indices.size()}};
  return {data::make_asset(std::move(chans), y.sample_rate, prov), y};
}

inline std::vector<data::SignalPair> task_pairs(const std::vector<std::string>& files, const std::string& task,
                                                std::size_t ratio, double rate, std::uint64_t seed) {
  std::vector<data::SignalPair> pairs;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const data::SignalAsset y = data::read_signal(files[i]);
    if (task == "superres") {
      pairs.push_back(data::make_pairs(trim_to_multiple(y, ratio), ratio));
    } else if (task == "impute") {
      pairs.push_back(mask_pair(y, rate, mix_seed(derive_seed(seed, "mask"), i)));
    } else {
      throw UsageError("task must be superres or impute, got '" + task + "'");
    }
  }
  return pairs;
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::Io, "cannot write " + path);
  os << j.dump(2) << '\n';
}

inline std::string resolved_path(const std::string& out) { return out + ".config.json"; }

inline std::size_t resolve_threads(int flag) {
  if (flag > 0) return static_cast<std::size_t>(flag);
  if (const char* env = std::getenv("TFILM_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("TFILM_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

// ---- the application ----

struct Options {
  int threads = 0;
  bool verbose = false;
  // synth
  std::string spec;
  // shared
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string in, out, data, ckpt, config, module = "all";
  std::size_t ratio = 0;
  double rate = -1.0;
  bool upscale = false;
  std::string metrics = "snr,lsd";
  std::size_t frame_length = 8192;
  std::vector<std::string> sets;
};

class App {
 public:
  App(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(std::vector<std::string> args) {
    CLI::App app{"TFiLM sequence models: synthesis, degradation, training, evaluation and inference"};
    app.require_subcommand(1);
    app.add_option("--threads", o_.threads, "worker cap (falls back to TFILM_THREADS)")->check(CLI::PositiveNumber);
    app.add_flag("-v,--verbose", o_.verbose, "progress on stderr");

    auto* synth = app.add_subcommand("synth", "generate a synthetic signal");
    synth->add_option("--spec", o_.spec, "generator JSON (file or inline)")->required();
    add_seed(synth);
    synth->add_option("--out", o_.out, "output path (.raw/.wav/.csv)")->required();

    auto* degrade = app.add_subcommand("degrade", "low-pass and decimate a signal");
    degrade->add_option("--in", o_.in)->required();
    degrade->add_option("-r,--ratio", o_.ratio)->required()->check(CLI::PositiveNumber);
    degrade->add_option("--out", o_.out)->required();
    degrade->add_flag("--upscale", o_.upscale, "re-expand with a cubic spline to the input length");

    auto* train = app.add_subcommand("train", "train a model on a directory of signals");
    train->add_option("--config", o_.config, "flat or nested JSON config, or a resolved config");
    train->add_option("--data", o_.data)->required();
    train->add_option("--out", o_.out, "run directory")->required();
    train->add_option("--set", o_.sets, "override a config key: key=value")->take_all();
    add_seed(train);

    auto* eval = app.add_subcommand("eval", "score a checkpoint against the spline baseline");
    eval->add_option("--ckpt", o_.ckpt)->required();
    eval->add_option("--data", o_.data)->required();
    eval->add_option("--metrics", o_.metrics, "comma list of snr, lsd, l2");
    eval->add_option("--out", o_.out, "report CSV")->required();
    eval->add_option("-r,--ratio", o_.ratio, "defaults to the checkpoint's training ratio");
    eval->add_option("--rate", o_.rate, "masking rate for imputation checkpoints");
    eval->add_option("--frame-length", o_.frame_length, "STFT frame length for LSD")->check(CLI::PositiveNumber);
    add_seed(eval);

    auto* upsample = app.add_subcommand("upsample", "raise the sampling rate of a signal with a model");
    upsample->add_option("--ckpt", o_.ckpt)->required();
    upsample->add_option("--in", o_.in)->required();
    upsample->add_option("-r,--ratio", o_.ratio, "defaults to the checkpoint's training ratio");
    upsample->add_option("--out", o_.out)->required();

    auto* impute = app.add_subcommand("impute", "fill zeroed samples of a series with a model");
    impute->add_option("--ckpt", o_.ckpt)->required();
    impute->add_option("--in", o_.in)->required();
    impute->add_option("--rate", o_.rate, "zero out this fraction first; omit to treat existing zeros as missing")
        ->check(CLI::Range(0.0, 1.0));
    impute->add_option("--out", o_.out)->required();
    add_seed(impute);

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable layer");
    gc->add_option("--module", o_.module)->check(CLI::IsMember({"all", "layers", "tfilm", "model"}));

    auto* replay = app.add_subcommand("replay", "re-run a command from its resolved-config record");
    replay->add_option("record", o_.config)->required();

    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::CallForHelp&) {
      out_ << app.help();
      return kOk;
    } catch (const CLI::CallForAllHelp&) {
      out_ << app.help("", CLI::AppFormatMode::All);
      return kOk;
    } catch (const CLI::ParseError& e) {
      err_ << "error: " << e.what() << '\n';
      return kUsage;
    }

    try {
      threads_ = resolve_threads(o_.threads);
      if (synth->parsed()) return cmd_synth();
      if (degrade->parsed()) return cmd_degrade();
      if (train->parsed()) return cmd_train();
      if (eval->parsed()) return cmd_eval();
      if (upsample->parsed()) return cmd_upsample();
      if (impute->parsed()) return cmd_impute();
      if (gc->parsed()) return cmd_gradcheck();
      if (replay->parsed()) return cmd_replay();
    } catch (const UsageError& e) {
      err_ << "error: " << e.what() << '\n';
      return kUsage;
    } catch (const Error& e) {
      err_ << "error: " << e.what() << '\n';
      return exit_code_for(e.code());
    } catch (const json::exception& e) {
      err_ << "error: " << e.what() << '\n';
      return kData;
    }
    return kUsage;
  }

 private:
  void add_seed(CLI::App* sub) {
    sub->add_option("--seed", o_.seed)->each([this](const std::string&) { o_.seed_given = true; });
  }

  void log(const std::string& s) {
    if (o_.verbose) err_ << s << '\n';
  }

  // Record of one invocation; `replay` turns it back into argv.
  json record(const std::string& command, const json& flags) const {
    return {{"command", command}, {"flags", flags}, {"threads", threads_}};
  }

  int cmd_synth() {
    json spec;
    if (!o_.spec.empty() && o_.spec.front() == '{') {
      spec = json::parse(o_.spec, nullptr, false);
      if (spec.is_discarded()) fail(ErrorCode::InvalidSpec, "--spec is not valid JSON");
    } else {
      spec = read_json_file(o_.spec);
    }
    const data::SignalAsset a = data::synth_signal(spec, o_.seed);
    data::write_signal(o_.out, a);
    write_json(resolved_path(o_.out), record("synth", {{"spec", spec.dump()}, {"seed", o_.seed}, {"out", o_.out}}));
    log("wrote " + o_.out + " (" + std::to_string(a.length()) + " samples)");
    return kOk;
  }

  int cmd_degrade() {
    const data::SignalAsset x = data::read_signal(o_.in);
    const std::size_t r = o_.ratio;
    std::vector<std::vector<double>> chans;
    for (std::size_t c = 0; c < x.channels; ++c) {
      dsp::Signal low = dsp::degrade(x.channel(c), r);
      if (o_.upscale) {
        low = dsp::spline_upsample(low, r);
        low.resize(x.length());
      }
      chans.push_back(std::move(low));
    }
    json prov = x.provenance;
    prov["degrade"] = {{"ratio", r},          {"filter", "cheby1"}, {"order", dsp::kDegradeOrder},
                       {"rippleDb", dsp::kDegradeRippleDb}, {"zeroPhase", true}, {"upscale", o_.upscale}};
    const std::uint32_t rate = o_.upscale ? x.sample_rate : x.sample_rate / static_cast<std::uint32_t>(r);
    data::write_signal(o_.out, data::make_asset(std::move(chans), rate, prov));
    json flags{{"in", o_.in}, {"ratio", r}, {"out", o_.out}, {"upscale", o_.upscale}};
    write_json(resolved_path(o_.out), record("degrade", flags));
    return kOk;
  }

  json train_config() {
    json flat = default_train_config();
    if (!o_.config.empty()) {
      json file = read_json_file(o_.config);
      if (file.contains("command") && file.contains("config")) file = file.at("config");
      const json given = flatten(file);
      for (auto& [k, v] : given.items()) apply_override(flat, k, v);
    }
    for (const auto& kv : o_.sets) {
      const auto [k, v] = parse_set(kv);
      apply_override(flat, k, v);
    }
    if (o_.seed_given) flat["seed"] = o_.seed;
    return flat;
  }

  int cmd_train() {
    const json flat = train_config();
    const ModelConfig mc = model_config_of(flat);
    TrainConfig tc = train_config_of(flat);
    const std::string task = flat.at("task");
    const std::size_t ratio = flat.at("data.ratio");
    const double rate = flat.at("data.rate");
    const auto files = list_signals(o_.data);
    const auto pairs = task_pairs(files, task, ratio, rate, tc.seed);

    data::PatchDataset ds;
    ds.patch_length = mc.patch_length;
    const std::size_t stride = flat.at("data.patchStride");
    ds.stride = stride == 0 ? std::max<std::size_t>(1, mc.patch_length / 2) : stride;
    for (std::size_t i = 0; i < pairs.size(); ++i) data::append_patches(ds, pairs[i], i);

    fs::create_directories(o_.out);
    json rec = record("train", {{"data", o_.data}, {"out", o_.out}});
    rec["config"] = flat;
    write_json((fs::path(o_.out) / "config.json").string(), rec);

    Model model = build_model(mc, tc.seed);
    tc.out_dir = o_.out;
    tc.meta = {{"task", task}, {"ratio", ratio}, {"rate", rate}, {"seed", tc.seed}, {"config", flat}};
    tc.on_epoch = [this, &tc](std::size_t e, double tl, double vl) {
      log("epoch " + std::to_string(e) + "/" + std::to_string(tc.epochs) + " train " + std::to_string(tl) + " val " +
          std::to_string(vl));
    };
    log("training on " + std::to_string(ds.size()) + " patches from " + std::to_string(files.size()) + " files, " +
        std::to_string(model.count_params()) + " parameters");
    const TrainRun run = train(model, ds, tc);
    json rj = run.to_json();
    rj["parameters"] = model.count_params();
    rj["threads"] = threads_;
    write_json((fs::path(o_.out) / "run.json").string(), rj);
    std::ofstream loss((fs::path(o_.out) / "losses.csv").string());
    loss << "epoch,train_mse,val_mse,val_snr\n" << std::setprecision(17);
    for (std::size_t e = 0; e < run.epoch_losses.size(); ++e)
      loss << e + 1 << ',' << run.epoch_losses[e] << ',' << run.val_losses[e] << ',' << run.val_snr[e] << '\n';
    out_ << "trained " << run.epoch_losses.size() << " epochs, best epoch " << run.best_epoch << ", checkpoints in "
         << o_.out << '\n';
    return kOk;
  }

  static std::size_t meta_ratio(const json& meta) { return meta.value("ratio", std::size_t{2}); }

  int cmd_eval() {
    const Checkpoint ck = load_checkpoint(o_.ckpt);
    const std::string task = ck.meta.value("task", std::string("superres"));
    const std::size_t ratio = o_.ratio ? o_.ratio : meta_ratio(ck.meta);
    const double rate = o_.rate >= 0.0 ? o_.rate : ck.meta.value("rate", 0.1);
    const std::uint64_t seed = o_.seed_given ? o_.seed : ck.meta.value("seed", std::uint64_t{0});
    EvalOptions opt;
    opt.metrics.clear();
    std::stringstream ss(o_.metrics);
    for (std::string m; std::getline(ss, m, ',');)
      if (!m.empty()) opt.metrics.push_back(parse_metric(m));
    if (opt.metrics.empty()) throw UsageError("no metrics requested");
    opt.stft.frame_length = o_.frame_length;
    opt.baseline = task == "impute" ? Baseline::SplineFill : Baseline::Source;
    const auto files = list_signals(o_.data);
    const auto pairs = task_pairs(files, task, ratio, rate, seed);
    const EvalReport rep = evaluate({{"Model", &ck.model}}, pairs, opt);
    std::ofstream os(o_.out);
    if (!os) fail(ErrorCode::Io, "cannot write " + o_.out);
    os << rep.csv();
    out_ << rep.table();
    json flags{{"ckpt", o_.ckpt}, {"data", o_.data}, {"metrics", o_.metrics}, {"out", o_.out},
               {"ratio", ratio},  {"frame-length", o_.frame_length}, {"seed", seed}};
    if (task == "impute") flags["rate"] = rate;
    write_json(resolved_path(o_.out), record("eval", flags));
    return kOk;
  }

  int cmd_upsample() {
    const Checkpoint ck = load_checkpoint(o_.ckpt);
    const std::size_t r = o_.ratio ? o_.ratio : meta_ratio(ck.meta);
    const data::SignalAsset x = data::read_signal(o_.in);
    Tensor src(Shape{x.length() * r, x.channels});
    for (std::size_t c = 0; c < x.channels; ++c) {
      const dsp::Signal up = dsp::spline_upsample(x.channel(c), r);
      for (std::size_t t = 0; t < up.size(); ++t) src[t * x.channels + c] = up[t];
    }
    std::vector<double> y = predict_signal(ck.model, src);
    json prov = x.provenance;
    prov["upsample"] = {{"ratio", r}, {"checkpoint", o_.ckpt}};
    data::write_signal(o_.out, data::make_asset({std::move(y)}, x.sample_rate * static_cast<std::uint32_t>(r), prov));
    write_json(resolved_path(o_.out), record("upsample", {{"ckpt", o_.ckpt}, {"in", o_.in}, {"ratio", r}, {"out", o_.out}}));
    return kOk;
  }

  int cmd_impute() {
    const Checkpoint ck = load_checkpoint(o_.ckpt);
    const data::SignalAsset x = data::read_signal(o_.in);
    data::SignalAsset src = x;
    if (o_.rate >= 0.0) src = mask_pair(x, o_.rate, mix_seed(derive_seed(o_.seed, "mask"), 0)).source;
    const std::vector<double> pred = predict_signal(ck.model, src.samples);
    // Observed samples are kept; zeroed ones take the model's value.
    std::vector<double> filled = src.channel(0);
    std::size_t n = 0;
    for (std::size_t t = 0; t < filled.size(); ++t)
      if (filled[t] == 0.0) {
        filled[t] = pred[t];
        ++n;
      }
    json prov = src.provenance;
    prov["impute"] = {{"checkpoint", o_.ckpt}, {"filled", n}};
    data::write_signal(o_.out, data::make_asset({std::move(filled)}, x.sample_rate, prov));
    json flags{{"ckpt", o_.ckpt}, {"in", o_.in}, {"out", o_.out}, {"seed", o_.seed}};
    if (o_.rate >= 0.0) flags["rate"] = o_.rate;
    write_json(resolved_path(o_.out), record("impute", flags));
    log("filled " + std::to_string(n) + " samples");
    return kOk;
  }

  int cmd_gradcheck() {
    const auto results = gradcheck::run(o_.module);
    bool ok = true;
    out_ << std::left << std::setw(8) << "module" << std::setw(44) << "case" << std::right << std::setw(14)
         << "max rel err" << std::setw(10) << "coords" << std::setw(8) << "kinks" << std::setw(8) << "floor"
         << std::setw(9) << "seconds" << "  result\n";
    for (const auto& r : results) {
      ok = ok && r.report.pass;
      out_ << std::left << std::setw(8) << r.module << std::setw(44) << r.name << std::right << std::scientific
           << std::setprecision(3) << std::setw(14) << r.report.max_rel_error << std::defaultfloat << std::setw(10)
           << r.report.entries.size() << std::setw(8) << r.report.excluded << std::setw(8) << r.report.unresolved
           << std::fixed << std::setprecision(2) << std::setw(9) << r.seconds << std::defaultfloat << "  "
           << (r.report.pass ? "PASS" : "FAIL") << '\n';
    }
    out_ << (ok ? "all gradient checks passed" : "gradient check FAILED") << " (h=1e-5, tol=1e-4)\n";
    return ok ? kOk : kCheck;
  }

  int cmd_replay() {
    const json rec = read_json_file(o_.config);
    if (!rec.contains("command") || !rec.contains("flags")) fail(ErrorCode::InvalidSpec, o_.config + " is not a run record");
    std::vector<std::string> args{rec.at("command").get<std::string>()};
    for (auto& [k, v] : rec.at("flags").items()) {
      if (v.is_boolean()) {
        if (v.get<bool>()) args.push_back("--" + k);
        continue;
      }
      args.push_back("--" + k);
      args.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }
    if (rec.contains("config")) {
      const std::string tmp = o_.config + ".replay.json";
      write_json(tmp, rec.at("config"));
      args.insert(args.end(), {"--config", tmp});
    }
    App inner(out_, err_);
    return inner.run(args);
  }

  std::ostream& out_;
  std::ostream& err_;
  Options o_;
  std::size_t threads_ = 1;
};

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  App app(out, err);
  return app.run(args);
}

}  // namespace tfilm::cli
