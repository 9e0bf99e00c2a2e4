#pragma once

// Signals on disk and in memory, synthetic generators, low/high-resolution
// pairs, patch extraction and the zero-out masking protocol.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfilm/dsp.hpp"
#include "tfilm/model.hpp"
#include "tfilm/rng.hpp"
#include "tfilm/tensor.hpp"

namespace tfilm::data {

using nlohmann::json;

struct SignalAsset {
  std::size_t channels = 1;
  std::uint32_t sample_rate = 0;  // 0 for abstract series
  Tensor samples;                 // [T, channels]
  json provenance = json::object();

  std::size_t length() const { return samples.empty() ? 0 : samples.dim(0); }

  std::vector<double> channel(std::size_t c) const {
    std::vector<double> out(length());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = samples[t * channels + c];
    return out;
  }

  void validate() const {
    if (samples.rank() != 2 || samples.dim(1) != channels || samples.dim(0) == 0)
      fail(ErrorCode::ShapeMismatch, "signal samples must be [T>=1, channels]");
    for (double v : samples.data())
      if (!std::isfinite(v)) fail(ErrorCode::InvalidSpec, "signal contains non-finite samples");
  }
};

inline SignalAsset make_asset(std::vector<std::vector<double>> chans, std::uint32_t rate, json provenance = json::object()) {
  if (chans.empty() || chans[0].empty()) fail(ErrorCode::InvalidSpec, "signal must have at least one sample");
  const std::size_t T = chans[0].size(), k = chans.size();
  SignalAsset a;
  a.channels = k;
  a.sample_rate = rate;
  a.samples = Tensor(Shape{T, k});
  for (std::size_t c = 0; c < k; ++c) {
    if (chans[c].size() != T) fail(ErrorCode::LengthMismatch, "channels differ in length");
    for (std::size_t t = 0; t < T; ++t) a.samples[t * k + c] = chans[c][t];
  }
  a.provenance = std::move(provenance);
  return a;
}

// ---- synthetic generators ----
//
// {"kind": "multisine", "length": n, "sampleRate": fs,
//  "components": [{"freq": f, "amp": a, "phase": p}, ...],   phase optional (random if absent)
//  "random": {"count": m, "freqMin": .., "freqMax": .., "ampMin": .., "ampMax": ..}}   optional
// {"kind": "harmonic", "length", "sampleRate", "f0Min", "f0Max", "harmonics",
//  "rolloffMin", "rolloffMax", "ampMin", "ampMax", "phaseLocked", "notes", "fade"}
// {"kind": "chirp", "length", "sampleRate", "f0", "f1", "amp"}
// {"kind": "noisy-multisine", ...multisine fields..., "noise": sigma}
// {"kind": "random-walk", "length", "start", "sigma", "drift", "seasonAmp", "seasonPeriod"}

namespace detail {

template <typename T>
T field(const json& spec, const char* key, T fallback) {
  if (!spec.contains(key)) return fallback;
  try {
    return spec.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidSpec, std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
T required(const json& spec, const char* key) {
  if (!spec.contains(key)) fail(ErrorCode::InvalidSpec, std::string("missing field '") + key + "'");
  return field<T>(spec, key, T{});
}

inline void add_sine(std::vector<double>& y, double fs, double f, double amp, double phase) {
  const double w = 2.0 * std::numbers::pi * f / fs;
  for (std::size_t t = 0; t < y.size(); ++t) y[t] += amp * std::sin(w * static_cast<double>(t) + phase);
}

inline std::vector<double> multisine(const json& spec, std::size_t n, double fs, SplitMix64& rng) {
  std::vector<double> y(n, 0.0);
  if (spec.contains("components")) {
    if (!spec.at("components").is_array()) fail(ErrorCode::InvalidSpec, "'components' must be an array");
    for (const auto& c : spec.at("components")) {
      const double phase = c.contains("phase") ? field<double>(c, "phase", 0.0)
                                               : rng.uniform(0.0, 2.0 * std::numbers::pi);
      add_sine(y, fs, required<double>(c, "freq"), required<double>(c, "amp"), phase);
    }
  }
  if (spec.contains("random")) {
    const json& r = spec.at("random");
    const auto count = field<std::size_t>(r, "count", 0);
    const double fmin = field<double>(r, "freqMin", 0.0), fmax = field<double>(r, "freqMax", fs / 2);
    const double amin = field<double>(r, "ampMin", 0.0), amax = field<double>(r, "ampMax", 1.0);
    if (fmax < fmin || amax < amin) fail(ErrorCode::InvalidSpec, "random component ranges are inverted");
    for (std::size_t i = 0; i < count; ++i) {
      const double f = rng.uniform(fmin, fmax);
      const double a = rng.uniform(amin, amax);
      add_sine(y, fs, f, a, rng.uniform(0.0, 2.0 * std::numbers::pi));
    }
  }
  return y;
}

}  // namespace detail

inline SignalAsset synth_signal(const json& spec, std::uint64_t seed) {
  using detail::field;
  using detail::required;
  if (!spec.is_object()) fail(ErrorCode::InvalidSpec, "generator spec must be a JSON object");
  const auto kind = required<std::string>(spec, "kind");
  const auto n = required<std::size_t>(spec, "length");
  if (n == 0) fail(ErrorCode::InvalidSpec, "length must be positive");
  const auto rate = field<std::uint32_t>(spec, "sampleRate", 16000);
  const double fs = rate == 0 ? 1.0 : static_cast<double>(rate);
  SplitMix64 rng(derive_seed(seed, "synth"));
  std::vector<double> y;

  if (kind == "multisine" || kind == "noisy-multisine") {
    y = detail::multisine(spec, n, fs, rng);
    if (kind == "noisy-multisine") {
      const double sigma = field<double>(spec, "noise", 0.0);
      if (sigma < 0.0) fail(ErrorCode::InvalidSpec, "noise must be >= 0");
      for (double& v : y) v += sigma * rng.normal();
    }
  } else if (kind == "harmonic") {
    // Harmonic tones with a random fundamental and geometric rolloff. With
    // notes > 1 the signal is a sequence of such tones, each drawn afresh and
    // faded in and out over `fade` samples.
    const double f0_lo = field<double>(spec, "f0Min", 100.0), f0_hi = field<double>(spec, "f0Max", 400.0);
    const double roll_lo = field<double>(spec, "rolloffMin", 0.5), roll_hi = field<double>(spec, "rolloffMax", 0.9);
    const double amp_lo = field<double>(spec, "ampMin", 0.5), amp_hi = field<double>(spec, "ampMax", 1.0);
    const auto count = field<std::size_t>(spec, "harmonics", 8);
    // Phase-locked harmonics keep one waveform shape, shifted in time.
    const bool locked = field<bool>(spec, "phaseLocked", false);
    const auto notes = field<std::size_t>(spec, "notes", 1);
    const auto fade = field<std::size_t>(spec, "fade", 64);
    if (notes == 0 || notes > n) fail(ErrorCode::InvalidSpec, "notes must lie in [1, length]");
    y.assign(n, 0.0);
    for (std::size_t k = 0; k < notes; ++k) {
      const std::size_t b = k * n / notes, e = (k + 1) * n / notes;
      const double f0 = rng.uniform(f0_lo, f0_hi);
      const double roll = rng.uniform(roll_lo, roll_hi);
      const double amp = rng.uniform(amp_lo, amp_hi);
      const double phi0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
      std::vector<double> seg(e - b, 0.0);
      double a = amp;
      for (std::size_t h = 1; h <= count; ++h, a *= roll) {
        const double f = f0 * static_cast<double>(h);
        const double phase = locked ? phi0 * static_cast<double>(h) : rng.uniform(0.0, 2.0 * std::numbers::pi);
        if (f < fs / 2) detail::add_sine(seg, fs, f, a, phase);
      }
      const std::size_t ramp = notes > 1 ? std::min(fade, seg.size() / 2) : 0;
      for (std::size_t t = 0; t < ramp; ++t) {
        const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * (static_cast<double>(t) + 0.5) / static_cast<double>(ramp));
        seg[t] *= g;
        seg[seg.size() - 1 - t] *= g;
      }
      std::copy(seg.begin(), seg.end(), y.begin() + static_cast<std::ptrdiff_t>(b));
    }
  } else if (kind == "chirp") {
    const double f0 = required<double>(spec, "f0"), f1 = required<double>(spec, "f1");
    const double amp = field<double>(spec, "amp", 1.0);
    const double dur = static_cast<double>(n) / fs;
    y.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      const double s = static_cast<double>(t) / fs;
      y[t] = amp * std::sin(2.0 * std::numbers::pi * (f0 * s + 0.5 * (f1 - f0) / dur * s * s));
    }
  } else if (kind == "random-walk") {
    // Positive series: exponentiated Gaussian walk times a seasonal factor.
    const double start = field<double>(spec, "start", 10.0);
    const double sigma = field<double>(spec, "sigma", 0.05);
    const double drift = field<double>(spec, "drift", 0.0);
    const double season_amp = field<double>(spec, "seasonAmp", 0.0);
    const double period = field<double>(spec, "seasonPeriod", 7.0);
    if (!(start > 0.0) || sigma < 0.0 || season_amp < 0.0 || season_amp >= 1.0 || !(period > 0.0))
      fail(ErrorCode::InvalidSpec, "random-walk needs start > 0, sigma >= 0, 0 <= seasonAmp < 1, seasonPeriod > 0");
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    y.resize(n);
    double level = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      if (t > 0) level += drift + sigma * rng.normal();
      const double season = 1.0 + season_amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
      y[t] = start * std::exp(level) * season;
    }
  } else {
    fail(ErrorCode::InvalidSpec, "unknown generator kind '" + kind + "'");
  }
  return make_asset({std::move(y)}, rate, json{{"generator", spec}, {"seed", seed}});
}

// ---- pairs and patches ----

struct SignalPair {
  SignalAsset source;  // degraded and re-expanded (or masked) input
  SignalAsset target;
};

// x = spline_upsample(degrade(y, r), r), channel by channel.
inline SignalPair make_pairs(const SignalAsset& y, std::size_t r) {
  y.validate();
  if (r == 0) fail(ErrorCode::InvalidSpec, "ratio must be >= 1");
  if (y.length() % r != 0)
    fail(ErrorCode::LengthMismatch, "length " + std::to_string(y.length()) + " not divisible by r=" + std::to_string(r));
  std::vector<std::vector<double>> chans;
  for (std::size_t c = 0; c < y.channels; ++c) chans.push_back(dsp::spline_upsample(dsp::degrade(y.channel(c), r), r));
  json prov = y.provenance;
  prov["degrade"] = {{"ratio", r},
                     {"filter", "cheby1"},
                     {"order", dsp::kDegradeOrder},
                     {"rippleDb", dsp::kDegradeRippleDb},
                     {"cutoff", 0.8 / static_cast<double>(r)},
                     {"zeroPhase", true},
                     {"upscale", "natural-cubic-spline"}};
  return {make_asset(std::move(chans), y.sample_rate, std::move(prov)), y};
}

struct Patch {
  Tensor source;  // [P, k]
  Tensor target;  // [P, 1] (channel 0 of the target signal)
  std::size_t signal = 0;
  std::size_t offset = 0;
};

struct PatchDataset {
  std::vector<Patch> patches;
  std::size_t patch_length = 0;
  std::size_t stride = 0;
  std::uint64_t shuffle_seed = 0;

  std::size_t size() const { return patches.size(); }
  bool empty() const { return patches.empty(); }
};

inline std::size_t patch_count(std::size_t length, std::size_t patch_length, std::size_t stride) {
  return (length - patch_length) / stride + 1;
}

inline void append_patches(PatchDataset& ds, const SignalPair& pair, std::size_t signal_index = 0) {
  const std::size_t T = pair.source.length(), P = ds.patch_length, k = pair.source.channels;
  if (pair.target.length() != T) fail(ErrorCode::LengthMismatch, "pair members differ in length");
  if (P == 0 || ds.stride == 0) fail(ErrorCode::InvalidSpec, "patch length and stride must be positive");
  if (P > T) fail(ErrorCode::PatchTooLong, "patch length " + std::to_string(P) + " > signal length " + std::to_string(T));
  const std::size_t kt = pair.target.channels;
  for (std::size_t i = 0, n = patch_count(T, P, ds.stride); i < n; ++i) {
    const std::size_t off = i * ds.stride;
    Patch p{Tensor(Shape{P, k}), Tensor(Shape{P, 1}), signal_index, off};
    for (std::size_t t = 0; t < P; ++t) {
      for (std::size_t c = 0; c < k; ++c) p.source[t * k + c] = pair.source.samples[(off + t) * k + c];
      p.target[t] = pair.target.samples[(off + t) * kt];
    }
    ds.patches.push_back(std::move(p));
  }
}

inline PatchDataset make_patches(const SignalPair& pair, std::size_t patch_length = 8192, std::size_t stride = 0) {
  PatchDataset ds;
  ds.patch_length = patch_length;
  ds.stride = stride == 0 ? std::max<std::size_t>(1, patch_length / 2) : stride;
  append_patches(ds, pair);
  return ds;
}

// Stacks patches [idx...] into source [n, P, k] and target [n, P, 1].
inline std::pair<Tensor, Tensor> make_batch(const PatchDataset& ds, std::span<const std::size_t> idx) {
  if (idx.empty()) fail(ErrorCode::EmptyDataset, "empty batch");
  const Tensor& s0 = ds.patches[idx[0]].source;
  const std::size_t P = s0.dim(0), k = s0.dim(1);
  Tensor src(Shape{idx.size(), P, k}), tgt(Shape{idx.size(), P, 1});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Patch& p = ds.patches[idx[b]];
    std::copy(p.source.data().begin(), p.source.data().end(), src.data().begin() + static_cast<std::ptrdiff_t>(b * P * k));
    std::copy(p.target.data().begin(), p.target.data().end(), tgt.data().begin() + static_cast<std::ptrdiff_t>(b * P));
  }
  return {std::move(src), std::move(tgt)};
}

// ---- masking ----

struct MaskResult {
  std::vector<double> masked;
  std::vector<std::size_t> indices;  // sorted zeroed positions

  std::vector<bool> flags() const {
    std::vector<bool> f(masked.size(), false);
    for (std::size_t i : indices) f[i] = true;
    return f;
  }
};

inline MaskResult zero_mask(std::span<const double> x, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) fail(ErrorCode::InvalidRate, "mask rate must lie in [0, 1]");
  MaskResult r{std::vector<double>(x.begin(), x.end()), {}};
  SplitMix64 rng(derive_seed(seed, "mask"));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = rng.uniform();
    if (u < rate) {
      r.masked[i] = 0.0;
      r.indices.push_back(i);
    }
  }
  return r;
}

// ---- files ----

inline constexpr std::uint16_t kRawVersion = 1;

enum class FileFormat { Raw, Wav, Csv };

inline FileFormat format_for(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".wav") return FileFormat::Wav;
  if (ext == ".csv") return FileFormat::Csv;
  return FileFormat::Raw;
}

inline void write_raw(const std::string& path, const SignalAsset& a) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot write " + path);
  os.write("TFS1", 4);
  io::put_le<std::uint16_t>(os, kRawVersion);
  io::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(a.channels));
  io::put_le<std::uint32_t>(os, a.sample_rate);
  io::put_le<std::uint64_t>(os, a.length());
  for (double v : a.samples.data()) io::put_f32(os, v);
  if (!os) fail(ErrorCode::Io, "write failed for " + path);
}

inline SignalAsset read_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::Io, "cannot open " + path);
  io::Reader r(is, "signal " + path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "TFS1", 4) != 0) fail(ErrorCode::BadMagic, path + " is not a TFS1 signal");
  if (r.le<std::uint16_t>() != kRawVersion) fail(ErrorCode::BadMagic, path + ": unsupported signal version");
  const std::size_t k = r.le<std::uint16_t>();
  const std::uint32_t rate = r.le<std::uint32_t>();
  const std::size_t T = r.le<std::uint64_t>();
  if (k == 0 || T == 0) fail(ErrorCode::InvalidSpec, path + ": empty signal");
  // Size check up front so a bogus header cannot trigger a huge allocation.
  const auto here = is.tellg();
  is.seekg(0, std::ios::end);
  const auto remaining = static_cast<std::uint64_t>(is.tellg() - here);
  is.seekg(here);
  if (remaining / 4 < static_cast<std::uint64_t>(T) * k) fail(ErrorCode::TruncatedFile, path + " ended early");
  SignalAsset a;
  a.channels = k;
  a.sample_rate = rate;
  a.samples = Tensor(Shape{T, k});
  for (double& v : a.samples.data()) v = r.f32();
  return a;
}

inline void write_wav(const std::string& path, const SignalAsset& a) {
  if (a.channels < 1 || a.channels > 2) fail(ErrorCode::UnsupportedWavEncoding, "WAV output supports 1 or 2 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot write " + path);
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(a.samples.size() * 2);
  const std::uint32_t rate = a.sample_rate == 0 ? 16000 : a.sample_rate;
  os.write("RIFF", 4);
  io::put_le<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  io::put_le<std::uint32_t>(os, 16);
  io::put_le<std::uint16_t>(os, 1);
  io::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(a.channels));
  io::put_le<std::uint32_t>(os, rate);
  io::put_le<std::uint32_t>(os, rate * static_cast<std::uint32_t>(a.channels) * 2);
  io::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(a.channels * 2));
  io::put_le<std::uint16_t>(os, 16);
  os.write("data", 4);
  io::put_le<std::uint32_t>(os, data_bytes);
  for (double v : a.samples.data()) {
    const double s = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
    io::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(s)));
  }
  if (!os) fail(ErrorCode::Io, "write failed for " + path);
}

inline SignalAsset read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::Io, "cannot open " + path);
  io::Reader r(is, "WAV " + path);
  char tag[4];
  r.bytes(tag, 4);
  if (std::memcmp(tag, "RIFF", 4) != 0) fail(ErrorCode::BadMagic, path + " is not a RIFF file");
  r.le<std::uint32_t>();
  r.bytes(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0) fail(ErrorCode::BadMagic, path + " is not a WAVE file");
  std::uint16_t fmt = 0, chans = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  for (;;) {
    r.bytes(tag, 4);
    const std::uint32_t size = r.le<std::uint32_t>();
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (size < 16) fail(ErrorCode::UnsupportedWavEncoding, "short fmt chunk");
      fmt = r.le<std::uint16_t>();
      chans = r.le<std::uint16_t>();
      rate = r.le<std::uint32_t>();
      r.le<std::uint32_t>();
      r.le<std::uint16_t>();
      bits = r.le<std::uint16_t>();
      r.str(size - 16 + (size & 1));
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) fail(ErrorCode::UnsupportedWavEncoding, "data chunk before fmt chunk");
      if (fmt != 1 || bits != 16 || chans < 1 || chans > 2)
        fail(ErrorCode::UnsupportedWavEncoding, "only 16-bit PCM mono/stereo is supported (format " +
                                                    std::to_string(fmt) + ", " + std::to_string(bits) + " bits, " +
                                                    std::to_string(chans) + " channels)");
      const std::size_t frames = size / (2u * chans);
      if (frames == 0) fail(ErrorCode::InvalidSpec, path + ": no samples");
      SignalAsset a;
      a.channels = chans;
      a.sample_rate = rate;
      a.samples = Tensor(Shape{frames, static_cast<std::size_t>(chans)});
      for (double& v : a.samples.data()) v = static_cast<double>(static_cast<std::int16_t>(r.le<std::uint16_t>())) / 32768.0;
      return a;
    } else {
      r.str(size + (size & 1));
    }
  }
}

inline void write_csv(const std::string& path, const SignalAsset& a) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::Io, "cannot write " + path);
  for (std::size_t c = 0; c < a.channels; ++c) os << (c ? "," : "") << "ch" << c;
  os << '\n';
  char buf[32];
  for (std::size_t t = 0; t < a.length(); ++t) {
    for (std::size_t c = 0; c < a.channels; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", a.samples[t * a.channels + c]);
      os << (c ? "," : "") << buf;
    }
    os << '\n';
  }
  if (!os) fail(ErrorCode::Io, "write failed for " + path);
}

// A leading non-numeric line is treated as a header.
inline SignalAsset read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::Io, "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (rows.empty() && lineno == 1) continue;
      fail(ErrorCode::InvalidSpec, path + ":" + std::to_string(lineno) + ": non-numeric value");
    }
    if (!rows.empty() && row.size() != rows[0].size())
      fail(ErrorCode::InvalidSpec, path + ":" + std::to_string(lineno) + ": inconsistent column count");
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows[0].empty()) fail(ErrorCode::InvalidSpec, path + ": no data rows");
  std::vector<std::vector<double>> chans(rows[0].size(), std::vector<double>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t c = 0; c < rows[t].size(); ++c) chans[c][t] = rows[t][c];
  return make_asset(std::move(chans), 0);
}

inline std::string sidecar_path(const std::string& path) { return path + ".json"; }

inline void write_signal(const std::string& path, const SignalAsset& a) {
  switch (format_for(path)) {
    case FileFormat::Wav: write_wav(path, a); break;
    case FileFormat::Csv: write_csv(path, a); break;
    case FileFormat::Raw: write_raw(path, a); break;
  }
  std::ofstream side(sidecar_path(path));
  if (!side) fail(ErrorCode::Io, "cannot write " + sidecar_path(path));
  side << json{{"channels", a.channels}, {"sampleRate", a.sample_rate}, {"length", a.length()},
               {"provenance", a.provenance}}
              .dump(2)
       << '\n';
}

// Reads the sidecar provenance when present.
inline SignalAsset read_signal(const std::string& path) {
  SignalAsset a;
  switch (format_for(path)) {
    case FileFormat::Wav: a = read_wav(path); break;
    case FileFormat::Csv: a = read_csv(path); break;
    case FileFormat::Raw: a = read_raw(path); break;
  }
  std::ifstream side(sidecar_path(path));
  if (side) {
    try {
      const json j = json::parse(side);
      if (j.contains("provenance")) a.provenance = j.at("provenance");
      if (a.sample_rate == 0 && j.contains("sampleRate")) a.sample_rate = j.at("sampleRate").get<std::uint32_t>();
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidSpec, sidecar_path(path) + ": " + e.what());
    }
  }
  a.validate();
  return a;
}

}  // namespace tfilm::data
