#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "tfilm/data.hpp"

using namespace tfilm;
using namespace tfilm::data;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("tfilm_test_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<double> ramp(std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = scale * static_cast<double>(i);
  return v;
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

TEST(Synth, DeterministicPerSeed) {
  const json spec{{"kind", "harmonic"}, {"length", 512}, {"sampleRate", 16000}};
  const SignalAsset a = synth_signal(spec, 1), b = synth_signal(spec, 1), c = synth_signal(spec, 2);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, c.samples);
  EXPECT_EQ(a.length(), 512u);
  EXPECT_EQ(a.provenance.at("seed"), 1);
}

TEST(Synth, MultisineComponents) {
  const json spec{{"kind", "multisine"},
                  {"length", 64},
                  {"sampleRate", 8},
                  {"components", {{{"freq", 1.0}, {"amp", 2.0}, {"phase", 0.0}}}}};
  const SignalAsset a = synth_signal(spec, 0);
  for (std::size_t t = 0; t < 64; ++t)
    EXPECT_NEAR(a.samples[t], 2.0 * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 8.0), 1e-12);
}

TEST(Synth, RandomWalkIsPositive) {
  const json spec{{"kind", "random-walk"}, {"length", 2000}, {"sampleRate", 0}, {"sigma", 0.1}, {"seasonAmp", 0.5}};
  for (double v : synth_signal(spec, 3).samples.data()) EXPECT_GT(v, 0.0);
}

TEST(Synth, InvalidSpecs) {
  EXPECT_EQ(code_of([] { synth_signal(json{{"kind", "nope"}, {"length", 8}}, 0); }), ErrorCode::InvalidSpec);
  EXPECT_EQ(code_of([] { synth_signal(json{{"kind", "chirp"}}, 0); }), ErrorCode::InvalidSpec);
  EXPECT_EQ(code_of([] { synth_signal(json{{"kind", "random-walk"}, {"length", 8}, {"seasonAmp", 1.5}}, 0); }),
            ErrorCode::InvalidSpec);
}

TEST(Pairs, AlignedLengthsAndProvenance) {
  const SignalAsset y = synth_signal(json{{"kind", "harmonic"}, {"length", 400}}, 4);
  for (std::size_t r : {2u, 4u}) {
    const SignalPair p = make_pairs(y, r);
    EXPECT_EQ(p.source.length(), y.length());
    EXPECT_EQ(p.target.samples, y.samples);
    EXPECT_EQ(p.source.provenance.at("degrade").at("ratio"), r);
    // Knots: every r-th source sample is the decimated filtered signal.
    const dsp::Signal low = dsp::degrade(y.channel(0), r);
    for (std::size_t i = 0; i < low.size(); ++i) EXPECT_EQ(p.source.samples[i * r], low[i]);
  }
  EXPECT_EQ(code_of([&] { make_pairs(y, 3); }), ErrorCode::LengthMismatch);
}

TEST(Patches, CountOffsetsAndContent) {
  const SignalAsset y = make_asset({ramp(10)}, 0);
  const SignalPair pair{make_asset({ramp(10, -1.0)}, 0), y};
  const PatchDataset ds = make_patches(pair, 4, 2);
  ASSERT_EQ(ds.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(ds.patches[i].offset, 2 * i);
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_EQ(ds.patches[i].target[t], static_cast<double>(2 * i + t));
      EXPECT_EQ(ds.patches[i].source[t], -static_cast<double>(2 * i + t));
    }
  }
  EXPECT_EQ(make_patches(pair, 4).stride, 2u);
  EXPECT_EQ(make_patches(pair, 10, 3).size(), 1u);
  EXPECT_EQ(code_of([&] { make_patches(pair, 11); }), ErrorCode::PatchTooLong);
  const std::vector<std::size_t> idx{3, 0};
  const auto [src, tgt] = make_batch(ds, idx);
  EXPECT_EQ(src.shape(), (Shape{2, 4, 1}));
  EXPECT_EQ(tgt.at({0, 0, 0}), 6.0);
  EXPECT_EQ(tgt.at({1, 3, 0}), 3.0);
}

TEST(Patches, CountFormula) {
  for (std::size_t T = 8; T < 40; ++T)
    for (std::size_t P : {4u, 8u})
      for (std::size_t s : {1u, 2u, 3u, 4u}) {
        std::size_t n = 0;
        for (std::size_t off = 0; off + P <= T; off += s) ++n;
        EXPECT_EQ(patch_count(T, P, s), n);
      }
}

TEST(Mask, RateAndDeterminism) {
  const std::vector<double> x(100000, 1.0);
  const MaskResult m = zero_mask(x, 0.3, 7);
  const double frac = static_cast<double>(m.indices.size()) / 100000.0;
  EXPECT_NEAR(frac, 0.3, 0.01);
  EXPECT_TRUE(std::is_sorted(m.indices.begin(), m.indices.end()));
  const auto flags = m.flags();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(m.masked[i], flags[i] ? 0.0 : 1.0);
  EXPECT_EQ(zero_mask(x, 0.3, 7).indices, m.indices);
  EXPECT_NE(zero_mask(x, 0.3, 8).indices, m.indices);
  EXPECT_TRUE(zero_mask(x, 0.0, 1).indices.empty());
  EXPECT_EQ(zero_mask(x, 1.0, 1).indices.size(), x.size());
  EXPECT_EQ(code_of([&] { zero_mask(x, 1.5, 1); }), ErrorCode::InvalidRate);
}

TEST(FileIo, FormatByExtension) {
  EXPECT_EQ(format_for("a.WAV"), FileFormat::Wav);
  EXPECT_EQ(format_for("a.csv"), FileFormat::Csv);
  EXPECT_EQ(format_for("a.tfs"), FileFormat::Raw);
  EXPECT_EQ(format_for("noext"), FileFormat::Raw);
}

TEST(FileIo, RawRoundTripWithSidecar) {
  TempDir dir;
  SignalAsset a = make_asset({{0.5, -0.25, 1e-3}, {1, 2, 3}}, 22050, json{{"k", "v"}});
  write_signal(dir.file("s.raw"), a);
  EXPECT_TRUE(fs::exists(dir.file("s.raw.json")));
  const SignalAsset b = read_signal(dir.file("s.raw"));
  EXPECT_EQ(b.channels, 2u);
  EXPECT_EQ(b.sample_rate, 22050u);
  EXPECT_EQ(b.provenance, a.provenance);
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    EXPECT_EQ(b.samples[i], static_cast<double>(static_cast<float>(a.samples[i])));
}

TEST(FileIo, WavQuantisationAndStereo) {
  TempDir dir;
  const SignalAsset a = make_asset({{0.0, 32767.0 / 32768.0, -1.0, 0.25}, {0.5, -0.5, 0.125, 1.0}}, 8000);
  write_wav(dir.file("s.wav"), a);
  const SignalAsset b = read_wav(dir.file("s.wav"));
  EXPECT_EQ(b.channels, 2u);
  EXPECT_EQ(b.sample_rate, 8000u);
  EXPECT_EQ(b.samples.at({1, 0}), 32767.0 / 32768.0);
  EXPECT_EQ(b.samples.at({2, 0}), -1.0);
  // 1.0 clips to the largest code.
  EXPECT_EQ(b.samples.at({3, 1}), 32767.0 / 32768.0);
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_NEAR(b.samples[i], a.samples[i], 1.0 / 32768.0);
  EXPECT_EQ(code_of([&] { write_wav(dir.file("x.wav"), make_asset({{0}, {0}, {0}}, 8000)); }),
            ErrorCode::UnsupportedWavEncoding);
}

TEST(FileIo, CsvRoundTripIsExact) {
  TempDir dir;
  const SignalAsset a = make_asset({{0.1, 1.0 / 3.0, -2e-300}, {4, 5, 6}}, 0);
  write_signal(dir.file("s.csv"), a);
  const SignalAsset b = read_signal(dir.file("s.csv"));
  EXPECT_EQ(b.samples, a.samples);
  std::ofstream(dir.file("plain.csv")) << "1\n2.5\n-3\n";
  EXPECT_EQ(read_csv(dir.file("plain.csv")).samples, Tensor(Shape{3, 1}, {1, 2.5, -3}));
}

TEST(FileIo, TruncatedAndMissingFiles) {
  TempDir dir;
  write_raw(dir.file("s.raw"), make_asset({ramp(100)}, 0));
  std::ifstream is(dir.file("s.raw"), std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(is)), {});
  std::ofstream(dir.file("cut.raw"), std::ios::binary) << bytes.substr(0, bytes.size() - 7);
  EXPECT_EQ(code_of([&] { read_raw(dir.file("cut.raw")); }), ErrorCode::TruncatedFile);
  write_wav(dir.file("s.wav"), make_asset({ramp(100, 0.001)}, 8000));
  std::ifstream iw(dir.file("s.wav"), std::ios::binary);
  const std::string wb((std::istreambuf_iterator<char>(iw)), {});
  std::ofstream(dir.file("cut.wav"), std::ios::binary) << wb.substr(0, 30);
  EXPECT_EQ(code_of([&] { read_wav(dir.file("cut.wav")); }), ErrorCode::TruncatedFile);
  EXPECT_EQ(code_of([&] { read_signal(dir.file("absent.raw")); }), ErrorCode::Io);
}
