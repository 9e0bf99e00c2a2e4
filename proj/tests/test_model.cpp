#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tfilm/gradcheck.hpp"
#include "tfilm/model.hpp"

using namespace tfilm;

namespace {

// Parameter count derived by hand from the layer recipe, independent of
// build_model. H = C for every TFiLM LSTM.
std::size_t conv_count(std::size_t in, std::size_t out, std::size_t k) { return out * in * k + out; }
std::size_t tfilm_count(std::size_t c, bool bidir) {
  const std::size_t dirs = bidir ? 2 : 1;
  return dirs * (4 * c * c + 4 * c * c + 4 * c) + dirs * c * 2 * c + 2 * c;
}

std::size_t oracle_param_count(std::size_t K, bool tfilm, bool skips, bool bidir = false) {
  auto down_f = [](std::size_t d) { return std::min<std::size_t>(std::size_t{1} << (6 + d), 512); };
  auto down_k = [](std::size_t d) { return std::max<std::size_t>((std::size_t{1} << (7 - d)) + 1, 9); };
  std::size_t n = 0, ch = 1;
  for (std::size_t d = 1; d <= K; ++d) {
    n += conv_count(ch, down_f(d), down_k(d)) + (tfilm ? tfilm_count(down_f(d), bidir) : 0);
    ch = down_f(d);
  }
  if (K > 0) {
    n += conv_count(ch, 512, 9) + (tfilm ? tfilm_count(512, bidir) : 0);
    ch = 512;
  }
  for (std::size_t u = 1; u <= K; ++u) {
    const std::size_t f = std::min<std::size_t>(std::size_t{1} << (7 + K - u + 1), 512);
    n += conv_count(ch, f, down_k(K - u + 1)) + (tfilm ? tfilm_count(f / 2, bidir) : 0);
    ch = f / 2 + (skips ? down_f(K - u + 1) : 0);
  }
  return n + conv_count(ch, 2, 9);
}

ModelConfig small(std::size_t K = 2) {
  ModelConfig c;
  c.K = K;
  c.patch_length = 256;
  c.max_channels = 8;
  c.blocks_per_tfilm = 4;
  return c;
}

Tensor random(Shape s, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
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

TEST(ModelShape, DefaultFilterAndKernelSchedule) {
  const ModelConfig c;
  EXPECT_EQ(c.K, 4u);
  std::vector<std::size_t> df, dk, uf, uk;
  for (std::size_t d = 1; d <= 4; ++d) {
    df.push_back(c.down_filters(d));
    dk.push_back(ModelConfig::down_kernel(d));
    uf.push_back(c.up_filters(d));
    uk.push_back(c.up_kernel(d));
  }
  EXPECT_EQ(df, (std::vector<std::size_t>{128, 256, 512, 512}));
  EXPECT_EQ(dk, (std::vector<std::size_t>{65, 33, 17, 9}));
  EXPECT_EQ(uf, (std::vector<std::size_t>{512, 512, 512, 256}));
  EXPECT_EQ(uk, (std::vector<std::size_t>{9, 17, 33, 65}));
  EXPECT_EQ(c.bottleneck_filters(), 512u);
}

TEST(ModelShape, DefaultParameterCountFrozen) {
  const Model m = build_model(ModelConfig{}, 0);
  EXPECT_EQ(m.count_params(), 49414914u);
  EXPECT_EQ(m.count_params(), oracle_param_count(4, true, true));
}

TEST(ModelShape, ParameterCountMatchesOracleAcrossToggles) {
  for (std::size_t K : {0u, 1u, 2u, 3u})
    for (bool tf : {false, true})
      for (bool sk : {false, true})
        for (bool bi : {false, true}) {
          ModelConfig c;
          c.K = K;
          c.patch_length = 1024;
          c.use_tfilm = tf;
          c.use_skip_stacking = sk;
          c.bidirectional = bi;
          EXPECT_EQ(build_model(c, 0).count_params(), oracle_param_count(K, tf, sk, bi))
              << "K=" << K << " tfilm=" << tf << " skips=" << sk << " bidir=" << bi;
        }
}

TEST(ModelShape, LayerListFollowsToggles) {
  auto count = [](const Model& m, const std::string& kind) {
    std::size_t n = 0;
    for (const auto& l : m.layers()) n += l.kind == kind;
    return n;
  };
  ModelConfig c = small();
  const Model full = build_model(c, 0);
  EXPECT_EQ(count(full, "conv"), 2u * 2 + 1 + 1);
  EXPECT_EQ(count(full, "tfilm"), 2u * 2 + 1);
  EXPECT_EQ(count(full, "concat"), 2u);
  EXPECT_EQ(count(full, "residual"), 1u);
  EXPECT_EQ(count(full, "dropout"), 1u);
  c.use_tfilm = false;
  c.use_skip_stacking = false;
  c.use_additive_residual = false;
  const Model bare = build_model(c, 0);
  EXPECT_EQ(count(bare, "tfilm"), 0u);
  EXPECT_EQ(count(bare, "concat"), 0u);
  EXPECT_EQ(count(bare, "residual"), 0u);
  EXPECT_EQ(count(bare, "conv"), 6u);
}

TEST(ModelShape, KZeroHasOnlyFinalStage) {
  ModelConfig c = small(0);
  const Model m = build_model(c, 0);
  const auto params = m.parameters();
  ASSERT_EQ(params.size(), 2u);
  EXPECT_EQ(params[0].first, "final.conv.weight");
  EXPECT_EQ(m.count_params(), 2u * 9 + 2);
  const Tensor x = random({1, 256, 1}, 3);
  EXPECT_EQ(m.predict(x), x);
}

TEST(ModelForward, IdentityAtInitAndLengthPreserved) {
  for (std::size_t K : {1u, 2u, 3u}) {
    const Model m = build_model(small(K), 7);
    const Tensor x = random({2, 256, 1}, K);
    const Tensor y = m.predict(x);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_EQ(y, x);
  }
}

TEST(ModelForward, MultiChannelInputUsesFirstChannelForResidual) {
  ModelConfig c = small();
  c.input_channels = 2;
  const Model m = build_model(c, 1);
  const Tensor x = random({1, 256, 2}, 4);
  const Tensor y = m.predict(x);
  ASSERT_EQ(y.shape(), (Shape{1, 256, 1}));
  for (std::size_t t = 0; t < 256; ++t) EXPECT_EQ(y.at({0, t, 0}), x.at({0, t, 0}));
}

TEST(ModelForward, DeterministicGivenSeeds) {
  Model a = build_model(small(), 5), b = build_model(small(), 5), c = build_model(small(), 6);
  gradcheck::randomize_final(a, 9);
  gradcheck::randomize_final(b, 9);
  gradcheck::randomize_final(c, 9);
  const Tensor x = random({1, 256, 1}, 8);
  EXPECT_EQ(a.predict(x), b.predict(x));
  EXPECT_NE(a.predict(x), c.predict(x));
  const ad::Var xv = ad::constant(x);
  EXPECT_EQ(a.forward(xv, Mode::Train, 3).value(), b.forward(xv, Mode::Train, 3).value());
  EXPECT_NE(a.forward(xv, Mode::Train, 3).value(), a.forward(xv, Mode::Train, 4).value());
}

TEST(ModelForward, Errors) {
  const Model m = build_model(small(), 0);
  EXPECT_EQ(code_of([&] { m.predict(Tensor(Shape{1, 200, 1})); }), ErrorCode::LengthInvariantViolation);
  EXPECT_EQ(code_of([&] { m.predict(Tensor(Shape{1, 256, 3})); }), ErrorCode::ChannelMismatch);
  ModelConfig bad = small();
  bad.patch_length = 100;
  EXPECT_EQ(code_of([&] { build_model(bad, 0); }), ErrorCode::ConfigInvariantViolation);
  bad = small();
  bad.blocks_per_tfilm = 48;
  EXPECT_EQ(code_of([&] { build_model(bad, 0); }), ErrorCode::ConfigInvariantViolation);
  bad.use_tfilm = false;
  EXPECT_NO_THROW(build_model(bad, 0));
}

TEST(ModelConfigJson, RoundTrip) {
  ModelConfig c = small(3);
  c.bidirectional = true;
  c.width = 1.25;
  c.use_skip_stacking = false;
  const ModelConfig d = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(d.to_json(), c.to_json());
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  Model m = build_model(small(), 11);
  gradcheck::randomize_final(m, 12);
  const auto dir = std::filesystem::temp_directory_path() / "tfilm_test_model";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "m.tflm").string(), path2 = (dir / "m2.tflm").string();
  save_checkpoint(path, m, {{"note", "x"}});
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.meta.at("note"), "x");
  EXPECT_EQ(ck.model.count_params(), m.count_params());
  const Tensor x = random({1, 256, 1}, 13);
  const Tensor a = m.predict(x), b = ck.model.predict(x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4);
  // Values stored as f32: a second round trip is byte-identical.
  save_checkpoint(path2, ck.model, {{"note", "x"}});
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(s1, s2);
  const Checkpoint again = load_checkpoint(path2);
  EXPECT_EQ(again.model.predict(x), b);

  std::ofstream(dir / "bad.tflm", std::ios::binary) << "NOPE....";
  EXPECT_EQ(code_of([&] { load_checkpoint((dir / "bad.tflm").string()); }), ErrorCode::BadMagic);
  std::ofstream(dir / "cut.tflm", std::ios::binary) << s1.substr(0, s1.size() / 2);
  EXPECT_EQ(code_of([&] { load_checkpoint((dir / "cut.tflm").string()); }), ErrorCode::TruncatedFile);
  std::filesystem::remove_all(dir);
}

TEST(ModelGradients, MiniatureNetworkPassesFiniteDifferences) {
  for (const auto& r : gradcheck::run("model")) {
    EXPECT_TRUE(r.report.pass) << r.name << " max rel error " << r.report.max_rel_error;
  }
}
