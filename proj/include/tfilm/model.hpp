#pragma once

// The U-shaped super-resolution network: K downsampling blocks, a bottleneck,
// K upsampling blocks with stacked skip features, and a final subpixel stage
// with an optional additive residual from the input.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfilm/autodiff.hpp"
#include "tfilm/layers.hpp"
#include "tfilm/rng.hpp"
#include "tfilm/tfilm.hpp"

namespace tfilm {

struct ModelConfig {
  std::size_t K = 4;
  std::size_t input_channels = 1;
  std::size_t patch_length = 8192;
  std::size_t blocks_per_tfilm = 32;
  double dropout_rate = 0.5;        // bottleneck
  double block_dropout_rate = 0.0;  // down/up blocks, off by default
  std::size_t dilation = 2;
  std::size_t max_channels = 512;   // cap applied to every filter count
  double width = 1.0;               // multiplier on (capped) filter counts
  std::size_t pool_extent = 2;
  std::size_t pool_stride = 2;
  bool use_tfilm = true;
  bool use_skip_stacking = true;
  bool use_additive_residual = true;
  bool bidirectional = false;

  static std::size_t pow2(std::size_t e) { return std::size_t{1} << e; }

  std::size_t scaled(std::size_t n) const {
    const double v = std::round(static_cast<double>(std::min(n, max_channels)) * width);
    return std::max<std::size_t>(1, static_cast<std::size_t>(v));
  }
  std::size_t scaled_even(std::size_t n) const {
    const double v = 2.0 * std::round(static_cast<double>(std::min(n, max_channels)) * width / 2.0);
    return std::max<std::size_t>(2, static_cast<std::size_t>(v));
  }

  // Downsampling block d in 1..K.
  std::size_t down_filters(std::size_t d) const { return scaled(std::min<std::size_t>(pow2(6 + d), 512)); }
  static std::size_t down_kernel(std::size_t d) { return d >= 7 ? 9 : std::max<std::size_t>(pow2(7 - d) + 1, 9); }
  // Upsampling block u in 1..K mirrors depth K-u+1.
  std::size_t up_filters(std::size_t u) const {
    return scaled_even(std::min<std::size_t>(pow2(std::min<std::size_t>(7 + (K - u + 1), 20)), 512));
  }
  std::size_t up_kernel(std::size_t u) const { return down_kernel(K - u + 1); }
  std::size_t bottleneck_filters() const { return scaled(512); }

  // Sequence length at the output of downsampling depth d (d = K+1 is the bottleneck).
  std::size_t length_at(std::size_t t, std::size_t d) const { return t / pow2(d); }

  void validate() const {
    auto violation = [](const std::string& what) { fail(ErrorCode::ConfigInvariantViolation, what); };
    if (K > 16) violation("K must be <= 16");
    if (input_channels == 0) violation("inputChannels must be >= 1");
    if (blocks_per_tfilm == 0) violation("blocksPerTfilm must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) violation("dropoutRate must be in [0,1)");
    if (!(block_dropout_rate >= 0.0 && block_dropout_rate < 1.0)) violation("blockDropoutRate must be in [0,1)");
    if (dilation == 0) violation("dilation must be >= 1");
    if (max_channels == 0 || !(width > 0.0)) violation("maxChannels and width must be positive");
    check_length(patch_length);
  }

  void check_length(std::size_t t, ErrorCode code = ErrorCode::ConfigInvariantViolation) const {
    const std::size_t div = pow2(K + 1);
    if (t == 0 || t % div != 0)
      fail(code, "length " + std::to_string(t) + " must be divisible by 2^(K+1)=" + std::to_string(div));
    if (!use_tfilm) return;
    for (std::size_t d = 1; d <= K + 1; ++d) {
      const std::size_t tl = length_at(t, d);
      if (tl % blocks_per_tfilm != 0)
        fail(code, "TFiLM block length at depth " + std::to_string(d) + ": T=" + std::to_string(tl) +
                       " not divisible by blocksPerTfilm=" + std::to_string(blocks_per_tfilm));
    }
  }

  nlohmann::json to_json() const {
    return {{"K", K},
            {"inputChannels", input_channels},
            {"patchLength", patch_length},
            {"blocksPerTfilm", blocks_per_tfilm},
            {"dropoutRate", dropout_rate},
            {"blockDropoutRate", block_dropout_rate},
            {"dilation", dilation},
            {"maxChannels", max_channels},
            {"width", width},
            {"poolExtent", pool_extent},
            {"poolStride", pool_stride},
            {"useTfilm", use_tfilm},
            {"useSkipStacking", use_skip_stacking},
            {"useAdditiveResidual", use_additive_residual},
            {"bidirectional", bidirectional}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("K", c.K);
    get("inputChannels", c.input_channels);
    get("patchLength", c.patch_length);
    get("blocksPerTfilm", c.blocks_per_tfilm);
    get("dropoutRate", c.dropout_rate);
    get("blockDropoutRate", c.block_dropout_rate);
    get("dilation", c.dilation);
    get("maxChannels", c.max_channels);
    get("width", c.width);
    get("poolExtent", c.pool_extent);
    get("poolStride", c.pool_stride);
    get("useTfilm", c.use_tfilm);
    get("useSkipStacking", c.use_skip_stacking);
    get("useAdditiveResidual", c.use_additive_residual);
    get("bidirectional", c.bidirectional);
    return c;
  }
};

enum class BlockRole { Down, Bottleneck, Up };

inline const char* to_string(BlockRole r) {
  switch (r) {
    case BlockRole::Down: return "down";
    case BlockRole::Bottleneck: return "bottleneck";
    case BlockRole::Up: return "up";
  }
  return "?";
}

struct ModelBlock {
  BlockRole role = BlockRole::Down;
  std::size_t depth = 0;  // 1-based index within its role
  std::string name;
  Conv1dParams conv;
  double dropout = 0.0;
  std::optional<TfilmLayerParams> tfilm;
  std::size_t out_channels = 0;  // after subpixel/concat for Up blocks
};

struct LayerInfo {
  std::string name;
  std::string kind;  // conv, dropout, relu, tfilm, subpixel, concat, residual
  std::string role;
  std::size_t depth = 0;
  std::size_t channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 0;
};

class Model {
 public:
  Model() = default;

  const ModelConfig& config() const { return cfg_; }
  const std::vector<ModelBlock>& down() const { return down_; }
  const ModelBlock& bottleneck() const { return bottleneck_; }
  const std::vector<ModelBlock>& up() const { return up_; }
  const Conv1dParams& final_conv() const { return final_; }
  bool has_bottleneck() const { return cfg_.K > 0; }

  std::vector<std::pair<std::string, ad::Var>> parameters() const {
    std::vector<std::pair<std::string, ad::Var>> out;
    auto add_block = [&out](const ModelBlock& b) {
      out.emplace_back(b.name + ".conv.weight", b.conv.weight);
      out.emplace_back(b.name + ".conv.bias", b.conv.bias);
      if (b.tfilm)
        for (auto& [n, v] : tfilm_parameters(*b.tfilm)) out.emplace_back(b.name + ".tfilm." + n, v);
    };
    for (const auto& b : down_) add_block(b);
    if (has_bottleneck()) add_block(bottleneck_);
    for (const auto& b : up_) add_block(b);
    out.emplace_back("final.conv.weight", final_.weight);
    out.emplace_back("final.conv.bias", final_.bias);
    return out;
  }

  std::size_t count_params() const {
    std::size_t n = 0;
    for (const auto& [name, v] : parameters()) n += v.value().size();
    return n;
  }

  void zero_grad() const {
    for (auto [name, v] : parameters()) v.zero_grad();
  }

  // Flat description of the constructed graph, in execution order.
  std::vector<LayerInfo> layers() const {
    std::vector<LayerInfo> out;
    auto add_block = [&](const ModelBlock& b) {
      const std::string role = to_string(b.role);
      out.push_back({b.name + ".conv", "conv", role, b.depth, b.conv.out_channels(), b.conv.kernel_len(),
                     b.conv.stride});
      if (b.dropout > 0.0) out.push_back({b.name + ".dropout", "dropout", role, b.depth, 0, 0, 0});
      out.push_back({b.name + ".relu", "relu", role, b.depth, 0, 0, 0});
      if (b.role == BlockRole::Up) out.push_back({b.name + ".subpixel", "subpixel", role, b.depth, 0, 0, 0});
      if (b.tfilm) out.push_back({b.name + ".tfilm", "tfilm", role, b.depth, b.tfilm->channels, 0, 0});
      if (b.role == BlockRole::Up && cfg_.use_skip_stacking)
        out.push_back({b.name + ".concat", "concat", role, b.depth, b.out_channels, 0, 0});
    };
    for (const auto& b : down_) add_block(b);
    if (has_bottleneck()) add_block(bottleneck_);
    for (const auto& b : up_) add_block(b);
    out.push_back({"final.conv", "conv", "final", 0, final_.out_channels(), final_.kernel_len(), final_.stride});
    out.push_back({"final.subpixel", "subpixel", "final", 0, 1, 0, 0});
    if (cfg_.use_additive_residual) out.push_back({"final.residual", "residual", "final", 0, 1, 0, 0});
    return out;
  }

  // TFiLM block length used at a given sequence length.
  std::size_t block_len_for(std::size_t t) const { return t / cfg_.blocks_per_tfilm; }

  // x: [N, T, k] -> [N, T, 1]. `dropout_seed` addresses the dropout masks of
  // this pass (ignored in Eval mode).
  ad::Var forward(const ad::Var& x, Mode mode = Mode::Eval, std::uint64_t dropout_seed = 0) const {
    const Tensor& xv = x.value();
    if (xv.rank() != 3 || xv.dim(2) != cfg_.input_channels)
      fail(ErrorCode::ChannelMismatch, "model expects [N,T," + std::to_string(cfg_.input_channels) + "], got " +
                                           shape_str(xv.shape()));
    cfg_.check_length(xv.dim(1), ErrorCode::LengthInvariantViolation);
    std::size_t layer_id = 0;
    auto run_block = [&](const ModelBlock& b, ad::Var h) {
      h = conv1d(h, b.conv);
      if (b.dropout > 0.0) h = dropout(h, b.dropout, mix_seed(dropout_seed, layer_id), mode);
      ++layer_id;
      h = tfilm::relu(h);
      if (b.role == BlockRole::Up) h = subpixel_shuffle(h, 2);
      if (b.tfilm) h = tfilm_forward(h, *b.tfilm, block_len_for(h.value().dim(1)));
      return h;
    };

    ad::Var h = x;
    std::vector<ad::Var> skips;
    for (const auto& b : down_) {
      h = run_block(b, h);
      skips.push_back(h);
    }
    if (has_bottleneck()) h = run_block(bottleneck_, h);
    for (std::size_t u = 0; u < up_.size(); ++u) {
      h = run_block(up_[u], h);
      if (cfg_.use_skip_stacking) h = ad::concat({h, skips[cfg_.K - 1 - u]}, 2);
    }
    h = subpixel_shuffle(conv1d(h, final_), 2);
    if (cfg_.use_additive_residual) {
      const ad::Var x0 = cfg_.input_channels == 1 ? x : ad::slice(x, 2, 0, 1);
      h = ad::add(h, x0);
    }
    return h;
  }

  Tensor predict(const Tensor& x) const { return forward(ad::constant(x), Mode::Eval).value(); }

 private:
  friend Model build_model(const ModelConfig& cfg, std::uint64_t seed);

  ModelConfig cfg_;
  std::vector<ModelBlock> down_;
  ModelBlock bottleneck_;
  std::vector<ModelBlock> up_;
  Conv1dParams final_;
};

inline void name_block_params(ModelBlock& b) {
  b.conv.weight.node()->op = b.name + ".conv.weight";
  b.conv.bias.node()->op = b.name + ".conv.bias";
}

// Deterministic under `seed`. Convolutions use He-uniform init except the
// final one, which is zero so that (with the residual) the initial network is
// the identity on channel 0. TFiLM projections start at zero (identity).
inline Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  SplitMix64 rng(derive_seed(seed, "init"));
  const std::size_t T = cfg.patch_length;

  auto make_tfilm_for = [&](std::size_t channels, std::size_t length) -> std::optional<TfilmLayerParams> {
    if (!cfg.use_tfilm) return std::nullopt;
    auto p = make_tfilm(channels, length / cfg.blocks_per_tfilm, cfg.bidirectional, rng);
    p.pool_extent = cfg.pool_extent;
    p.pool_stride = cfg.pool_stride;
    return p;
  };

  std::size_t channels = cfg.input_channels;
  std::vector<std::size_t> skip_channels;
  for (std::size_t d = 1; d <= cfg.K; ++d) {
    ModelBlock b;
    b.role = BlockRole::Down;
    b.depth = d;
    b.name = "down" + std::to_string(d);
    const std::size_t nf = cfg.down_filters(d);
    b.conv = make_conv1d(channels, nf, ModelConfig::down_kernel(d), 2, cfg.dilation, rng);
    b.dropout = cfg.block_dropout_rate;
    b.tfilm = make_tfilm_for(nf, cfg.length_at(T, d));
    b.out_channels = nf;
    name_block_params(b);
    channels = nf;
    skip_channels.push_back(nf);
    m.down_.push_back(std::move(b));
  }
  if (cfg.K > 0) {
    ModelBlock& b = m.bottleneck_;
    b.role = BlockRole::Bottleneck;
    b.depth = cfg.K + 1;
    b.name = "bottleneck";
    const std::size_t nf = cfg.bottleneck_filters();
    b.conv = make_conv1d(channels, nf, 9, 2, 1, rng);
    b.dropout = cfg.dropout_rate;
    b.tfilm = make_tfilm_for(nf, cfg.length_at(T, cfg.K + 1));
    b.out_channels = nf;
    name_block_params(b);
    channels = nf;
  }
  for (std::size_t u = 1; u <= cfg.K; ++u) {
    ModelBlock b;
    b.role = BlockRole::Up;
    b.depth = u;
    b.name = "up" + std::to_string(u);
    const std::size_t nf = cfg.up_filters(u);
    b.conv = make_conv1d(channels, nf, cfg.up_kernel(u), 1, 1, rng);
    b.dropout = cfg.block_dropout_rate;
    const std::size_t shuffled = nf / 2;
    b.tfilm = make_tfilm_for(shuffled, cfg.length_at(T, cfg.K - u + 1));
    b.out_channels = shuffled + (cfg.use_skip_stacking ? skip_channels[cfg.K - u] : 0);
    name_block_params(b);
    channels = b.out_channels;
    m.up_.push_back(std::move(b));
  }
  // With K = 0 the final stage sees the full-length input and strides by 2 to
  // land on T/2 before the subpixel shuffle.
  m.final_ = make_conv1d(channels, 2, 9, cfg.K == 0 ? 2 : 1, 1, rng, /*zero=*/true);
  m.final_.weight.node()->op = "final.conv.weight";
  m.final_.bias.node()->op = "final.conv.bias";
  return m;
}

// ---- checkpoint I/O ----
//
// "TFLM" | u16 version | u32 len + canonical JSON | u32 record count |
// records: u32 name len, name, u32 rank, u64 extents[rank], f32 LE values.

inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace io {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) { os.write(static_cast<const char*>(p), n); }

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  put_bytes(os, b, sizeof(U));
}

inline void put_f32(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

class Reader {
 public:
  explicit Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) fail(ErrorCode::TruncatedFile, what_ + " ended early");
  }
  template <typename U>
  U le() {
    unsigned char b[sizeof(U)];
    bytes(b, sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<U>(v);
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(le<std::uint32_t>())); }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::istream& is_;
  std::string what_;
};

}  // namespace io

// `meta` is stored next to the model config (e.g. task and ratio).
inline void save_checkpoint(const std::string& path, const Model& m, const nlohmann::json& meta = nlohmann::json::object()) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot write " + path);
  nlohmann::json doc = meta;
  doc["model"] = m.config().to_json();
  const std::string text = doc.dump();
  io::put_bytes(os, "TFLM", 4);
  io::put_le<std::uint16_t>(os, kCheckpointVersion);
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  io::put_bytes(os, text.data(), text.size());
  const auto params = m.parameters();
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, v] : params) {
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    io::put_bytes(os, name.data(), name.size());
    const Tensor& t = v.value();
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) io::put_le<std::uint64_t>(os, e);
    for (double x : t.data()) io::put_f32(os, x);
  }
  if (!os) fail(ErrorCode::Io, "write failed for " + path);
}

struct Checkpoint {
  Model model;
  nlohmann::json meta;  // full JSON block, including "model"
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::Io, "cannot open " + path);
  io::Reader r(is, "checkpoint " + path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "TFLM", 4) != 0) fail(ErrorCode::BadMagic, path + " is not a TFLM checkpoint");
  const auto version = r.le<std::uint16_t>();
  if (version != kCheckpointVersion)
    fail(ErrorCode::BadMagic, "unsupported checkpoint version " + std::to_string(version));
  const std::string text = r.str(r.le<std::uint32_t>());
  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadMagic, std::string("checkpoint config is not JSON: ") + e.what());
  }
  ck.model = build_model(ModelConfig::from_json(ck.meta.at("model")), 0);
  auto params = ck.model.parameters();
  const auto count = r.le<std::uint32_t>();
  if (count != params.size())
    fail(ErrorCode::ConfigInvariantViolation, "checkpoint has " + std::to_string(count) + " tensors, config implies " +
                                                  std::to_string(params.size()));
  for (auto& [name, v] : params) {
    const std::string stored = r.str(r.le<std::uint32_t>());
    if (stored != name) fail(ErrorCode::ConfigInvariantViolation, "expected tensor " + name + ", found " + stored);
    Shape shape(r.le<std::uint32_t>());
    for (auto& e : shape) e = r.le<std::uint64_t>();
    if (shape != v.shape())
      fail(ErrorCode::ShapeMismatch, name + ": stored " + shape_str(shape) + " vs config " + shape_str(v.shape()));
    Tensor& t = v.mutable_value();
    for (double& x : t.data()) x = r.f32();
  }
  return ck;
}

}  // namespace tfilm
