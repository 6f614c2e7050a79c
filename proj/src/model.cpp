#include "nbed/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "nbed/errors.hpp"

namespace nbed {

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Fan-in scaled normal init, seeded per array so that values depend only on
// (seed, name) and not on construction order.
Tensor random_weight(const Tensor::Shape& shape, int fan_in, double gain, std::uint64_t seed,
                     const std::string& name) {
  Tensor t(shape);
  if (t.empty()) return t;
  std::mt19937_64 rng(splitmix(seed ^ fnv1a(name)));
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / std::max(fan_in, 1)));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

constexpr double kReluGain = 2.0;
constexpr double kLinearGain = 1.0;

class ParamBuilder {
 public:
  ParamBuilder(ParamStore& store, std::uint64_t seed) : store_(store), seed_(seed) {}

  void conv(const std::string& prefix, int cin, int cout, int k, int groups, double gain, bool pretrained) {
    const int cin_g = groups > 0 ? cin / groups : cin;
    store_.add(prefix + ".weight", random_weight({cout, cin_g, k, k}, cin_g * k * k, gain, seed_, prefix + ".weight"),
               pretrained);
    store_.add(prefix + ".bias", Tensor({cout}), pretrained);
  }

  void norm(const std::string& prefix, int channels, bool pretrained) {
    store_.add(prefix + ".weight", Tensor({channels}, 1.0), pretrained);
    store_.add(prefix + ".bias", Tensor({channels}), pretrained);
  }

 private:
  ParamStore& store_;
  std::uint64_t seed_;
};

const ag::Var& P(const ModelParams& params, const std::string& name) { return params.store[name]; }

ag::Var conv_layer(const ag::Var& x, const ModelParams& params, const std::string& prefix,
                   kernels::Conv2dSpec spec = {}) {
  const ag::Var& b = P(params, prefix + ".bias");
  return ag::conv2d(x, P(params, prefix + ".weight"), &b, spec);
}

void require_channels(const Tensor& t, int channels, const std::string& what) {
  if (t.rank() != 4 || t.c() != channels) {
    throw ShapeError(what + ": expected " + std::to_string(channels) + " channels, got shape " +
                     shape_string(t.shape()));
  }
}

}  // namespace

std::string to_string(OperatorKind kind) {
  return kind == OperatorKind::kSeparableConv ? "separable-conv" : "self-attention";
}

std::string to_string(DecoderKind kind) {
  switch (kind) {
    case DecoderKind::kCascaded: return "cascaded";
    case DecoderKind::kHed: return "hed";
    case DecoderKind::kUnet: return "unet";
  }
  return "cascaded";
}

OperatorKind parse_operator_kind(const std::string& text) {
  if (text == "separable-conv") return OperatorKind::kSeparableConv;
  if (text == "self-attention") return OperatorKind::kSelfAttention;
  throw ConfigError("unknown operator kind '" + text + "' (expected separable-conv or self-attention)");
}

DecoderKind parse_decoder_kind(const std::string& text) {
  if (text == "cascaded") return DecoderKind::kCascaded;
  if (text == "hed") return DecoderKind::kHed;
  if (text == "unet") return DecoderKind::kUnet;
  throw ConfigError("unknown decoder kind '" + text + "' (expected cascaded, hed or unet)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
  if (input_channels < 1) fail("model.input_channels must be >= 1");
  if (location_channels[0] < 1) fail("model.location_channels must be positive");
  if (location_channels[1] != 2 * location_channels[0]) {
    fail("model.location_channels: second level must double the first (" + std::to_string(location_channels[0]) +
         " -> " + std::to_string(location_channels[1]) + ")");
  }
  if (semantic_downsampling != std::array<int, 3>{4, 8, 16}) fail("model.semantic_downsampling must be 4,8,16");
  for (int s = 0; s < 3; ++s) {
    if (semantic_stage_blocks[s] < 0) fail("model.semantic_stage_blocks must be >= 0");
    if (semantic_stage_channels[s] < 1) fail("model.semantic_stage_channels must be positive");
    if (semantic_stage_operator[s] == OperatorKind::kSelfAttention &&
        (attention_head_dim < 1 || semantic_stage_channels[s] % attention_head_dim != 0)) {
      fail("stage " + std::to_string(s + 1) + " channels " + std::to_string(semantic_stage_channels[s]) +
           " not divisible by model.attention_head_dim " + std::to_string(attention_head_dim));
    }
  }
  if (stem_kernel < 1 || stem_kernel % 2 == 0) fail("model.stem_kernel must be odd");
  if (separable_kernel < 1 || separable_kernel % 2 == 0) fail("model.separable_kernel must be odd");
  if (fuse_kernel < 1 || fuse_kernel % 2 == 0) fail("model.fuse_kernel must be odd");
  if (decoder_base_channels < 1) fail("model.decoder_base_channels must be positive");
  if (decoder_channel_growth < 1) fail("model.decoder_channel_growth must be >= 1");
  if (mlp_expansion_ratio < 1) fail("model.mlp_expansion_ratio must be >= 1");
  if (!(norm_epsilon > 0.0)) fail("model.norm_epsilon must be positive");
}

std::array<int, 4> ModelConfig::decoder_channels() const {
  std::array<int, 4> d{};
  int c = decoder_base_channels;
  for (int i = 0; i < 4; ++i, c *= decoder_channel_growth) d[static_cast<std::size_t>(i)] = c;
  return d;
}

std::array<int, 5> ModelConfig::pyramid_channels() const {
  return {location_channels[0], location_channels[1], semantic_stage_channels[0], semantic_stage_channels[1],
          semantic_stage_channels[2]};
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.location_channels = {2, 4};
  c.semantic_stage_blocks = {1, 2, 2};
  c.semantic_stage_channels = {12, 24, 48};
  c.decoder_base_channels = 4;
  c.attention_head_dim = 4;
  return c;
}

void ParamStore::add(const std::string& name, Tensor value, bool pretrained) {
  if (!entries_.emplace(name, Entry{ag::Var::parameter(std::move(value)), pretrained}).second) {
    throw ConfigError("duplicate parameter name " + name);
  }
}

const ag::Var& ParamStore::operator[](const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("missing parameter " + name);
  return it->second.var;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("missing parameter " + name);
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.var.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, e] : entries_) e.var.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, e] : entries_) out.add(name, e.var.value(), e.pretrained);
  return out;
}

std::string meta_block_prefix(int stage, int block) {
  return "sem.s" + std::to_string(stage) + ".b" + std::to_string(block);
}

ModelParams build_model(const ModelConfig& config) {
  config.validate();
  ModelParams params{config, {}};
  ParamBuilder b(params.store, config.seed);
  const auto& lc = config.location_channels;
  b.conv("loc.conv1", config.input_channels, lc[0], 3, 1, kReluGain, false);
  b.conv("loc.conv2", lc[0], lc[1], 3, 1, kReluGain, false);

  const auto& sc = config.semantic_stage_channels;
  b.conv("sem.stem", config.input_channels, sc[0], config.stem_kernel, 1, kLinearGain, true);
  b.conv("sem.down2", sc[0], sc[1], 3, 1, kLinearGain, true);
  b.conv("sem.down3", sc[1], sc[2], 3, 1, kLinearGain, true);
  for (int s = 0; s < 3; ++s) {
    const int c = sc[static_cast<std::size_t>(s)];
    const int hidden = c * config.mlp_expansion_ratio;
    for (int k = 0; k < config.semantic_stage_blocks[static_cast<std::size_t>(s)]; ++k) {
      const std::string pre = meta_block_prefix(s + 1, k);
      b.norm(pre + ".norm1", c, true);
      if (config.semantic_stage_operator[static_cast<std::size_t>(s)] == OperatorKind::kSeparableConv) {
        b.conv(pre + ".op.dw", c, c, config.separable_kernel, c, kLinearGain, true);
        b.conv(pre + ".op.pw", c, c, 1, 1, kLinearGain, true);
      } else {
        b.conv(pre + ".op.qkv", c, 3 * c, 1, 1, kLinearGain, true);
        b.conv(pre + ".op.proj", c, c, 1, 1, kLinearGain, true);
      }
      b.norm(pre + ".norm2", c, true);
      b.conv(pre + ".mlp.fc1", c, hidden, 1, 1, kLinearGain, true);
      b.conv(pre + ".mlp.fc2", hidden, c, 1, 1, kLinearGain, true);
    }
  }

  const auto levels = config.pyramid_channels();
  const auto d = config.decoder_channels();
  switch (config.decoder) {
    case DecoderKind::kCascaded: {
      std::array<int, 5> cur = levels;
      for (int j = 1; j <= 4; ++j) {
        for (int i = 0; i <= 4 - j; ++i) {
          const int di = d[static_cast<std::size_t>(i)];
          const std::string tag = ".i" + std::to_string(i + 1) + ".j" + std::to_string(j);
          b.conv("dec.phi" + tag, cur[static_cast<std::size_t>(i + 1)], di, 1, 1, kLinearGain, false);
          b.conv("dec.fuse" + tag, cur[static_cast<std::size_t>(i)] + di, di, config.fuse_kernel, 1, kReluGain, false);
          cur[static_cast<std::size_t>(i)] = di;
        }
      }
      b.conv("head", d[0], 1, 1, 1, kLinearGain, false);
      break;
    }
    case DecoderKind::kHed:
      for (int i = 0; i < 5; ++i) {
        b.conv("dec.side" + std::to_string(i + 1), levels[static_cast<std::size_t>(i)], 1, 1, 1, kLinearGain, false);
      }
      b.conv("dec.hedfuse", 5, 1, 1, 1, kLinearGain, false);
      break;
    case DecoderKind::kUnet: {
      int below = levels[4];
      for (int i = 3; i >= 0; --i) {
        const int di = d[static_cast<std::size_t>(i)];
        b.conv("dec.up" + std::to_string(i + 1), below + levels[static_cast<std::size_t>(i)], di, 3, 1, kReluGain,
               false);
        below = di;
      }
      b.conv("head", d[0], 1, 1, 1, kLinearGain, false);
      break;
    }
  }
  // The final logit bias starts at zero (outputs start near 0.5).
  for (const char* name : {"head.bias", "dec.hedfuse.bias"})
    if (params.store.contains(name)) params.store.entry(name).var.mutable_value().fill(0.0);
  return params;
}

void overlay_weights(ModelParams& params, const std::map<std::string, Tensor>& arrays) {
  std::vector<std::string> unknown, mismatched;
  for (const auto& [name, value] : arrays) {
    if (!params.store.contains(name) || !params.store.entry(name).pretrained) {
      unknown.push_back(name);
    } else if (params.store[name].value().shape() != value.shape()) {
      mismatched.push_back(name + " " + shape_string(value.shape()) + " vs " +
                           shape_string(params.store[name].value().shape()));
    }
  }
  if (!unknown.empty() || !mismatched.empty()) {
    std::ostringstream os;
    os << "weight overlay rejected;";
    if (!unknown.empty()) {
      os << " unmatched names:";
      for (const auto& n : unknown) os << ' ' << n;
      os << ';';
    }
    if (!mismatched.empty()) {
      os << " shape mismatches:";
      for (const auto& n : mismatched) os << ' ' << n;
    }
    throw ConfigError(os.str());
  }
  for (const auto& [name, value] : arrays) params.store.entry(name).var.mutable_value() = value;
}

std::pair<FeatureMap, FeatureMap> location_encoder_forward(const FeatureMap& image, const ModelParams& params) {
  require_channels(image.value(), params.config.input_channels, "location encoder");
  auto l1 = ag::relu(conv_layer(image.data, params, "loc.conv1", {1, 1, 1}));
  auto pooled = ag::max_pool2(l1);
  auto l2 = ag::relu(conv_layer(pooled, params, "loc.conv2", {1, 1, 1}));
  return {FeatureMap{l1, image.downsample}, FeatureMap{l2, image.downsample * 2}};
}

ag::Var meta_block_forward(const ag::Var& x, OperatorKind kind, const ModelParams& params, const std::string& prefix) {
  const auto& cfg = params.config;
  const int channels = P(params, prefix + ".norm1.weight").value().dim(0);
  require_channels(x.value(), channels, "meta block " + prefix);
  const double eps = cfg.norm_epsilon;

  auto h = ag::channel_norm(x, P(params, prefix + ".norm1.weight"), P(params, prefix + ".norm1.bias"), eps);
  if (kind == OperatorKind::kSeparableConv) {
    const int k = P(params, prefix + ".op.dw.weight").value().dim(2);
    h = conv_layer(h, params, prefix + ".op.dw", {1, k / 2, channels});
    h = conv_layer(h, params, prefix + ".op.pw");
  } else {
    const int heads = channels / cfg.attention_head_dim;
    h = conv_layer(h, params, prefix + ".op.qkv");
    h = ag::attention(h, heads);
    h = conv_layer(h, params, prefix + ".op.proj");
  }
  auto y = ag::add(x, h);

  auto m = ag::channel_norm(y, P(params, prefix + ".norm2.weight"), P(params, prefix + ".norm2.bias"), eps);
  m = ag::gelu(conv_layer(m, params, prefix + ".mlp.fc1"));
  m = conv_layer(m, params, prefix + ".mlp.fc2");
  return ag::add(y, m);
}

FeatureMap semantic_stem_forward(const FeatureMap& image, const ModelParams& params) {
  const int k = params.config.stem_kernel;
  return {conv_layer(image.data, params, "sem.stem", {4, k / 2, 1}), image.downsample * 4};
}

FeatureMap semantic_downsample_forward(const FeatureMap& x, int stage, const ModelParams& params) {
  return {conv_layer(x.data, params, "sem.down" + std::to_string(stage), {2, 1, 1}), x.downsample * 2};
}

std::array<FeatureMap, 3> semantic_encoder_forward(const FeatureMap& image, const ModelParams& params) {
  const auto& cfg = params.config;
  require_channels(image.value(), cfg.input_channels, "semantic encoder");
  if (image.value().h() < 16 || image.value().w() < 16) {
    throw ShapeError("semantic encoder: input " + shape_string(image.value().shape()) +
                     " is smaller than 16x16; the 1/16 stage would have no tokens");
  }
  std::array<FeatureMap, 3> out;
  FeatureMap x = semantic_stem_forward(image, params);
  for (int s = 0; s < 3; ++s) {
    if (s > 0) x = semantic_downsample_forward(x, s + 1, params);
    for (int k = 0; k < cfg.semantic_stage_blocks[static_cast<std::size_t>(s)]; ++k) {
      x.data = meta_block_forward(x.data, cfg.semantic_stage_operator[static_cast<std::size_t>(s)], params,
                                  meta_block_prefix(s + 1, k));
    }
    out[static_cast<std::size_t>(s)] = x;
  }
  return out;
}

FeaturePyramid encoder_forward(const FeatureMap& image, const ModelParams& params) {
  auto [l1, l2] = location_encoder_forward(image, params);
  auto sem = semantic_encoder_forward(image, params);
  return {l1, l2, sem[0], sem[1], sem[2]};
}

FeatureMap cascaded_decoder_forward(const FeaturePyramid& pyramid, const ModelParams& params, DecoderStats* stats,
                                    std::vector<FeatureMap>* level1_history) {
  if (pyramid.size() == 1) {
    return {conv_layer(pyramid[0].data, params, "dec.adjust"), pyramid[0].downsample};
  }
  if (pyramid.size() != 5) {
    throw ShapeError("cascaded decoder: expected 5 pyramid levels, got " + std::to_string(pyramid.size()));
  }
  const auto expected = params.config.pyramid_channels();
  for (std::size_t i = 0; i < 5; ++i) require_channels(pyramid[i].value(), expected[i], "pyramid level " + std::to_string(i + 1));

  const int fk = params.config.fuse_kernel;
  std::vector<FeatureMap> f(pyramid.begin(), pyramid.end());
  for (int j = 1; j <= 4; ++j) {
    // Ascending i reads F_{i+1} before it is overwritten at this j.
    for (int i = 0; i <= 4 - j; ++i) {
      const std::string tag = ".i" + std::to_string(i + 1) + ".j" + std::to_string(j);
      auto& fine = f[static_cast<std::size_t>(i)];
      const auto& coarse = f[static_cast<std::size_t>(i + 1)];
      // phi: 1x1 projection then bilinear upsampling. Both maps are linear and
      // the bilinear weights sum to one, so this equals upsample-then-project.
      auto proj = conv_layer(coarse.data, params, "dec.phi" + tag);
      auto up = ag::resize_bilinear(proj, fine.value().h(), fine.value().w());
      auto fused = conv_layer(ag::concat_channels({fine.data, up}), params, "dec.fuse" + tag, {1, fk / 2, 1});
      fine.data = ag::relu(fused);
      if (stats) ++stats->fusion_steps;
      if (i == 0 && level1_history) level1_history->push_back(fine);
    }
  }
  return f[0];
}

ag::Var edge_head(const FeatureMap& refined, const ModelParams& params) {
  if (refined.downsample != 1) {
    throw ShapeError("edge head: refined features must be at scale 1, got 1/" + std::to_string(refined.downsample));
  }
  return ag::sigmoid(conv_layer(refined.data, params, "head"));
}

ag::Var hed_decoder_forward(const FeaturePyramid& pyramid, const ModelParams& params) {
  if (pyramid.size() != 5) throw ShapeError("HED decoder: expected 5 pyramid levels");
  const int h = pyramid[0].value().h(), w = pyramid[0].value().w();
  std::vector<ag::Var> sides;
  for (std::size_t i = 0; i < 5; ++i) {
    auto side = conv_layer(pyramid[i].data, params, "dec.side" + std::to_string(i + 1));
    sides.push_back(ag::resize_bilinear(side, h, w));
  }
  return ag::sigmoid(conv_layer(ag::concat_channels(sides), params, "dec.hedfuse"));
}

ag::Var unet_decoder_forward(const FeaturePyramid& pyramid, const ModelParams& params, DecoderStats* stats) {
  if (pyramid.size() != 5) throw ShapeError("UNet decoder: expected 5 pyramid levels");
  ag::Var x = pyramid[4].data;
  for (int i = 3; i >= 0; --i) {
    const auto& skip = pyramid[static_cast<std::size_t>(i)];
    auto up = ag::resize_bilinear(x, skip.value().h(), skip.value().w());
    x = ag::relu(conv_layer(ag::concat_channels({up, skip.data}), params, "dec.up" + std::to_string(i + 1), {1, 1, 1}));
    if (stats) ++stats->fusion_steps;
  }
  return ag::sigmoid(conv_layer(x, params, "head"));
}

int padded_size(int side) { return (side + 15) / 16 * 16; }

ForwardResult nbed_forward_full(const ag::Var& image, const ModelParams& params) {
  const Tensor& v = image.value();
  require_channels(v, params.config.input_channels, "detector input");
  if (v.h() < 16 || v.w() < 16) {
    throw ShapeError("detector input " + shape_string(v.shape()) + " must be at least 16x16");
  }
  const int h = v.h(), w = v.w();
  ag::Var padded = ag::reflect_pad(image, padded_size(h) - h, padded_size(w) - w);
  FeaturePyramid pyramid = encoder_forward(FeatureMap{padded, 1}, params);
  ForwardResult result;
  switch (params.config.decoder) {
    case DecoderKind::kCascaded: {
      std::vector<FeatureMap> history;
      const bool sides = params.config.supervise_side_outputs;
      FeatureMap refined = cascaded_decoder_forward(pyramid, params, nullptr, sides ? &history : nullptr);
      result.edge_map = ag::crop(edge_head(refined, params), h, w);
      if (sides) {
        for (std::size_t j = 0; j + 1 < history.size(); ++j) {
          result.side_maps.push_back(ag::crop(edge_head(history[j], params), h, w));
        }
      }
      break;
    }
    case DecoderKind::kHed:
      result.edge_map = ag::crop(hed_decoder_forward(pyramid, params), h, w);
      break;
    case DecoderKind::kUnet:
      result.edge_map = ag::crop(unet_decoder_forward(pyramid, params), h, w);
      break;
  }
  return result;
}

ag::Var nbed_forward(const ag::Var& image, const ModelParams& params) {
  return nbed_forward_full(image, params).edge_map;
}

Tensor predict(const Tensor& image, const ModelParams& params) {
  ag::NoGradGuard no_grad;
  return nbed_forward(ag::Var(image), params).value();
}

}  // namespace nbed
