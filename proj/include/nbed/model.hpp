#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nbed/autograd.hpp"

namespace nbed {

enum class OperatorKind { kSeparableConv, kSelfAttention };
enum class DecoderKind { kCascaded, kHed, kUnet };

std::string to_string(OperatorKind kind);
std::string to_string(DecoderKind kind);
OperatorKind parse_operator_kind(const std::string& text);
DecoderKind parse_decoder_kind(const std::string& text);

// Every architectural hyperparameter of the detector. Defaults give the full
// model: a 16/32-channel location branch, a 3/12/18-block semantic branch at
// 96/192/384 channels (1/4, 1/8, 1/16) and a 32-channel cascaded decoder.
struct ModelConfig {
  int input_channels = 3;
  std::array<int, 2> location_channels{16, 32};
  std::array<int, 3> semantic_stage_blocks{3, 12, 18};
  std::array<int, 3> semantic_stage_channels{96, 192, 384};
  std::array<OperatorKind, 3> semantic_stage_operator{OperatorKind::kSeparableConv, OperatorKind::kSeparableConv,
                                                      OperatorKind::kSelfAttention};
  std::array<int, 3> semantic_downsampling{4, 8, 16};  // only 4/8/16 is supported
  int stem_kernel = 7;
  int separable_kernel = 3;
  int decoder_base_channels = 32;
  int decoder_channel_growth = 1;  // D_i = C * growth^(i-1)
  int fuse_kernel = 1;
  int mlp_expansion_ratio = 4;
  int attention_head_dim = 32;
  double norm_epsilon = 1e-6;
  DecoderKind decoder = DecoderKind::kCascaded;
  bool supervise_side_outputs = false;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the first violated invariant.
  void validate() const;
  // D_1..D_4.
  std::array<int, 4> decoder_channels() const;
  // Channels of pyramid levels 1..5.
  std::array<int, 5> pyramid_channels() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Channel-divided, shallow variant used for desk-scale training tests.
ModelConfig tiny_config();

// Named learnable arrays. Iteration order is the lexicographic name order.
class ParamStore {
 public:
  struct Entry {
    ag::Var var;
    bool pretrained = false;  // semantic-encoder group (lr_pretrained)
  };

  void add(const std::string& name, Tensor value, bool pretrained);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const ag::Var& operator[](const std::string& name) const;
  Entry& entry(const std::string& name);
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  std::size_t scalar_count() const;
  void zero_grad();
  ParamStore clone() const;  // deep copy of the values, no gradients

 private:
  std::map<std::string, Entry> entries_;
};

struct ModelParams {
  ModelConfig config;
  ParamStore store;
};

ModelParams build_model(const ModelConfig& config);

// Replaces semantic-encoder arrays by name. Unknown names or shape mismatches
// raise ConfigError listing every offending name.
void overlay_weights(ModelParams& params, const std::map<std::string, Tensor>& arrays);

// A feature map together with its downsampling factor relative to the input.
struct FeatureMap {
  ag::Var data;
  int downsample = 1;  // scale = 1 / downsample

  const Tensor& value() const { return data.value(); }
};

using FeaturePyramid = std::vector<FeatureMap>;

struct DecoderStats {
  int fusion_steps = 0;
};

std::pair<FeatureMap, FeatureMap> location_encoder_forward(const FeatureMap& image, const ModelParams& params);
std::array<FeatureMap, 3> semantic_encoder_forward(const FeatureMap& image, const ModelParams& params);
// The 7x7/4 stem alone (entry to semantic stage 1).
FeatureMap semantic_stem_forward(const FeatureMap& image, const ModelParams& params);
// Inter-stage 3x3/2 convolution into stage `stage` (2 or 3).
FeatureMap semantic_downsample_forward(const FeatureMap& x, int stage, const ModelParams& params);
FeaturePyramid encoder_forward(const FeatureMap& image, const ModelParams& params);

// One residual meta block; `prefix` names its parameters, e.g. "sem.s1.b0".
ag::Var meta_block_forward(const ag::Var& x, OperatorKind kind, const ModelParams& params, const std::string& prefix);
std::string meta_block_prefix(int stage, int block);

FeatureMap cascaded_decoder_forward(const FeaturePyramid& pyramid, const ModelParams& params,
                                    DecoderStats* stats = nullptr, std::vector<FeatureMap>* level1_history = nullptr);
ag::Var edge_head(const FeatureMap& refined, const ModelParams& params);
ag::Var hed_decoder_forward(const FeaturePyramid& pyramid, const ModelParams& params);
ag::Var unet_decoder_forward(const FeaturePyramid& pyramid, const ModelParams& params, DecoderStats* stats = nullptr);

struct ForwardResult {
  ag::Var edge_map;                // N x 1 x H x W probabilities
  std::vector<ag::Var> side_maps;  // only with supervise_side_outputs
};

// Full detector. `image` is N x 3 x H x W with H, W >= 16; sides that are not
// multiples of 16 are reflection-padded and the output cropped back.
ForwardResult nbed_forward_full(const ag::Var& image, const ModelParams& params);
ag::Var nbed_forward(const ag::Var& image, const ModelParams& params);
// Inference convenience: no graph, returns the probability tensor.
Tensor predict(const Tensor& image, const ModelParams& params);

int padded_size(int side);  // next multiple of 16

// Analytic profile of a configuration (no arrays are allocated).
std::int64_t count_parameters(const ModelConfig& config);
std::int64_t count_location_parameters(const ModelConfig& config);
double estimate_flops(const ModelConfig& config, int height, int width);

}  // namespace nbed

namespace nbed {

// Building blocks of estimate_flops (FLOPs = 2 x multiply-accumulates).
double conv_flops(int kernel, int in_channels, int out_channels, int out_h, int out_w, int groups = 1);
double attention_flops(std::int64_t tokens, int channels);

}  // namespace nbed
