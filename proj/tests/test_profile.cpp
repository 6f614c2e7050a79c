#include <doctest.h>

#include "nbed/model.hpp"

using namespace nbed;

namespace {

ModelConfig empty_config() {
  ModelConfig c;
  c.location_channels = {0, 0};
  c.semantic_stage_blocks = {0, 0, 0};
  c.semantic_stage_channels = {0, 0, 0};
  c.decoder_base_channels = 0;
  return c;
}

}  // namespace

TEST_CASE("location branch parameter count by hand") {
  CHECK(count_location_parameters(ModelConfig{}) == (3 * 16 * 9 + 16) + (16 * 32 * 9 + 32));
  CHECK(count_location_parameters(ModelConfig{}) == 5088);
}

TEST_CASE("single convolution FLOPs") {
  CHECK(conv_flops(3, 3, 16, 64, 64) == 2.0 * 9 * 3 * 16 * 64 * 64);
  CHECK(conv_flops(3, 3, 16, 64, 64) == 3538944.0);
  CHECK(conv_flops(3, 8, 8, 4, 4, 8) == 2.0 * 9 * 1 * 8 * 16);
}

TEST_CASE("empty model has no parameters and no FLOPs") {
  CHECK(count_parameters(empty_config()) == 0);
  CHECK(estimate_flops(empty_config(), 321, 481) == 0.0);
}

TEST_CASE("location-only model FLOPs equal its two convolutions") {
  ModelConfig c = empty_config();
  c.location_channels = {16, 32};
  CHECK(estimate_flops(c, 64, 64) == conv_flops(3, 3, 16, 64, 64) + conv_flops(3, 16, 32, 32, 32));
}

TEST_CASE("analytic parameter count equals the built model for every decoder") {
  for (auto decoder : {DecoderKind::kCascaded, DecoderKind::kHed, DecoderKind::kUnet}) {
    for (int growth : {1, 2}) {
      ModelConfig c = tiny_config();
      c.decoder = decoder;
      c.decoder_channel_growth = growth;
      c.fuse_kernel = growth == 2 ? 3 : 1;
      c.semantic_stage_operator = {OperatorKind::kSelfAttention, OperatorKind::kSeparableConv,
                                   OperatorKind::kSelfAttention};
      CAPTURE(to_string(decoder));
      CAPTURE(growth);
      CHECK(static_cast<std::int64_t>(build_model(c).store.scalar_count()) == count_parameters(c));
    }
  }
}

TEST_CASE("default model lands near the published size and cost") {
  const auto params = count_parameters(ModelConfig{});
  CHECK(params >= 34'000'000);
  CHECK(params <= 46'000'000);
  const double flops = estimate_flops(ModelConfig{}, 321, 481);
  CHECK(flops >= 51.6e9);
  CHECK(flops <= 86.0e9);
}

TEST_CASE("FLOPs are counted at the padded resolution") {
  CHECK(estimate_flops(ModelConfig{}, 321, 481) == estimate_flops(ModelConfig{}, 336, 496));
  CHECK(estimate_flops(ModelConfig{}, 320, 480) < estimate_flops(ModelConfig{}, 321, 481));
}
