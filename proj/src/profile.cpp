#include "nbed/kernels.hpp"
#include "nbed/model.hpp"

namespace nbed {

namespace {

std::int64_t conv_params(std::int64_t cin, std::int64_t cout, std::int64_t k, bool depthwise = false) {
  if (cin == 0 || cout == 0) return 0;
  const std::int64_t per_out = depthwise ? 1 : cin;
  return cout * per_out * k * k + cout;
}

struct Sizes {
  std::array<int, 5> h{}, w{};
  std::int64_t tokens(int level) const {
    return static_cast<std::int64_t>(h[static_cast<std::size_t>(level)]) * w[static_cast<std::size_t>(level)];
  }
};

Sizes pyramid_sizes(const ModelConfig& c, int height, int width) {
  Sizes s;
  const int hp = padded_size(height), wp = padded_size(width);
  s.h[0] = hp;
  s.w[0] = wp;
  s.h[1] = hp / 2;
  s.w[1] = wp / 2;
  s.h[2] = kernels::conv_out_size(hp, c.stem_kernel, 4, c.stem_kernel / 2);
  s.w[2] = kernels::conv_out_size(wp, c.stem_kernel, 4, c.stem_kernel / 2);
  for (int l = 3; l < 5; ++l) {
    s.h[static_cast<std::size_t>(l)] = kernels::conv_out_size(s.h[static_cast<std::size_t>(l - 1)], 3, 2, 1);
    s.w[static_cast<std::size_t>(l)] = kernels::conv_out_size(s.w[static_cast<std::size_t>(l - 1)], 3, 2, 1);
  }
  return s;
}

}  // namespace

double conv_flops(int kernel, int in_channels, int out_channels, int out_h, int out_w, int groups) {
  return 2.0 * kernel * kernel * (static_cast<double>(in_channels) / groups) * out_channels * out_h * out_w;
}

double attention_flops(std::int64_t tokens, int channels) {
  const double n = static_cast<double>(tokens), d = channels;
  return 2.0 * (n * n * d * 2.0 + n * d * d * 4.0);
}

std::int64_t count_location_parameters(const ModelConfig& c) {
  return conv_params(c.input_channels, c.location_channels[0], 3) +
         conv_params(c.location_channels[0], c.location_channels[1], 3);
}

std::int64_t count_parameters(const ModelConfig& c) {
  std::int64_t total = count_location_parameters(c);
  const auto& sc = c.semantic_stage_channels;
  total += conv_params(c.input_channels, sc[0], c.stem_kernel);
  total += conv_params(sc[0], sc[1], 3) + conv_params(sc[1], sc[2], 3);
  for (std::size_t s = 0; s < 3; ++s) {
    const std::int64_t ch = sc[s], hidden = ch * c.mlp_expansion_ratio;
    std::int64_t block = 4 * ch;  // two affine norms
    if (c.semantic_stage_operator[s] == OperatorKind::kSeparableConv) {
      block += conv_params(ch, ch, c.separable_kernel, true) + conv_params(ch, ch, 1);
    } else {
      block += conv_params(ch, 3 * ch, 1) + conv_params(ch, ch, 1);
    }
    block += conv_params(ch, hidden, 1) + conv_params(hidden, ch, 1);
    total += block * c.semantic_stage_blocks[s];
  }

  const auto levels = c.pyramid_channels();
  const auto d = c.decoder_channels();
  switch (c.decoder) {
    case DecoderKind::kCascaded: {
      auto cur = levels;
      for (std::size_t j = 1; j <= 4; ++j)
        for (std::size_t i = 0; i + j <= 4; ++i) {
          total += conv_params(cur[i + 1], d[i], 1) + conv_params(cur[i] + d[i], d[i], c.fuse_kernel);
          cur[i] = d[i];
        }
      total += conv_params(d[0], 1, 1);
      break;
    }
    case DecoderKind::kHed:
      for (int ch : levels) total += conv_params(ch, 1, 1);
      total += conv_params(5, 1, 1);
      break;
    case DecoderKind::kUnet: {
      std::int64_t below = levels[4];
      for (int i = 3; i >= 0; --i) {
        total += conv_params(below + levels[static_cast<std::size_t>(i)], d[static_cast<std::size_t>(i)], 3);
        below = d[static_cast<std::size_t>(i)];
      }
      total += conv_params(d[0], 1, 1);
      break;
    }
  }
  return total;
}

double estimate_flops(const ModelConfig& c, int height, int width) {
  const Sizes s = pyramid_sizes(c, height, width);
  const auto levels = c.pyramid_channels();
  double f = 0.0;
  f += conv_flops(3, c.input_channels, levels[0], s.h[0], s.w[0]);
  f += conv_flops(3, levels[0], levels[1], s.h[1], s.w[1]);

  const auto& sc = c.semantic_stage_channels;
  f += conv_flops(c.stem_kernel, c.input_channels, sc[0], s.h[2], s.w[2]);
  f += conv_flops(3, sc[0], sc[1], s.h[3], s.w[3]);
  f += conv_flops(3, sc[1], sc[2], s.h[4], s.w[4]);
  for (std::size_t st = 0; st < 3; ++st) {
    const int ch = sc[st], hidden = ch * c.mlp_expansion_ratio, lvl = static_cast<int>(st) + 2;
    const int h = s.h[static_cast<std::size_t>(lvl)], w = s.w[static_cast<std::size_t>(lvl)];
    double block = 0.0;
    if (c.semantic_stage_operator[st] == OperatorKind::kSeparableConv) {
      if (ch > 0) block += conv_flops(c.separable_kernel, ch, ch, h, w, ch);
      block += conv_flops(1, ch, ch, h, w);
    } else {
      block += attention_flops(s.tokens(lvl), ch);
    }
    block += conv_flops(1, ch, hidden, h, w) + conv_flops(1, hidden, ch, h, w);
    f += block * c.semantic_stage_blocks[st];
  }

  const auto d = c.decoder_channels();
  switch (c.decoder) {
    case DecoderKind::kCascaded: {
      auto cur = levels;
      for (std::size_t j = 1; j <= 4; ++j)
        for (std::size_t i = 0; i + j <= 4; ++i) {
          // The phi projection runs at the coarse level's resolution.
          f += conv_flops(1, cur[i + 1], d[i], s.h[i + 1], s.w[i + 1]);
          f += conv_flops(c.fuse_kernel, cur[i] + d[i], d[i], s.h[i], s.w[i]);
          cur[i] = d[i];
        }
      f += conv_flops(1, d[0], d[0] > 0 ? 1 : 0, s.h[0], s.w[0]);
      break;
    }
    case DecoderKind::kHed:
      for (std::size_t i = 0; i < 5; ++i) f += conv_flops(1, levels[i], 1, s.h[i], s.w[i]);
      f += conv_flops(1, 5, 1, s.h[0], s.w[0]);
      break;
    case DecoderKind::kUnet: {
      int below = levels[4];
      for (int i = 3; i >= 0; --i) {
        const auto ui = static_cast<std::size_t>(i);
        f += conv_flops(3, below + levels[ui], d[ui], s.h[ui], s.w[ui]);
        below = d[ui];
      }
      f += conv_flops(1, d[0], 1, s.h[0], s.w[0]);
      break;
    }
  }
  return f;
}

}  // namespace nbed
