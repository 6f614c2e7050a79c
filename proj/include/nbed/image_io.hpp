#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nbed/tensor.hpp"

namespace nbed {

// 8-bit interleaved image (row-major, `channels` samples per pixel).
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  friend bool operator==(const Image8&, const Image8&) = default;
};

// PNG or JPEG (detected by signature). Gray inputs are expanded to RGB when
// `want_channels` is 3; RGB inputs are averaged when it is 1. Alpha is dropped.
Image8 read_image(const std::filesystem::path& path, int want_channels = 3);
void write_png(const std::filesystem::path& path, const Image8& image);

// 1 x 3 x H x W network input, values (v / 255 - 0.5).
Tensor image_to_tensor(const Image8& rgb);
// H x W probabilities -> 8-bit gray, round(255 * v).
Image8 map_to_gray8(const Tensor& map);
// 8-bit gray -> H x W map, v / 255.
Tensor gray8_to_map(const Image8& gray);

}  // namespace nbed
