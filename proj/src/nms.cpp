#include <algorithm>
#include <cmath>
#include <vector>

#include "nbed/errors.hpp"
#include "nbed/eval.hpp"

namespace nbed {

namespace {

constexpr int kRadius = 3;  // Gaussian sigma 1 truncated at 3 sigma

std::vector<double> gaussian_taps() {
  std::vector<double> taps(2 * kRadius + 1);
  double total = 0.0;
  for (int i = -kRadius; i <= kRadius; ++i) total += taps[static_cast<std::size_t>(i + kRadius)] = std::exp(-0.5 * i * i);
  for (double& t : taps) t /= total;
  return taps;
}

Tensor smooth(const Tensor& map) {
  const int h = map.dim(0), w = map.dim(1);
  const auto taps = gaussian_taps();
  Tensor tmp({h, w}), out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -kRadius; i <= kRadius; ++i) {
        const int xx = std::clamp(x + i, 0, w - 1);
        acc += taps[static_cast<std::size_t>(i + kRadius)] * map[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -kRadius; i <= kRadius; ++i) {
        const int yy = std::clamp(y + i, 0, h - 1);
        acc += taps[static_cast<std::size_t>(i + kRadius)] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

double sample_bilinear(const Tensor& map, double fy, double fx) {
  const int h = map.dim(0), w = map.dim(1);
  fy = std::clamp(fy, 0.0, h - 1.0);
  fx = std::clamp(fx, 0.0, w - 1.0);
  const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double ay = fy - y0, ax = fx - x0;
  auto at = [&](int y, int x) { return map[static_cast<std::size_t>(y) * w + x]; };
  return (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x1)) + ay * ((1 - ax) * at(y1, x0) + ax * at(y1, x1));
}

}  // namespace

Tensor nms_thin(const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("nms_thin expects an H x W map, got " + shape_string(map.shape()));
  const int h = map.dim(0), w = map.dim(1);
  const Tensor s = smooth(map);
  auto at = [&](const Tensor& t, int y, int x) {
    return t[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
  };
  Tensor out = map;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = map[static_cast<std::size_t>(y) * w + x];
      if (v == 0.0) continue;
      const double gx = 0.5 * (at(s, y, x + 1) - at(s, y, x - 1));
      const double gy = 0.5 * (at(s, y + 1, x) - at(s, y - 1, x));
      const double norm = std::hypot(gx, gy);
      if (norm == 0.0) continue;
      const double ux = gx / norm, uy = gy / norm;
      const double a = sample_bilinear(map, y + uy, x + ux), b = sample_bilinear(map, y - uy, x - ux);
      if (v < a || v < b) out[static_cast<std::size_t>(y) * w + x] = 0.0;
    }
  return out;
}

}  // namespace nbed
