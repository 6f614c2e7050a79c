#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "nbed/data.hpp"
#include "nbed/errors.hpp"

namespace nbed {

bool SynthShape::contains(int x, int y) const {
  const double px = x + 0.5, py = y + 0.5;
  switch (kind) {
    case Kind::kRectangle:
      return x >= x0 && x <= x1 && y >= y0 && y <= y1;
    case Kind::kEllipse: {
      const double c = std::cos(angle), s = std::sin(angle);
      const double dx = px - cx, dy = py - cy;
      const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
      return u * u + v * v <= 1.0;
    }
    case Kind::kPolygon: {
      // Even-odd rule.
      bool inside = false;
      const std::size_t n = vertices.size();
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const auto [xi, yi] = vertices[i];
        const auto [xj, yj] = vertices[j];
        if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
      }
      return inside;
    }
  }
  return false;
}

Tensor shape_labels(int height, int width, const std::vector<SynthShape>& shapes) {
  Tensor labels({height, width});
  for (std::size_t k = 0; k < shapes.size(); ++k)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (shapes[k].contains(x, y)) labels[static_cast<std::size_t>(y) * width + x] = static_cast<double>(k + 1);
  return labels;
}

Tensor label_boundaries(const Tensor& labels) {
  const int h = labels.dim(0), w = labels.dim(1);
  Tensor edges({h, w});
  auto at = [&](int y, int x) { return labels[static_cast<std::size_t>(y) * w + x]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = at(y, x);
      const bool edge = (y > 0 && at(y - 1, x) < v) || (y + 1 < h && at(y + 1, x) < v) ||
                        (x > 0 && at(y, x - 1) < v) || (x + 1 < w && at(y, x + 1) < v);
      if (edge) edges[static_cast<std::size_t>(y) * w + x] = 1.0;
    }
  return edges;
}

Sample render_shapes(int size, const std::vector<SynthShape>& shapes, std::uint8_t background, double noise,
                     std::uint64_t seed, const std::string& id) {
  const Tensor labels = shape_labels(size, size, shapes);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-noise, noise);
  Sample s;
  s.id = id;
  s.image = Image8{size, size, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size * 3)};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int label = static_cast<int>(labels[static_cast<std::size_t>(y) * size + x]);
      const double base = label == 0 ? background : shapes[static_cast<std::size_t>(label - 1)].gray;
      for (int c = 0; c < 3; ++c) {
        const double v = noise > 0 ? base + jitter(rng) : base;
        s.image.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  s.consensus_gt = label_boundaries(labels);
  s.annotator_gts = {s.consensus_gt};
  return s;
}

namespace {

constexpr int kMinShapePixels = 8;

int covered_pixels(const SynthShape& shape, int size) {
  int n = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) n += shape.contains(x, y);
  return n;
}

}  // namespace

Sample synth_sample(int size, int shape_count, std::uint64_t seed) {
  if (size < 32) throw ConfigError("synth_sample: size must be >= 32");
  if (shape_count < 0) throw ConfigError("synth_sample: shape_count must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Evenly spaced gray levels rising with paint order: every boundary pixel
  // lies on the brighter side of its intensity step.
  std::vector<std::uint8_t> grays;
  const int levels = shape_count + 1;
  for (int i = 0; i < levels; ++i) {
    grays.push_back(static_cast<std::uint8_t>(std::lround(24.0 + (levels == 1 ? 0.0 : 208.0 * i / (levels - 1)))));
  }

  std::vector<SynthShape> shapes;
  const double s = size;
  for (int k = 0; k < shape_count; ++k) {
    // Slivers that cover almost no pixel centres would leave no boundary;
    // they are redrawn.
    SynthShape shape;
    do {
      shape = SynthShape{};
      shape.gray = grays[static_cast<std::size_t>(k + 1)];
      const double cx = s * (0.2 + 0.6 * unit(rng)), cy = s * (0.2 + 0.6 * unit(rng));
      const double radius = s * (0.1 + 0.2 * unit(rng));
      const int pick = static_cast<int>(unit(rng) * 3.0);
      if (pick == 0) {
        shape.kind = SynthShape::Kind::kPolygon;
        const int n = 3 + static_cast<int>(unit(rng) * 4.0);
        std::vector<double> angles;
        for (int i = 0; i < n; ++i) angles.push_back(2.0 * std::numbers::pi * unit(rng));
        std::sort(angles.begin(), angles.end());
        for (double a : angles) {
          const double r = radius * (0.6 + 0.4 * unit(rng));
          shape.vertices.emplace_back(cx + r * std::cos(a), cy + r * std::sin(a));
        }
      } else if (pick == 1) {
        shape.kind = SynthShape::Kind::kEllipse;
        shape.cx = cx;
        shape.cy = cy;
        shape.rx = radius;
        shape.ry = radius * (0.4 + 0.6 * unit(rng));
        shape.angle = std::numbers::pi * unit(rng);
      } else {
        shape.kind = SynthShape::Kind::kRectangle;
        const double hw = radius * (0.5 + 0.5 * unit(rng)), hh = radius * (0.5 + 0.5 * unit(rng));
        shape.x0 = std::max(0, static_cast<int>(cx - hw));
        shape.x1 = std::min(size - 1, static_cast<int>(cx + hw));
        shape.y0 = std::max(0, static_cast<int>(cy - hh));
        shape.y1 = std::min(size - 1, static_cast<int>(cy + hh));
      }
    } while (covered_pixels(shape, size) < kMinShapePixels);
    shapes.push_back(std::move(shape));
  }
  return render_shapes(size, shapes, grays[0], 6.0, rng(), "synth_" + std::to_string(seed));
}

}  // namespace nbed
