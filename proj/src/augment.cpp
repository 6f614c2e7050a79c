#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "nbed/data.hpp"
#include "nbed/errors.hpp"

namespace nbed {

namespace {

int mirror_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

bool is_multiple_of(double degrees, double step) {
  const double q = degrees / step;
  return std::abs(q - std::round(q)) < 1e-12;
}

// Exact remap for quarter turns; `quarter` in {1, 2, 3}.
template <typename Get, typename Put>
void quarter_turn(int h, int w, int quarter, Get get, Put put) {
  const int oh = quarter == 2 ? h : w, ow = quarter == 2 ? w : h;
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      int sy = 0, sx = 0;
      if (quarter == 1) {
        sy = h - 1 - ox;
        sx = oy;
      } else if (quarter == 2) {
        sy = h - 1 - oy;
        sx = w - 1 - ox;
      } else {
        sy = ox;
        sx = w - 1 - oy;
      }
      put(oy, ox, sy, sx);
    }
  (void)get;
}

struct RotationGrid {
  int out_h, out_w;
  double cos_a, sin_a, in_cx, in_cy, out_cx, out_cy;

  std::pair<double, double> source(int oy, int ox) const {
    const double rx = ox + 0.5 - out_cx, ry = oy + 0.5 - out_cy;
    return {cos_a * rx + sin_a * ry + in_cx - 0.5, -sin_a * rx + cos_a * ry + in_cy - 0.5};
  }
};

RotationGrid rotation_grid(int h, int w, double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const auto [wr, hr] = inscribed_rect(w, h, rad);
  RotationGrid g{};
  g.out_w = std::max(1, static_cast<int>(std::floor(wr + 1e-9)));
  g.out_h = std::max(1, static_cast<int>(std::floor(hr + 1e-9)));
  g.cos_a = std::cos(rad);
  g.sin_a = std::sin(rad);
  g.in_cx = w / 2.0;
  g.in_cy = h / 2.0;
  g.out_cx = g.out_w / 2.0;
  g.out_cy = g.out_h / 2.0;
  return g;
}

double normalized_degrees(double degrees) {
  double d = std::fmod(degrees, 360.0);
  return d < 0 ? d + 360.0 : d;
}

}  // namespace

std::pair<double, double> inscribed_rect(double w, double h, double radians) {
  if (w <= 0 || h <= 0) return {0.0, 0.0};
  const bool width_longer = w >= h;
  const double side_long = width_longer ? w : h, side_short = width_longer ? h : w;
  const double s = std::abs(std::sin(radians)), c = std::abs(std::cos(radians));
  if (side_short <= 2.0 * s * c * side_long || std::abs(s - c) < 1e-10) {
    const double x = 0.5 * side_short;
    return width_longer ? std::pair{x / s, x / c} : std::pair{x / c, x / s};
  }
  const double cos_2a = c * c - s * s;
  return {(w * c - h * s) / cos_2a, (h * c - w * s) / cos_2a};
}

Image8 flip_image(const Image8& img, bool horizontal, bool vertical) {
  Image8 out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(vertical ? img.height - 1 - y : y, horizontal ? img.width - 1 - x : x, c);
  return out;
}

Tensor flip_map(const Tensor& map, bool horizontal, bool vertical) {
  const int h = map.dim(0), w = map.dim(1);
  Tensor out(map.shape());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out[static_cast<std::size_t>(y) * w + x] =
          map[static_cast<std::size_t>(vertical ? h - 1 - y : y) * w + (horizontal ? w - 1 - x : x)];
  return out;
}

Image8 resize_image(const Image8& img, int out_h, int out_w) {
  if (out_h == img.height && out_w == img.width) return img;
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_image: target size must be positive");
  Image8 out{out_h, out_w, img.channels, std::vector<std::uint8_t>(static_cast<std::size_t>(out_h) * out_w * img.channels)};
  const double sy = static_cast<double>(img.height) / out_h, sx = static_cast<double>(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, img.height - 1);
    const double ay = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, img.width - 1);
      const double ax = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double v = (1 - ay) * ((1 - ax) * img.at(y0, x0, c) + ax * img.at(y0, x1, c)) +
                         ay * ((1 - ax) * img.at(y1, x0, c) + ax * img.at(y1, x1, c));
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

Tensor resize_map_nearest(const Tensor& map, int out_h, int out_w) {
  const int h = map.dim(0), w = map.dim(1);
  if (out_h == h && out_w == w) return map;
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_map_nearest: target size must be positive");
  Tensor out({out_h, out_w});
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(h - 1, static_cast<int>(std::floor((y + 0.5) * h / out_h)));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(w - 1, static_cast<int>(std::floor((x + 0.5) * w / out_w)));
      out[static_cast<std::size_t>(y) * out_w + x] = map[static_cast<std::size_t>(sy) * w + sx];
    }
  }
  return out;
}

Image8 rotate_image(const Image8& img, double degrees) {
  const double d = normalized_degrees(degrees);
  if (is_multiple_of(d, 360.0)) return img;
  if (is_multiple_of(d, 90.0)) {
    const int q = static_cast<int>(std::lround(d / 90.0)) % 4;
    Image8 out{q == 2 ? img.height : img.width, q == 2 ? img.width : img.height, img.channels, {}};
    out.pixels.resize(img.pixels.size());
    quarter_turn(img.height, img.width, q, 0, [&](int oy, int ox, int sy, int sx) {
      for (int c = 0; c < img.channels; ++c) out.at(oy, ox, c) = img.at(sy, sx, c);
    });
    return out;
  }
  const RotationGrid g = rotation_grid(img.height, img.width, d);
  Image8 out{g.out_h, g.out_w, img.channels,
             std::vector<std::uint8_t>(static_cast<std::size_t>(g.out_h) * g.out_w * img.channels)};
  for (int oy = 0; oy < g.out_h; ++oy)
    for (int ox = 0; ox < g.out_w; ++ox) {
      const auto [fx, fy] = g.source(oy, ox);
      const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
      const double ax = fx - x0, ay = fy - y0;
      const int xa = mirror_index(x0, img.width), xb = mirror_index(x0 + 1, img.width);
      const int ya = mirror_index(y0, img.height), yb = mirror_index(y0 + 1, img.height);
      for (int c = 0; c < img.channels; ++c) {
        const double v = (1 - ay) * ((1 - ax) * img.at(ya, xa, c) + ax * img.at(ya, xb, c)) +
                         ay * ((1 - ax) * img.at(yb, xa, c) + ax * img.at(yb, xb, c));
        out.at(oy, ox, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  return out;
}

Tensor rotate_map(const Tensor& map, double degrees) {
  const int h = map.dim(0), w = map.dim(1);
  const double d = normalized_degrees(degrees);
  if (is_multiple_of(d, 360.0)) return map;
  if (is_multiple_of(d, 90.0)) {
    const int q = static_cast<int>(std::lround(d / 90.0)) % 4;
    const int ow = q == 2 ? w : h;
    Tensor out({q == 2 ? h : w, ow});
    quarter_turn(h, w, q, 0, [&](int oy, int ox, int sy, int sx) {
      out[static_cast<std::size_t>(oy) * ow + ox] = map[static_cast<std::size_t>(sy) * w + sx];
    });
    return out;
  }
  const RotationGrid g = rotation_grid(h, w, d);
  Tensor out({g.out_h, g.out_w});
  for (int oy = 0; oy < g.out_h; ++oy)
    for (int ox = 0; ox < g.out_w; ++ox) {
      const auto [fx, fy] = g.source(oy, ox);
      const int sx = mirror_index(static_cast<int>(std::lround(fx)), w);
      const int sy = mirror_index(static_cast<int>(std::lround(fy)), h);
      out[static_cast<std::size_t>(oy) * g.out_w + ox] = map[static_cast<std::size_t>(sy) * w + sx];
    }
  return out;
}

Image8 gamma_correct(const Image8& img, double gamma) {
  if (gamma == 1.0) return img;
  std::array<std::uint8_t, 256> lut{};
  for (int v = 0; v < 256; ++v) {
    lut[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(std::lround(255.0 * std::pow(v / 255.0, gamma)));
  }
  Image8 out = img;
  for (auto& p : out.pixels) p = lut[p];
  return out;
}

void AugmentationPlan::validate() const {
  if (flip_variants != 1 && flip_variants != 2 && flip_variants != 4) {
    throw ConfigError("augmentation: flip_variants must be 1, 2 or 4");
  }
  if (rotation_count < 1) throw ConfigError("augmentation: rotation_count must be >= 1");
  if (scale_factors.empty() || gamma_values.empty()) throw ConfigError("augmentation: empty scale or gamma list");
  for (double s : scale_factors)
    if (!(s > 0)) throw ConfigError("augmentation: scale factors must be positive");
  for (double g : gamma_values)
    if (!(g > 0)) throw ConfigError("augmentation: gamma values must be positive");
  if (finish != Finish::kNone && (out_height < 1 || out_width < 1)) {
    throw ConfigError("augmentation: resize/crop target must be positive");
  }
}

std::size_t AugmentationPlan::cardinality() const {
  return static_cast<std::size_t>(flip_variants) * scale_factors.size() * static_cast<std::size_t>(rotation_count) *
         gamma_values.size();
}

AugmentationPlan AugmentationPlan::bsds() {
  AugmentationPlan p;
  p.flip_variants = 4;
  p.rotation_count = 25;
  p.finish = Finish::kResize;
  p.out_height = 321;
  p.out_width = 481;
  return p;
}

AugmentationPlan AugmentationPlan::nyud() {
  AugmentationPlan p;
  p.flip_variants = 2;
  p.scale_factors = {0.5, 1.0, 1.5};
  p.rotation_count = 4;
  p.finish = Finish::kRandomCrop;
  p.out_height = 400;
  p.out_width = 400;
  return p;
}

AugmentationPlan AugmentationPlan::biped() {
  AugmentationPlan p = nyud();
  p.rotation_count = 16;
  p.gamma_values = {1.0, 0.3030, 0.6060};
  return p;
}

AugmentationPlan AugmentationPlan::by_name(const std::string& name) {
  if (name == "none") return identity();
  if (name == "bsds") return bsds();
  if (name == "nyud") return nyud();
  if (name == "biped") return biped();
  throw ConfigError("unknown augmentation preset '" + name + "' (expected none, bsds, nyud or biped)");
}

std::vector<Sample> augment(const Sample& sample, const AugmentationPlan& plan, std::uint64_t seed) {
  plan.validate();
  static constexpr std::array<std::pair<bool, bool>, 4> kFlips{{{false, false}, {true, false}, {false, true}, {true, true}}};
  std::vector<Sample> out;
  out.reserve(plan.cardinality());
  std::size_t index = 0;
  for (int f = 0; f < plan.flip_variants; ++f) {
    const auto [fh, fv] = kFlips[static_cast<std::size_t>(f)];
    for (std::size_t si = 0; si < plan.scale_factors.size(); ++si) {
      for (int r = 0; r < plan.rotation_count; ++r) {
        const double degrees = 360.0 * r / plan.rotation_count;
        for (std::size_t gi = 0; gi < plan.gamma_values.size(); ++gi, ++index) {
          // Every map goes through the same geometric chain.
          auto geometric = [&](const Tensor& m) {
            Tensor t = flip_map(m, fh, fv);
            const double s = plan.scale_factors[si];
            t = resize_map_nearest(t, std::max(1, static_cast<int>(std::lround(t.dim(0) * s))),
                                   std::max(1, static_cast<int>(std::lround(t.dim(1) * s))));
            return rotate_map(t, degrees);
          };
          Sample s;
          s.id = sample.id + "_f" + std::to_string(f) + "_s" + std::to_string(si) + "_r" + std::to_string(r) + "_g" +
                 std::to_string(gi);
          Image8 img = flip_image(sample.image, fh, fv);
          const double scale = plan.scale_factors[si];
          img = resize_image(img, std::max(1, static_cast<int>(std::lround(img.height * scale))),
                             std::max(1, static_cast<int>(std::lround(img.width * scale))));
          img = gamma_correct(rotate_image(img, degrees), plan.gamma_values[gi]);
          Tensor consensus = geometric(sample.consensus_gt);
          std::vector<Tensor> annotators;
          for (const auto& a : sample.annotator_gts) annotators.push_back(geometric(a));

          if (plan.finish == AugmentationPlan::Finish::kResize) {
            int th = plan.out_height, tw = plan.out_width;
            // Keep the sample's orientation (portrait stays portrait).
            if ((img.height > img.width) != (th > tw) && img.height != img.width) std::swap(th, tw);
            img = resize_image(img, th, tw);
            consensus = resize_map_nearest(consensus, th, tw);
            for (auto& a : annotators) a = resize_map_nearest(a, th, tw);
          } else if (plan.finish == AugmentationPlan::Finish::kRandomCrop) {
            if (plan.out_height > img.height || plan.out_width > img.width) {
              throw ShapeError("augment: crop " + std::to_string(plan.out_height) + "x" +
                               std::to_string(plan.out_width) + " larger than augmented image " +
                               std::to_string(img.height) + "x" + std::to_string(img.width));
            }
            std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + index);
            const int oy = std::uniform_int_distribution<int>(0, img.height - plan.out_height)(rng);
            const int ox = std::uniform_int_distribution<int>(0, img.width - plan.out_width)(rng);
            Image8 cropped{plan.out_height, plan.out_width, img.channels, {}};
            cropped.pixels.resize(static_cast<std::size_t>(plan.out_height) * plan.out_width * img.channels);
            for (int y = 0; y < plan.out_height; ++y)
              for (int x = 0; x < plan.out_width; ++x)
                for (int c = 0; c < img.channels; ++c) cropped.at(y, x, c) = img.at(oy + y, ox + x, c);
            auto crop_map = [&](const Tensor& m) {
              Tensor t({plan.out_height, plan.out_width});
              for (int y = 0; y < plan.out_height; ++y)
                for (int x = 0; x < plan.out_width; ++x)
                  t[static_cast<std::size_t>(y) * plan.out_width + x] =
                      m[static_cast<std::size_t>(oy + y) * m.dim(1) + ox + x];
              return t;
            };
            img = std::move(cropped);
            consensus = crop_map(consensus);
            for (auto& a : annotators) a = crop_map(a);
          }
          s.image = std::move(img);
          s.consensus_gt = std::move(consensus);
          s.annotator_gts = std::move(annotators);
          out.push_back(std::move(s));
        }
      }
    }
  }
  return out;
}

}  // namespace nbed
