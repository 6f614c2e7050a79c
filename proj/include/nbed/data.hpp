#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nbed/image_io.hpp"
#include "nbed/tensor.hpp"

namespace nbed {

// One training/evaluation example. Maps are H x W tensors.
struct Sample {
  std::string id;
  Image8 image;                        // RGB
  Tensor consensus_gt;                 // values in [0, 1]
  std::vector<Tensor> annotator_gts;   // binary {0, 1}, at least one

  int height() const { return image.height; }
  int width() const { return image.width; }
};

// Pixelwise mean of equally-sized binary maps.
Tensor consensus_groundtruth(const std::vector<Tensor>& annotations);

// Each non-comment line: image path followed by one or more ground-truth
// paths, whitespace-separated and relative to the list file's directory.
std::vector<Sample> load_listfile(const std::filesystem::path& path);

// Writes images as PNG plus one gt PNG per annotator and a list file that
// load_listfile reads back.
void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir,
                   const std::string& list_name = "data.lst");

// ---- augmentation ----

struct AugmentationPlan {
  enum class Finish { kNone, kResize, kRandomCrop };

  int flip_variants = 1;  // 1: identity; 2: + horizontal; 4: + vertical, both
  std::vector<double> scale_factors{1.0};
  int rotation_count = 1;  // angles k * 360 / rotation_count
  std::vector<double> gamma_values{1.0};
  Finish finish = Finish::kNone;
  int out_height = 0;
  int out_width = 0;

  void validate() const;
  std::size_t cardinality() const;

  static AugmentationPlan identity() { return {}; }
  static AugmentationPlan bsds();   // F 4x, R 25x, resize 321 x 481
  static AugmentationPlan nyud();   // F 2x, S 3x, R 4x, crop 400 x 400
  static AugmentationPlan biped();  // F 2x, S 3x, R 16x, G 3x, crop 400 x 400
  static AugmentationPlan by_name(const std::string& name);
};

// Emits the Cartesian product flips x scales x rotations x gammas, in that
// nesting order. Ground truths are resampled nearest-neighbour so consensus
// values stay on the k/n lattice.
std::vector<Sample> augment(const Sample& sample, const AugmentationPlan& plan, std::uint64_t seed);

// Largest axis-aligned rectangle (width, height) inside a w x h rectangle
// rotated by `radians`.
std::pair<double, double> inscribed_rect(double w, double h, double radians);

// Building blocks, exposed for tests.
Image8 flip_image(const Image8& img, bool horizontal, bool vertical);
Tensor flip_map(const Tensor& map, bool horizontal, bool vertical);
Image8 resize_image(const Image8& img, int out_h, int out_w);  // bilinear
Tensor resize_map_nearest(const Tensor& map, int out_h, int out_w);
Image8 rotate_image(const Image8& img, double degrees);
Tensor rotate_map(const Tensor& map, double degrees);
Image8 gamma_correct(const Image8& img, double gamma);

// ---- synthetic data ----

struct SynthShape {
  enum class Kind { kPolygon, kEllipse, kRectangle };
  Kind kind = Kind::kRectangle;
  std::vector<std::pair<double, double>> vertices;  // polygon (x, y)
  double cx = 0, cy = 0, rx = 0, ry = 0, angle = 0;  // ellipse
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;               // rectangle, inclusive pixel bounds
  std::uint8_t gray = 255;

  bool contains(int x, int y) const;  // tested at the pixel centre
};

// Label map of the painted shapes (0 = background, k = k-th shape, later
// shapes on top) and its boundary: a pixel is an edge when a 4-neighbour has
// a smaller label, i.e. the upper side of every label change.
Tensor shape_labels(int height, int width, const std::vector<SynthShape>& shapes);
Tensor label_boundaries(const Tensor& labels);

Sample render_shapes(int size, const std::vector<SynthShape>& shapes, std::uint8_t background, double noise,
                     std::uint64_t seed, const std::string& id = "shapes");
Sample synth_sample(int size, int shape_count, std::uint64_t seed);

}  // namespace nbed
