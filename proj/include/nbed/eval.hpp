#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nbed/data.hpp"
#include "nbed/model.hpp"

namespace nbed {

struct EvalConfig {
  double tolerance_fraction = 0.0075;  // of the image diagonal
  int thresholds = 99;                 // t_k = k / (thresholds + 1)
  bool use_nms = true;

  void validate() const;
  std::vector<double> threshold_values() const;
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

// Thins an H x W probability map: orientation from the gradient of a
// Gaussian-smoothed (sigma 1) copy; a pixel is zeroed when it is strictly
// smaller than either bilinear neighbour one pixel away along the gradient.
// Pixels with zero gradient are kept.
Tensor nms_thin(const Tensor& map);

struct MatchResult {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::vector<char> pred_matched;  // per pixel, row-major
  std::vector<char> gt_matched;
};

// Maximum-cardinality one-to-one matching between the nonzero pixels of two
// binary H x W maps, pairing pixels no farther than d_max apart.
MatchResult match_boundaries(const Tensor& pred, const Tensor& gt, double d_max);

// Counts of one image at every threshold. Precision uses the pixels matched to
// any annotator; recall sums matches and positives over annotators.
struct ImageTally {
  std::string id;
  std::vector<std::int64_t> matched_pred;
  std::vector<std::int64_t> pred_total;
  std::vector<std::int64_t> matched_gt;
  std::vector<std::int64_t> gt_total;

  std::int64_t tp(std::size_t k) const { return matched_pred[k]; }
  std::int64_t fp(std::size_t k) const { return pred_total[k] - matched_pred[k]; }
  std::int64_t fn(std::size_t k) const { return gt_total[k] - matched_gt[k]; }
};

struct ThresholdTally {
  std::vector<double> thresholds;
  std::vector<ImageTally> images;
};

ImageTally tally_image(const Tensor& pred, const Sample& sample, const EvalConfig& cfg);
ThresholdTally accumulate_tallies(const std::vector<Tensor>& preds, const std::vector<Sample>& samples,
                                  const EvalConfig& cfg);

double f_measure(double p, double r);

struct PrPoint {
  double threshold = 0;
  double precision = 0;
  double recall = 0;
  double f = 0;
};

struct EvalSummary {
  double ods = 0;
  double ois = 0;
  double ods_threshold = 0;
  std::vector<PrPoint> pr_points;  // one per threshold, from dataset sums
};

EvalSummary ods_ois(const ThresholdTally& tally);

using ForwardFn = std::function<Tensor(const Tensor&)>;

// Averages forward(rescaled image) resized back to H x W. `image` is
// 1 x 3 x H x W; the result is H x W.
Tensor multi_scale_infer(const ForwardFn& forward, const Tensor& image,
                         const std::vector<double>& scales = {0.5, 1.0, 1.5});
Tensor multi_scale_infer(const ModelParams& params, const Tensor& image,
                         const std::vector<double>& scales = {0.5, 1.0, 1.5});

// H x W map from an 8-bit PNG (v / 255) or an archive holding one array.
Tensor load_prediction(const std::filesystem::path& path);
void save_prediction_array(const Tensor& map, const std::filesystem::path& path);

void write_pr_csv(const EvalSummary& summary, const std::filesystem::path& path);
// Line plot of the PR points, self-contained SVG.
void write_pr_svg(const EvalSummary& summary, const std::filesystem::path& path);

}  // namespace nbed
