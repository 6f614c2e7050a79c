#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "nbed/checkpoint.hpp"
#include "nbed/errors.hpp"
#include "nbed/eval.hpp"
#include "nbed/image_io.hpp"

namespace nbed {

void EvalConfig::validate() const {
  if (!(tolerance_fraction > 0 && tolerance_fraction < 0.1)) {
    throw ConfigError("eval.tolerance_fraction must lie in (0, 0.1)");
  }
  if (thresholds < 1) throw ConfigError("eval.thresholds must be >= 1");
}

std::vector<double> EvalConfig::threshold_values() const {
  std::vector<double> t;
  for (int k = 1; k <= thresholds; ++k) t.push_back(static_cast<double>(k) / (thresholds + 1));
  return t;
}

ImageTally tally_image(const Tensor& pred, const Sample& sample, const EvalConfig& cfg) {
  Tensor map = pred;
  if (map.rank() == 4 && map.n() == 1 && map.c() == 1) map.reshape({map.h(), map.w()});
  if (map.rank() != 2 || map.dim(0) != sample.height() || map.dim(1) != sample.width()) {
    throw ShapeError("prediction for '" + sample.id + "' has shape " + shape_string(pred.shape()) + ", expected (" +
                     std::to_string(sample.height()) + "x" + std::to_string(sample.width()) + ")");
  }
  if (cfg.use_nms) map = nms_thin(map);
  const double d_max = cfg.tolerance_fraction * std::hypot(map.dim(0), map.dim(1));

  std::int64_t gt_total = 0;
  for (const auto& a : sample.annotator_gts) {
    for (double v : a.values()) gt_total += v != 0.0 ? 1 : 0;
  }

  ImageTally t;
  t.id = sample.id;
  std::int64_t last_total = -1;
  for (double threshold : cfg.threshold_values()) {
    Tensor binary({map.dim(0), map.dim(1)});
    std::int64_t total = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
      if (map[i] >= threshold) {
        binary[i] = 1.0;
        ++total;
      }
    }
    // Nested thresholds: an unchanged count means an unchanged binary map.
    if (total == last_total) {
      t.matched_pred.push_back(t.matched_pred.back());
      t.pred_total.push_back(total);
      t.matched_gt.push_back(t.matched_gt.back());
      t.gt_total.push_back(gt_total);
      continue;
    }
    std::vector<char> any(map.size(), 0);
    std::int64_t matched_gt = 0;
    for (const auto& a : sample.annotator_gts) {
      const MatchResult m = match_boundaries(binary, a, d_max);
      matched_gt += m.tp;
      for (std::size_t i = 0; i < any.size(); ++i) any[i] = static_cast<char>(any[i] | m.pred_matched[i]);
    }
    t.matched_pred.push_back(std::count(any.begin(), any.end(), 1));
    t.pred_total.push_back(total);
    t.matched_gt.push_back(matched_gt);
    t.gt_total.push_back(gt_total);
    last_total = total;
  }
  return t;
}

ThresholdTally accumulate_tallies(const std::vector<Tensor>& preds, const std::vector<Sample>& samples,
                                  const EvalConfig& cfg) {
  cfg.validate();
  if (preds.size() != samples.size()) {
    throw ShapeError("accumulate_tallies: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(samples.size()) + " samples");
  }
  ThresholdTally tally;
  tally.thresholds = cfg.threshold_values();
  tally.images.resize(samples.size());
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < samples.size(); ++i) {
    try {
      tally.images[i] = tally_image(preds[i], samples[i], cfg);
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw ShapeError(error);
  return tally;
}

double f_measure(double p, double r) { return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0; }

namespace {

PrPoint pr_point(double threshold, std::int64_t matched_pred, std::int64_t pred_total, std::int64_t matched_gt,
                 std::int64_t gt_total) {
  PrPoint p;
  p.threshold = threshold;
  p.precision = pred_total > 0 ? static_cast<double>(matched_pred) / static_cast<double>(pred_total) : 0.0;
  p.recall = gt_total > 0 ? static_cast<double>(matched_gt) / static_cast<double>(gt_total) : 0.0;
  p.f = f_measure(p.precision, p.recall);
  return p;
}

}  // namespace

EvalSummary ods_ois(const ThresholdTally& tally) {
  if (tally.images.empty()) throw ShapeError("ods_ois: tally covers no images");
  EvalSummary s;
  double ois_sum = 0.0;
  for (const auto& img : tally.images) {
    double best = 0.0;
    for (std::size_t k = 0; k < tally.thresholds.size(); ++k) {
      best = std::max(best, pr_point(tally.thresholds[k], img.matched_pred[k], img.pred_total[k], img.matched_gt[k],
                                     img.gt_total[k])
                                .f);
    }
    ois_sum += best;
  }
  s.ois = ois_sum / static_cast<double>(tally.images.size());
  for (std::size_t k = 0; k < tally.thresholds.size(); ++k) {
    std::int64_t mp = 0, pt = 0, mg = 0, gt = 0;
    for (const auto& img : tally.images) {
      mp += img.matched_pred[k];
      pt += img.pred_total[k];
      mg += img.matched_gt[k];
      gt += img.gt_total[k];
    }
    s.pr_points.push_back(pr_point(tally.thresholds[k], mp, pt, mg, gt));
    if (s.pr_points.back().f > s.ods) {
      s.ods = s.pr_points.back().f;
      s.ods_threshold = tally.thresholds[k];
    }
  }
  return s;
}

Tensor multi_scale_infer(const ForwardFn& forward, const Tensor& image, const std::vector<double>& scales) {
  if (image.rank() != 4 || image.n() != 1) {
    throw ShapeError("multi_scale_infer expects a 1 x C x H x W image, got " + shape_string(image.shape()));
  }
  if (scales.empty()) throw ConfigError("multi_scale_infer: no scales given");
  const int h = image.h(), w = image.w();
  Tensor sum({h, w});
  for (double s : scales) {
    const int sh = static_cast<int>(std::lround(h * s)), sw = static_cast<int>(std::lround(w * s));
    if (sh < 16 || sw < 16) {
      throw ShapeError("multi_scale_infer: scale " + std::to_string(s) + " gives " + std::to_string(sh) + "x" +
                       std::to_string(sw) + ", sides must be >= 16");
    }
    const Tensor input = (sh == h && sw == w) ? image : kernels::resize_bilinear_forward(image, sh, sw);
    Tensor out = forward(input);
    if (out.rank() == 2) out.reshape({1, 1, out.dim(0), out.dim(1)});
    if (out.h() != h || out.w() != w) out = kernels::resize_bilinear_forward(out, h, w);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += out[i];
  }
  for (double& v : sum.values()) v /= static_cast<double>(scales.size());
  return sum;
}

Tensor multi_scale_infer(const ModelParams& params, const Tensor& image, const std::vector<double>& scales) {
  return multi_scale_infer([&](const Tensor& x) { return predict(x, params); }, image, scales);
}

Tensor load_prediction(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("missing prediction " + path.string());
  std::ifstream in(path, std::ios::binary);
  char magic[8] = {};
  in.read(magic, 8);
  if (in.gcount() == 8 && std::string(magic, 8) == "NBEDCKPT") {
    Archive a = read_archive(path);
    if (a.arrays.size() != 1) throw IoError(path.string() + ": expected exactly one array");
    Tensor t = std::move(a.arrays[0].value);
    if (t.rank() == 4 && t.n() == 1 && t.c() == 1) t.reshape({t.h(), t.w()});
    if (t.rank() != 2) throw IoError(path.string() + ": prediction array must be H x W");
    return t;
  }
  return gray8_to_map(read_image(path, 1));
}

void save_prediction_array(const Tensor& map, const std::filesystem::path& path) {
  Archive a;
  a.arrays.push_back({"prediction", map, DType::kFloat32, false});
  write_archive(path, a);
}

void write_pr_csv(const EvalSummary& summary, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "threshold,precision,recall,f\n" << std::setprecision(10);
  for (const auto& p : summary.pr_points) out << p.threshold << ',' << p.precision << ',' << p.recall << ',' << p.f << '\n';
}

}  // namespace nbed
