#include "nbed/loss.hpp"

#include <algorithm>
#include <cmath>

#include "nbed/errors.hpp"

namespace nbed {

namespace {

struct ImageSplit {
  std::size_t count;
  std::size_t stride;
};

ImageSplit split_images(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt)) {
    throw ShapeError("loss: prediction " + shape_string(pred.shape()) + " vs ground truth " + shape_string(gt.shape()));
  }
  if (pred.empty()) return {0, 0};
  const std::size_t images = pred.rank() == 4 ? static_cast<std::size_t>(pred.n()) : 1;
  return {images, pred.size() / images};
}

double clamp_prob(double p) { return std::clamp(p, kLossClampEps, 1.0 - kLossClampEps); }

double total_divisor(const Tensor& pred, const LossConfig& cfg) {
  return cfg.reduction == Reduction::kMeanOverPixels && !pred.empty() ? static_cast<double>(pred.size()) : 1.0;
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda > 0.0)) throw ConfigError("loss.lambda must be > 0");
  if (!(eta >= 0.0 && eta < 1.0)) throw ConfigError("loss.eta must lie in [0, 1)");
}

ClassWeights class_weights(std::span<const double> gt, const LossConfig& cfg) {
  double pos = 0.0, neg = 0.0;
  for (double y : gt) {
    if (y > cfg.eta) pos += 1.0;
    else if (y == 0.0) neg += 1.0;
  }
  const double all = pos + neg;
  if (all == 0.0) return {};
  if (cfg.rcf_convention) return {neg / all, cfg.lambda * pos / all};
  return {pos / all, cfg.lambda * neg / all};
}

double wce_loss_value(const Tensor& pred, const Tensor& gt, const LossConfig& cfg) {
  const auto [images, stride] = split_images(pred, gt);
  double total = 0.0;
  for (std::size_t i = 0; i < images; ++i) {
    const auto g = gt.values().subspan(i * stride, stride);
    const auto p = pred.values().subspan(i * stride, stride);
    const ClassWeights w = class_weights(g, cfg);
    double acc = 0.0;
    for (std::size_t k = 0; k < stride; ++k) {
      if (g[k] > cfg.eta) acc -= w.positive * std::log(clamp_prob(p[k]));
      else if (g[k] == 0.0) acc -= w.negative * std::log(1.0 - clamp_prob(p[k]));
    }
    total += acc;
  }
  return total / total_divisor(pred, cfg);
}

Tensor wce_loss_grad(const Tensor& pred, const Tensor& gt, const LossConfig& cfg) {
  const auto [images, stride] = split_images(pred, gt);
  Tensor grad(pred.shape());
  const double scale = 1.0 / total_divisor(pred, cfg);
  for (std::size_t i = 0; i < images; ++i) {
    const auto g = gt.values().subspan(i * stride, stride);
    const ClassWeights w = class_weights(g, cfg);
    for (std::size_t k = 0; k < stride; ++k) {
      const double p = pred[i * stride + k];
      // The clamp has zero slope outside [eps, 1 - eps].
      if (p < kLossClampEps || p > 1.0 - kLossClampEps) continue;
      if (g[k] > cfg.eta) grad[i * stride + k] = -w.positive / p * scale;
      else if (g[k] == 0.0) grad[i * stride + k] = w.negative / (1.0 - p) * scale;
    }
  }
  return grad;
}

ag::Var wce_loss(const ag::Var& pred, const Tensor& gt, const LossConfig& cfg) {
  const double value = wce_loss_value(pred.value(), gt, cfg);
  return ag::make_result(Tensor({1}, value), {pred}, [gt, cfg](ag::Node& self) {
    ag::Node& in = *self.inputs[0];
    Tensor g = wce_loss_grad(in.value, gt, cfg);
    for (double& v : g.values()) v *= self.grad[0];
    in.grad_buffer().add_(g);
  });
}

}  // namespace nbed
