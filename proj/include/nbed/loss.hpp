#pragma once

#include "nbed/autograd.hpp"

namespace nbed {

enum class Reduction { kSum, kMeanOverPixels };

// Annotator-robust weighted cross-entropy. Pixels whose consensus exceeds
// `eta` are positives weighted by alpha = |Y+|/|Y|; pixels with consensus
// exactly 0 are negatives weighted by beta = lambda*|Y-|/|Y|; everything in
// (0, eta] is ignored. `rcf_convention` swaps the class fractions
// (alpha = |Y-|/|Y|, beta = lambda*|Y+|/|Y|).
struct LossConfig {
  double lambda = 1.1;
  double eta = 0.3;
  Reduction reduction = Reduction::kSum;
  bool rcf_convention = false;

  void validate() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

inline constexpr double kLossClampEps = 1e-7;

struct ClassWeights {
  double positive = 0.0;
  double negative = 0.0;
};

// Weights of one image. Zero when every pixel lies in the ignored band.
ClassWeights class_weights(std::span<const double> gt, const LossConfig& cfg);

// `pred` and `gt` share a shape; rank-4 tensors are N images along dim 0, any
// other rank is a single image.
double wce_loss_value(const Tensor& pred, const Tensor& gt, const LossConfig& cfg);
Tensor wce_loss_grad(const Tensor& pred, const Tensor& gt, const LossConfig& cfg);
ag::Var wce_loss(const ag::Var& pred, const Tensor& gt, const LossConfig& cfg);

}  // namespace nbed
