#pragma once

#include <vector>

#include "nbed/tensor.hpp"

// OpenMP-parallel compute kernels used by the autograd ops. Every kernel has a
// serial counterpart with the same signature in nbed::reference
// (reference.hpp); the test suite checks one against the other and the
// benchmark target times both.
//
// Backward kernels accumulate (+=) into their gradient outputs; a null output
// pointer skips that gradient.

namespace nbed::kernels {

struct Conv2dSpec {
  int stride = 1;
  int pad = 0;
  int groups = 1;
};

int conv_out_size(int in, int kernel, int stride, int pad);

// x: N x Cin x H x W, weight: Cout x (Cin/groups) x K x K, bias: Cout or null.
Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, const Conv2dSpec& spec);
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, const Conv2dSpec& spec,
                     Tensor* grad_x, Tensor* grad_weight, Tensor* grad_bias);

// Half-pixel-centred bilinear resampling with edge clamping.
Tensor resize_bilinear_forward(const Tensor& x, int out_h, int out_w);
void resize_bilinear_backward(const Tensor& grad_out, Tensor& grad_x);

// Per-position normalization across channels with per-channel affine.
// `mean` and `rstd` (N x 1 x H x W) are filled for the backward pass.
Tensor channel_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, Tensor* mean,
                            Tensor* rstd);
void channel_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& mean, const Tensor& rstd,
                           const Tensor& grad_out, Tensor* grad_x, Tensor* grad_gamma, Tensor* grad_beta);

// Multi-head softmax attention over the flattened spatial grid. `qkv` is
// N x 3C x H x W holding queries, keys and values in consecutive channel
// blocks; heads split each block evenly. Returns N x C x H x W. When `probs`
// is non-null it receives the N*heads attention matrices for backward.
Tensor attention_forward(const Tensor& qkv, int heads, Tensor* probs);
void attention_backward(const Tensor& qkv, const Tensor& probs, int heads, const Tensor& grad_out,
                        Tensor& grad_qkv);

// 2x2 max pooling with stride 2; `argmax` receives flat input offsets.
Tensor max_pool2_forward(const Tensor& x, std::vector<std::size_t>* argmax);
void max_pool2_backward(const std::vector<std::size_t>& argmax, const Tensor& grad_out, Tensor& grad_x);

}  // namespace nbed::kernels
