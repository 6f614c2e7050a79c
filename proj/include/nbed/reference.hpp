#pragma once

#include <vector>

#include "nbed/kernels.hpp"

// Serial nested-loop versions of the kernels in kernels.hpp. Slow and
// obviously correct; used as test oracles and as the benchmark baseline.
namespace nbed::reference {

using kernels::Conv2dSpec;

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, const Conv2dSpec& spec);
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, const Conv2dSpec& spec,
                     Tensor* grad_x, Tensor* grad_weight, Tensor* grad_bias);

Tensor resize_bilinear_forward(const Tensor& x, int out_h, int out_w);
void resize_bilinear_backward(const Tensor& grad_out, Tensor& grad_x);

Tensor channel_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, Tensor* mean,
                            Tensor* rstd);
void channel_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& mean, const Tensor& rstd,
                           const Tensor& grad_out, Tensor* grad_x, Tensor* grad_gamma, Tensor* grad_beta);

Tensor attention_forward(const Tensor& qkv, int heads, Tensor* probs);
void attention_backward(const Tensor& qkv, const Tensor& probs, int heads, const Tensor& grad_out,
                        Tensor& grad_qkv);

Tensor max_pool2_forward(const Tensor& x, std::vector<std::size_t>* argmax);
void max_pool2_backward(const std::vector<std::size_t>& argmax, const Tensor& grad_out, Tensor& grad_x);

}  // namespace nbed::reference
