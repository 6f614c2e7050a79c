#include "nbed/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "nbed/errors.hpp"

namespace nbed::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void check_conv_shapes(const Tensor& x, const Tensor& weight, const Conv2dSpec& spec) {
  if (x.rank() != 4 || weight.rank() != 4) throw ShapeError("conv2d: expected rank-4 input and weight");
  if (spec.groups < 1 || x.c() % spec.groups != 0 || weight.dim(0) % spec.groups != 0 ||
      weight.dim(1) * spec.groups != x.c()) {
    throw ShapeError("conv2d: input " + shape_string(x.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()) + " (groups " + std::to_string(spec.groups) + ")");
  }
  if (weight.dim(2) != weight.dim(3)) throw ShapeError("conv2d: only square kernels are supported");
}

bool is_pointwise(int k, const Conv2dSpec& spec) { return k == 1 && spec.stride == 1 && spec.pad == 0; }

bool is_depthwise(const Tensor& x, const Tensor& weight, const Conv2dSpec& spec) {
  return spec.groups > 1 && spec.groups == x.c() && weight.dim(0) == x.c() && weight.dim(1) == 1;
}

// Unfold channels [c0, c0 + channels) of one image into a
// (channels*K*K) x (oh*ow) column matrix.
void im2col(const double* img, int h, int w, int c0, int channels, int k, const Conv2dSpec& spec, int oh, int ow,
            double* col) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < channels; ++ci) {
    const double* src = img + static_cast<std::size_t>(c0 + ci) * h * w;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * spec.stride - spec.pad + ky;
          double* row = dst + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + ow, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * spec.stride - spec.pad + kx;
            row[ox] = (ix >= 0 && ix < w) ? srow[ix] : 0.0;
          }
        }
      }
  }
}

void col2im_add(const double* col, int h, int w, int c0, int channels, int k, const Conv2dSpec& spec, int oh, int ow,
                double* img) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < channels; ++ci) {
    double* dst = img + static_cast<std::size_t>(c0 + ci) * h * w;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* src = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * spec.stride - spec.pad + ky;
          if (iy < 0 || iy >= h) continue;
          const double* row = src + static_cast<std::size_t>(oy) * ow;
          double* drow = dst + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * spec.stride - spec.pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += row[ox];
          }
        }
      }
  }
}

Tensor depthwise_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, const Conv2dSpec& spec, int oh,
                         int ow) {
  const int k = weight.dim(2), channels = x.c(), h = x.h(), w = x.w();
  Tensor y({x.n(), channels, oh, ow});
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < channels; ++c) {
      const double* src = x.data() + (static_cast<std::size_t>(n) * channels + c) * h * w;
      const double* ker = weight.data() + static_cast<std::size_t>(c) * k * k;
      double* dst = y.data() + (static_cast<std::size_t>(n) * channels + c) * oh * ow;
      const double b = bias ? (*bias)[static_cast<std::size_t>(c)] : 0.0;
      std::fill(dst, dst + static_cast<std::size_t>(oh) * ow, b);
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double wv = ker[ky * k + kx];
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * spec.stride - spec.pad + ky;
            if (iy < 0 || iy >= h) continue;
            const double* srow = src + static_cast<std::size_t>(iy) * w;
            double* drow = dst + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * spec.stride - spec.pad + kx;
              if (ix >= 0 && ix < w) drow[ox] += wv * srow[ix];
            }
          }
        }
    }
  return y;
}

void depthwise_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, const Conv2dSpec& spec,
                        Tensor* grad_x, Tensor* grad_weight, Tensor* grad_bias) {
  const int k = weight.dim(2), channels = x.c(), h = x.h(), w = x.w();
  const int oh = grad_out.h(), ow = grad_out.w();
  // Parallel over channels only: weight gradients are shared across the batch.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const double* ker = weight.data() + static_cast<std::size_t>(c) * k * k;
    for (int n = 0; n < x.n(); ++n) {
      const double* src = x.data() + (static_cast<std::size_t>(n) * channels + c) * h * w;
      const double* gy = grad_out.data() + (static_cast<std::size_t>(n) * channels + c) * oh * ow;
      double* gx = grad_x ? grad_x->data() + (static_cast<std::size_t>(n) * channels + c) * h * w : nullptr;
      if (grad_bias) {
        double s = 0.0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) s += gy[i];
        (*grad_bias)[static_cast<std::size_t>(c)] += s;
      }
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double wv = ker[ky * k + kx];
          double gw = 0.0;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * spec.stride - spec.pad + ky;
            if (iy < 0 || iy >= h) continue;
            const double* srow = src + static_cast<std::size_t>(iy) * w;
            const double* grow = gy + static_cast<std::size_t>(oy) * ow;
            double* gxrow = gx ? gx + static_cast<std::size_t>(iy) * w : nullptr;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * spec.stride - spec.pad + kx;
              if (ix < 0 || ix >= w) continue;
              gw += grow[ox] * srow[ix];
              if (gxrow) gxrow[ix] += grow[ox] * wv;
            }
          }
          if (grad_weight) grad_weight->data()[static_cast<std::size_t>(c) * k * k + ky * k + kx] += gw;
        }
    }
  }
}

struct Tap {
  int lo, hi;
  double frac;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = std::clamp((i + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    taps[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, in - 1), src - lo};
  }
  return taps;
}

}  // namespace

int conv_out_size(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, const Conv2dSpec& spec) {
  check_conv_shapes(x, weight, spec);
  const int k = weight.dim(2), cout = weight.dim(0), cin_g = weight.dim(1);
  const int oh = conv_out_size(x.h(), k, spec.stride, spec.pad);
  const int ow = conv_out_size(x.w(), k, spec.stride, spec.pad);
  if (oh < 1 || ow < 1) throw ShapeError("conv2d: input " + shape_string(x.shape()) + " too small for kernel");
  if (is_depthwise(x, weight, spec)) return depthwise_forward(x, weight, bias, spec, oh, ow);

  Tensor y({x.n(), cout, oh, ow});
  const int cout_g = cout / spec.groups, rows = cin_g * k * k;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow, in_plane = static_cast<std::size_t>(x.h()) * x.w();
  const bool pointwise = is_pointwise(k, spec);
  Tensor::Storage col(pointwise ? 0 : static_cast<std::size_t>(rows) * plane);
  for (int n = 0; n < x.n(); ++n) {
    const double* img = x.data() + static_cast<std::size_t>(n) * x.c() * in_plane;
    for (int g = 0; g < spec.groups; ++g) {
      const double* cols = img + static_cast<std::size_t>(g) * cin_g * in_plane;
      if (!pointwise) {
        im2col(img, x.h(), x.w(), g * cin_g, cin_g, k, spec, oh, ow, col.data());
        cols = col.data();
      }
      ConstMapMat wmat(weight.data() + static_cast<std::size_t>(g) * cout_g * rows, cout_g, rows);
      ConstMapMat cmat(cols, rows, static_cast<Eigen::Index>(plane));
      MapMat ymat(y.data() + (static_cast<std::size_t>(n) * cout + static_cast<std::size_t>(g) * cout_g) * plane, cout_g,
                  static_cast<Eigen::Index>(plane));
      ymat.noalias() = wmat * cmat;
      if (bias) {
        for (int co = 0; co < cout_g; ++co) ymat.row(co).array() += (*bias)[static_cast<std::size_t>(g * cout_g + co)];
      }
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, const Conv2dSpec& spec,
                     Tensor* grad_x, Tensor* grad_weight, Tensor* grad_bias) {
  check_conv_shapes(x, weight, spec);
  if (is_depthwise(x, weight, spec)) {
    depthwise_backward(x, weight, grad_out, spec, grad_x, grad_weight, grad_bias);
    return;
  }
  const int k = weight.dim(2), cout = weight.dim(0), cin_g = weight.dim(1);
  const int oh = grad_out.h(), ow = grad_out.w();
  const int cout_g = cout / spec.groups, rows = cin_g * k * k;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow, in_plane = static_cast<std::size_t>(x.h()) * x.w();
  const bool pointwise = is_pointwise(k, spec);
  Tensor::Storage col(pointwise ? 0 : static_cast<std::size_t>(rows) * plane);
  Tensor::Storage gcol(pointwise || !grad_x ? 0 : static_cast<std::size_t>(rows) * plane);
  for (int n = 0; n < x.n(); ++n) {
    const double* img = x.data() + static_cast<std::size_t>(n) * x.c() * in_plane;
    for (int g = 0; g < spec.groups; ++g) {
      ConstMapMat gy(grad_out.data() + (static_cast<std::size_t>(n) * cout + static_cast<std::size_t>(g) * cout_g) * plane,
                     cout_g, static_cast<Eigen::Index>(plane));
      if (grad_bias) {
        for (int co = 0; co < cout_g; ++co) (*grad_bias)[static_cast<std::size_t>(g * cout_g + co)] += gy.row(co).sum();
      }
      ConstMapMat wmat(weight.data() + static_cast<std::size_t>(g) * cout_g * rows, cout_g, rows);
      if (grad_weight) {
        const double* cols = img + static_cast<std::size_t>(g) * cin_g * in_plane;
        if (!pointwise) {
          im2col(img, x.h(), x.w(), g * cin_g, cin_g, k, spec, oh, ow, col.data());
          cols = col.data();
        }
        ConstMapMat cmat(cols, rows, static_cast<Eigen::Index>(plane));
        MapMat gw(grad_weight->data() + static_cast<std::size_t>(g) * cout_g * rows, cout_g, rows);
        gw.noalias() += gy * cmat.transpose();
      }
      if (grad_x) {
        double* gimg = grad_x->data() + static_cast<std::size_t>(n) * x.c() * in_plane;
        if (pointwise) {
          MapMat gx(gimg + static_cast<std::size_t>(g) * cin_g * in_plane, rows, static_cast<Eigen::Index>(plane));
          gx.noalias() += wmat.transpose() * gy;
        } else {
          MapMat gc(gcol.data(), rows, static_cast<Eigen::Index>(plane));
          gc.noalias() = wmat.transpose() * gy;
          col2im_add(gcol.data(), x.h(), x.w(), g * cin_g, cin_g, k, spec, oh, ow, gimg);
        }
      }
    }
  }
}

Tensor resize_bilinear_forward(const Tensor& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("resize: target size must be positive");
  Tensor y({x.n(), x.c(), out_h, out_w});
  const auto ty = bilinear_taps(x.h(), out_h), tx = bilinear_taps(x.w(), out_w);
  const int planes = x.n() * x.c();
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* src = x.data() + static_cast<std::size_t>(p) * x.h() * x.w();
    double* dst = y.data() + static_cast<std::size_t>(p) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[static_cast<std::size_t>(oy)];
      const double* r0 = src + static_cast<std::size_t>(a.lo) * x.w();
      const double* r1 = src + static_cast<std::size_t>(a.hi) * x.w();
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[static_cast<std::size_t>(ox)];
        const double top = (1 - b.frac) * r0[b.lo] + b.frac * r0[b.hi];
        const double bot = (1 - b.frac) * r1[b.lo] + b.frac * r1[b.hi];
        dst[static_cast<std::size_t>(oy) * out_w + ox] = (1 - a.frac) * top + a.frac * bot;
      }
    }
  }
  return y;
}

void resize_bilinear_backward(const Tensor& grad_out, Tensor& grad_x) {
  const int out_h = grad_out.h(), out_w = grad_out.w(), h = grad_x.h(), w = grad_x.w();
  const auto ty = bilinear_taps(h, out_h), tx = bilinear_taps(w, out_w);
  const int planes = grad_out.n() * grad_out.c();
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* src = grad_out.data() + static_cast<std::size_t>(p) * out_h * out_w;
    double* dst = grad_x.data() + static_cast<std::size_t>(p) * h * w;
    for (int oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[static_cast<std::size_t>(oy)];
      double* r0 = dst + static_cast<std::size_t>(a.lo) * w;
      double* r1 = dst + static_cast<std::size_t>(a.hi) * w;
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[static_cast<std::size_t>(ox)];
        const double g = src[static_cast<std::size_t>(oy) * out_w + ox];
        r0[b.lo] += g * (1 - a.frac) * (1 - b.frac);
        r0[b.hi] += g * (1 - a.frac) * b.frac;
        r1[b.lo] += g * a.frac * (1 - b.frac);
        r1[b.hi] += g * a.frac * b.frac;
      }
    }
  }
}

Tensor channel_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, Tensor* mean,
                            Tensor* rstd) {
  const int channels = x.c();
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  Tensor y(x.shape());
  Tensor mu_t({x.n(), 1, x.h(), x.w()}), r_t({x.n(), 1, x.h(), x.w()});
  for (int n = 0; n < x.n(); ++n) {
    const double* src = x.data() + static_cast<std::size_t>(n) * channels * plane;
    double* dst = y.data() + static_cast<std::size_t>(n) * channels * plane;
    double* mu = mu_t.data() + static_cast<std::size_t>(n) * plane;
    double* r = r_t.data() + static_cast<std::size_t>(n) * plane;
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < plane; ++p) {
      double s = 0.0;
      for (int c = 0; c < channels; ++c) s += src[static_cast<std::size_t>(c) * plane + p];
      const double m = s / channels;
      double v = 0.0;
      for (int c = 0; c < channels; ++c) {
        const double d = src[static_cast<std::size_t>(c) * plane + p] - m;
        v += d * d;
      }
      mu[p] = m;
      r[p] = 1.0 / std::sqrt(v / channels + eps);
      for (int c = 0; c < channels; ++c) {
        const std::size_t i = static_cast<std::size_t>(c) * plane + p;
        dst[i] = (src[i] - m) * r[p] * gamma[static_cast<std::size_t>(c)] + beta[static_cast<std::size_t>(c)];
      }
    }
  }
  if (mean) *mean = std::move(mu_t);
  if (rstd) *rstd = std::move(r_t);
  return y;
}

void channel_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& mean, const Tensor& rstd,
                           const Tensor& grad_out, Tensor* grad_x, Tensor* grad_gamma, Tensor* grad_beta) {
  const int channels = x.c();
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n) {
    const double* src = x.data() + static_cast<std::size_t>(n) * channels * plane;
    const double* gy = grad_out.data() + static_cast<std::size_t>(n) * channels * plane;
    const double* mu = mean.data() + static_cast<std::size_t>(n) * plane;
    const double* r = rstd.data() + static_cast<std::size_t>(n) * plane;
    if (grad_gamma || grad_beta) {
#pragma omp parallel for schedule(static)
      for (int c = 0; c < channels; ++c) {
        double sg = 0.0, sb = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t i = static_cast<std::size_t>(c) * plane + p;
          sg += gy[i] * (src[i] - mu[p]) * r[p];
          sb += gy[i];
        }
        if (grad_gamma) (*grad_gamma)[static_cast<std::size_t>(c)] += sg;
        if (grad_beta) (*grad_beta)[static_cast<std::size_t>(c)] += sb;
      }
    }
    if (!grad_x) continue;
    double* gx = grad_x->data() + static_cast<std::size_t>(n) * channels * plane;
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < plane; ++p) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int c = 0; c < channels; ++c) {
        const std::size_t i = static_cast<std::size_t>(c) * plane + p;
        const double g = gy[i] * gamma[static_cast<std::size_t>(c)];
        sum_g += g;
        sum_gx += g * (src[i] - mu[p]) * r[p];
      }
      sum_g /= channels;
      sum_gx /= channels;
      for (int c = 0; c < channels; ++c) {
        const std::size_t i = static_cast<std::size_t>(c) * plane + p;
        const double xhat = (src[i] - mu[p]) * r[p];
        gx[i] += r[p] * (gy[i] * gamma[static_cast<std::size_t>(c)] - sum_g - xhat * sum_gx);
      }
    }
  }
}

Tensor attention_forward(const Tensor& qkv, int heads, Tensor* probs) {
  if (heads < 1 || qkv.c() % 3 != 0 || (qkv.c() / 3) % heads != 0) {
    throw ShapeError("attention: " + std::to_string(qkv.c()) + " qkv channels do not split into " +
                     std::to_string(heads) + " heads");
  }
  const int channels = qkv.c() / 3, d = channels / heads, tokens = qkv.h() * qkv.w();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t nt = static_cast<std::size_t>(tokens);
  Tensor y({qkv.n(), channels, qkv.h(), qkv.w()});
  if (probs) *probs = Tensor({qkv.n() * heads, 1, tokens, tokens});
  const int jobs = qkv.n() * heads;
#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const int n = job / heads, h = job % heads;
    const double* base = qkv.data() + static_cast<std::size_t>(n) * 3 * channels * nt;
    ConstMapMat q(base + static_cast<std::size_t>(h) * d * nt, d, tokens);
    ConstMapMat k(base + (static_cast<std::size_t>(channels) + static_cast<std::size_t>(h) * d) * nt, d, tokens);
    ConstMapMat v(base + (2 * static_cast<std::size_t>(channels) + static_cast<std::size_t>(h) * d) * nt, d, tokens);
    RowMat p = (q.transpose() * k) * scale;
    for (int i = 0; i < tokens; ++i) {
      auto row = p.row(i);
      row.array() = (row.array() - row.maxCoeff()).exp();
      row /= row.sum();
    }
    MapMat out(y.data() + (static_cast<std::size_t>(n) * channels + static_cast<std::size_t>(h) * d) * nt, d, tokens);
    out.noalias() = v * p.transpose();
    if (probs) MapMat(probs->data() + static_cast<std::size_t>(job) * nt * nt, tokens, tokens) = p;
  }
  return y;
}

void attention_backward(const Tensor& qkv, const Tensor& probs, int heads, const Tensor& grad_out,
                        Tensor& grad_qkv) {
  const int channels = qkv.c() / 3, d = channels / heads, tokens = qkv.h() * qkv.w();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t nt = static_cast<std::size_t>(tokens);
  const int jobs = qkv.n() * heads;
#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const int n = job / heads, h = job % heads;
    const std::size_t qoff = static_cast<std::size_t>(n) * 3 * channels * nt + static_cast<std::size_t>(h) * d * nt;
    const std::size_t koff = qoff + static_cast<std::size_t>(channels) * nt;
    const std::size_t voff = koff + static_cast<std::size_t>(channels) * nt;
    ConstMapMat q(qkv.data() + qoff, d, tokens), k(qkv.data() + koff, d, tokens), v(qkv.data() + voff, d, tokens);
    ConstMapMat p(probs.data() + static_cast<std::size_t>(job) * nt * nt, tokens, tokens);
    ConstMapMat go(grad_out.data() + (static_cast<std::size_t>(n) * channels + static_cast<std::size_t>(h) * d) * nt, d,
                   tokens);
    MapMat gq(grad_qkv.data() + qoff, d, tokens), gk(grad_qkv.data() + koff, d, tokens),
        gv(grad_qkv.data() + voff, d, tokens);
    gv.noalias() += go * p;
    RowMat gp = go.transpose() * v;
    const Eigen::VectorXd dot = (gp.array() * p.array()).rowwise().sum();
    RowMat gs = (p.array() * (gp.colwise() - dot).array()) * scale;
    gq.noalias() += k * gs.transpose();
    gk.noalias() += q * gs;
  }
}

Tensor max_pool2_forward(const Tensor& x, std::vector<std::size_t>* argmax) {
  const int oh = x.h() / 2, ow = x.w() / 2;
  if (oh < 1 || ow < 1) throw ShapeError("max_pool2: input " + shape_string(x.shape()) + " too small");
  Tensor y({x.n(), x.c(), oh, ow});
  if (argmax) argmax->assign(y.size(), 0);
  const int planes = x.n() * x.c();
  const std::size_t in_plane = static_cast<std::size_t>(x.h()) * x.w(), out_plane = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const std::size_t ibase = static_cast<std::size_t>(p) * in_plane;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        std::size_t best_at = ibase + static_cast<std::size_t>(2 * oy) * x.w() + 2 * ox;
        double best = x[best_at];
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t at = ibase + static_cast<std::size_t>(2 * oy + dy) * x.w() + 2 * ox + dx;
            if (x[at] > best) {
              best = x[at];
              best_at = at;
            }
          }
        const std::size_t o = static_cast<std::size_t>(p) * out_plane + static_cast<std::size_t>(oy) * ow + ox;
        y[o] = best;
        if (argmax) (*argmax)[o] = best_at;
      }
  }
  return y;
}

void max_pool2_backward(const std::vector<std::size_t>& argmax, const Tensor& grad_out, Tensor& grad_x) {
  // Pooling windows do not overlap, so scattered writes never collide.
  const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(argmax.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t o = 0; o < count; ++o) grad_x[argmax[static_cast<std::size_t>(o)]] += grad_out[static_cast<std::size_t>(o)];
}

}  // namespace nbed::kernels
