#include "nbed/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nbed/errors.hpp"

namespace nbed::reference {

namespace {

void check_conv_shapes(const Tensor& x, const Tensor& weight, const Conv2dSpec& spec) {
  if (x.rank() != 4 || weight.rank() != 4) throw ShapeError("conv2d: expected rank-4 input and weight");
  if (x.c() % spec.groups != 0 || weight.dim(0) % spec.groups != 0 || weight.dim(1) * spec.groups != x.c()) {
    throw ShapeError("conv2d: input " + shape_string(x.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()));
  }
}

// Source coordinate and blend weight for half-pixel bilinear sampling.
struct Tap {
  int lo, hi;
  double frac;
};

Tap bilinear_tap(int dst, int in, int out) {
  double src = (dst + 0.5) * static_cast<double>(in) / out - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in - 1));
  const int lo = static_cast<int>(std::floor(src));
  const int hi = std::min(lo + 1, in - 1);
  return {lo, hi, src - lo};
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, const Conv2dSpec& spec) {
  check_conv_shapes(x, weight, spec);
  const int k = weight.dim(2);
  const int cout = weight.dim(0), cin_g = weight.dim(1), cout_g = cout / spec.groups;
  const int oh = kernels::conv_out_size(x.h(), k, spec.stride, spec.pad);
  const int ow = kernels::conv_out_size(x.w(), k, spec.stride, spec.pad);
  Tensor y({x.n(), cout, oh, ow});
  for (int n = 0; n < x.n(); ++n)
    for (int co = 0; co < cout; ++co) {
      const int g = co / cout_g;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? (*bias)[static_cast<std::size_t>(co)] : 0.0;
          for (int ci = 0; ci < cin_g; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * spec.stride - spec.pad + ky;
                const int ix = ox * spec.stride - spec.pad + kx;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                acc += weight.at(co, ci, ky, kx) * x.at(n, g * cin_g + ci, iy, ix);
              }
          y.at(n, co, oy, ox) = acc;
        }
    }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, const Conv2dSpec& spec,
                     Tensor* grad_x, Tensor* grad_weight, Tensor* grad_bias) {
  check_conv_shapes(x, weight, spec);
  const int k = weight.dim(2);
  const int cout = weight.dim(0), cin_g = weight.dim(1), cout_g = cout / spec.groups;
  for (int n = 0; n < x.n(); ++n)
    for (int co = 0; co < cout; ++co) {
      const int g = co / cout_g;
      for (int oy = 0; oy < grad_out.h(); ++oy)
        for (int ox = 0; ox < grad_out.w(); ++ox) {
          const double gy = grad_out.at(n, co, oy, ox);
          if (grad_bias) (*grad_bias)[static_cast<std::size_t>(co)] += gy;
          for (int ci = 0; ci < cin_g; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * spec.stride - spec.pad + ky;
                const int ix = ox * spec.stride - spec.pad + kx;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                if (grad_weight) grad_weight->at(co, ci, ky, kx) += gy * x.at(n, g * cin_g + ci, iy, ix);
                if (grad_x) grad_x->at(n, g * cin_g + ci, iy, ix) += gy * weight.at(co, ci, ky, kx);
              }
        }
    }
}

Tensor resize_bilinear_forward(const Tensor& x, int out_h, int out_w) {
  Tensor y({x.n(), x.c(), out_h, out_w});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int oy = 0; oy < out_h; ++oy) {
        const Tap ty = bilinear_tap(oy, x.h(), out_h);
        for (int ox = 0; ox < out_w; ++ox) {
          const Tap tx = bilinear_tap(ox, x.w(), out_w);
          y.at(n, c, oy, ox) = (1 - ty.frac) * ((1 - tx.frac) * x.at(n, c, ty.lo, tx.lo) + tx.frac * x.at(n, c, ty.lo, tx.hi)) +
                               ty.frac * ((1 - tx.frac) * x.at(n, c, ty.hi, tx.lo) + tx.frac * x.at(n, c, ty.hi, tx.hi));
        }
      }
  return y;
}

void resize_bilinear_backward(const Tensor& grad_out, Tensor& grad_x) {
  const int out_h = grad_out.h(), out_w = grad_out.w();
  for (int n = 0; n < grad_out.n(); ++n)
    for (int c = 0; c < grad_out.c(); ++c)
      for (int oy = 0; oy < out_h; ++oy) {
        const Tap ty = bilinear_tap(oy, grad_x.h(), out_h);
        for (int ox = 0; ox < out_w; ++ox) {
          const Tap tx = bilinear_tap(ox, grad_x.w(), out_w);
          const double g = grad_out.at(n, c, oy, ox);
          grad_x.at(n, c, ty.lo, tx.lo) += g * (1 - ty.frac) * (1 - tx.frac);
          grad_x.at(n, c, ty.lo, tx.hi) += g * (1 - ty.frac) * tx.frac;
          grad_x.at(n, c, ty.hi, tx.lo) += g * ty.frac * (1 - tx.frac);
          grad_x.at(n, c, ty.hi, tx.hi) += g * ty.frac * tx.frac;
        }
      }
}

Tensor channel_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, Tensor* mean,
                            Tensor* rstd) {
  Tensor y(x.shape());
  if (mean) *mean = Tensor({x.n(), 1, x.h(), x.w()});
  if (rstd) *rstd = Tensor({x.n(), 1, x.h(), x.w()});
  for (int n = 0; n < x.n(); ++n)
    for (int py = 0; py < x.h(); ++py)
      for (int px = 0; px < x.w(); ++px) {
        double mu = 0.0;
        for (int c = 0; c < x.c(); ++c) mu += x.at(n, c, py, px);
        mu /= x.c();
        double var = 0.0;
        for (int c = 0; c < x.c(); ++c) var += (x.at(n, c, py, px) - mu) * (x.at(n, c, py, px) - mu);
        var /= x.c();
        const double r = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < x.c(); ++c)
          y.at(n, c, py, px) = (x.at(n, c, py, px) - mu) * r * gamma[static_cast<std::size_t>(c)] +
                               beta[static_cast<std::size_t>(c)];
        if (mean) mean->at(n, 0, py, px) = mu;
        if (rstd) rstd->at(n, 0, py, px) = r;
      }
  return y;
}

void channel_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& mean, const Tensor& rstd,
                           const Tensor& grad_out, Tensor* grad_x, Tensor* grad_gamma, Tensor* grad_beta) {
  const int channels = x.c();
  for (int n = 0; n < x.n(); ++n)
    for (int py = 0; py < x.h(); ++py)
      for (int px = 0; px < x.w(); ++px) {
        const double mu = mean.at(n, 0, py, px), r = rstd.at(n, 0, py, px);
        double sum_g = 0.0, sum_gx = 0.0;
        for (int c = 0; c < channels; ++c) {
          const double xhat = (x.at(n, c, py, px) - mu) * r;
          const double g = grad_out.at(n, c, py, px);
          if (grad_gamma) (*grad_gamma)[static_cast<std::size_t>(c)] += g * xhat;
          if (grad_beta) (*grad_beta)[static_cast<std::size_t>(c)] += g;
          const double gx = g * gamma[static_cast<std::size_t>(c)];
          sum_g += gx;
          sum_gx += gx * xhat;
        }
        if (!grad_x) continue;
        for (int c = 0; c < channels; ++c) {
          const double xhat = (x.at(n, c, py, px) - mu) * r;
          const double gx = grad_out.at(n, c, py, px) * gamma[static_cast<std::size_t>(c)];
          grad_x->at(n, c, py, px) += r * (gx - sum_g / channels - xhat * sum_gx / channels);
        }
      }
}

Tensor attention_forward(const Tensor& qkv, int heads, Tensor* probs) {
  if (qkv.c() % 3 != 0 || (qkv.c() / 3) % heads != 0) throw ShapeError("attention: bad qkv channel count");
  const int channels = qkv.c() / 3, d = channels / heads, tokens = qkv.h() * qkv.w();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor y({qkv.n(), channels, qkv.h(), qkv.w()});
  if (probs) *probs = Tensor({qkv.n() * heads, 1, tokens, tokens});
  const int width = qkv.w();
  auto val = [&](int n, int c, int t) { return qkv.at(n, c, t / width, t % width); };
  std::vector<double> row(static_cast<std::size_t>(tokens));
  for (int n = 0; n < qkv.n(); ++n)
    for (int h = 0; h < heads; ++h)
      for (int i = 0; i < tokens; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < tokens; ++j) {
          double s = 0.0;
          for (int e = 0; e < d; ++e) s += val(n, h * d + e, i) * val(n, channels + h * d + e, j);
          row[static_cast<std::size_t>(j)] = s * scale;
          mx = std::max(mx, row[static_cast<std::size_t>(j)]);
        }
        double z = 0.0;
        for (int j = 0; j < tokens; ++j) z += (row[static_cast<std::size_t>(j)] = std::exp(row[static_cast<std::size_t>(j)] - mx));
        for (int j = 0; j < tokens; ++j) row[static_cast<std::size_t>(j)] /= z;
        for (int e = 0; e < d; ++e) {
          double acc = 0.0;
          for (int j = 0; j < tokens; ++j) acc += row[static_cast<std::size_t>(j)] * val(n, 2 * channels + h * d + e, j);
          y.at(n, h * d + e, i / width, i % width) = acc;
        }
        if (probs)
          for (int j = 0; j < tokens; ++j) probs->at(n * heads + h, 0, i, j) = row[static_cast<std::size_t>(j)];
      }
  return y;
}

void attention_backward(const Tensor& qkv, const Tensor& probs, int heads, const Tensor& grad_out,
                        Tensor& grad_qkv) {
  const int channels = qkv.c() / 3, d = channels / heads, tokens = qkv.h() * qkv.w();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const int width = qkv.w();
  auto val = [&](int n, int c, int t) { return qkv.at(n, c, t / width, t % width); };
  auto gval = [&](int n, int c, int t) -> double& { return grad_qkv.at(n, c, t / width, t % width); };
  auto gout = [&](int n, int c, int t) { return grad_out.at(n, c, t / width, t % width); };
  std::vector<double> dp(static_cast<std::size_t>(tokens));
  for (int n = 0; n < qkv.n(); ++n)
    for (int h = 0; h < heads; ++h)
      for (int i = 0; i < tokens; ++i) {
        // dV_j += P_ij * dO_i ; dP_ij = dO_i . V_j
        double dot = 0.0;
        for (int j = 0; j < tokens; ++j) {
          const double p = probs.at(n * heads + h, 0, i, j);
          double g = 0.0;
          for (int e = 0; e < d; ++e) {
            g += gout(n, h * d + e, i) * val(n, 2 * channels + h * d + e, j);
            gval(n, 2 * channels + h * d + e, j) += p * gout(n, h * d + e, i);
          }
          dp[static_cast<std::size_t>(j)] = g;
          dot += g * p;
        }
        for (int j = 0; j < tokens; ++j) {
          const double ds = probs.at(n * heads + h, 0, i, j) * (dp[static_cast<std::size_t>(j)] - dot) * scale;
          for (int e = 0; e < d; ++e) {
            gval(n, h * d + e, i) += ds * val(n, channels + h * d + e, j);
            gval(n, channels + h * d + e, j) += ds * val(n, h * d + e, i);
          }
        }
      }
}

Tensor max_pool2_forward(const Tensor& x, std::vector<std::size_t>* argmax) {
  const int oh = x.h() / 2, ow = x.w() / 2;
  Tensor y({x.n(), x.c(), oh, ow});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_at = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int iy = 2 * oy + dy, ix = 2 * ox + dx;
              const double v = x.at(n, c, iy, ix);
              if (v > best) {
                best = v;
                best_at = ((static_cast<std::size_t>(n) * x.c() + c) * x.h() + iy) * x.w() + ix;
              }
            }
          y[o] = best;
          if (argmax) (*argmax)[o] = best_at;
        }
  return y;
}

void max_pool2_backward(const std::vector<std::size_t>& argmax, const Tensor& grad_out, Tensor& grad_x) {
  for (std::size_t o = 0; o < argmax.size(); ++o) grad_x[argmax[o]] += grad_out[o];
}

}  // namespace nbed::reference
