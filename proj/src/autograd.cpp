#include "nbed/autograd.hpp"

#include <cmath>
#include <numbers>
#include <unordered_set>

#include "nbed/errors.hpp"

namespace nbed::ag {

namespace {

thread_local bool g_grad_enabled = true;

bool needs(const Var& v) { return v && v.requires_grad(); }

void check_nchw(const Tensor& t, const char* op) {
  if (t.rank() != 4) throw ShapeError(std::string(op) + ": expected NCHW input, got " + shape_string(t.shape()));
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  Var out(std::move(value));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || needs(in);
  if (!any) return out;
  out.node_->requires_grad = true;
  for (auto& in : inputs) out.node_->inputs.push_back(in.node());
  out.node_->backward_fn = std::move(backward_fn);
  return out;
}

void backward(const Var& root) {
  if (root.value().size() != 1) throw ShapeError("backward: root must be a scalar");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

Var conv2d(const Var& x, const Var& weight, const Var* bias, kernels::Conv2dSpec spec) {
  check_nchw(x.value(), "conv2d");
  Tensor y = kernels::conv2d_forward(x.value(), weight.value(), bias ? &bias->value() : nullptr, spec);
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return make_result(std::move(y), inputs, [spec, has_bias = bias != nullptr](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node* bn = has_bias ? self.inputs[2].get() : nullptr;
    kernels::conv2d_backward(xn.value, wn.value, self.grad, spec, xn.requires_grad ? &xn.grad_buffer() : nullptr,
                             wn.requires_grad ? &wn.grad_buffer() : nullptr,
                             bn && bn->requires_grad ? &bn->grad_buffer() : nullptr);
  });
}

Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor y = a.value();
  y.add_(b.value());
  return make_result(std::move(y), {a, b}, [](Node& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->grad_buffer().add_(self.grad);
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& first = parts.front().value();
  check_nchw(first, "concat");
  int channels = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    check_nchw(v, "concat");
    if (v.n() != first.n() || v.h() != first.h() || v.w() != first.w()) {
      throw ShapeError("concat: " + shape_string(v.shape()) + " vs " + shape_string(first.shape()));
    }
    channels += v.c();
  }
  Tensor y({first.n(), channels, first.h(), first.w()});
  const std::size_t plane = static_cast<std::size_t>(first.h()) * first.w();
  std::vector<int> offsets;
  for (int n = 0; n < first.n(); ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      const auto& v = p.value();
      const std::size_t len = static_cast<std::size_t>(v.c()) * plane;
      std::copy_n(v.data() + static_cast<std::size_t>(n) * len, len,
                  y.data() + (static_cast<std::size_t>(n) * channels + c0) * plane);
      if (n == 0) offsets.push_back(c0);
      c0 += v.c();
    }
  }
  return make_result(std::move(y), parts, [offsets, channels, plane](Node& self) {
    const int batch = self.value.n();
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      Tensor& g = in.grad_buffer();
      const std::size_t len = static_cast<std::size_t>(in.value.c()) * plane;
      for (int n = 0; n < batch; ++n) {
        const double* src = self.grad.data() + (static_cast<std::size_t>(n) * channels + offsets[k]) * plane;
        double* dst = g.data() + static_cast<std::size_t>(n) * len;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor y = x.value();
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(y), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in.value[i] > 0.0) g[i] += self.grad[i];
  });
}

Var gelu(const Var& x) {
  Tensor y = x.value();
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (double& v : y.values()) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  return make_result(std::move(y), {x}, [inv_sqrt2](Node& self) {
    Node& in = *self.inputs[0];
    Tensor& g = in.grad_buffer();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      g[i] += self.grad[i] * (cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v));
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor y = x.value();
  for (double& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
  return make_result(std::move(y), {x}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
  });
}

Var max_pool2(const Var& x) {
  check_nchw(x.value(), "max_pool2");
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  Tensor y = kernels::max_pool2_forward(x.value(), argmax.get());
  return make_result(std::move(y), {x}, [argmax](Node& self) {
    kernels::max_pool2_backward(*argmax, self.grad, self.inputs[0]->grad_buffer());
  });
}

Var channel_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  check_nchw(x.value(), "channel_norm");
  if (gamma.value().size() != static_cast<std::size_t>(x.value().c()) || !gamma.value().same_shape(beta.value())) {
    throw ShapeError("channel_norm: affine size " + shape_string(gamma.shape()) + " does not match " +
                     std::to_string(x.value().c()) + " channels");
  }
  auto mean = std::make_shared<Tensor>();
  auto rstd = std::make_shared<Tensor>();
  Tensor y = kernels::channel_norm_forward(x.value(), gamma.value(), beta.value(), eps, mean.get(), rstd.get());
  return make_result(std::move(y), {x, gamma, beta}, [mean, rstd](Node& self) {
    Node& xn = *self.inputs[0];
    Node& gn = *self.inputs[1];
    Node& bn = *self.inputs[2];
    kernels::channel_norm_backward(xn.value, gn.value, *mean, *rstd, self.grad,
                                   xn.requires_grad ? &xn.grad_buffer() : nullptr,
                                   gn.requires_grad ? &gn.grad_buffer() : nullptr,
                                   bn.requires_grad ? &bn.grad_buffer() : nullptr);
  });
}

Var attention(const Var& qkv, int heads) {
  check_nchw(qkv.value(), "attention");
  const bool record = grad_enabled() && qkv.requires_grad();
  auto probs = std::make_shared<Tensor>();
  Tensor y = kernels::attention_forward(qkv.value(), heads, record ? probs.get() : nullptr);
  return make_result(std::move(y), {qkv}, [probs, heads](Node& self) {
    Node& in = *self.inputs[0];
    kernels::attention_backward(in.value, *probs, heads, self.grad, in.grad_buffer());
  });
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  check_nchw(x.value(), "resize_bilinear");
  Tensor y = kernels::resize_bilinear_forward(x.value(), out_h, out_w);
  return make_result(std::move(y), {x}, [](Node& self) {
    kernels::resize_bilinear_backward(self.grad, self.inputs[0]->grad_buffer());
  });
}

Var reflect_pad(const Var& x, int pad_bottom, int pad_right) {
  const Tensor& v = x.value();
  check_nchw(v, "reflect_pad");
  if (pad_bottom < 0 || pad_right < 0 || pad_bottom >= v.h() || pad_right >= v.w()) {
    throw ShapeError("reflect_pad: padding must be smaller than the input side");
  }
  if (pad_bottom == 0 && pad_right == 0) return x;
  const int oh = v.h() + pad_bottom, ow = v.w() + pad_right;
  // Source index for each output row/column (mirror without repeating the edge).
  auto mirror = [](int i, int n) { return i < n ? i : 2 * (n - 1) - i; };
  Tensor y({v.n(), v.c(), oh, ow});
  for (int n = 0; n < v.n(); ++n)
    for (int c = 0; c < v.c(); ++c)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) y.at(n, c, yy, xx) = v.at(n, c, mirror(yy, v.h()), mirror(xx, v.w()));
  return make_result(std::move(y), {x}, [mirror](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < self.grad.n(); ++n)
      for (int c = 0; c < self.grad.c(); ++c)
        for (int yy = 0; yy < self.grad.h(); ++yy)
          for (int xx = 0; xx < self.grad.w(); ++xx)
            g.at(n, c, mirror(yy, g.h()), mirror(xx, g.w())) += self.grad.at(n, c, yy, xx);
  });
}

Var crop(const Var& x, int out_h, int out_w) {
  const Tensor& v = x.value();
  check_nchw(v, "crop");
  if (out_h > v.h() || out_w > v.w() || out_h < 1 || out_w < 1) throw ShapeError("crop: window exceeds input");
  if (out_h == v.h() && out_w == v.w()) return x;
  Tensor y({v.n(), v.c(), out_h, out_w});
  for (int n = 0; n < v.n(); ++n)
    for (int c = 0; c < v.c(); ++c)
      for (int yy = 0; yy < out_h; ++yy)
        for (int xx = 0; xx < out_w; ++xx) y.at(n, c, yy, xx) = v.at(n, c, yy, xx);
  return make_result(std::move(y), {x}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < self.grad.n(); ++n)
      for (int c = 0; c < self.grad.c(); ++c)
        for (int yy = 0; yy < self.grad.h(); ++yy)
          for (int xx = 0; xx < self.grad.w(); ++xx) g.at(n, c, yy, xx) += self.grad.at(n, c, yy, xx);
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make_result(Tensor({1}, s), {x}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (double& v : g.values()) v += self.grad[0];
  });
}

}  // namespace nbed::ag
