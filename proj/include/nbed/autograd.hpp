#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "nbed/kernels.hpp"
#include "nbed/tensor.hpp"

// Tape-free reverse-mode differentiation: every op result keeps shared
// ownership of its inputs and a closure that pushes its gradient back to them.
// `backward(root)` walks the graph in reverse topological order.
namespace nbed::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad = Tensor(); }
  const Tensor::Shape& shape() const { return node_->value.shape(); }
  explicit operator bool() const { return node_ != nullptr; }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);
  std::shared_ptr<Node> node_;
};

// Builds an op result. Inputs and the closure are retained only when
// gradients are enabled and at least one input requires them.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

// Seeds d(root)/d(root) = 1 (root must hold a single element) and
// back-propagates into every reachable leaf that requires gradients.
void backward(const Var& root);

bool grad_enabled();

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- ops ----
Var conv2d(const Var& x, const Var& weight, const Var* bias, kernels::Conv2dSpec spec = {});
Var add(const Var& a, const Var& b);
Var concat_channels(const std::vector<Var>& parts);
Var relu(const Var& x);
Var gelu(const Var& x);  // exact erf form
Var sigmoid(const Var& x);
Var max_pool2(const Var& x);
Var channel_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
Var attention(const Var& qkv, int heads);
Var resize_bilinear(const Var& x, int out_h, int out_w);
Var reflect_pad(const Var& x, int pad_bottom, int pad_right);
Var crop(const Var& x, int out_h, int out_w);  // keeps the top-left window
Var sum(const Var& x);

}  // namespace nbed::ag
