#include "nbed/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nbed/errors.hpp"

namespace nbed {

std::size_t shape_numel(const Tensor::Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
  if (shape_ != other.shape_) {
    throw ShapeError("add: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor slice_batch(const Tensor& batch, int index) {
  if (batch.rank() != 4 || index < 0 || index >= batch.n()) throw ShapeError("slice_batch: bad index");
  Tensor out({1, batch.c(), batch.h(), batch.w()});
  const std::size_t per = out.size();
  std::copy_n(batch.data() + per * static_cast<std::size_t>(index), per, out.data());
  return out;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
  if (items.empty()) throw ShapeError("stack_batch: empty");
  const auto& s = items.front().shape();
  if (s.size() != 4 || s[0] != 1) throw ShapeError("stack_batch: items must be 1xCxHxW");
  Tensor out({static_cast<int>(items.size()), s[1], s[2], s[3]});
  const std::size_t per = items.front().size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != s) throw ShapeError("stack_batch: mismatched item shapes");
    std::copy_n(items[i].data(), per, out.data() + per * i);
  }
  return out;
}

}  // namespace nbed
