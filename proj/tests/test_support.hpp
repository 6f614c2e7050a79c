#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "nbed/autograd.hpp"
#include "nbed/tensor.hpp"

namespace testing {

inline nbed::Tensor random_tensor(nbed::Tensor::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  nbed::Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline double max_abs_diff(const nbed::Tensor& a, const nbed::Tensor& b) {
  if (!a.same_shape(b)) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Central differences of `loss` with respect to every element of `inputs`,
// compared against the analytic gradients. Returns the worst relative error.
inline double gradient_check(std::vector<nbed::ag::Var> inputs, const std::function<nbed::ag::Var()>& loss,
                             double step = 1e-5) {
  for (auto& v : inputs) v.zero_grad();
  nbed::ag::backward(loss());
  double worst = 0.0;
  for (auto& v : inputs) {
    const nbed::Tensor analytic = v.has_grad() ? v.grad() : nbed::Tensor::zeros_like(v.value());
    for (std::size_t i = 0; i < v.value().size(); ++i) {
      const double saved = v.value()[i];
      v.mutable_value()[i] = saved + step;
      const double up = loss().value()[0];
      v.mutable_value()[i] = saved - step;
      const double down = loss().value()[0];
      v.mutable_value()[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * step)));
    }
  }
  return worst;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("nbed_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
