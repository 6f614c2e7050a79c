#include <doctest.h>

#include "nbed/errors.hpp"
#include "nbed/kernels.hpp"
#include "nbed/reference.hpp"
#include "test_support.hpp"

using namespace nbed;
using testing::max_abs_diff;
using testing::random_tensor;

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(shape_string(t.shape()) == "(2x3)");
  t.reshape({3, 2});
  CHECK(t.dim(0) == 3);
  CHECK_THROWS_AS(t.reshape({4, 2}), ShapeError);

  const Tensor a = random_tensor({1, 2, 3, 3}, 1), b = random_tensor({1, 2, 3, 3}, 2);
  const Tensor batch = stack_batch({a, b});
  CHECK(batch.shape() == Tensor::Shape{2, 2, 3, 3});
  CHECK(slice_batch(batch, 1) == b);
  Tensor bad({1});
  bad[0] = NAN;
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("conv2d on a hand-worked 3x3 example") {
  Tensor x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor w({1, 1, 3, 3}, 1.0);
  const Tensor y = kernels::conv2d_forward(x, w, nullptr, {1, 1, 1});
  CHECK(y.at(0, 0, 1, 1) == doctest::Approx(45));
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(1 + 2 + 4 + 5));
  CHECK(y.at(0, 0, 2, 2) == doctest::Approx(5 + 6 + 8 + 9));
  const Tensor s = kernels::conv2d_forward(x, w, nullptr, {2, 1, 1});
  CHECK(s.shape() == Tensor::Shape{1, 1, 2, 2});
  CHECK(s.at(0, 0, 1, 1) == doctest::Approx(5 + 6 + 8 + 9));
}

struct ConvCase {
  int n, cin, cout, h, w, k, stride, pad, groups;
};

TEST_CASE("parallel conv2d matches the serial reference") {
  const std::vector<ConvCase> cases = {
      {1, 3, 16, 9, 7, 3, 1, 1, 1},  {2, 4, 6, 8, 8, 1, 1, 0, 1},   {1, 3, 5, 17, 13, 7, 4, 3, 1},
      {2, 6, 6, 10, 9, 3, 1, 1, 6},  {1, 8, 12, 11, 11, 3, 2, 1, 1}, {1, 8, 4, 6, 6, 3, 1, 1, 2},
      {1, 2, 3, 5, 4, 1, 2, 0, 1},
  };
  for (const auto& c : cases) {
    CAPTURE(c.k);
    CAPTURE(c.groups);
    const Tensor x = random_tensor({c.n, c.cin, c.h, c.w}, 10);
    const Tensor w = random_tensor({c.cout, c.cin / c.groups, c.k, c.k}, 11);
    const Tensor b = random_tensor({c.cout}, 12);
    const kernels::Conv2dSpec spec{c.stride, c.pad, c.groups};
    const Tensor y = kernels::conv2d_forward(x, w, &b, spec);
    const Tensor y_ref = reference::conv2d_forward(x, w, &b, spec);
    CHECK(max_abs_diff(y, y_ref) < 1e-12);

    const Tensor go = random_tensor(y.shape(), 13);
    Tensor gx = Tensor::zeros_like(x), gw = Tensor::zeros_like(w), gb = Tensor::zeros_like(b);
    Tensor rx = gx, rw = gw, rb = gb;
    kernels::conv2d_backward(x, w, go, spec, &gx, &gw, &gb);
    reference::conv2d_backward(x, w, go, spec, &rx, &rw, &rb);
    CHECK(max_abs_diff(gx, rx) < 1e-11);
    CHECK(max_abs_diff(gw, rw) < 1e-11);
    CHECK(max_abs_diff(gb, rb) < 1e-11);
  }
}

TEST_CASE("conv2d backward accumulates and skips null outputs") {
  const Tensor x = random_tensor({1, 2, 5, 5}, 1), w = random_tensor({3, 2, 3, 3}, 2);
  const kernels::Conv2dSpec spec{1, 1, 1};
  const Tensor go = random_tensor({1, 3, 5, 5}, 3);
  Tensor gw_once = Tensor::zeros_like(w);
  kernels::conv2d_backward(x, w, go, spec, nullptr, &gw_once, nullptr);
  Tensor gw_twice = Tensor::zeros_like(w);
  kernels::conv2d_backward(x, w, go, spec, nullptr, &gw_twice, nullptr);
  kernels::conv2d_backward(x, w, go, spec, nullptr, &gw_twice, nullptr);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(gw_twice[i] == doctest::Approx(2 * gw_once[i]));
}

TEST_CASE("bilinear resize matches the reference and keeps constants") {
  for (auto [h, w, oh, ow] : std::vector<std::array<int, 4>>{{4, 4, 8, 8}, {5, 7, 3, 2}, {8, 8, 8, 8}, {3, 5, 11, 6}}) {
    const Tensor x = random_tensor({2, 3, h, w}, 4);
    const Tensor y = kernels::resize_bilinear_forward(x, oh, ow);
    CHECK(max_abs_diff(y, reference::resize_bilinear_forward(x, oh, ow)) < 1e-12);
    const Tensor go = random_tensor(y.shape(), 5);
    Tensor g1 = Tensor::zeros_like(x), g2 = Tensor::zeros_like(x);
    kernels::resize_bilinear_backward(go, g1);
    reference::resize_bilinear_backward(go, g2);
    CHECK(max_abs_diff(g1, g2) < 1e-12);
  }
  const Tensor c({1, 1, 3, 5}, 0.25);
  const Tensor up = kernels::resize_bilinear_forward(c, 7, 9);
  for (double v : up.values()) CHECK(v == doctest::Approx(0.25));
  // Half-pixel 2x upsampling of [0, 1]: outputs 0, 0.25, 0.75, 1.
  const Tensor ramp({1, 1, 1, 2}, std::vector<double>{0.0, 1.0});
  const Tensor r = kernels::resize_bilinear_forward(ramp, 1, 4);
  CHECK(r[0] == doctest::Approx(0.0));
  CHECK(r[1] == doctest::Approx(0.25));
  CHECK(r[2] == doctest::Approx(0.75));
  CHECK(r[3] == doctest::Approx(1.0));
}

TEST_CASE("channel norm matches the reference and normalizes each position") {
  const Tensor x = random_tensor({2, 5, 4, 3}, 6);
  const Tensor g = random_tensor({5}, 7), b = random_tensor({5}, 8);
  Tensor m1, r1, m2, r2;
  const Tensor y = kernels::channel_norm_forward(x, g, b, 1e-6, &m1, &r1);
  CHECK(max_abs_diff(y, reference::channel_norm_forward(x, g, b, 1e-6, &m2, &r2)) < 1e-12);

  const Tensor ones({5}, 1.0), zeros({5}, 0.0);
  const Tensor plain = kernels::channel_norm_forward(x, ones, zeros, 1e-6, nullptr, nullptr);
  double mean = 0, sq = 0;
  for (int c = 0; c < 5; ++c) {
    mean += plain.at(1, c, 2, 1);
    sq += plain.at(1, c, 2, 1) * plain.at(1, c, 2, 1);
  }
  CHECK(mean / 5 == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(sq / 5 == doctest::Approx(1.0).epsilon(1e-4));

  const Tensor go = random_tensor(y.shape(), 9);
  Tensor gx1 = Tensor::zeros_like(x), gg1 = Tensor::zeros_like(g), gb1 = Tensor::zeros_like(b);
  Tensor gx2 = gx1, gg2 = gg1, gb2 = gb1;
  kernels::channel_norm_backward(x, g, m1, r1, go, &gx1, &gg1, &gb1);
  reference::channel_norm_backward(x, g, m2, r2, go, &gx2, &gg2, &gb2);
  CHECK(max_abs_diff(gx1, gx2) < 1e-11);
  CHECK(max_abs_diff(gg1, gg2) < 1e-11);
  CHECK(max_abs_diff(gb1, gb2) < 1e-11);
}

TEST_CASE("attention matches the reference") {
  for (int heads : {1, 2, 4}) {
    const Tensor qkv = random_tensor({2, 3 * 8, 3, 4}, 20 + heads);
    Tensor p1, p2;
    const Tensor y = kernels::attention_forward(qkv, heads, &p1);
    CHECK(max_abs_diff(y, reference::attention_forward(qkv, heads, &p2)) < 1e-12);
    CHECK(max_abs_diff(p1, p2) < 1e-12);
    const Tensor go = random_tensor(y.shape(), 30);
    Tensor g1 = Tensor::zeros_like(qkv), g2 = Tensor::zeros_like(qkv);
    kernels::attention_backward(qkv, p1, heads, go, g1);
    reference::attention_backward(qkv, p2, heads, go, g2);
    CHECK(max_abs_diff(g1, g2) < 1e-11);
  }
}

TEST_CASE("attention with identical keys averages the values") {
  // Equal keys give uniform weights, so every output is the mean value.
  Tensor qkv = random_tensor({1, 3, 2, 2}, 40);
  for (int i = 0; i < 4; ++i) qkv.at(0, 1, i / 2, i % 2) = 0.3;
  const Tensor y = kernels::attention_forward(qkv, 1, nullptr);
  double mean = 0;
  for (int i = 0; i < 4; ++i) mean += qkv.at(0, 2, i / 2, i % 2) / 4;
  for (double v : y.values()) CHECK(v == doctest::Approx(mean));
}

TEST_CASE("max pool matches the reference") {
  const Tensor x = random_tensor({2, 3, 6, 8}, 50);
  std::vector<std::size_t> a1, a2;
  const Tensor y = kernels::max_pool2_forward(x, &a1);
  CHECK(y.shape() == Tensor::Shape{2, 3, 3, 4});
  CHECK(max_abs_diff(y, reference::max_pool2_forward(x, &a2)) < 1e-15);
  CHECK(a1 == a2);
  const Tensor go = random_tensor(y.shape(), 51);
  Tensor g1 = Tensor::zeros_like(x), g2 = Tensor::zeros_like(x);
  kernels::max_pool2_backward(a1, go, g1);
  reference::max_pool2_backward(a2, go, g2);
  CHECK(max_abs_diff(g1, g2) < 1e-15);
}
