#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "nbed/errors.hpp"
#include "nbed/trainer.hpp"
#include "test_support.hpp"

using namespace nbed;

namespace {

std::vector<Sample> synth_set(int count, int size, std::uint64_t seed) {
  std::vector<Sample> data;
  for (int i = 0; i < count; ++i) data.push_back(synth_sample(size, 2, seed * 100 + i));
  return data;
}

TrainConfig quick_config(std::int64_t iterations) {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_iterations = iterations;
  cfg.lr_pretrained = cfg.lr_rest = 1e-3;
  cfg.loss.rcf_convention = true;
  cfg.seed = 4;
  return cfg;
}

}  // namespace

TEST_CASE("first Adam step moves by lr against the gradient sign") {
  Tensor p({4}, std::vector<double>{1, 1, 1, 1});
  const Tensor g({4}, std::vector<double>{0.3, -2.0, 1e-3, -7.5});
  Tensor m({4}), v({4});
  AdamHyper h;
  h.lr = 0.01;
  adam_update(p, g, m, v, 1, h);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] - 1.0 == doctest::Approx(g[i] > 0 ? -0.01 : 0.01).epsilon(1e-5));
}

TEST_CASE("two Adam steps with a constant gradient") {
  Tensor p({1}, 1.0), m({1}), v({1});
  const Tensor g({1}, 0.5);
  AdamHyper h;
  h.lr = 0.1;
  adam_update(p, g, m, v, 1, h);
  adam_update(p, g, m, v, 2, h);
  // m and v stay on their bias-corrected means (0.5 and 0.25) at both steps.
  const double expected = 1.0 - 2 * 0.1 * 0.5 / (0.5 + 1e-8);
  CHECK(std::abs(p[0] - expected) < 1e-10);
  CHECK(m[0] == doctest::Approx(0.095).epsilon(1e-12));
  CHECK(v[0] == doctest::Approx(0.00049975).epsilon(1e-12));
}

TEST_CASE("zero gradient without decay leaves parameters unchanged") {
  Tensor p = testing::random_tensor({3, 3}, 1, -1, 1);
  const Tensor before = p;
  Tensor m({3, 3}), v({3, 3});
  AdamHyper h;
  h.lr = 0.5;
  for (int step = 1; step <= 3; ++step) adam_update(p, Tensor({3, 3}), m, v, step, h);
  CHECK(p == before);
  h.weight_decay = 0.1;
  h.lr = 0.1;
  Tensor q({1}, 2.0), mq({1}), vq({1});
  adam_update(q, Tensor({1}), mq, vq, 1, h);
  CHECK(q[0] == doctest::Approx(2.0 - 0.1 * 0.1 * 2.0).epsilon(1e-14));
}

TEST_CASE("batch indices form a seeded permutation per epoch") {
  std::multiset<std::size_t> epoch0, epoch1;
  for (int it = 0; it < 5; ++it)
    for (auto i : batch_indices(10, 2, 9, it)) epoch0.insert(i);
  for (int it = 5; it < 10; ++it)
    for (auto i : batch_indices(10, 2, 9, it)) epoch1.insert(i);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(epoch0.count(i) == 1);
    CHECK(epoch1.count(i) == 1);
  }
  CHECK(batch_indices(10, 2, 9, 3) == batch_indices(10, 2, 9, 3));
  bool differs = false;
  for (int it = 0; it < 5; ++it) differs = differs || batch_indices(10, 2, 9, it) != batch_indices(10, 2, 10, it);
  CHECK(differs);
}

TEST_CASE("zero iterations return the initial model") {
  const ModelConfig mc = tiny_config();
  const TrainResult r = train(mc, synth_set(2, 32, 1), quick_config(0));
  CHECK(r.log.empty());
  CHECK(r.checkpoint.params == checkpoint_from_params(build_model(mc)).params);
  CHECK(r.checkpoint.iteration == 0);
}

TEST_CASE("learning-rate groups") {
  const ModelConfig mc = tiny_config();
  const auto data = synth_set(2, 32, 2);
  TrainConfig a = quick_config(1), b = a;
  b.lr_rest = 2 * a.lr_rest;
  const Checkpoint init = checkpoint_from_params(build_model(mc));
  const TrainResult ra = train(mc, data, a), rb = train(mc, data, b);
  // A first Adam step is linear in the learning rate.
  int rest = 0;
  for (const auto& [name, p0] : init.params) {
    const Tensor& pa = ra.checkpoint.params.at(name);
    const Tensor& pb = rb.checkpoint.params.at(name);
    if (init.pretrained.at(name)) {
      CHECK(pa == pb);
      continue;
    }
    ++rest;
    double worst = 0.0;
    for (std::size_t i = 0; i < p0.size(); ++i) {
      worst = std::max(worst, std::abs((pb[i] - p0[i]) - 2 * (pa[i] - p0[i])));
    }
    CHECK(worst < 1e-12);
  }
  CHECK(rest > 0);
}

TEST_CASE("training is deterministic and resumable") {
  const ModelConfig mc = tiny_config();
  const auto data = synth_set(3, 32, 3);
  const TrainResult straight = train(mc, data, quick_config(5));
  const TrainResult again = train(mc, data, quick_config(5));
  CHECK(straight.checkpoint == again.checkpoint);
  CHECK(straight.log == again.log);
  REQUIRE(straight.log.size() == 5);
  CHECK(straight.checkpoint.iteration == 5);

  const TrainResult first = train(mc, data, quick_config(3));
  const TrainResult rest = train(mc, data, quick_config(5), &first.checkpoint);
  CHECK(rest.checkpoint == straight.checkpoint);
  REQUIRE(rest.log.size() == 2);
  CHECK(rest.log[0] == straight.log[3]);
  CHECK(rest.log[1] == straight.log[4]);
}

TEST_CASE("samples of different sizes train together") {
  std::vector<Sample> data{synth_sample(32, 2, 1), synth_sample(40, 2, 2)};
  const TrainResult r = train(tiny_config(), data, quick_config(2));
  REQUIRE(r.log.size() == 2);
  for (const auto& e : r.log) CHECK(std::isfinite(e.loss));
}

TEST_CASE("a single sample is overfit") {
  const std::vector<Sample> data{synth_sample(32, 2, 5)};
  TrainConfig cfg = quick_config(200);
  cfg.batch_size = 1;
  cfg.loss = LossConfig{};
  cfg.lr_pretrained = cfg.lr_rest = 1e-2;
  const TrainResult r = train(tiny_config(), data, cfg);
  REQUIRE(r.log.size() == 200);
  CHECK(r.log.back().loss < 0.25 * r.log.front().loss);
  // Loss trend: ten-iteration moving averages decrease from window to window
  // of fifty iterations.
  auto window = [&](std::size_t end) {
    double s = 0.0;
    for (std::size_t i = end - 10; i < end; ++i) s += r.log[i].loss;
    return s / 10;
  };
  for (std::size_t end = 60; end <= 200; end += 50) CHECK(window(end) < window(end - 50));
}

TEST_CASE("non-finite losses abort training") {
  ModelParams init = build_model(tiny_config());
  Tensor& w = init.store.entries().begin()->second.var.mutable_value();
  w[0] = std::nan("");
  CHECK_THROWS_AS(train(init, synth_set(1, 32, 6), quick_config(2)), NumericError);
}

TEST_CASE("log csv") {
  testing::TempDir dir("trainer");
  write_log_csv({{1, 0.5}, {2, 0.25}}, dir / "log.csv");
  std::ifstream in(dir / "log.csv");
  std::string header, a, b;
  std::getline(in, header);
  std::getline(in, a);
  std::getline(in, b);
  CHECK(header == "iteration,loss");
  CHECK(a == "1,0.5");
  CHECK(b == "2,0.25");
}

TEST_CASE("invalid training configuration") {
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.max_iterations = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(train(tiny_config(), {}, quick_config(1)), ConfigError);
}
