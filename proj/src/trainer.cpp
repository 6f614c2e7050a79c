#include "nbed/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

#include "nbed/errors.hpp"

namespace nbed {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct PreparedSample {
  Tensor image;  // 1 x 3 x H x W
  Tensor gt;     // 1 x 1 x H x W
};

std::vector<PreparedSample> prepare(const std::vector<Sample>& data) {
  std::vector<PreparedSample> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    PreparedSample p{image_to_tensor(s.image), s.consensus_gt};
    p.gt.reshape({1, 1, s.consensus_gt.dim(0), s.consensus_gt.dim(1)});
    out.push_back(std::move(p));
  }
  return out;
}

ag::Var supervised_loss(const ModelParams& params, const Tensor& image, const Tensor& gt, const LossConfig& cfg) {
  const ForwardResult r = nbed_forward_full(ag::Var(image), params);
  ag::Var loss = wce_loss(r.edge_map, gt, cfg);
  for (const auto& side : r.side_maps) loss = ag::add(loss, wce_loss(side, gt, cfg));
  return loss;
}

void clip_gradients(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, e] : store.entries())
    if (e.var.has_grad())
      for (double g : e.var.grad().values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (auto& [name, e] : store.entries())
    if (e.var.has_grad())
      for (double& g : e.var.node()->grad.values()) g *= scale;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr_pretrained > 0) || !(lr_rest > 0)) throw ConfigError("train: learning rates must be > 0");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (max_iterations < 0) throw ConfigError("train.max_iterations must be >= 0");
  if (log_every < 1) throw ConfigError("train.log_every must be >= 1");
  if (!(grad_clip >= 0)) throw ConfigError("train.grad_clip must be >= 0");
  loss.validate();
}

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::int64_t step, const AdamHyper& h) {
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  const std::size_t n = param.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = m[i] / c1, v_hat = v[i] / c2;
    param[i] -= h.lr * (m_hat / (std::sqrt(v_hat) + h.eps) + h.weight_decay * param[i]);
  }
}

void adam_step(ParamStore& store, AdamState& state, const TrainConfig& cfg) {
  ++state.step;
  for (auto& [name, entry] : store.entries()) {
    Tensor& p = entry.var.mutable_value();
    auto [mi, m_new] = state.m.try_emplace(name, Tensor::zeros_like(p));
    auto [vi, v_new] = state.v.try_emplace(name, Tensor::zeros_like(p));
    AdamHyper h;
    h.lr = entry.pretrained ? cfg.lr_pretrained : cfg.lr_rest;
    h.weight_decay = cfg.weight_decay;
    adam_update(p, entry.var.grad(), mi->second, vi->second, state.step, h);
  }
}

std::vector<std::size_t> batch_indices(std::size_t dataset_size, int batch_size, std::uint64_t seed,
                                       std::int64_t iteration) {
  std::vector<std::size_t> out;
  std::vector<std::size_t> perm;
  std::int64_t cached_epoch = -1;
  for (int b = 0; b < batch_size; ++b) {
    const auto position = static_cast<std::uint64_t>(iteration) * static_cast<std::uint64_t>(batch_size) +
                          static_cast<std::uint64_t>(b);
    const auto epoch = static_cast<std::int64_t>(position / dataset_size);
    if (epoch != cached_epoch) {
      perm.resize(dataset_size);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(mix(seed ^ mix(static_cast<std::uint64_t>(epoch))));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[position % dataset_size]);
  }
  return out;
}

namespace {

TrainResult run(ModelParams params, AdamState state, std::int64_t start, const std::vector<Sample>& data,
                const TrainConfig& cfg, const std::function<void(const LogEntry&)>& on_log) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: dataset is empty");
  const auto prepared = prepare(data);
  TrainResult result;

  for (std::int64_t it = start; it < cfg.max_iterations; ++it) {
    const auto picks = batch_indices(prepared.size(), cfg.batch_size, cfg.seed, it);
    params.store.zero_grad();

    bool same_size = true;
    for (auto i : picks) same_size = same_size && prepared[i].image.same_shape(prepared[picks[0]].image);

    double loss_value = 0.0;
    if (same_size) {
      std::vector<Tensor> images, gts;
      for (auto i : picks) {
        images.push_back(prepared[i].image);
        gts.push_back(prepared[i].gt);
      }
      const ag::Var loss = supervised_loss(params, stack_batch(images), stack_batch(gts), cfg.loss);
      loss_value = loss.value()[0];
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite loss at iteration " + std::to_string(it + 1));
      }
      ag::backward(loss);
    } else {
      for (auto i : picks) {
        const ag::Var loss = supervised_loss(params, prepared[i].image, prepared[i].gt, cfg.loss);
        loss_value += loss.value()[0];
        if (!std::isfinite(loss_value)) {
          throw NumericError("non-finite loss at iteration " + std::to_string(it + 1));
        }
        ag::backward(loss);
      }
    }

    if (cfg.grad_clip > 0) clip_gradients(params.store, cfg.grad_clip);
    adam_step(params.store, state, cfg);
    for (const auto& [name, e] : params.store.entries()) {
      if (!e.var.value().all_finite()) {
        throw NumericError("non-finite parameter '" + name + "' after iteration " + std::to_string(it + 1));
      }
    }

    const LogEntry entry{it + 1, loss_value};
    if ((it + 1) % cfg.log_every == 0 || it + 1 == cfg.max_iterations) {
      result.log.push_back(entry);
      if (on_log) on_log(entry);
    }
  }
  params.store.zero_grad();

  result.checkpoint = checkpoint_from_params(params);
  result.checkpoint.iteration = std::max(start, cfg.max_iterations);
  for (const auto& [name, m] : state.m) result.checkpoint.optimizer_state["adam.m/" + name] = m;
  for (const auto& [name, v] : state.v) result.checkpoint.optimizer_state["adam.v/" + name] = v;
  return result;
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const Checkpoint* resume, const std::function<void(const LogEntry&)>& on_log) {
  if (!resume) return run(build_model(model_cfg), AdamState{}, 0, data, cfg, on_log);
  if (!(resume->model_config == model_cfg)) {
    throw ConfigError("train: resume checkpoint was written for a different model config");
  }
  AdamState state;
  state.step = resume->iteration;
  for (const auto& [key, value] : resume->optimizer_state) {
    if (key.rfind("adam.m/", 0) == 0) state.m[key.substr(7)] = value;
    if (key.rfind("adam.v/", 0) == 0) state.v[key.substr(7)] = value;
  }
  return run(params_from_checkpoint(*resume), std::move(state), resume->iteration, data, cfg, on_log);
}

TrainResult train(const ModelParams& init, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const std::function<void(const LogEntry&)>& on_log) {
  ModelParams params{init.config, init.store.clone()};
  return run(std::move(params), AdamState{}, 0, data, cfg, on_log);
}

void write_log_csv(const std::vector<LogEntry>& log, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,loss\n" << std::setprecision(17);
  for (const auto& e : log) out << e.iteration << ',' << e.loss << '\n';
}

}  // namespace nbed
