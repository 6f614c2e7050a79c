#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nbed/checkpoint.hpp"
#include "nbed/data.hpp"
#include "nbed/loss.hpp"
#include "nbed/model.hpp"

namespace nbed {

struct TrainConfig {
  double lr_pretrained = 1e-5;  // "sem.*" arrays
  double lr_rest = 1e-4;
  double weight_decay = 5e-4;
  int batch_size = 4;
  std::int64_t max_iterations = 1000;
  std::uint64_t seed = 0;
  LossConfig loss;
  int log_every = 1;
  double grad_clip = 0.0;  // global L2 norm; 0 disables

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct AdamHyper {
  double lr = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One Adam update of a single array with bias correction; `step` is the
// 1-based index of this update. Weight decay is decoupled: -lr * wd * param.
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::int64_t step, const AdamHyper& h);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::int64_t step = 0;
};

// Applies one step to every array of the store using its accumulated
// gradient (missing gradients count as zero). Pretrained arrays use
// lr_pretrained, all others lr_rest.
void adam_step(ParamStore& store, AdamState& state, const TrainConfig& cfg);

struct LogEntry {
  std::int64_t iteration = 0;  // 1-based count of completed updates
  double loss = 0.0;

  friend bool operator==(const LogEntry&, const LogEntry&) = default;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogEntry> log;
};

// Samples drawn by iteration `iteration` (0-based): a per-epoch permutation
// of the dataset seeded by (seed, epoch), consumed batch_size at a time.
std::vector<std::size_t> batch_indices(std::size_t dataset_size, int batch_size, std::uint64_t seed,
                                       std::int64_t iteration);

// Runs max_iterations updates in total. With `resume`, continues from its
// parameters, optimizer state and iteration count. Throws NumericError on a
// non-finite loss.
TrainResult train(const ModelConfig& model_cfg, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const Checkpoint* resume = nullptr, const std::function<void(const LogEntry&)>& on_log = {});

// Initial weights, optionally overlaid with pretrained semantic arrays.
TrainResult train(const ModelParams& init, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const std::function<void(const LogEntry&)>& on_log = {});

void write_log_csv(const std::vector<LogEntry>& log, const std::filesystem::path& path);

}  // namespace nbed
