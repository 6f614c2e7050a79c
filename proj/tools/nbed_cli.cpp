// Command-line front end: train, infer, eval, flops, synth.
//
// Exit codes: 0 success, 2 usage/config error, 3 runtime or numeric failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nbed/checkpoint.hpp"
#include "nbed/data.hpp"
#include "nbed/errors.hpp"
#include "nbed/eval.hpp"
#include "nbed/image_io.hpp"
#include "nbed/model.hpp"
#include "nbed/run_config.hpp"
#include "nbed/trainer.hpp"

namespace fs = std::filesystem;
using namespace nbed;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 3;

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config, "Config file of 'section.key = value' lines")->check(CLI::ExistingFile);
  cmd->add_option("--set", opts.sets, "Override one config key, e.g. --set train.max_iterations=0")
      ->type_name("KEY=VALUE");
}

RunConfig resolve_config(const CommonOptions& opts) {
  RunConfig cfg = opts.config.empty() ? RunConfig{} : load_run_config(opts.config);
  for (const auto& s : opts.sets) apply_override(cfg, s);
  apply_seed_environment(cfg);
  validate(cfg);
  return cfg;
}

std::map<std::string, Tensor> pretrained_arrays(const fs::path& path) {
  const Archive archive = read_archive(path);
  bool is_checkpoint = false;
  for (const auto& a : archive.arrays) is_checkpoint = is_checkpoint || a.name.rfind("param/", 0) == 0;
  std::map<std::string, Tensor> out;
  for (const auto& a : archive.arrays) {
    if (!is_checkpoint) {
      out[a.name] = a.value;
    } else if (a.name.rfind("param/sem.", 0) == 0) {
      out[a.name.substr(6)] = a.value;
    }
  }
  return out;
}

int cmd_train(const CommonOptions& common, const std::string& data, const fs::path& out_dir) {
  RunConfig cfg = resolve_config(common);
  if (!data.empty()) cfg.data_list = data;
  if (cfg.data_list.empty()) throw ConfigError("no training data: pass --data or set data.list");

  std::vector<Sample> samples = load_listfile(cfg.data_list);
  if (cfg.augment != "none") {
    const AugmentationPlan plan = AugmentationPlan::by_name(cfg.augment);
    std::vector<Sample> expanded;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto aug = augment(samples[i], plan, cfg.augment_seed + i);
      std::move(aug.begin(), aug.end(), std::back_inserter(expanded));
    }
    samples = std::move(expanded);
  }

  ModelParams init = build_model(cfg.model);
  if (!cfg.pretrained.empty()) overlay_weights(init, pretrained_arrays(cfg.pretrained));

  fs::create_directories(out_dir);
  {
    std::ofstream dump(out_dir / "config.cfg", std::ios::trunc);
    dump << dump_run_config(cfg);
  }
  std::cout << "training on " << samples.size() << " samples for " << cfg.train.max_iterations << " iterations\n";
  const std::int64_t report_every = std::max<std::int64_t>(1, cfg.train.max_iterations / 20);
  const TrainResult result = train(init, samples, cfg.train, [&](const LogEntry& e) {
    if (e.iteration % report_every == 0) std::printf("iter %lld loss %.6g\n", static_cast<long long>(e.iteration), e.loss);
  });
  save_checkpoint(result.checkpoint, out_dir / "ckpt.nbed");
  write_log_csv(result.log, out_dir / "log.csv");
  std::cout << "wrote " << (out_dir / "ckpt.nbed").string() << " and " << (out_dir / "log.csv").string() << "\n";
  return 0;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

int cmd_infer(const CommonOptions& common, const fs::path& ckpt_path, const fs::path& input, const fs::path& out_dir,
              bool multi_scale, const std::string& scales_text, bool raw) {
  RunConfig cfg = resolve_config(common);
  if (!scales_text.empty()) apply_setting(cfg, "infer.scales", scales_text);
  const ModelParams params = params_from_checkpoint(load_checkpoint(ckpt_path));

  std::vector<fs::path> inputs;
  if (fs::is_directory(input)) {
    for (const auto& entry : fs::directory_iterator(input))
      if (entry.is_regular_file() && is_image_file(entry.path())) inputs.push_back(entry.path());
    std::sort(inputs.begin(), inputs.end());
  } else if (fs::exists(input)) {
    inputs.push_back(input);
  } else {
    throw NotFoundError("no such input: " + input.string());
  }

  fs::create_directories(out_dir);
  for (const auto& path : inputs) {
    Image8 image;
    try {
      image = read_image(path, 3);
    } catch (const Error& e) {
      throw IoError("cannot read image " + path.string() + ": " + e.what());
    }
    const Tensor x = image_to_tensor(image);
    Tensor map = multi_scale ? multi_scale_infer(params, x, cfg.scales) : predict(x, params);
    map.reshape({image.height, image.width});
    const fs::path stem = out_dir / path.stem();
    write_png(fs::path(stem).concat(".png"), map_to_gray8(map));
    if (raw) save_prediction_array(map, fs::path(stem).concat(".nbed"));
    std::cout << path.filename().string() << " -> " << fs::path(stem).concat(".png").string() << "\n";
  }
  return 0;
}

int cmd_eval(const CommonOptions& common, const fs::path& pred_dir, const std::string& list, double tol, bool no_nms,
             const fs::path& report) {
  RunConfig cfg = resolve_config(common);
  if (tol > 0) cfg.eval.tolerance_fraction = tol;
  if (no_nms) cfg.eval.use_nms = false;
  if (!list.empty()) cfg.data_list = list;
  if (cfg.data_list.empty()) throw ConfigError("no list file: pass --list or set data.list");
  cfg.eval.validate();

  const std::vector<Sample> samples = load_listfile(cfg.data_list);
  std::vector<Tensor> preds;
  for (const auto& s : samples) {
    const fs::path raw = pred_dir / (s.id + ".nbed"), png = pred_dir / (s.id + ".png");
    if (fs::exists(raw)) {
      preds.push_back(load_prediction(raw));
    } else if (fs::exists(png)) {
      preds.push_back(load_prediction(png));
    } else {
      throw NotFoundError("missing prediction for sample '" + s.id + "' in " + pred_dir.string());
    }
  }
  const EvalSummary summary = ods_ois(accumulate_tallies(preds, samples, cfg.eval));
  std::printf("ODS=%.4f OIS=%.4f\n", summary.ods, summary.ois);
  write_pr_csv(summary, report);
  write_pr_svg(summary, fs::path(report).replace_extension(".svg"));
  return 0;
}

int cmd_flops(const CommonOptions& common, int height, int width) {
  const RunConfig cfg = resolve_config(common);
  std::printf("parameters: %lld\n", static_cast<long long>(count_parameters(cfg.model)));
  std::printf("location branch parameters: %lld\n", static_cast<long long>(count_location_parameters(cfg.model)));
  std::printf("GFLOPs at %dx%d: %.3f\n", width, height, estimate_flops(cfg.model, height, width) / 1e9);
  return 0;
}

int cmd_synth(const fs::path& out_dir, int count, int size, int shapes, std::uint64_t seed, const std::string& list) {
  if (count < 1) throw ConfigError("--count must be >= 1");
  if (const char* env = std::getenv("NBED_SEED")) seed = std::stoull(env);
  std::vector<Sample> samples;
  for (int i = 0; i < count; ++i) {
    Sample s = synth_sample(size, shapes, seed * 1000003ULL + static_cast<std::uint64_t>(i));
    s.id = "synth_" + std::to_string(i);
    samples.push_back(std::move(s));
  }
  write_dataset(samples, out_dir, list);
  std::cout << "wrote " << count << " samples and " << (out_dir / list).string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NBED edge detector: training, inference, evaluation and profiling"};
  app.require_subcommand(1);

  CommonOptions train_common, infer_common, eval_common, flops_common;

  auto* train_cmd = app.add_subcommand("train", "Train a model and write ckpt.nbed, log.csv and config.cfg");
  add_common(train_cmd, train_common);
  std::string train_data;
  std::string train_out;
  train_cmd->add_option("--data", train_data, "Training list file (overrides data.list)");
  train_cmd->add_option("--out", train_out, "Output directory")->required();

  auto* infer_cmd = app.add_subcommand("infer", "Write one PNG edge map per input image");
  add_common(infer_cmd, infer_common);
  std::string ckpt, input, infer_out, scales;
  bool multi_scale = false, raw = false;
  infer_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  infer_cmd->add_option("--input", input, "Image file or directory of images")->required();
  infer_cmd->add_option("--out", infer_out, "Output directory")->required();
  infer_cmd->add_flag("--ms", multi_scale, "Average predictions over rescaled inputs");
  infer_cmd->add_option("--scales", scales, "Comma-separated scales for --ms (default 0.5,1,1.5)");
  infer_cmd->add_flag("--raw", raw, "Also write float32 maps (<name>.nbed)");

  auto* eval_cmd = app.add_subcommand("eval", "Score predictions: prints ODS/OIS, writes PR CSV and SVG");
  add_common(eval_cmd, eval_common);
  std::string pred_dir, eval_list, report = "report.csv";
  double tol = 0.0;
  bool no_nms = false;
  eval_cmd->add_option("--pred", pred_dir, "Directory of <id>.png or <id>.nbed predictions")->required();
  eval_cmd->add_option("--list", eval_list, "List file with ground truths (overrides data.list)");
  eval_cmd->add_option("--tol", tol, "Matching tolerance as a fraction of the image diagonal (default 0.0075)");
  eval_cmd->add_flag("--no-nms", no_nms, "Skip NMS thinning");
  eval_cmd->add_option("--out", report, "PR CSV path; the SVG plot goes next to it")->capture_default_str();

  auto* flops_cmd = app.add_subcommand("flops", "Print parameter count and FLOPs of a configuration");
  add_common(flops_cmd, flops_common);
  int flops_h = 321, flops_w = 481;
  flops_cmd->add_option("--height", flops_h, "Input height")->capture_default_str();
  flops_cmd->add_option("--width", flops_w, "Input width")->capture_default_str();

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic shapes dataset and its list file");
  std::string synth_out, synth_list = "data.lst";
  int count = 10, size = 64, shapes = 3;
  std::uint64_t seed = 0;
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--count", count, "Number of samples")->capture_default_str();
  synth_cmd->add_option("--size", size, "Image side (>= 32)")->capture_default_str();
  synth_cmd->add_option("--shapes", shapes, "Shapes per image")->capture_default_str();
  synth_cmd->add_option("--seed", seed, "Seed (NBED_SEED overrides)")->capture_default_str();
  synth_cmd->add_option("--list", synth_list, "List file name")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*train_cmd) return cmd_train(train_common, train_data, train_out);
    if (*infer_cmd) return cmd_infer(infer_common, ckpt, input, infer_out, multi_scale, scales, raw);
    if (*eval_cmd) return cmd_eval(eval_common, pred_dir, eval_list, tol, no_nms, report);
    if (*flops_cmd) return cmd_flops(flops_common, flops_h, flops_w);
    if (*synth_cmd) return cmd_synth(synth_out, count, size, shapes, seed, synth_list);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const NotFoundError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
