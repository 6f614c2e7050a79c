#include "nbed/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "nbed/errors.hpp"

namespace nbed {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}
std::string fmt(std::int64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

struct BadValue {};

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) throw BadValue{};
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw BadValue{};
}

template <typename T, std::size_t N>
std::array<T, N> parse_array(const std::string& s) {
  const auto items = split_list(s);
  if (items.size() != N) throw BadValue{};
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_number<T>(items[i]);
  return out;
}

template <std::size_t N>
std::string fmt_array(const std::array<int, N>& a) {
  std::string s;
  for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::to_string(a[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Field int_field(std::string key, T RunConfig::*section, int T::*member) {
  return {std::move(key), [=](const RunConfig& c) { return std::to_string((c.*section).*member); },
          [=](RunConfig& c, const std::string& v) { (c.*section).*member = parse_number<int>(v); }};
}

template <typename T>
Field double_field(std::string key, T RunConfig::*section, double T::*member) {
  return {std::move(key), [=](const RunConfig& c) { return fmt((c.*section).*member); },
          [=](RunConfig& c, const std::string& v) { (c.*section).*member = parse_number<double>(v); }};
}

template <typename T>
Field bool_field(std::string key, T RunConfig::*section, bool T::*member) {
  return {std::move(key), [=](const RunConfig& c) { return fmt((c.*section).*member); },
          [=](RunConfig& c, const std::string& v) { (c.*section).*member = parse_bool(v); }};
}

template <std::size_t N>
Field array_field(std::string key, std::array<int, N> ModelConfig::*member) {
  return {std::move(key), [=](const RunConfig& c) { return fmt_array(c.model.*member); },
          [=](RunConfig& c, const std::string& v) { c.model.*member = parse_array<int, N>(v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using M = ModelConfig;
    using T = TrainConfig;
    using E = EvalConfig;
    std::vector<Field> f;
    f.push_back(int_field("model.input_channels", &RunConfig::model, &M::input_channels));
    f.push_back(array_field("model.location_channels", &M::location_channels));
    f.push_back(array_field("model.semantic_stage_blocks", &M::semantic_stage_blocks));
    f.push_back(array_field("model.semantic_stage_channels", &M::semantic_stage_channels));
    f.push_back({"model.semantic_stage_operator",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < 3; ++i) s += (i ? "," : "") + to_string(c.model.semantic_stage_operator[i]);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   const auto items = split_list(v);
                   if (items.size() != 3) throw BadValue{};
                   for (std::size_t i = 0; i < 3; ++i) c.model.semantic_stage_operator[i] = parse_operator_kind(items[i]);
                 }});
    f.push_back(array_field("model.semantic_downsampling", &M::semantic_downsampling));
    f.push_back(int_field("model.stem_kernel", &RunConfig::model, &M::stem_kernel));
    f.push_back(int_field("model.separable_kernel", &RunConfig::model, &M::separable_kernel));
    f.push_back(int_field("model.decoder_base_channels", &RunConfig::model, &M::decoder_base_channels));
    f.push_back(int_field("model.decoder_channel_growth", &RunConfig::model, &M::decoder_channel_growth));
    f.push_back(int_field("model.fuse_kernel", &RunConfig::model, &M::fuse_kernel));
    f.push_back(int_field("model.mlp_expansion_ratio", &RunConfig::model, &M::mlp_expansion_ratio));
    f.push_back(int_field("model.attention_head_dim", &RunConfig::model, &M::attention_head_dim));
    f.push_back(double_field("model.norm_epsilon", &RunConfig::model, &M::norm_epsilon));
    f.push_back({"model.decoder", [](const RunConfig& c) { return to_string(c.model.decoder); },
                 [](RunConfig& c, const std::string& v) { c.model.decoder = parse_decoder_kind(v); }});
    f.push_back(bool_field("model.supervise_side_outputs", &RunConfig::model, &M::supervise_side_outputs));
    f.push_back({"model.seed", [](const RunConfig& c) { return std::to_string(c.model.seed); },
                 [](RunConfig& c, const std::string& v) { c.model.seed = parse_number<std::uint64_t>(v); }});

    f.push_back(double_field("train.lr_pretrained", &RunConfig::train, &T::lr_pretrained));
    f.push_back(double_field("train.lr_rest", &RunConfig::train, &T::lr_rest));
    f.push_back(double_field("train.weight_decay", &RunConfig::train, &T::weight_decay));
    f.push_back(int_field("train.batch_size", &RunConfig::train, &T::batch_size));
    f.push_back({"train.max_iterations", [](const RunConfig& c) { return fmt(c.train.max_iterations); },
                 [](RunConfig& c, const std::string& v) { c.train.max_iterations = parse_number<std::int64_t>(v); }});
    f.push_back({"train.seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
                 [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>(v); }});
    f.push_back(int_field("train.log_every", &RunConfig::train, &T::log_every));
    f.push_back(double_field("train.grad_clip", &RunConfig::train, &T::grad_clip));
    f.push_back({"loss.lambda", [](const RunConfig& c) { return fmt(c.train.loss.lambda); },
                 [](RunConfig& c, const std::string& v) { c.train.loss.lambda = parse_number<double>(v); }});
    f.push_back({"loss.eta", [](const RunConfig& c) { return fmt(c.train.loss.eta); },
                 [](RunConfig& c, const std::string& v) { c.train.loss.eta = parse_number<double>(v); }});
    f.push_back({"loss.reduction",
                 [](const RunConfig& c) { return std::string(c.train.loss.reduction == Reduction::kSum ? "sum" : "mean"); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "sum") {
                     c.train.loss.reduction = Reduction::kSum;
                   } else if (v == "mean") {
                     c.train.loss.reduction = Reduction::kMeanOverPixels;
                   } else {
                     throw BadValue{};
                   }
                 }});
    f.push_back({"loss.rcf_convention", [](const RunConfig& c) { return fmt(c.train.loss.rcf_convention); },
                 [](RunConfig& c, const std::string& v) { c.train.loss.rcf_convention = parse_bool(v); }});

    f.push_back(double_field("eval.tolerance", &RunConfig::eval, &E::tolerance_fraction));
    f.push_back(int_field("eval.thresholds", &RunConfig::eval, &E::thresholds));
    f.push_back(bool_field("eval.nms", &RunConfig::eval, &E::use_nms));

    f.push_back({"data.list", [](const RunConfig& c) { return c.data_list; },
                 [](RunConfig& c, const std::string& v) { c.data_list = v; }});
    f.push_back({"data.augment", [](const RunConfig& c) { return c.augment; },
                 [](RunConfig& c, const std::string& v) {
                   AugmentationPlan::by_name(v);
                   c.augment = v;
                 }});
    f.push_back({"data.augment_seed", [](const RunConfig& c) { return std::to_string(c.augment_seed); },
                 [](RunConfig& c, const std::string& v) { c.augment_seed = parse_number<std::uint64_t>(v); }});
    f.push_back({"data.pretrained", [](const RunConfig& c) { return c.pretrained; },
                 [](RunConfig& c, const std::string& v) { c.pretrained = v; }});
    f.push_back({"infer.scales",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.scales.size(); ++i) s += (i ? "," : "") + fmt(c.scales[i]);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<double> scales;
                   for (const auto& item : split_list(v)) scales.push_back(parse_number<double>(item));
                   if (scales.empty()) throw BadValue{};
                   c.scales = scales;
                 }});
    return f;
  }();
  return table;
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key != key) continue;
    try {
      f.set(cfg, value);
    } catch (const BadValue&) {
      throw ConfigError("invalid value '" + value + "' for config key '" + key + "'");
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  apply_setting(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, buf.str(), path.string());
  return cfg;
}

void apply_seed_environment(RunConfig& cfg) {
  const char* env = std::getenv("NBED_SEED");
  if (!env) return;
  try {
    const auto seed = parse_number<std::uint64_t>(trim(env));
    cfg.model.seed = seed;
    cfg.train.seed = seed;
  } catch (const BadValue&) {
    throw ConfigError(std::string("NBED_SEED must be a non-negative integer, got '") + env + "'");
  }
}

void validate(const RunConfig& cfg) {
  cfg.model.validate();
  cfg.train.validate();
  cfg.eval.validate();
  for (double s : cfg.scales)
    if (!(s > 0)) throw ConfigError("infer.scales must be positive");
}

std::string dump_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

std::string dump_model_config(const ModelConfig& model) {
  RunConfig cfg;
  cfg.model = model;
  std::string out;
  for (const auto& f : fields())
    if (f.key.rfind("model.", 0) == 0) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

ModelConfig parse_model_config(const std::string& text) {
  RunConfig cfg;
  apply_config_text(cfg, text, "model config");
  if (!(cfg.train == TrainConfig{}) || !(cfg.eval == EvalConfig{})) {
    throw ConfigError("model config text contains non-model keys");
  }
  return cfg.model;
}

}  // namespace nbed
