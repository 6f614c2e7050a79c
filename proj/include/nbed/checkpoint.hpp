#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nbed/model.hpp"

namespace nbed {

inline constexpr std::uint32_t kArchiveFormatVersion = 1;

enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

struct NamedArray {
  std::string name;
  Tensor value;
  DType dtype = DType::kFloat64;
  bool pretrained = false;
};

// The on-disk container: "NBEDCKPT", little-endian header (format version,
// free-form config text, iteration), an array directory (name, dtype, shape,
// byte offset), the raw arrays and a trailing FNV-1a checksum.
struct Archive {
  std::uint32_t format_version = kArchiveFormatVersion;
  std::string config_text;
  std::uint64_t iteration = 0;
  std::vector<NamedArray> arrays;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
// Throws NotFoundError, VersionError or IntegrityError.
Archive read_archive(const std::filesystem::path& path);

struct Checkpoint {
  std::uint32_t format_version = kArchiveFormatVersion;
  ModelConfig model_config;
  std::map<std::string, Tensor> params;
  std::map<std::string, bool> pretrained;
  std::map<std::string, Tensor> optimizer_state;  // "adam.m/<name>", "adam.v/<name>"
  std::int64_t iteration = 0;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint checkpoint_from_params(const ModelParams& params);
ModelParams params_from_checkpoint(const Checkpoint& ckpt);

}  // namespace nbed
