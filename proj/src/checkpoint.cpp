#include "nbed/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "nbed/errors.hpp"
#include "nbed/run_config.hpp"

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace nbed {

namespace {

constexpr char kMagic[8] = {'N', 'B', 'E', 'D', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const std::string& bytes, std::size_t count) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < count; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    out_.append(raw, sizeof(T));
  }
  void text(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_ += s;
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t limit, std::string origin)
      : bytes_(bytes), limit_(limit), origin_(std::move(origin)) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string text() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void need(std::uint64_t n) const {
    if (n > limit_ || pos_ + n > limit_) throw IntegrityError(origin_ + ": truncated or corrupt archive");
  }

 private:
  const std::string& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
  std::string origin_;
};

std::size_t dtype_size(DType d) { return d == DType::kFloat32 ? 4 : 8; }

}  // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(archive.format_version);
  w.text(archive.config_text);
  w.pod<std::uint64_t>(archive.iteration);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(archive.arrays.size()));
  std::uint64_t offset = 0;
  for (const auto& a : archive.arrays) {
    w.text(a.name);
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(a.dtype));
    w.pod<std::uint8_t>(a.pretrained ? 1 : 0);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(a.value.rank()));
    for (int d : a.value.shape()) w.pod<std::int64_t>(d);
    w.pod<std::uint64_t>(offset);
    offset += a.value.size() * dtype_size(a.dtype);
  }
  for (const auto& a : archive.arrays) {
    if (a.dtype == DType::kFloat64) {
      w.raw(a.value.data(), a.value.size() * sizeof(double));
    } else {
      for (double v : a.value.values()) w.pod<float>(static_cast<float>(v));
    }
  }
  w.pod<std::uint64_t>(fnv1a(w.bytes(), w.bytes().size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("no such archive: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string origin = path.string();

  if (bytes.size() < sizeof(kMagic) + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IntegrityError(origin + ": not an NBED archive");
  }
  Reader header(bytes, bytes.size(), origin);
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) header.pod<char>();
  Archive archive;
  archive.format_version = header.pod<std::uint32_t>();
  if (archive.format_version != kArchiveFormatVersion) {
    throw VersionError(origin + ": archive format version " + std::to_string(archive.format_version) +
                       " is not supported (expected " + std::to_string(kArchiveFormatVersion) + ")");
  }
  if (bytes.size() < 8) throw IntegrityError(origin + ": truncated or corrupt archive");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a(bytes, body)) throw IntegrityError(origin + ": checksum mismatch (truncated or corrupt archive)");

  Reader r(bytes, body, origin);
  for (std::size_t i = 0; i < sizeof(kMagic) + 4; ++i) r.pod<char>();
  archive.config_text = r.text();
  archive.iteration = r.pod<std::uint64_t>();
  const auto count = r.pod<std::uint32_t>();
  struct Entry {
    NamedArray array;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.array.name = r.text();
    const auto dtype = r.pod<std::uint8_t>();
    if (dtype != 1 && dtype != 2) throw IntegrityError(origin + ": bad dtype for '" + e.array.name + "'");
    e.array.dtype = static_cast<DType>(dtype);
    e.array.pretrained = r.pod<std::uint8_t>() != 0;
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw IntegrityError(origin + ": bad rank for '" + e.array.name + "'");
    Tensor::Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.pod<std::int64_t>();
      if (dim < 0 || dim > (1LL << 31)) throw IntegrityError(origin + ": bad shape for '" + e.array.name + "'");
      shape.push_back(static_cast<int>(dim));
    }
    e.array.value = Tensor(shape);
    e.offset = r.pod<std::uint64_t>();
    entries.push_back(std::move(e));
  }
  const std::size_t data_start = r.pos();
  for (auto& e : entries) {
    const std::size_t n = e.array.value.size(), width = dtype_size(e.array.dtype);
    if (e.offset > body || n * width > body - data_start || data_start + e.offset + n * width > body) {
      throw IntegrityError(origin + ": array '" + e.array.name + "' extends past the end of the archive");
    }
    const char* src = bytes.data() + data_start + e.offset;
    if (e.array.dtype == DType::kFloat64) {
      std::memcpy(e.array.value.data(), src, n * sizeof(double));
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, src + i * 4, 4);
        e.array.value[i] = f;
      }
    }
    archive.arrays.push_back(std::move(e.array));
  }
  return archive;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Archive a;
  a.format_version = ckpt.format_version;
  a.config_text = dump_model_config(ckpt.model_config);
  a.iteration = static_cast<std::uint64_t>(ckpt.iteration);
  for (const auto& [name, value] : ckpt.params) {
    const auto it = ckpt.pretrained.find(name);
    a.arrays.push_back({"param/" + name, value, DType::kFloat64, it != ckpt.pretrained.end() && it->second});
  }
  for (const auto& [name, value] : ckpt.optimizer_state) {
    a.arrays.push_back({"optim/" + name, value, DType::kFloat64, false});
  }
  write_archive(path, a);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  Checkpoint c;
  c.format_version = a.format_version;
  try {
    c.model_config = parse_model_config(a.config_text);
  } catch (const ConfigError& e) {
    throw IntegrityError(path.string() + ": bad embedded model config: " + e.what());
  }
  c.iteration = static_cast<std::int64_t>(a.iteration);
  for (const auto& arr : a.arrays) {
    if (arr.name.rfind("param/", 0) == 0) {
      const std::string name = arr.name.substr(6);
      if (!c.params.emplace(name, arr.value).second) {
        throw IntegrityError(path.string() + ": duplicate parameter '" + name + "'");
      }
      c.pretrained[name] = arr.pretrained;
    } else if (arr.name.rfind("optim/", 0) == 0) {
      c.optimizer_state.emplace(arr.name.substr(6), arr.value);
    } else {
      throw IntegrityError(path.string() + ": unexpected array '" + arr.name + "'");
    }
  }
  return c;
}

Checkpoint checkpoint_from_params(const ModelParams& params) {
  Checkpoint c;
  c.model_config = params.config;
  for (const auto& [name, entry] : params.store.entries()) {
    c.params[name] = entry.var.value();
    c.pretrained[name] = entry.pretrained;
  }
  return c;
}

ModelParams params_from_checkpoint(const Checkpoint& ckpt) {
  ModelParams params = build_model(ckpt.model_config);
  for (auto& [name, entry] : params.store.entries()) {
    const auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw IntegrityError("checkpoint is missing parameter '" + name + "'");
    if (!it->second.same_shape(entry.var.value())) {
      throw IntegrityError("checkpoint parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                           ", model expects " + shape_string(entry.var.shape()));
    }
    entry.var.mutable_value() = it->second;
  }
  if (ckpt.params.size() != params.store.entries().size()) {
    for (const auto& [name, value] : ckpt.params) {
      if (!params.store.contains(name)) throw IntegrityError("checkpoint has unknown parameter '" + name + "'");
    }
  }
  return params;
}

}  // namespace nbed
