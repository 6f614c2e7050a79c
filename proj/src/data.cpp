#include "nbed/data.hpp"

#include <fstream>
#include <sstream>

#include "nbed/errors.hpp"

namespace nbed {

Tensor consensus_groundtruth(const std::vector<Tensor>& annotations) {
  if (annotations.empty()) throw ShapeError("consensus: no annotator maps");
  Tensor mean(annotations.front().shape());
  for (const auto& a : annotations) {
    if (!a.same_shape(mean)) throw ShapeError("consensus: annotator maps differ in size");
    mean.add_(a);
  }
  const double n = static_cast<double>(annotations.size());
  for (double& v : mean.values()) v /= n;
  return mean;
}

namespace {

bool is_binary(const Image8& gray) {
  for (auto v : gray.pixels)
    if (v != 0 && v != 255) return false;
  return true;
}

std::string describe(const std::filesystem::path& list, int line) {
  return list.string() + ":" + std::to_string(line) + ": ";
}

}  // namespace

std::vector<Sample> load_listfile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    if (!std::filesystem::exists(path)) throw NotFoundError("list file not found: " + path.string());
    throw IoError("cannot read list file " + path.string());
  }
  const auto base = path.parent_path();
  std::vector<Sample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::vector<std::string> parts;
    for (std::string f; fields >> f;) parts.push_back(f);
    if (parts.empty()) continue;
    if (parts.size() < 2) throw IoError(describe(path, line_no) + "expected an image path and at least one ground truth");

    Sample s;
    const auto image_path = base / parts[0];
    s.id = std::filesystem::path(parts[0]).stem().string();
    try {
      s.image = read_image(image_path, 3);
    } catch (const Error& e) {
      throw IoError(describe(path, line_no) + e.what());
    }
    std::vector<Image8> gts;
    for (std::size_t k = 1; k < parts.size(); ++k) {
      Image8 gt;
      try {
        gt = read_image(base / parts[k], 1);
      } catch (const Error& e) {
        throw IoError(describe(path, line_no) + e.what());
      }
      if (gt.height != s.image.height || gt.width != s.image.width) {
        throw IoError(describe(path, line_no) + "ground truth " + parts[k] + " is " + std::to_string(gt.height) + "x" +
                      std::to_string(gt.width) + " but image is " + std::to_string(s.image.height) + "x" +
                      std::to_string(s.image.width));
      }
      gts.push_back(std::move(gt));
    }
    if (gts.size() == 1 && !is_binary(gts[0])) {
      // A single soft map is already a consensus.
      s.consensus_gt = gray8_to_map(gts[0]);
      Tensor binary = s.consensus_gt;
      for (double& v : binary.values()) v = v > 0.0 ? 1.0 : 0.0;
      s.annotator_gts.push_back(std::move(binary));
    } else {
      for (const auto& g : gts) {
        Tensor m = gray8_to_map(g);
        for (double& v : m.values()) v = v >= 0.5 ? 1.0 : 0.0;
        s.annotator_gts.push_back(std::move(m));
      }
      s.consensus_gt = consensus_groundtruth(s.annotator_gts);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir, const std::string& list_name) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "gt");
  std::ofstream list(dir / list_name);
  if (!list) throw IoError("cannot write " + (dir / list_name).string());
  for (const auto& s : samples) {
    const std::string img_rel = "images/" + s.id + ".png";
    write_png(dir / img_rel, s.image);
    list << img_rel;
    for (std::size_t k = 0; k < s.annotator_gts.size(); ++k) {
      const std::string gt_rel = "gt/" + s.id + "_" + std::to_string(k) + ".png";
      write_png(dir / gt_rel, map_to_gray8(s.annotator_gts[k]));
      list << ' ' << gt_rel;
    }
    list << '\n';
  }
}

}  // namespace nbed
