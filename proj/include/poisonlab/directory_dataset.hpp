#pragma once

// On-disk datasets laid out as
//
//   <root>/<split>/<class_id>/<image files>
//
// with zero-padded integer class directories (GTSRB style; CTSRD converts to
// the same layout). An optional <root>/<split>/index.csv with header
// `relative_path,label` fixes the sample list and order; without it samples
// are taken in sorted path order.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "poisonlab/dataset.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/image_io.hpp"

namespace poisonlab {

inline constexpr int kDefaultImageSide = 32;
inline constexpr const char* kIndexHeader = "relative_path,label";

namespace detail {

inline bool parse_class_dir(const std::string& name, int& id) {
  if (name.empty() || !std::all_of(name.begin(), name.end(), [](unsigned char c) { return std::isdigit(c); })) return false;
  if (name.size() > 9) return false;
  id = std::stoi(name);
  return true;
}

inline std::map<int, std::filesystem::path> class_directories(const std::filesystem::path& split_dir) {
  std::map<int, std::filesystem::path> classes;
  for (const auto& entry : std::filesystem::directory_iterator(split_dir)) {
    if (!entry.is_directory()) continue;
    int id = 0;
    if (!parse_class_dir(entry.path().filename().string(), id)) continue;
    if (!classes.emplace(id, entry.path()).second) {
      throw LoadError("duplicate class directory for class " + std::to_string(id) + " in " + split_dir.string());
    }
  }
  return classes;
}

inline Image load_resized(const std::filesystem::path& path, int side) {
  Image img = read_image(path);
  img = resize_bilinear(img, side, side);
  clamp_valid_inplace(img.values());
  return img;
}

}  // namespace detail

// Loads one split. Images are resized to side x side and clamped to [0,1].
// num_classes is the number of class directories (or, with an index file,
// one more than the largest label if that is larger).
inline LabeledDataset load_directory_dataset(const std::filesystem::path& root, const std::string& split,
                                             int side = kDefaultImageSide) {
  if (side < 1) throw ArgumentError("load_directory_dataset: side must be positive");
  const auto split_dir = root / split;
  if (!std::filesystem::is_directory(root)) throw LoadError("dataset root does not exist: " + root.string());
  if (!std::filesystem::is_directory(split_dir)) throw LoadError("dataset split directory does not exist: " + split_dir.string());

  LabeledDataset ds;
  ds.name = root.filename().string() + "/" + split;
  const auto classes = detail::class_directories(split_dir);
  const auto index_path = split_dir / "index.csv";

  if (std::filesystem::exists(index_path)) {
    std::ifstream in(index_path);
    std::string line;
    if (!std::getline(in, line) || line != kIndexHeader) {
      throw LoadError(index_path.string() + ": expected header '" + kIndexHeader + "'");
    }
    int max_label = -1;
    int line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto comma = line.rfind(',');
      if (comma == std::string::npos) throw LoadError(fmt::format("{}:{}: malformed row", index_path.string(), line_no));
      int label = -1;
      try {
        label = std::stoi(line.substr(comma + 1));
      } catch (const std::exception&) {
      }
      if (label < 0) throw LoadError(fmt::format("{}:{}: bad label", index_path.string(), line_no));
      ds.images.push_back(detail::load_resized(split_dir / line.substr(0, comma), side));
      ds.labels.push_back(label);
      max_label = std::max(max_label, label);
    }
    if (ds.images.empty()) throw LoadError(index_path.string() + " lists no images");
    ds.num_classes = std::max(static_cast<int>(classes.size()), max_label + 1);
    return ds;
  }

  if (classes.empty()) throw LoadError("no class directories under " + split_dir.string());
  int expected = 0;
  for (const auto& [id, dir] : classes) {
    if (id != expected++) throw LoadError(fmt::format("class directories under {} are not numbered 0..K-1 (found {})", split_dir.string(), id));
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.is_regular_file() && is_supported_image(entry.path())) files.push_back(entry.path());
    }
    if (files.empty()) throw LoadError("empty class directory " + dir.string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ds.images.push_back(detail::load_resized(f, side));
      ds.labels.push_back(id);
    }
  }
  ds.num_classes = static_cast<int>(classes.size());
  return ds;
}

// Writes a split in the layout above as PFM files (exact float pixels) plus
// an index.csv preserving sample order. load_directory_dataset reads it back
// bit-for-bit when the images are already side x side.
inline void export_directory_dataset(const LabeledDataset& data, const std::filesystem::path& root, const std::string& split) {
  data.validate();
  const auto split_dir = root / split;
  std::filesystem::create_directories(split_dir);
  const int width = std::max(5, static_cast<int>(std::to_string(std::max(0, data.num_classes - 1)).size()));
  for (int k = 0; k < data.num_classes; ++k) std::filesystem::create_directories(split_dir / fmt::format("{:0{}}", k, width));
  std::ofstream index(split_dir / "index.csv");
  if (!index) throw LoadError("cannot write " + (split_dir / "index.csv").string());
  index << kIndexHeader << "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string rel = fmt::format("{:0{}}/{:06}.pfm", data.labels[i], width, i);
    write_pfm(split_dir / rel, data.images[i]);
    index << rel << "," << data.labels[i] << "\n";
  }
}

}  // namespace poisonlab
