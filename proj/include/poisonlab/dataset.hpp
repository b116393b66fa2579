#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "poisonlab/errors.hpp"
#include "poisonlab/imageops.hpp"
#include "poisonlab/tensor.hpp"

namespace poisonlab {

struct LabeledDataset {
  std::string name;
  int num_classes = 0;
  std::vector<Image> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  Shape3 image_shape() const { return images.empty() ? Shape3{} : images.front().shape(); }

  void validate() const {
    if (num_classes <= 0) throw ArgumentError("dataset '" + name + "': num_classes must be positive");
    if (images.size() != labels.size()) throw ArgumentError("dataset '" + name + "': images/labels length mismatch");
    const Shape3 s = image_shape();
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (!(images[i].shape() == s)) throw ArgumentError("dataset '" + name + "': mixed image shapes");
      if (labels[i] < 0 || labels[i] >= num_classes) {
        throw ArgumentError("dataset '" + name + "': label " + std::to_string(labels[i]) + " out of range");
      }
    }
  }

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

inline Tensor gather_batch(const LabeledDataset& data, std::span<const std::size_t> indices) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(indices.size());
  for (auto i : indices) ptrs.push_back(&data.images[i]);
  return stack_images(ptrs);
}

inline std::vector<int> gather_labels(const LabeledDataset& data, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(data.labels[i]);
  return out;
}

// FNV-1a over raw bytes; used for content fingerprints, not security.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
  void update_value(const T& v) {
    update(&v, sizeof(T));
  }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = kDigits[v & 0xF];
  return s;
}

inline std::uint64_t dataset_hash(const LabeledDataset& data) {
  Fnv1a h;
  h.update_value(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto px = data.images[i].values();
    h.update(px.data(), px.size_bytes());
    h.update_value(data.labels[i]);
  }
  return h.digest();
}

}  // namespace poisonlab
