#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "poisonlab/errors.hpp"
#include "poisonlab/imageops.hpp"

namespace poisonlab {

// Eigen's vectorized reductions peel a scalar head whose length depends on the
// pointer's alignment, so buffers must be aligned identically on every run for
// sums to be bit-reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

// NCHW. Dense layers use (N, features, 1, 1).
struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 1;
  int w = 1;

  std::size_t size() const { return static_cast<std::size_t>(n) * per_sample(); }
  std::size_t per_sample() const {
    return static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  friend bool operator==(const Shape4&, const Shape4&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) +
           ")";
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 shape, float fill = 0.0f) : shape_(shape), data_(shape.size(), fill) {}

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  std::span<float> sample(int i) { return values().subspan(i * shape_.per_sample(), shape_.per_sample()); }
  std::span<const float> sample(int i) const {
    return values().subspan(i * shape_.per_sample(), shape_.per_sample());
  }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  void reshape(Shape4 s) {
    if (s.size() != data_.size()) throw ArgumentError("Tensor::reshape: size mismatch " + shape_.str() + " -> " + s.str());
    shape_ = s;
  }

  Tensor& operator+=(const Tensor& other) {
    if (other.size() != size()) throw ArgumentError("Tensor +=: size mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape4 shape_{};
  FloatBuffer data_;
};

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Stacks images into one batch tensor.
inline Tensor stack_images(std::span<const Image* const> images) {
  if (images.empty()) throw ArgumentError("stack_images: empty batch");
  const Shape3 s = images.front()->shape();
  Tensor out(Shape4{static_cast<int>(images.size()), s.channels, s.height, s.width});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i]->shape() == s)) throw ArgumentError("stack_images: mixed image shapes");
    auto src = images[i]->values();
    std::copy(src.begin(), src.end(), out.sample(static_cast<int>(i)).begin());
  }
  return out;
}

inline Image image_from_sample(const Tensor& batch, int i) {
  const auto& s = batch.shape();
  auto src = batch.sample(i);
  return Image(Shape3{s.c, s.h, s.w}, std::vector<float>(src.begin(), src.end()));
}

}  // namespace poisonlab
