#pragma once

// Pixel-domain primitives shared by the attack and the transforms: L-inf
// projection, clamping to the valid box, and RGB <-> HSV.
//
// Images are channels-first float32 in [0, 1]. Hue is a fraction of a full
// turn, so H = 1/3 is green.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "poisonlab/errors.hpp"

namespace poisonlab {

struct Shape3 {
  int channels = 3;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

class Image {
 public:
  Image() = default;
  explicit Image(Shape3 shape, float fill = 0.0f) : shape_(shape), pixels_(shape.size(), fill) {}
  Image(Shape3 shape, std::vector<float> pixels) : shape_(shape), pixels_(std::move(pixels)) {
    if (pixels_.size() != shape_.size()) throw ArgumentError("Image: pixel count does not match shape");
  }

  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return pixels_.size(); }

  float& at(int c, int y, int x) { return pixels_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return pixels_[index(c, y, x)]; }

  std::span<float> values() { return pixels_; }
  std::span<const float> values() const { return pixels_; }
  std::span<float> channel(int c) { return std::span<float>(pixels_).subspan(c * shape_.plane(), shape_.plane()); }
  std::span<const float> channel(int c) const {
    return std::span<const float>(pixels_).subspan(c * shape_.plane(), shape_.plane());
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  Shape3 shape_{};
  std::vector<float> pixels_;
};

// Additive noise with an L-inf budget.
struct Perturbation {
  Shape3 shape{};
  std::vector<float> deltas;
  float bound = 0.0f;

  static Perturbation zeros(Shape3 s, float bound) { return {s, std::vector<float>(s.size(), 0.0f), bound}; }
  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

inline float linf_norm(std::span<const float> values) {
  float m = 0.0f;
  for (float v : values) m = std::max(m, std::fabs(v));
  return m;
}

inline float linf_norm(const Perturbation& delta) { return linf_norm(delta.deltas); }

// In-place clip of every component to [-eps, eps].
inline void project_linf_inplace(std::span<float> values, float eps) {
  if (!(eps >= 0.0f)) throw ArgumentError("project_linf: eps must be >= 0");
  for (float& v : values) {
    v = std::clamp(v, -eps, eps);
    if (v == 0.0f) v = 0.0f;  // drop -0
  }
}

inline Perturbation project_linf(const Perturbation& delta, float eps) {
  Perturbation out = delta;
  project_linf_inplace(out.deltas, eps);
  out.bound = eps;
  return out;
}

inline void clamp_valid_inplace(std::span<float> values) {
  for (float& v : values) v = std::clamp(v, 0.0f, 1.0f);
}

inline Image clamp_valid(Image image) {
  clamp_valid_inplace(image.values());
  return image;
}

// clamp_valid(x + delta).
inline Image add_perturbation(const Image& image, std::span<const float> delta) {
  if (delta.size() != image.size()) throw ArgumentError("add_perturbation: shape mismatch");
  Image out = image;
  auto px = out.values();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = std::clamp(px[i] + delta[i], 0.0f, 1.0f);
  return out;
}

struct Rgb {
  float r, g, b;
};
struct Hsv {
  float h, s, v;
};

inline Hsv rgb_to_hsv(Rgb p) {
  const float maxc = std::max({p.r, p.g, p.b});
  const float minc = std::min({p.r, p.g, p.b});
  const float range = maxc - minc;
  Hsv out{0.0f, 0.0f, maxc};
  if (range <= 0.0f) return out;
  out.s = range / maxc;
  float h;
  if (maxc == p.r) {
    h = (p.g - p.b) / range;
  } else if (maxc == p.g) {
    h = 2.0f + (p.b - p.r) / range;
  } else {
    h = 4.0f + (p.r - p.g) / range;
  }
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
  if (h >= 1.0f) h -= 1.0f;
  out.h = h;
  return out;
}

inline Rgb hsv_to_rgb(Hsv p) {
  if (p.s <= 0.0f) return {p.v, p.v, p.v};
  float h6 = (p.h - std::floor(p.h)) * 6.0f;
  if (h6 >= 6.0f) h6 = 0.0f;
  const int sector = static_cast<int>(h6);
  const float f = h6 - static_cast<float>(sector);
  const float a = p.v * (1.0f - p.s);
  const float b = p.v * (1.0f - p.s * f);
  const float c = p.v * (1.0f - p.s * (1.0f - f));
  switch (sector) {
    case 0: return {p.v, c, a};
    case 1: return {b, p.v, a};
    case 2: return {a, p.v, c};
    case 3: return {a, b, p.v};
    case 4: return {c, a, p.v};
    default: return {p.v, a, b};
  }
}

// Channels of the result are (H, S, V).
inline Image rgb_to_hsv(const Image& image) {
  if (image.shape().channels != 3) throw ArgumentError("rgb_to_hsv: expected 3 channels");
  Image out(image.shape());
  auto r = image.channel(0), g = image.channel(1), b = image.channel(2);
  auto h = out.channel(0), s = out.channel(1), v = out.channel(2);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const Hsv p = rgb_to_hsv(Rgb{r[i], g[i], b[i]});
    h[i] = p.h;
    s[i] = p.s;
    v[i] = p.v;
  }
  return out;
}

inline Image hsv_to_rgb(const Image& hsv) {
  if (hsv.shape().channels != 3) throw ArgumentError("hsv_to_rgb: expected 3 channels");
  Image out(hsv.shape());
  auto h = hsv.channel(0), s = hsv.channel(1), v = hsv.channel(2);
  auto r = out.channel(0), g = out.channel(1), b = out.channel(2);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const Rgb p = hsv_to_rgb(Hsv{h[i], s[i], v[i]});
    r[i] = p.r;
    g[i] = p.g;
    b[i] = p.b;
  }
  return out;
}

}  // namespace poisonlab
