#pragma once

// Procedural traffic-sign-like dataset for desk-scale experiments.
//
// Each class is a (shape, fill colour, glyph) template. Samples render the
// template over a random background with per-sample rotation, translation,
// brightness scaling and uniform pixel noise. Sample i of a split belongs to
// class i % num_classes, so splits are balanced and interleaved.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "poisonlab/dataset.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

struct SyntheticSignSpec {
  int num_classes = 10;
  int image_size = 32;
  int train_per_class = 200;
  int eval_per_class = 50;
  std::uint64_t seed = 42;
  double rotation_deg = 10.0;
  double translation_px = 2.0;
  double brightness_min = 0.7;
  double brightness_max = 1.3;
  double noise_amplitude = 0.05;

  void validate() const {
    if (num_classes < 1) throw ArgumentError("synthetic: num_classes must be >= 1");
    if (image_size < 8) throw ArgumentError("synthetic: image_size must be >= 8");
    if (train_per_class < 1 || eval_per_class < 1) throw ArgumentError("synthetic: samples per class must be >= 1");
    if (brightness_min <= 0.0 || brightness_max < brightness_min) throw ArgumentError("synthetic: bad brightness range");
    if (noise_amplitude < 0.0 || rotation_deg < 0.0 || translation_px < 0.0) throw ArgumentError("synthetic: negative jitter range");
  }
};

enum class SignShape { circle, triangle, octagon, square, diamond };
enum class Glyph { hbar, vbar, plus, dot, ring, cross };

struct SignTemplate {
  SignShape shape;
  Rgb fill;
  Glyph glyph;
};

namespace detail {

inline constexpr std::array<Rgb, 8> kSignPalette = {{
    {0.85f, 0.10f, 0.10f},  // red
    {0.10f, 0.25f, 0.80f},  // blue
    {0.95f, 0.85f, 0.10f},  // yellow
    {0.10f, 0.60f, 0.25f},  // green
    {0.92f, 0.92f, 0.92f},  // white
    {0.95f, 0.50f, 0.05f},  // orange
    {0.55f, 0.15f, 0.70f},  // purple
    {0.10f, 0.75f, 0.80f},  // cyan
}};

inline bool inside_shape(SignShape s, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  switch (s) {
    case SignShape::circle: return u * u + v * v <= 1.0;
    case SignShape::square: return std::max(au, av) <= 0.82;
    case SignShape::diamond: return au + av <= 1.05;
    case SignShape::octagon: return std::max({au, av, (au + av) / std::numbers::sqrt2}) <= 0.92;
    case SignShape::triangle: {
      constexpr double apothem = 0.55;
      return v <= apothem && (-0.866 * u - 0.5 * v) <= apothem && (0.866 * u - 0.5 * v) <= apothem;
    }
  }
  return false;
}

inline bool inside_glyph(Glyph g, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  const double r = std::sqrt(u * u + v * v);
  switch (g) {
    case Glyph::hbar: return au <= 0.5 && av <= 0.14;
    case Glyph::vbar: return au <= 0.14 && av <= 0.5;
    case Glyph::plus: return (au <= 0.5 && av <= 0.13) || (au <= 0.13 && av <= 0.5);
    case Glyph::dot: return r <= 0.3;
    case Glyph::ring: return r >= 0.22 && r <= 0.42;
    case Glyph::cross: return r <= 0.55 && (std::abs(u - v) <= 0.18 || std::abs(u + v) <= 0.18);
  }
  return false;
}

struct RenderJitter {
  double angle_rad = 0.0;
  double dx = 0.0, dy = 0.0;
  double brightness = 1.0;
  Rgb background{0.4f, 0.4f, 0.4f};
};

// Noise-free render with 3x3 supersampling.
inline Image render_sign(const SignTemplate& t, int size, const RenderJitter& j) {
  Image img(Shape3{3, size, size});
  const double radius = 0.36 * size;
  const double cx = size / 2.0 + j.dx, cy = size / 2.0 + j.dy;
  const double ca = std::cos(-j.angle_rad), sa = std::sin(-j.angle_rad);
  const double fill_luma = 0.299 * t.fill.r + 0.587 * t.fill.g + 0.114 * t.fill.b;
  const Rgb ink = fill_luma > 0.55 ? Rgb{0.08f, 0.08f, 0.08f} : Rgb{0.95f, 0.95f, 0.95f};
  constexpr int ss = 3;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc[3] = {0, 0, 0};
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const double px = x + (sx + 0.5) / ss - cx;
          const double py = y + (sy + 0.5) / ss - cy;
          const double u = (ca * px - sa * py) / radius;
          const double v = (sa * px + ca * py) / radius;
          Rgb c = j.background;
          if (inside_shape(t.shape, u, v)) c = inside_glyph(t.glyph, u, v) ? ink : t.fill;
          acc[0] += c.r;
          acc[1] += c.g;
          acc[2] += c.b;
        }
      }
      for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = static_cast<float>(acc[ch] / (ss * ss));
    }
  }
  return img;
}

inline double mean_abs_difference(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.values()[i] - b.values()[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace detail

// Minimum mean absolute pixel difference between any two canonical templates.
inline constexpr double kMinTemplateSeparation = 0.05;

// Canonical (jitter-free, neutral background) rendering of a template.
inline Image render_template(const SignTemplate& t, int size) { return detail::render_sign(t, size, {}); }

// Up to `count` templates with distinct (shape, colour, glyph) triples whose
// canonical renders are pairwise separated by kMinTemplateSeparation.
inline std::vector<SignTemplate> sign_templates(int count, int size = 32) {
  std::vector<SignTemplate> chosen;
  std::vector<Image> renders;
  constexpr int kShapes = 5, kColors = static_cast<int>(detail::kSignPalette.size()), kGlyphs = 6;
  // k -> (k mod 5, k mod 8, k mod 6) enumerates lcm(5,8,6) = 120 distinct triples.
  for (int k = 0; k < 120 && static_cast<int>(chosen.size()) < count; ++k) {
    SignTemplate t{static_cast<SignShape>(k % kShapes), detail::kSignPalette[k % kColors],
                   static_cast<Glyph>(k % kGlyphs)};
    Image r = render_template(t, size);
    bool ok = true;
    for (const auto& prev : renders) {
      if (detail::mean_abs_difference(prev, r) < kMinTemplateSeparation) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    chosen.push_back(t);
    renders.push_back(std::move(r));
  }
  if (static_cast<int>(chosen.size()) < count) {
    throw ArgumentError("synthetic: only " + std::to_string(chosen.size()) + " distinct sign templates available, " +
                        std::to_string(count) + " requested");
  }
  return chosen;
}

namespace detail {

inline LabeledDataset render_split(const SyntheticSignSpec& spec, const std::vector<SignTemplate>& templates,
                                   int per_class, std::uint64_t split_tag, const std::string& split_name) {
  LabeledDataset ds;
  ds.name = "synthetic-signs-s" + std::to_string(spec.seed) + "-" + split_name;
  ds.num_classes = spec.num_classes;
  const int total = per_class * spec.num_classes;
  ds.images.reserve(total);
  ds.labels.reserve(total);
  for (int i = 0; i < total; ++i) {
    const int label = i % spec.num_classes;
    Rng rng = make_stream(spec.seed, {0x5167ULL, split_tag, static_cast<std::uint64_t>(i)});
    RenderJitter j;
    j.angle_rad = uniform(rng, -spec.rotation_deg, spec.rotation_deg) * std::numbers::pi / 180.0;
    j.dx = uniform(rng, -spec.translation_px, spec.translation_px);
    j.dy = uniform(rng, -spec.translation_px, spec.translation_px);
    j.brightness = uniform(rng, spec.brightness_min, spec.brightness_max);
    j.background = Rgb{static_cast<float>(uniform(rng, 0.2, 0.6)), static_cast<float>(uniform(rng, 0.2, 0.6)),
                       static_cast<float>(uniform(rng, 0.2, 0.6))};
    Image img = render_sign(templates[label], spec.image_size, j);
    for (float& v : img.values()) {
      const double noisy = v * j.brightness + uniform(rng, -spec.noise_amplitude, spec.noise_amplitude);
      v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

}  // namespace detail

struct SyntheticSplits {
  LabeledDataset train;
  LabeledDataset predict;
};

inline SyntheticSplits generate_synthetic_signs(const SyntheticSignSpec& spec) {
  spec.validate();
  const auto templates = sign_templates(spec.num_classes, spec.image_size);
  return {detail::render_split(spec, templates, spec.train_per_class, 1, "train"),
          detail::render_split(spec, templates, spec.eval_per_class, 2, "predict")};
}

}  // namespace poisonlab
