#pragma once

// Defenses against error-minimizing poisons.
//
// Transforms: grayscale, colour jitter (brightness then hue) and random
// inversion. mitigate() trains on an accumulating union of transformed copies
// of the poisoned set, one new transform per iteration, until the clean
// prediction accuracy reaches the target. adversarial_train() is the PGD
// adversarial-training baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "poisonlab/attack.hpp"
#include "poisonlab/dataset.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/imageops.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/training.hpp"

namespace poisonlab {

enum class TransformKind { grayscale, color_jitter, random_invert };

inline std::string to_string(TransformKind k) {
  switch (k) {
    case TransformKind::grayscale: return "grayscale";
    case TransformKind::color_jitter: return "jitter";
    case TransformKind::random_invert: return "invert";
  }
  return "?";
}

inline TransformKind parse_transform(const std::string& s) {
  if (s == "grayscale" || s == "gray") return TransformKind::grayscale;
  if (s == "jitter" || s == "color_jitter") return TransformKind::color_jitter;
  if (s == "invert" || s == "random_invert") return TransformKind::random_invert;
  throw ArgumentError("unknown transform '" + s + "' (expected grayscale, jitter or invert)");
}

inline const std::vector<TransformKind>& all_transforms() {
  static const std::vector<TransformKind> all = {TransformKind::grayscale, TransformKind::color_jitter,
                                                 TransformKind::random_invert};
  return all;
}

struct Transform {
  TransformKind kind = TransformKind::grayscale;
  double brightness_delta = 0.5;  // jitter: b ~ U[1 - d, 1 + d]
  double hue_delta = 0.3;         // jitter: h ~ U[-d, d], in turns
  double invert_probability = 1.0;

  void validate() const {
    if (!(brightness_delta >= 0.0 && brightness_delta <= 1.0)) throw ArgumentError("jitter brightness delta must be in [0, 1]");
    if (!(hue_delta >= 0.0 && hue_delta <= 0.5)) throw ArgumentError("jitter hue delta must be in [0, 0.5]");
    if (!(invert_probability >= 0.0 && invert_probability <= 1.0)) throw ArgumentError("invert probability must be in [0, 1]");
  }
};

inline constexpr float kLumaR = 0.299f, kLumaG = 0.587f, kLumaB = 0.114f;

// BT.601 luma replicated into all three channels. Pixels that are already
// grey are copied unchanged, which makes the transform exactly idempotent.
inline Image grayscale(const Image& image) {
  if (image.shape().channels != 3) throw ArgumentError("grayscale: expected 3 channels");
  Image out(image.shape());
  auto r = image.channel(0), g = image.channel(1), b = image.channel(2);
  auto r2 = out.channel(0), g2 = out.channel(1), b2 = out.channel(2);
  for (std::size_t i = 0; i < r.size(); ++i) {
    float y = r[i];
    if (!(r[i] == g[i] && g[i] == b[i])) y = std::clamp(kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i], 0.0f, 1.0f);
    r2[i] = g2[i] = b2[i] = y;
  }
  return out;
}

struct JitterFactors {
  double brightness = 1.0;
  double hue = 0.0;
};

// clamp(b * x), then rotate hue by h turns. A stage whose factor is the
// identity (b == 1, h == 0) is skipped, so the identity case is exact.
inline Image color_jitter(const Image& image, JitterFactors f) {
  if (image.shape().channels != 3) throw ArgumentError("color_jitter: expected 3 channels");
  Image out = image;
  if (f.brightness != 1.0) {
    const float b = static_cast<float>(f.brightness);
    for (float& v : out.values()) v = std::clamp(v * b, 0.0f, 1.0f);
  }
  if (f.hue != 0.0) {
    const float h = static_cast<float>(f.hue);
    auto r = out.channel(0), g = out.channel(1), bl = out.channel(2);
    for (std::size_t i = 0; i < r.size(); ++i) {
      Hsv p = rgb_to_hsv(Rgb{r[i], g[i], bl[i]});
      if (p.s <= 0.0f) continue;
      p.h += h;
      p.h -= std::floor(p.h);
      const Rgb q = hsv_to_rgb(p);
      r[i] = std::clamp(q.r, 0.0f, 1.0f);
      g[i] = std::clamp(q.g, 0.0f, 1.0f);
      bl[i] = std::clamp(q.b, 0.0f, 1.0f);
    }
  }
  return out;
}

inline JitterFactors draw_jitter(Rng& rng, double brightness_delta = 0.5, double hue_delta = 0.3) {
  JitterFactors f;
  f.brightness = uniform(rng, 1.0 - brightness_delta, 1.0 + brightness_delta);
  f.hue = uniform(rng, -hue_delta, hue_delta);
  return f;
}

inline Image color_jitter(const Image& image, Rng& rng, double brightness_delta = 0.5, double hue_delta = 0.3) {
  return color_jitter(image, draw_jitter(rng, brightness_delta, hue_delta));
}

// 1 - x on every component. invert(invert(x)) == x exactly for x on the 2^-24
// grid; elsewhere in [0, 1] it is off by at most one rounding of 1 - x.
inline Image invert(const Image& image) {
  Image out = image;
  for (float& v : out.values()) v = 1.0f - v;
  return out;
}

// Inverts with the given probability; one uniform draw per call either way.
inline Image random_invert(const Image& image, Rng& rng, double probability = 1.0) {
  const bool flip = uniform01(rng) < probability;
  return flip ? invert(image) : image;
}

inline Image apply_transform(const Image& image, const Transform& t, Rng& rng) {
  switch (t.kind) {
    case TransformKind::grayscale: return grayscale(image);
    case TransformKind::color_jitter: return color_jitter(image, rng, t.brightness_delta, t.hue_delta);
    case TransformKind::random_invert: return random_invert(image, rng, t.invert_probability);
  }
  return image;
}

// Image i uses its own stream derived from (seed, transform kind, i).
inline LabeledDataset transform_dataset(const LabeledDataset& data, const Transform& t, std::uint64_t seed) {
  t.validate();
  LabeledDataset out;
  out.name = data.name + "+" + to_string(t.kind);
  out.num_classes = data.num_classes;
  out.labels = data.labels;
  out.images.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng = make_stream(seed, {0x7F0ULL, static_cast<std::uint64_t>(t.kind), static_cast<std::uint64_t>(i)});
    out.images.push_back(apply_transform(data.images[i], t, rng));
  }
  return out;
}

struct MitigationConfig {
  std::vector<TransformKind> transforms = all_transforms();
  double target_accuracy = 0.95;  // alpha; usually 0.95 x the clean baseline
  VictimConfig victim;
  Transform params;  // jitter and invert parameters; kind is ignored
  std::uint64_t seed = 42;

  static double default_target(double clean_baseline) { return 0.95 * clean_baseline; }

  void validate() const {
    if (transforms.empty()) throw ArgumentError("mitigate: transform set is empty");
    for (std::size_t i = 0; i < transforms.size(); ++i) {
      for (std::size_t j = i + 1; j < transforms.size(); ++j) {
        if (transforms[i] == transforms[j]) throw ArgumentError("mitigate: transform '" + to_string(transforms[i]) + "' listed twice");
      }
    }
    if (!(target_accuracy > 0.0 && target_accuracy <= 1.0)) throw ArgumentError("mitigate: target accuracy must be in (0, 1]");
    params.validate();
    victim.optimizer.validate();
  }
};

struct MitigationStep {
  int iteration = 0;
  TransformKind transform = TransformKind::grayscale;
  std::size_t train_size = 0;
  double predict_accuracy = 0.0;
};

struct MitigationResult {
  Model model;    // final model if the target was reached, else the best one
  MetricsLog log;  // training log of `model`
  std::vector<TransformKind> transforms_used;
  std::vector<MitigationStep> steps;
  bool reached_target = false;
  double accuracy = 0.0;  // clean prediction accuracy of `model`
};

inline void write_mitigation_csv(const std::vector<MitigationStep>& steps, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "iteration,transform,train_size,predict_acc\n";
  for (const auto& s : steps) out << fmt::format("{},{},{},{:.6f}\n", s.iteration, to_string(s.transform), s.train_size, s.predict_accuracy);
}

using MitigationObserver = std::function<void(const MitigationStep&)>;

// The accumulated training set starts empty, so the untransformed poisoned
// set is never trained on directly. A fresh victim is trained every
// iteration.
inline MitigationResult mitigate(const LabeledDataset& poisoned, const LabeledDataset& clean_eval,
                                 const MitigationConfig& cfg, const MitigationObserver& observer = {}) {
  cfg.validate();
  if (poisoned.empty()) throw ArgumentError("mitigate: poisoned dataset is empty");
  if (clean_eval.empty()) throw ArgumentError("mitigate: clean evaluation set is empty");

  std::vector<TransformKind> order = cfg.transforms;
  Rng rng = make_stream(cfg.seed, {0xA160ULL});
  shuffle(order, rng);

  MitigationResult best;
  bool have_best = false;
  LabeledDataset accumulated;
  accumulated.name = poisoned.name + "+mitigation";
  accumulated.num_classes = poisoned.num_classes;
  std::vector<TransformKind> used;
  std::vector<MitigationStep> steps;
  for (std::size_t i = 0; i < order.size(); ++i) {
    Transform t = cfg.params;
    t.kind = order[i];
    LabeledDataset transformed = transform_dataset(poisoned, t, cfg.seed);
    accumulated.images.insert(accumulated.images.end(), std::make_move_iterator(transformed.images.begin()),
                              std::make_move_iterator(transformed.images.end()));
    accumulated.labels.insert(accumulated.labels.end(), transformed.labels.begin(), transformed.labels.end());
    used.push_back(t.kind);

    Model fresh = build_model(cfg.victim.architecture, poisoned.num_classes, cfg.victim.optimizer.seed, poisoned.image_shape());
    TrainResult tr = train(std::move(fresh), accumulated, cfg.victim.optimizer, &clean_eval);
    const double v = evaluate(tr.model, clean_eval);
    steps.push_back({static_cast<int>(i) + 1, t.kind, accumulated.size(), v});
    if (observer) observer(steps.back());

    if (!have_best || v > best.accuracy) {
      best.model = std::move(tr.model);
      best.log = std::move(tr.log);
      best.accuracy = v;
      have_best = true;
    }
    if (v >= cfg.target_accuracy) {
      best.reached_target = true;
      break;
    }
  }
  best.transforms_used = std::move(used);
  best.steps = std::move(steps);
  return best;
}

struct ATConfig {
  float radius = 8.0f / 255.0f;
  float step_size = 0.8f / 255.0f;
  int pgd_steps = 10;
  int epochs = 20;

  void validate() const {
    if (!(radius >= 0.0f && radius <= 1.0f)) throw ArgumentError("advtrain: radius must be in [0, 1]");
    if (!(step_size > 0.0f)) throw ArgumentError("advtrain: step size must be > 0");
    if (step_size > radius) throw ArgumentError("advtrain: step size must not exceed the radius");
    if (pgd_steps < 1) throw ArgumentError("advtrain: pgd_steps must be >= 1");
    if (epochs < 1) throw ArgumentError("advtrain: epochs must be >= 1");
  }
};

// Loss-maximizing PGD from a zero start: `steps` signed ascent steps, each
// followed by projection onto the radius ball around `clean` and onto [0,1].
// Parameters are held fixed (eval mode).
inline Tensor pgd_maximize(Model& model, const Tensor& clean, std::span<const int> labels, float radius, float step,
                           int steps) {
  Tensor adv = clean;
  for (int s = 0; s < steps; ++s) {
    const Tensor g = grad_wrt_input_inplace(model, adv, labels, Mode::eval);
    for (std::size_t j = 0; j < adv.size(); ++j) {
      const float gj = g[j];
      float v = adv[j] + step * static_cast<float>((gj > 0.0f) - (gj < 0.0f));
      v = std::clamp(v, clean[j] - radius, clean[j] + radius);
      adv[j] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return adv;
}

// Standard PGD adversarial training; the victim's optimizer settings apply
// except for the epoch count, which comes from `at`.
inline TrainResult adversarial_train(const LabeledDataset& poisoned, const LabeledDataset& clean_eval, const ATConfig& at,
                                     const VictimConfig& victim, const EpochObserver& observer = {}) {
  at.validate();
  if (poisoned.empty()) throw ArgumentError("advtrain: poisoned dataset is empty");
  OptimizerConfig opt = victim.optimizer;
  opt.epochs = at.epochs;
  Model model = build_model(victim.architecture, poisoned.num_classes, opt.seed, poisoned.image_shape());
  const BatchHook craft = [&at](Model& m, Tensor& batch, std::span<const int> labels) {
    batch = pgd_maximize(m, batch, labels, at.radius, at.step_size, at.pgd_steps);
  };
  return train(std::move(model), poisoned, opt, clean_eval.empty() ? nullptr : &clean_eval, craft, observer);
}

}  // namespace poisonlab
