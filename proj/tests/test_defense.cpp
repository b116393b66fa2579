#include <gtest/gtest.h>

#include "poisonlab/defense.hpp"
#include "poisonlab/synthetic.hpp"

using namespace poisonlab;

namespace {

Image random_image(std::uint64_t seed, Shape3 s = {3, 8, 8}) {
  Image img(s);
  Rng rng = make_stream(seed, {5});
  for (float& v : img.values()) v = static_cast<float>(uniform01(rng));
  return img;
}

Image grid_image(std::uint64_t seed) {
  Image img = random_image(seed);
  for (float& v : img.values()) v = std::round(v * 16777216.0f) / 16777216.0f;
  return img;
}

SyntheticSplits tiny(int per_class) {
  SyntheticSignSpec s;
  s.train_per_class = per_class;
  s.eval_per_class = 3;
  return generate_synthetic_signs(s);
}

}  // namespace

TEST(Grayscale, ChannelsEqualLumaAndIsIdempotent) {
  const Image img = random_image(1);
  const Image g = grayscale(img);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const float luma = kLumaR * img.at(0, y, x) + kLumaG * img.at(1, y, x) + kLumaB * img.at(2, y, x);
      EXPECT_NEAR(g.at(0, y, x), luma, 1e-6);
      EXPECT_EQ(g.at(0, y, x), g.at(1, y, x));
      EXPECT_EQ(g.at(1, y, x), g.at(2, y, x));
    }
  }
  const Image gg = grayscale(g);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(gg.values()[i], g.values()[i], 1e-6);
}

TEST(Invert, IsAnInvolution) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Image img = grid_image(s);
    EXPECT_EQ(invert(invert(img)), img);
    const Image any = random_image(s + 100);
    const Image back = invert(invert(any));
    for (std::size_t i = 0; i < any.size(); ++i) ASSERT_NEAR(back.values()[i], any.values()[i], 6e-8f);
  }
  const Image img = grid_image(9);
  const Image inv = invert(img);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_FLOAT_EQ(inv.values()[i], 1.0f - img.values()[i]);
}

TEST(RandomInvert, ProbabilityEndpoints) {
  const Image img = grid_image(3);
  Rng rng = make_stream(1, {});
  EXPECT_EQ(random_invert(img, rng, 0.0), img);
  EXPECT_EQ(random_invert(img, rng, 1.0), invert(img));
}

TEST(Jitter, IdentityFactorsAreExact) {
  const Image img = random_image(4);
  EXPECT_EQ(color_jitter(img, JitterFactors{1.0, 0.0}), img);
}

TEST(Jitter, BrightnessScalesAndClamps) {
  const Image img = random_image(5);
  const Image out = color_jitter(img, JitterFactors{1.5, 0.0});
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_FLOAT_EQ(out.values()[i], std::min(1.0f, img.values()[i] * 1.5f));
}

TEST(Jitter, HueRotationPreservesSaturationAndValue) {
  const Image img = random_image(6);
  const Image out = color_jitter(img, JitterFactors{1.0, 0.25});
  const Image a = rgb_to_hsv(img), b = rgb_to_hsv(out);
  for (std::size_t i = 64; i < 192; ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-5);  // s and v planes
  // a full turn is the identity up to HSV round-off
  const Image full = color_jitter(img, JitterFactors{1.0, 1.0});
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(full.values()[i], img.values()[i], 1e-5);
}

TEST(Jitter, DrawStaysInRange) {
  Rng rng = make_stream(2, {});
  for (int i = 0; i < 200; ++i) {
    const auto f = draw_jitter(rng, 0.5, 0.3);
    EXPECT_GE(f.brightness, 0.5);
    EXPECT_LE(f.brightness, 1.5);
    EXPECT_GE(f.hue, -0.3);
    EXPECT_LE(f.hue, 0.3);
  }
}

TEST(TransformDataset, IsDeterministicAndKeepsLabels) {
  const auto d = tiny(2).train;
  for (auto kind : all_transforms()) {
    Transform t;
    t.kind = kind;
    t.invert_probability = 0.5;
    const auto a = transform_dataset(d, t, 42);
    const auto b = transform_dataset(d, t, 42);
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.labels, d.labels);
    EXPECT_EQ(a.size(), d.size());
  }
  Transform t;
  t.kind = TransformKind::color_jitter;
  EXPECT_NE(transform_dataset(d, t, 1).images, transform_dataset(d, t, 2).images);
}

TEST(Transform, ParseAndValidate) {
  for (auto k : all_transforms()) EXPECT_EQ(parse_transform(to_string(k)), k);
  EXPECT_THROW(parse_transform("blur"), ArgumentError);
  Transform t;
  t.hue_delta = 0.6;
  EXPECT_THROW(t.validate(), ArgumentError);
  t = Transform{};
  t.invert_probability = 1.5;
  EXPECT_THROW(t.validate(), ArgumentError);
}

TEST(MitigationConfig, Validation) {
  MitigationConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_DOUBLE_EQ(MitigationConfig::default_target(0.8), 0.76);
  c.transforms = {TransformKind::grayscale, TransformKind::grayscale};
  EXPECT_THROW(c.validate(), ArgumentError);
  c.transforms.clear();
  EXPECT_THROW(c.validate(), ArgumentError);
  c = MitigationConfig{};
  c.target_accuracy = 0.0;
  EXPECT_THROW(c.validate(), ArgumentError);
}

TEST(Mitigate, AccumulatesTransformedCopiesUntilTarget) {
  const auto d = tiny(4);
  MitigationConfig c;
  c.victim.optimizer.epochs = 1;
  c.victim.optimizer.batch_size = 20;
  c.target_accuracy = 1.0;  // unreachable after one epoch: every transform is used
  std::vector<MitigationStep> seen;
  const auto r = mitigate(d.train, d.predict, c, [&](const MitigationStep& s) { seen.push_back(s); });
  ASSERT_EQ(r.steps.size(), 3u);
  EXPECT_EQ(seen.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.steps[i].iteration, static_cast<int>(i) + 1);
    EXPECT_EQ(r.steps[i].train_size, (i + 1) * d.train.size());
    EXPECT_EQ(r.steps[i].transform, r.transforms_used[i]);
  }
  double best = 0.0;
  for (const auto& s : r.steps) best = std::max(best, s.predict_accuracy);
  EXPECT_EQ(r.accuracy, best);
  EXPECT_EQ(evaluate(r.model, d.predict), r.accuracy);
  if (!r.reached_target) EXPECT_LT(r.accuracy, 1.0);

  // Rerunning with the best accuracy as target stops at the first step that reached it.
  c.target_accuracy = std::max(best, 1e-6);
  std::size_t first = 0;
  while (first < r.steps.size() && r.steps[first].predict_accuracy < c.target_accuracy) ++first;
  const auto early = mitigate(d.train, d.predict, c);
  EXPECT_EQ(early.reached_target, first < r.steps.size());
  EXPECT_EQ(early.steps.size(), std::min(first + 1, r.steps.size()));
}

TEST(Pgd, StaysInsideRadiusAndValidRange) {
  const auto d = tiny(1);
  Model m = build_model(Architecture::small_cnn, 10, 3);
  std::vector<std::size_t> idx(d.train.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor clean = gather_batch(d.train, idx);
  const auto labels = gather_labels(d.train, idx);
  const float radius = 8.0f / 255;
  const Tensor adv = pgd_maximize(m, clean, labels, radius, 2.0f / 255, 10);
  for (std::size_t j = 0; j < adv.size(); ++j) {
    ASSERT_LE(std::abs(adv[j] - clean[j]), radius + 1e-6f);
    ASSERT_GE(adv[j], 0.0f);
    ASSERT_LE(adv[j], 1.0f);
  }
  const double before = cross_entropy(m.forward(clean, Mode::eval), labels);
  const double after = cross_entropy(m.forward(adv, Mode::eval), labels);
  EXPECT_GT(after, before);
  EXPECT_EQ(pgd_maximize(m, clean, labels, 0.0f, 1.0f / 255, 3).values().size(), clean.size());
}

TEST(AdvTrain, ConfigValidationAndEpochOverride) {
  ATConfig at;
  EXPECT_NO_THROW(at.validate());
  at.step_size = 2 * at.radius;
  EXPECT_THROW(at.validate(), ArgumentError);
  at = ATConfig{};
  at.pgd_steps = 0;
  EXPECT_THROW(at.validate(), ArgumentError);

  const auto d = tiny(2);
  at = ATConfig{};
  at.epochs = 2;
  at.pgd_steps = 2;
  VictimConfig v;
  v.optimizer.epochs = 9;
  v.optimizer.batch_size = 20;
  const auto r = adversarial_train(d.train, d.predict, at, v);
  EXPECT_EQ(r.log.records.size(), 2u);
  EXPECT_FALSE(std::isnan(r.log.records.back().predict_accuracy));
}
