#include <filesystem>

#include <gtest/gtest.h>

#include "poisonlab/attack.hpp"
#include "poisonlab/synthetic.hpp"

using namespace poisonlab;
namespace fs = std::filesystem;

namespace {

SyntheticSplits tiny(int per_class = 4) {
  SyntheticSignSpec s;
  s.train_per_class = per_class;
  s.eval_per_class = 2;
  return generate_synthetic_signs(s);
}

AttackConfig quick(float eps_255, int rounds = 3) {
  AttackConfig c;
  c.epsilon = eps_255 / 255.0f;
  c.max_rounds = rounds;
  c.model_steps_per_round = 2;
  c.surrogate_optimizer.batch_size = 20;
  return c;
}

}  // namespace

TEST(Generate, DeltasRespectTheBoundEverywhere) {
  const auto d = tiny();
  for (auto update : {DeltaUpdate::per_pass, DeltaUpdate::per_batch}) {
    for (auto init : {DeltaInit::zeros, DeltaInit::uniform}) {
      for (float eps : {1.0f, 4.0f, 16.0f}) {
        AttackConfig c = quick(eps, 4);
        c.update = update;
        c.init = init;
        c.pgd_step_size = 8.0f / 255;  // large steps hit the boundary
        const auto p = generate(d.train, Architecture::small_cnn, c);
        ASSERT_EQ(p.deltas.size(), 10u);
        for (const auto& delta : p.deltas) {
          for (float v : delta.deltas) ASSERT_LE(std::abs(v), c.epsilon) << "eps " << eps;
        }
      }
    }
  }
}

TEST(Generate, ZeroEpsilonIsAnExactNoOp) {
  const auto d = tiny();
  AttackConfig c = quick(0.0f, 2);
  c.init = DeltaInit::uniform;
  const auto p = generate(d.train, Architecture::small_cnn, c);
  for (const auto& delta : p.deltas) {
    for (float v : delta.deltas) ASSERT_EQ(v, 0.0f);
  }
  EXPECT_EQ(apply(d.train, p).images, d.train.images);
}

TEST(Generate, SamplewiseHasOneDeltaPerSample) {
  const auto d = tiny(2);
  AttackConfig c = quick(8.0f, 2);
  c.mode = PerturbationMode::samplewise;
  const auto p = generate(d.train, Architecture::small_cnn, c);
  EXPECT_EQ(p.deltas.size(), d.train.size());
  for (const auto& delta : p.deltas) EXPECT_LE(linf_norm(delta), c.epsilon);
}

TEST(Generate, IsDeterministicUnderFixedSeed) {
  const auto d = tiny();
  const AttackConfig c = quick(16.0f, 3);
  const auto a = generate(d.train, Architecture::small_cnn, c);
  const auto b = generate(d.train, Architecture::small_cnn, c);
  EXPECT_EQ(a, b);
  AttackConfig other = c;
  other.seed = 7;
  EXPECT_NE(generate(d.train, Architecture::small_cnn, other).deltas, a.deltas);
}

TEST(Generate, ProvenanceAndObserver) {
  const auto d = tiny();
  AttackConfig c = quick(16.0f, 3);
  c.lambda_stop = 1.0;
  std::vector<std::pair<int, double>> seen;
  const auto p = generate(d.train, Architecture::small_cnn, c, [&](int r, double acc) { seen.emplace_back(r, acc); });
  EXPECT_EQ(p.provenance.surrogate, "small_cnn");
  EXPECT_EQ(p.provenance.seed, 42u);
  ASSERT_FALSE(seen.empty());
  EXPECT_EQ(p.provenance.rounds_used, seen.back().first);
  EXPECT_EQ(p.provenance.final_train_accuracy, seen.back().second);
  for (std::size_t i = 0; i < seen.size(); ++i) EXPECT_EQ(seen[i].first, static_cast<int>(i) + 1);
  if (!p.provenance.converged) EXPECT_EQ(p.provenance.rounds_used, 3);
}

TEST(Generate, StopsAsSoonAsLambdaIsReached) {
  const auto d = tiny();
  AttackConfig c = quick(16.0f, 50);
  c.lambda_stop = 0.05;  // any surrogate clears this after one round
  const auto p = generate(d.train, Architecture::small_cnn, c);
  EXPECT_TRUE(p.provenance.converged);
  EXPECT_EQ(p.provenance.rounds_used, 1);
}

TEST(Generate, RejectsMismatchedSurrogate) {
  const auto d = tiny(1);
  EXPECT_THROW(generate(d.train, build_model(Architecture::small_cnn, 5, 1), quick(8.0f)), ArgumentError);
  EXPECT_THROW(generate(LabeledDataset{}, Architecture::small_cnn, quick(8.0f)), ArgumentError);
}

TEST(Config, ValidationRejectsOutOfRangeValues) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epsilon = -0.1f;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = AttackConfig{};
  c.lambda_stop = 0.0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = AttackConfig{};
  c.max_rounds = 0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = AttackConfig{};
  c.pgd_step_size = 0.0f;
  EXPECT_THROW(c.validate(), ArgumentError);
  EXPECT_THROW(parse_delta_init("gaussian"), ArgumentError);
  EXPECT_THROW(parse_delta_update("per_epoch"), ArgumentError);
  EXPECT_EQ(parse_delta_update(to_string(DeltaUpdate::per_batch)), DeltaUpdate::per_batch);
}

TEST(Apply, AddsClassDeltaAndClamps) {
  const auto d = tiny(2);
  auto p = PerturbationSet::zeros(PerturbationMode::classwise, 10, d.train.image_shape(), 0.1f);
  for (std::size_t k = 0; k < 10; ++k) std::fill(p.deltas[k].deltas.begin(), p.deltas[k].deltas.end(), 0.01f * k);
  const auto out = apply(d.train, p);
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    const auto a = d.train.images[i].values();
    const auto b = out.images[i].values();
    const float delta = 0.01f * d.train.labels[i];
    for (std::size_t j = 0; j < a.size(); ++j) {
      ASSERT_FLOAT_EQ(b[j], std::clamp(a[j] + delta, 0.0f, 1.0f));
      ASSERT_LE(std::abs(b[j] - a[j]), p.epsilon + 1e-6f);
    }
  }
}

TEST(Apply, IsNotIdempotent) {
  const auto d = tiny(1);
  auto p = PerturbationSet::zeros(PerturbationMode::classwise, 10, d.train.image_shape(), 0.05f);
  for (auto& delta : p.deltas) std::fill(delta.deltas.begin(), delta.deltas.end(), 0.05f);
  const auto once = apply(d.train, p);
  EXPECT_NE(apply(once, p).images, once.images);
}

TEST(Apply, RejectsShapeMismatch) {
  const auto d = tiny(1);
  const auto p = PerturbationSet::zeros(PerturbationMode::classwise, 10, Shape3{3, 8, 8}, 0.05f);
  EXPECT_THROW(apply(d.train, p), ArgumentError);
  const auto s = PerturbationSet::zeros(PerturbationMode::samplewise, 3, d.train.image_shape(), 0.05f);
  EXPECT_THROW(apply(d.train, s), ArgumentError);
}

TEST(PerturbationStore, SaveLoadRoundTrip) {
  const auto d = tiny();
  const auto p = generate(d.train, Architecture::small_cnn, quick(8.0f, 2));
  const auto dir = fs::temp_directory_path() / "poisonlab_attack_store";
  fs::remove_all(dir);
  save_perturbation_set(p, dir);
  EXPECT_EQ(load_perturbation_set(dir), p);
}

TEST(Sweep, SingleRowMatchesManualPipeline) {
  const auto d = tiny();
  VictimConfig v;
  v.optimizer.epochs = 1;
  v.optimizer.batch_size = 20;
  const AttackConfig c = quick(8.0f, 2);
  const auto rows = strength_sweep(d.train, d.predict, {8.0f / 255}, c, v);
  ASSERT_EQ(rows.size(), 1u);
  const auto p = generate(d.train, Architecture::small_cnn, c);
  auto r = train(build_model(Architecture::small_cnn, 10, v.optimizer.seed), apply(d.train, p), v.optimizer);
  EXPECT_EQ(rows[0].predict_accuracy, evaluate(r.model, d.predict));
  EXPECT_EQ(rows[0].attack_train_accuracy, p.provenance.final_train_accuracy);
  EXPECT_THROW(strength_sweep(d.train, d.predict, {}, c, v), ArgumentError);
}

TEST(Sweep, RowsAreOrderedLargestEpsilonFirst) {
  const auto d = tiny(2);
  VictimConfig v;
  v.optimizer.epochs = 1;
  v.optimizer.batch_size = 20;
  const auto rows = strength_sweep(d.train, d.predict, {2.0f / 255, 8.0f / 255, 4.0f / 255}, quick(0.0f, 1), v);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_GT(rows[0].epsilon, rows[1].epsilon);
  EXPECT_GT(rows[1].epsilon, rows[2].epsilon);
}
