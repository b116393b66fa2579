#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <tuple>

#include <gtest/gtest.h>

#include "poisonlab/directory_dataset.hpp"
#include "poisonlab/image_io.hpp"
#include "poisonlab/poisoning.hpp"
#include "poisonlab/synthetic.hpp"

using namespace poisonlab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("poisonlab_datasets_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SyntheticSignSpec small_spec(std::uint64_t seed = 42) {
  SyntheticSignSpec s;
  s.seed = seed;
  s.train_per_class = 6;
  s.eval_per_class = 3;
  return s;
}

PerturbationSet signed_set(int classes, Shape3 shape, float eps, std::uint64_t seed) {
  auto p = PerturbationSet::zeros(PerturbationMode::classwise, classes, shape, eps);
  Rng rng = make_stream(seed, {7});
  for (auto& d : p.deltas) {
    for (float& v : d.deltas) v = uniform01(rng) < 0.5 ? -eps : eps;
  }
  return p;
}

}  // namespace

TEST(Synthetic, SameSeedGivesIdenticalDatasets) {
  const auto a = generate_synthetic_signs(small_spec());
  const auto b = generate_synthetic_signs(small_spec());
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.predict, b.predict);
  const auto c = generate_synthetic_signs(small_spec(43));
  EXPECT_NE(dataset_hash(a.train), dataset_hash(c.train));
}

TEST(Synthetic, SizesLabelsAndRange) {
  SyntheticSignSpec s;
  s.num_classes = 10;
  s.train_per_class = 200;
  s.eval_per_class = 2;
  const auto d = generate_synthetic_signs(s);
  EXPECT_EQ(d.train.size(), 2000u);
  EXPECT_EQ(d.predict.size(), 20u);
  EXPECT_EQ(d.train.num_classes, 10);
  EXPECT_NO_THROW(d.train.validate());
  std::vector<int> counts(10, 0);
  for (int y : d.train.labels) ++counts[y];
  for (int c : counts) EXPECT_EQ(c, 200);
  for (const auto& img : d.train.images) {
    ASSERT_EQ(img.shape(), (Shape3{3, 32, 32}));
    for (float v : img.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Synthetic, TrainAndPredictStreamsAreDisjoint) {
  const auto d = generate_synthetic_signs(small_spec());
  for (const auto& p : d.predict.images) {
    for (const auto& t : d.train.images) ASSERT_NE(p, t);
  }
}

TEST(Synthetic, TemplatesAreDistinctAndSeparated) {
  const auto t = sign_templates(10);
  std::set<std::tuple<int, float, float, float, int>> seen;
  for (const auto& s : t) seen.insert({static_cast<int>(s.shape), s.fill.r, s.fill.g, s.fill.b, static_cast<int>(s.glyph)});
  EXPECT_EQ(seen.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t j = i + 1; j < t.size(); ++j) {
      EXPECT_GE(detail::mean_abs_difference(render_template(t[i], 32), render_template(t[j], 32)), kMinTemplateSeparation);
    }
  }
}

TEST(Synthetic, ClassMeansAreSeparated) {
  SyntheticSignSpec s;
  s.train_per_class = 20;
  s.eval_per_class = 1;
  const auto d = generate_synthetic_signs(s);
  std::vector<std::vector<double>> mean(10, std::vector<double>(3 * 32 * 32, 0.0));
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    const auto v = d.train.images[i].values();
    for (std::size_t k = 0; k < v.size(); ++k) mean[d.train.labels[i]][k] += v[k] / 20.0;
  }
  for (int a = 0; a < 10; ++a) {
    for (int b = a + 1; b < 10; ++b) {
      double diff = 0.0;
      for (std::size_t k = 0; k < mean[a].size(); ++k) diff += std::abs(mean[a][k] - mean[b][k]);
      EXPECT_GE(diff / mean[a].size(), 0.05) << a << " vs " << b;
    }
  }
}

TEST(Synthetic, TooManyClassesIsAnArgumentError) {
  SyntheticSignSpec s = small_spec();
  s.num_classes = 500;
  EXPECT_THROW(generate_synthetic_signs(s), ArgumentError);
  s.num_classes = 0;
  EXPECT_THROW(generate_synthetic_signs(s), ArgumentError);
}

TEST(DirectoryDataset, ExportThenReloadIsBitIdentical) {
  const auto root = temp_dir("roundtrip");
  const auto d = generate_synthetic_signs(small_spec());
  export_directory_dataset(d.train, root, "train");
  export_directory_dataset(d.predict, root, "predict");
  const auto train = load_directory_dataset(root, "train");
  const auto predict = load_directory_dataset(root, "predict");
  EXPECT_EQ(train.images, d.train.images);
  EXPECT_EQ(train.labels, d.train.labels);
  EXPECT_EQ(train.num_classes, d.train.num_classes);
  EXPECT_EQ(dataset_hash(predict), dataset_hash(d.predict));
}

TEST(DirectoryDataset, ClassDirectoriesWithoutIndex) {
  const auto root = temp_dir("classdirs");
  for (int c = 0; c < 3; ++c) {
    fs::create_directories(root / "train" / fmt::format("{:05d}", c));
    for (int i = 0; i < 2; ++i) {
      write_png(root / "train" / fmt::format("{:05d}", c) / fmt::format("img{}.png", i), Image(Shape3{3, 40, 48}, 0.1f * (c + 1)));
    }
  }
  const auto ds = load_directory_dataset(root, "train", 32);
  EXPECT_EQ(ds.num_classes, 3);
  ASSERT_EQ(ds.size(), 6u);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 0, 1, 1, 2, 2}));
  EXPECT_EQ(ds.image_shape(), (Shape3{3, 32, 32}));
  EXPECT_NEAR(ds.images[5].at(1, 10, 10), 0.3f, 1.0 / 255);
}

TEST(DirectoryDataset, LoadErrors) {
  const auto root = temp_dir("errors");
  EXPECT_THROW(load_directory_dataset(root / "nope", "train"), LoadError);
  EXPECT_THROW(load_directory_dataset(root, "train"), LoadError);
  fs::create_directories(root / "train" / "00000");
  EXPECT_THROW(load_directory_dataset(root, "train"), LoadError);  // empty class dir
  write_png(root / "train" / "00000" / "a.png", Image(Shape3{3, 4, 4}, 0.5f));
  fs::create_directories(root / "train" / "00002");
  write_png(root / "train" / "00002" / "a.png", Image(Shape3{3, 4, 4}, 0.5f));
  EXPECT_THROW(load_directory_dataset(root, "train"), LoadError);  // gap in class ids
}

TEST(Poisoning, CountIsRoundedProportion) {
  EXPECT_EQ(poison_count(1.0, 2000), 2000u);
  EXPECT_EQ(poison_count(0.95, 2000), 1900u);
  EXPECT_EQ(poison_count(0.5, 3), 2u);
  EXPECT_EQ(poison_count(0.0, 10), 0u);
  EXPECT_THROW(choose_poison_indices(10, 1.5, 1), ArgumentError);
}

TEST(Poisoning, IndicesAreSortedDistinctAndSeeded) {
  const auto a = choose_poison_indices(1000, 0.3, 42);
  EXPECT_EQ(a.size(), 300u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), a.size());
  EXPECT_EQ(a, choose_poison_indices(1000, 0.3, 42));
  EXPECT_NE(a, choose_poison_indices(1000, 0.3, 43));
}

TEST(Poisoning, MixTouchesExactlyTheChosenIndices) {
  const auto d = generate_synthetic_signs(small_spec());
  const auto pset = signed_set(10, d.train.image_shape(), 8.0f / 255, 1);
  const auto mixed = mix_poison(d.train, pset, 0.5, 42);
  const std::set<std::size_t> chosen(mixed.manifest.poisoned_indices.begin(), mixed.manifest.poisoned_indices.end());
  EXPECT_EQ(chosen.size(), poison_count(0.5, d.train.size()));
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    if (chosen.count(i)) {
      EXPECT_NE(mixed.dataset.images[i], d.train.images[i]);
    } else {
      EXPECT_EQ(mixed.dataset.images[i], d.train.images[i]);
    }
  }
  EXPECT_EQ(mixed.dataset.labels, d.train.labels);
}

TEST(Poisoning, SaveLoadRoundTrip) {
  const auto root = temp_dir("save");
  const auto d = generate_synthetic_signs(small_spec());
  const auto pset = signed_set(10, d.train.image_shape(), 16.0f / 255, 2);
  const auto mixed = mix_poison(d.train, pset, 0.75, 42);
  save_poisoned(mixed, pset, root);
  const auto back = load_poisoned(root);
  EXPECT_EQ(back.dataset.images, mixed.dataset.images);
  EXPECT_EQ(back.dataset.labels, mixed.dataset.labels);
  EXPECT_EQ(back.manifest, mixed.manifest);
  EXPECT_EQ(back.perturbation, pset);
}

TEST(Poisoning, TamperedDataIsAnIntegrityError) {
  const auto root = temp_dir("tamper");
  const auto d = generate_synthetic_signs(small_spec());
  const auto pset = signed_set(10, d.train.image_shape(), 16.0f / 255, 2);
  const auto mixed = mix_poison(d.train, pset, 1.0, 42);
  save_poisoned(mixed, pset, root);

  // Overwrite one stored image with a modified copy.
  std::ifstream idx(root / "train" / "index.csv");
  std::string line;
  std::getline(idx, line);
  std::getline(idx, line);
  const fs::path first = root / "train" / line.substr(0, line.rfind(','));
  Image img = read_image(first);
  img.at(0, 0, 0) = img.at(0, 0, 0) > 0.5f ? 0.0f : 1.0f;
  write_pfm(first, img);
  EXPECT_THROW(load_poisoned(root), IntegrityError);
}

TEST(Poisoning, TamperedManifestIsAnIntegrityError) {
  const auto root = temp_dir("tamper_manifest");
  const auto d = generate_synthetic_signs(small_spec());
  const auto pset = signed_set(10, d.train.image_shape(), 16.0f / 255, 2);
  save_poisoned(mix_poison(d.train, pset, 0.5, 42), pset, root);
  nlohmann::json j;
  std::ifstream(root / "manifest.json") >> j;
  auto idx = j["poisoned_indices"].get<std::vector<std::size_t>>();
  idx.back() = (idx.back() + 1) % d.train.size();
  j["poisoned_indices"] = idx;
  std::ofstream(root / "manifest.json") << j.dump();
  EXPECT_THROW(load_poisoned(root), IntegrityError);
}

TEST(Poisoning, ShapeOrClassMismatchIsRejected) {
  const auto d = generate_synthetic_signs(small_spec());
  EXPECT_THROW(mix_poison(d.train, signed_set(10, Shape3{3, 16, 16}, 0.1f, 1), 1.0, 1), ArgumentError);
  EXPECT_THROW(mix_poison(d.train, signed_set(4, d.train.image_shape(), 0.1f, 1), 1.0, 1), ArgumentError);
}
