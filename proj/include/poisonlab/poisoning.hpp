#pragma once

// Mixing a perturbation set into part of a clean dataset, and persisting the
// result so that it can be reloaded and checked against its manifest.
//
// Saved layout:
//   <root>/manifest.json
//   <root>/perturbation.json, <root>/deltas/*.bin
//   <root>/train/<class_id>/<index>.pfm, <root>/train/index.csv

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "poisonlab/dataset.hpp"
#include "poisonlab/directory_dataset.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/perturbation.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

struct PoisonManifest {
  std::string source_dataset_id;
  std::string perturbation_ref = "perturbation.json";
  PerturbationMode mode = PerturbationMode::classwise;
  float epsilon = 0.0f;
  double poison_proportion = 0.0;
  std::uint64_t seed = 42;
  std::vector<std::size_t> poisoned_indices;  // sorted
  std::size_t dataset_size = 0;
  std::string dataset_hash;  // of the poisoned dataset

  friend bool operator==(const PoisonManifest&, const PoisonManifest&) = default;
};

struct PoisonedDataset {
  LabeledDataset dataset;
  PoisonManifest manifest;
};

inline std::size_t poison_count(double proportion, std::size_t n) {
  return static_cast<std::size_t>(std::llround(proportion * static_cast<double>(n)));
}

// round(proportion * n) distinct indices drawn uniformly without replacement,
// returned sorted. Depends only on (n, proportion, seed).
inline std::vector<std::size_t> choose_poison_indices(std::size_t n, double proportion, std::uint64_t seed) {
  if (!(proportion >= 0.0 && proportion <= 1.0)) throw ArgumentError("poison proportion must be in [0, 1]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, {0x9015ULL, static_cast<std::uint64_t>(n)});
  shuffle(order, rng);
  order.resize(poison_count(proportion, n));
  std::sort(order.begin(), order.end());
  return order;
}

inline PoisonedDataset mix_poison(const LabeledDataset& clean, const PerturbationSet& pset, double proportion,
                                  std::uint64_t seed) {
  clean.validate();
  if (!clean.empty() && !(clean.image_shape() == pset.shape)) throw ArgumentError("mix_poison: perturbation shape does not match dataset");
  if (pset.mode == PerturbationMode::classwise && static_cast<int>(pset.deltas.size()) < clean.num_classes) {
    throw ArgumentError("mix_poison: classwise perturbation has fewer classes than the dataset");
  }
  if (pset.mode == PerturbationMode::samplewise && pset.deltas.size() != clean.size()) {
    throw ArgumentError("mix_poison: samplewise perturbation count does not match dataset size");
  }
  PoisonedDataset out;
  out.dataset = clean;
  out.manifest.poisoned_indices = choose_poison_indices(clean.size(), proportion, seed);
  for (std::size_t i : out.manifest.poisoned_indices) {
    out.dataset.images[i] = add_perturbation(clean.images[i], pset.for_sample(i, clean.labels[i]).deltas);
  }
  out.manifest.source_dataset_id = clean.name + "@" + hex64(dataset_hash(clean));
  out.manifest.mode = pset.mode;
  out.manifest.epsilon = pset.epsilon;
  out.manifest.poison_proportion = proportion;
  out.manifest.seed = seed;
  out.manifest.dataset_size = clean.size();
  out.manifest.dataset_hash = hex64(dataset_hash(out.dataset));
  return out;
}

inline nlohmann::json to_json(const PoisonManifest& m) {
  return {{"source_dataset_id", m.source_dataset_id},
          {"perturbation_ref", m.perturbation_ref},
          {"mode", to_string(m.mode)},
          {"epsilon", m.epsilon},
          {"poison_proportion", m.poison_proportion},
          {"seed", m.seed},
          {"poisoned_indices", m.poisoned_indices},
          {"dataset_size", m.dataset_size},
          {"dataset_hash", m.dataset_hash}};
}

inline PoisonManifest manifest_from_json(const nlohmann::json& j) {
  try {
    PoisonManifest m;
    m.source_dataset_id = j.at("source_dataset_id").get<std::string>();
    m.perturbation_ref = j.at("perturbation_ref").get<std::string>();
    m.mode = parse_perturbation_mode(j.at("mode").get<std::string>());
    m.epsilon = j.at("epsilon").get<float>();
    m.poison_proportion = j.at("poison_proportion").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.poisoned_indices = j.at("poisoned_indices").get<std::vector<std::size_t>>();
    m.dataset_size = j.at("dataset_size").get<std::size_t>();
    m.dataset_hash = j.at("dataset_hash").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed poison manifest: ") + e.what());
  }
}

inline std::filesystem::path save_poisoned(const PoisonedDataset& poisoned, const PerturbationSet& pset,
                                           const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  save_perturbation_set(pset, root);
  export_directory_dataset(poisoned.dataset, root, "train");
  nlohmann::json j = to_json(poisoned.manifest);
  j["num_classes"] = poisoned.dataset.num_classes;
  j["name"] = poisoned.dataset.name;
  std::ofstream out(root / "manifest.json");
  if (!out) throw LoadError("cannot write " + (root / "manifest.json").string());
  out << j.dump(2) << "\n";
  return root;
}

struct LoadedPoison {
  LabeledDataset dataset;
  PoisonManifest manifest;
  PerturbationSet perturbation;
};

// Reloads a saved poisoned dataset and checks it against its manifest: sample
// count, index list (must be exactly what (seed, proportion) produces) and
// pixel hash. Any disagreement is an IntegrityError.
inline LoadedPoison load_poisoned(const std::filesystem::path& root) {
  const auto manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("missing poison manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("unparseable poison manifest " + manifest_path.string() + ": " + e.what());
  }
  LoadedPoison out;
  out.manifest = manifest_from_json(j);
  const auto& m = out.manifest;
  out.perturbation = load_perturbation_set(root);
  out.dataset = load_directory_dataset(root, "train", out.perturbation.shape.height);
  out.dataset.name = j.value("name", out.dataset.name);
  out.dataset.num_classes = j.value("num_classes", out.dataset.num_classes);

  if (out.dataset.size() != m.dataset_size) {
    throw IntegrityError(fmt::format("{}: manifest lists {} samples, found {}", root.string(), m.dataset_size, out.dataset.size()));
  }
  if (m.poisoned_indices.size() != poison_count(m.poison_proportion, m.dataset_size)) {
    throw IntegrityError(fmt::format("{}: {} poisoned indices for proportion {} of {} samples", root.string(),
                                     m.poisoned_indices.size(), m.poison_proportion, m.dataset_size));
  }
  if (m.poisoned_indices != choose_poison_indices(m.dataset_size, m.poison_proportion, m.seed)) {
    throw IntegrityError(root.string() + ": poisoned index list does not match its seed and proportion");
  }
  if (m.mode != out.perturbation.mode || m.epsilon != out.perturbation.epsilon) {
    throw IntegrityError(root.string() + ": manifest and perturbation set disagree on mode or epsilon");
  }
  if (hex64(dataset_hash(out.dataset)) != m.dataset_hash) {
    throw IntegrityError(root.string() + ": pixel data hash does not match manifest");
  }
  return out;
}

}  // namespace poisonlab
