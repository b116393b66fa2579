#pragma once

// PerturbationSet and its on-disk form:
//
//   <dir>/perturbation.json       mode, epsilon, shape, provenance
//   <dir>/deltas/class_00007.bin  one file per key (class id or sample index)
//
// Each .bin is three little-endian int32 (channels, height, width) followed
// by channels*height*width little-endian float32 values.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "poisonlab/errors.hpp"
#include "poisonlab/imageops.hpp"

namespace poisonlab {

enum class PerturbationMode { classwise, samplewise };

inline std::string to_string(PerturbationMode m) { return m == PerturbationMode::classwise ? "classwise" : "samplewise"; }

inline PerturbationMode parse_perturbation_mode(const std::string& s) {
  if (s == "classwise") return PerturbationMode::classwise;
  if (s == "samplewise") return PerturbationMode::samplewise;
  throw ArgumentError("unknown perturbation mode '" + s + "' (expected classwise or samplewise)");
}

struct Provenance {
  std::string surrogate = "none";
  std::uint64_t seed = 0;
  int rounds_used = 0;
  double final_train_accuracy = 0.0;
  bool converged = false;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct PerturbationSet {
  PerturbationMode mode = PerturbationMode::classwise;
  float epsilon = 0.0f;
  Shape3 shape{};
  // Indexed by class id (classwise) or sample index (samplewise).
  std::vector<Perturbation> deltas;
  Provenance provenance;

  const Perturbation& for_sample(std::size_t index, int label) const {
    const std::size_t key = mode == PerturbationMode::classwise ? static_cast<std::size_t>(label) : index;
    if (key >= deltas.size()) {
      throw ArgumentError(fmt::format("PerturbationSet: no {} entry for key {}",
                                      mode == PerturbationMode::classwise ? "class" : "sample", key));
    }
    return deltas[key];
  }

  static PerturbationSet zeros(PerturbationMode mode, std::size_t keys, Shape3 shape, float epsilon) {
    PerturbationSet p;
    p.mode = mode;
    p.epsilon = epsilon;
    p.shape = shape;
    p.deltas.assign(keys, Perturbation::zeros(shape, epsilon));
    return p;
  }

  friend bool operator==(const PerturbationSet&, const PerturbationSet&) = default;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "raw tensor I/O assumes a little-endian host");

inline void write_raw_tensor(const std::filesystem::path& path, Shape3 shape, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  const std::int32_t header[3] = {shape.channels, shape.height, shape.width};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw LoadError("short write to " + path.string());
}

inline std::pair<Shape3, std::vector<float>> read_raw_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::int32_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || header[0] <= 0 || header[1] <= 0 || header[2] <= 0) throw LoadError("bad tensor header in " + path.string());
  Shape3 s{header[0], header[1], header[2]};
  std::vector<float> values(s.size());
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!in) throw LoadError("truncated tensor data in " + path.string());
  return {s, std::move(values)};
}

inline std::string delta_filename(PerturbationMode mode, std::size_t key) {
  return fmt::format("{}_{:05d}.bin", mode == PerturbationMode::classwise ? "class" : "sample", key);
}

}  // namespace detail

inline nlohmann::json to_json(const Provenance& p) {
  return {{"surrogate", p.surrogate},
          {"seed", p.seed},
          {"rounds_used", p.rounds_used},
          {"final_train_accuracy", p.final_train_accuracy},
          {"converged", p.converged}};
}

inline Provenance provenance_from_json(const nlohmann::json& j) {
  Provenance p;
  p.surrogate = j.at("surrogate").get<std::string>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.rounds_used = j.at("rounds_used").get<int>();
  p.final_train_accuracy = j.at("final_train_accuracy").get<double>();
  p.converged = j.at("converged").get<bool>();
  return p;
}

inline void save_perturbation_set(const PerturbationSet& pset, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "deltas");
  nlohmann::json j;
  j["mode"] = to_string(pset.mode);
  j["epsilon"] = pset.epsilon;
  j["shape"] = {pset.shape.channels, pset.shape.height, pset.shape.width};
  j["count"] = pset.deltas.size();
  j["provenance"] = to_json(pset.provenance);
  for (std::size_t k = 0; k < pset.deltas.size(); ++k) {
    detail::write_raw_tensor(dir / "deltas" / detail::delta_filename(pset.mode, k), pset.shape, pset.deltas[k].deltas);
  }
  std::ofstream(dir / "perturbation.json") << j.dump(2) << "\n";
}

inline PerturbationSet load_perturbation_set(const std::filesystem::path& dir) {
  std::ifstream in(dir / "perturbation.json");
  if (!in) throw LoadError("missing " + (dir / "perturbation.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed " + (dir / "perturbation.json").string() + ": " + e.what());
  }
  PerturbationSet p;
  p.mode = parse_perturbation_mode(j.at("mode").get<std::string>());
  p.epsilon = j.at("epsilon").get<float>();
  const auto shape = j.at("shape");
  p.shape = Shape3{shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};
  p.provenance = provenance_from_json(j.at("provenance"));
  const auto count = j.at("count").get<std::size_t>();
  for (std::size_t k = 0; k < count; ++k) {
    auto [s, values] = detail::read_raw_tensor(dir / "deltas" / detail::delta_filename(p.mode, k));
    if (!(s == p.shape)) throw IntegrityError("delta " + std::to_string(k) + " has the wrong shape");
    p.deltas.push_back(Perturbation{s, std::move(values), p.epsilon});
  }
  return p;
}

}  // namespace poisonlab
