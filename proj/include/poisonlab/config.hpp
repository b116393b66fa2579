#pragma once

// Experiment configuration: one INI file (sections per module) fully
// determines a run. Radii and step sizes are written in 1/255 units.
//
//   [experiment] kind, seed, tier, output
//   [dataset]    source = synthetic | directory, root, train_split,
//                predict_split, image_side, num_classes, train_per_class,
//                eval_per_class
//   [model]      architecture, epochs, batch_size, learning_rate, momentum,
//                weight_decay
//   [attack]     epsilon, epsilons, mode, lambda, pgd_steps, step_size,
//                model_steps, max_rounds, init, update, proportion,
//                proportions
//   [mitigation] transforms, alpha, alpha_factor, brightness, hue,
//                invert_probability
//   [advtrain]   radius, step, steps, epochs
//   [detector]   epochs, batch_size, learning_rate, threshold, proportion

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "poisonlab/attack.hpp"
#include "poisonlab/dataset.hpp"
#include "poisonlab/defense.hpp"
#include "poisonlab/detection.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/optim.hpp"
#include "poisonlab/synthetic.hpp"

namespace poisonlab {

enum class ExperimentKind { baseline, attack, sweep, proportion_sweep, detect, mitigate, advtrain };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::baseline: return "baseline";
    case ExperimentKind::attack: return "attack";
    case ExperimentKind::sweep: return "sweep";
    case ExperimentKind::proportion_sweep: return "proportion-sweep";
    case ExperimentKind::detect: return "detect";
    case ExperimentKind::mitigate: return "mitigate";
    case ExperimentKind::advtrain: return "advtrain";
  }
  return "?";
}

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  for (auto k : {ExperimentKind::baseline, ExperimentKind::attack, ExperimentKind::sweep, ExperimentKind::proportion_sweep,
                 ExperimentKind::detect, ExperimentKind::mitigate, ExperimentKind::advtrain}) {
    if (s == to_string(k)) return k;
  }
  if (s == "proportion_sweep") return ExperimentKind::proportion_sweep;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

struct DatasetSource {
  bool synthetic = true;
  SyntheticSignSpec spec;
  std::filesystem::path root;
  std::string train_split = "train";
  std::string predict_split = "predict";
  int image_side = kDefaultImageSide;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::baseline;
  std::uint64_t seed = 42;
  std::string tier = "synthetic";
  std::filesystem::path output = "runs/out";
  DatasetSource dataset;
  VictimConfig victim;
  AttackConfig attack;
  std::vector<float> epsilons = {16.0f / 255.0f, 8.0f / 255.0f, 4.0f / 255.0f};
  double proportion = 1.0;
  std::vector<double> proportions = {1.0, 0.95, 0.9, 0.75, 0.5};
  MitigationConfig mitigation;
  double alpha = 0.0;  // absolute target; 0 means alpha_factor x clean baseline
  double alpha_factor = 0.95;
  ATConfig at;
  OptimizerConfig detector = OptimizerConfig::adam();
  double detection_threshold = kDetectionThreshold;
  double detection_proportion = 0.5;

  // Pushes the global seed into every seeded component.
  void apply_seed(std::uint64_t s) {
    seed = s;
    dataset.spec.seed = s;
    victim.optimizer.seed = s;
    attack.seed = s;
    mitigation.seed = s;
    detector.seed = s;
  }

  void validate() const {
    if (tier != "synthetic" && tier != "full") throw ConfigError("tier must be 'synthetic' or 'full'");
    if (dataset.synthetic) {
      if (tier == "full") throw ConfigError("tier 'full' requires a directory dataset");
      try {
        dataset.spec.validate();
      } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
      }
    } else {
      if (tier != "full") throw ConfigError("directory datasets are the full tier; pass --tier full");
      if (!std::filesystem::is_directory(dataset.root / dataset.train_split)) {
        throw ConfigError("dataset split not found: " + (dataset.root / dataset.train_split).string());
      }
      if (!std::filesystem::is_directory(dataset.root / dataset.predict_split)) {
        throw ConfigError("dataset split not found: " + (dataset.root / dataset.predict_split).string());
      }
    }
    if (dataset.image_side < 8) throw ConfigError("image_side must be >= 8");
    if (output.empty()) throw ConfigError("output directory is empty");
    if (epsilons.empty()) throw ConfigError("attack.epsilons is empty");
    if (proportions.empty()) throw ConfigError("attack.proportions is empty");
    for (double p : proportions) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("proportions must lie in [0, 1]");
    }
    if (!(proportion >= 0.0 && proportion <= 1.0)) throw ConfigError("attack.proportion must lie in [0, 1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("mitigation.alpha must lie in [0, 1] (0 = derive from baseline)");
    if (!(alpha_factor > 0.0 && alpha_factor <= 1.0)) throw ConfigError("mitigation.alpha_factor must lie in (0, 1]");
    if (!(detection_threshold >= 0.0 && detection_threshold <= 1.0)) throw ConfigError("detector.threshold must lie in [0, 1]");
    if (!(detection_proportion > 0.0 && detection_proportion < 1.0)) throw ConfigError("detector.proportion must lie in (0, 1)");
    try {
      victim.optimizer.validate();
      attack.validate();
      for (float e : epsilons) {
        AttackConfig a = attack;
        a.epsilon = e;
        a.validate();
      }
      MitigationConfig m = mitigation;
      m.target_accuracy = alpha > 0.0 ? alpha : 0.5;
      m.validate();
      at.validate();
      detector.validate();
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline std::string units255(float v) { return fmt::format("{:g}", static_cast<double>(v) * 255.0); }

template <typename T>
std::string join(const std::vector<T>& values, auto&& fmt_one) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += fmt_one(values[i]);
  }
  return out;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_number(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects a number, got '" + s + "'");
}

inline std::uint64_t parse_unsigned(const std::string& key, const std::string& s) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + s + "'");
  }
  return std::stoull(s);
}

inline int parse_int(const std::string& key, const std::string& s) {
  const auto v = parse_unsigned(key, s);
  if (v > 1000000000ULL) throw ConfigError("'" + key + "' is out of range");
  return static_cast<int>(v);
}

inline float parse_255(const std::string& key, const std::string& s) {
  return static_cast<float>(parse_number(key, s) / 255.0);
}

}  // namespace detail

// Canonical INI text; equal configs give equal text (and equal hashes).
inline std::string to_ini(const ExperimentConfig& c) {
  using detail::units255;
  std::ostringstream o;
  o << "[experiment]\n"
    << "kind = " << to_string(c.kind) << "\n"
    << "seed = " << c.seed << "\n"
    << "tier = " << c.tier << "\n"
    << "output = " << c.output.generic_string() << "\n\n";
  o << "[dataset]\n";
  if (c.dataset.synthetic) {
    o << "source = synthetic\n"
      << "num_classes = " << c.dataset.spec.num_classes << "\n"
      << "train_per_class = " << c.dataset.spec.train_per_class << "\n"
      << "eval_per_class = " << c.dataset.spec.eval_per_class << "\n";
  } else {
    o << "source = directory\n"
      << "root = " << c.dataset.root.generic_string() << "\n"
      << "train_split = " << c.dataset.train_split << "\n"
      << "predict_split = " << c.dataset.predict_split << "\n";
  }
  o << "image_side = " << c.dataset.image_side << "\n\n";
  const auto& v = c.victim.optimizer;
  o << "[model]\n"
    << "architecture = " << to_string(c.victim.architecture) << "\n"
    << "epochs = " << v.epochs << "\n"
    << "batch_size = " << v.batch_size << "\n"
    << fmt::format("learning_rate = {:g}\nmomentum = {:g}\nweight_decay = {:g}\n\n", v.learning_rate, v.momentum, v.weight_decay);
  const auto& a = c.attack;
  o << "[attack]\n"
    << "epsilon = " << units255(a.epsilon) << "\n"
    << "epsilons = " << detail::join(c.epsilons, units255) << "\n"
    << "mode = " << to_string(a.mode) << "\n"
    << fmt::format("lambda = {:g}\n", a.lambda_stop) << "pgd_steps = " << a.inner_pgd_steps << "\n"
    << "step_size = " << units255(a.pgd_step_size) << "\n"
    << "model_steps = " << a.model_steps_per_round << "\n"
    << "max_rounds = " << a.max_rounds << "\n"
    << "init = " << to_string(a.init) << "\n"
    << "update = " << to_string(a.update) << "\n"
    << fmt::format("proportion = {:g}\n", c.proportion)
    << "proportions = " << detail::join(c.proportions, [](double p) { return fmt::format("{:g}", p); }) << "\n\n";
  const auto& m = c.mitigation;
  o << "[mitigation]\n"
    << "transforms = " << detail::join(m.transforms, [](TransformKind k) { return to_string(k); }) << "\n"
    << fmt::format("alpha = {:g}\nalpha_factor = {:g}\nbrightness = {:g}\nhue = {:g}\ninvert_probability = {:g}\n\n", c.alpha,
                   c.alpha_factor, m.params.brightness_delta, m.params.hue_delta, m.params.invert_probability);
  o << "[advtrain]\n"
    << "radius = " << units255(c.at.radius) << "\n"
    << "step = " << units255(c.at.step_size) << "\n"
    << "steps = " << c.at.pgd_steps << "\n"
    << "epochs = " << c.at.epochs << "\n\n";
  o << "[detector]\n"
    << "epochs = " << c.detector.epochs << "\n"
    << "batch_size = " << c.detector.batch_size << "\n"
    << fmt::format("learning_rate = {:g}\nthreshold = {:g}\nproportion = {:g}\n", c.detector.learning_rate, c.detection_threshold,
                   c.detection_proportion);
  return o.str();
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
  Fnv1a h;
  h.update(to_ini(c));
  return h.digest();
}

// Parses INI text over the defaults. Unknown sections or keys are errors so a
// typo cannot silently fall back to a default.
inline ExperimentConfig parse_ini(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  std::uint64_t seed = c.seed;
  bool seed_set = false;
  using namespace detail;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      const std::string name = section + "." + key;
      const std::string val = node.get_value<std::string>();
      if (section == "experiment") {
        if (key == "kind") c.kind = parse_experiment_kind(val);
        else if (key == "seed") { seed = parse_unsigned(name, val); seed_set = true; }
        else if (key == "tier") c.tier = val;
        else if (key == "output") c.output = val;
        else throw ConfigError("config: unknown key '" + name + "'");
      } else if (section == "dataset") {
        if (key == "source") {
          if (val != "synthetic" && val != "directory") throw ConfigError("dataset.source must be synthetic or directory");
          c.dataset.synthetic = val == "synthetic";
        } else if (key == "root") c.dataset.root = val;
        else if (key == "train_split") c.dataset.train_split = val;
        else if (key == "predict_split") c.dataset.predict_split = val;
        else if (key == "image_side") { c.dataset.image_side = parse_int(name, val); c.dataset.spec.image_size = c.dataset.image_side; }
        else if (key == "num_classes") c.dataset.spec.num_classes = parse_int(name, val);
        else if (key == "train_per_class") c.dataset.spec.train_per_class = parse_int(name, val);
        else if (key == "eval_per_class") c.dataset.spec.eval_per_class = parse_int(name, val);
        else throw ConfigError("config: unknown key '" + name + "'");
      } else if (section == "model") {
        auto& o = c.victim.optimizer;
        if (key == "architecture") {
          try {
            c.victim.architecture = parse_architecture(val);
          } catch (const ArgumentError& e) {
            throw ConfigError(e.what());
          }
        } else if (key == "epochs") o.epochs = parse_int(name, val);
        else if (key == "batch_size") o.batch_size = parse_int(name, val);
        else if (key == "learning_rate") o.learning_rate = parse_number(name, val);
        else if (key == "momentum") o.momentum = parse_number(name, val);
        else if (key == "weight_decay") o.weight_decay = parse_number(name, val);
        else throw ConfigError("config: unknown key '" + name + "'");
      } else if (section == "attack") {
        auto& a = c.attack;
        try {
          if (key == "epsilon") a.epsilon = parse_255(name, val);
          else if (key == "epsilons") {
            c.epsilons.clear();
            for (const auto& e : split_list(val)) c.epsilons.push_back(parse_255(name, e));
          } else if (key == "mode") a.mode = parse_perturbation_mode(val);
          else if (key == "lambda") a.lambda_stop = parse_number(name, val);
          else if (key == "pgd_steps") a.inner_pgd_steps = parse_int(name, val);
          else if (key == "step_size") a.pgd_step_size = parse_255(name, val);
          else if (key == "model_steps") a.model_steps_per_round = parse_int(name, val);
          else if (key == "max_rounds") a.max_rounds = parse_int(name, val);
          else if (key == "init") a.init = parse_delta_init(val);
          else if (key == "update") a.update = parse_delta_update(val);
          else if (key == "proportion") c.proportion = parse_number(name, val);
          else if (key == "proportions") {
            c.proportions.clear();
            for (const auto& p : split_list(val)) c.proportions.push_back(parse_number(name, p));
          } else throw ConfigError("config: unknown key '" + name + "'");
        } catch (const ArgumentError& e) {
          throw ConfigError(e.what());
        }
      } else if (section == "mitigation") {
        auto& m = c.mitigation;
        if (key == "transforms") {
          m.transforms.clear();
          try {
            for (const auto& t : split_list(val)) m.transforms.push_back(parse_transform(t));
          } catch (const ArgumentError& e) {
            throw ConfigError(e.what());
          }
        } else if (key == "alpha") c.alpha = parse_number(name, val);
        else if (key == "alpha_factor") c.alpha_factor = parse_number(name, val);
        else if (key == "brightness") m.params.brightness_delta = parse_number(name, val);
        else if (key == "hue") m.params.hue_delta = parse_number(name, val);
        else if (key == "invert_probability") m.params.invert_probability = parse_number(name, val);
        else throw ConfigError("config: unknown key '" + name + "'");
      } else if (section == "advtrain") {
        if (key == "radius") c.at.radius = parse_255(name, val);
        else if (key == "step") c.at.step_size = parse_255(name, val);
        else if (key == "steps") c.at.pgd_steps = parse_int(name, val);
        else if (key == "epochs") c.at.epochs = parse_int(name, val);
        else throw ConfigError("config: unknown key '" + name + "'");
      } else if (section == "detector") {
        if (key == "epochs") c.detector.epochs = parse_int(name, val);
        else if (key == "batch_size") c.detector.batch_size = parse_int(name, val);
        else if (key == "learning_rate") c.detector.learning_rate = parse_number(name, val);
        else if (key == "threshold") c.detection_threshold = parse_number(name, val);
        else if (key == "proportion") c.detection_proportion = parse_number(name, val);
        else throw ConfigError("config: unknown key '" + name + "'");
      } else {
        throw ConfigError("config: unknown section [" + section + "]");
      }
    }
  }
  c.apply_seed(seed_set ? seed : c.seed);
  c.victim.optimizer.kind = OptimizerKind::sgd;
  c.attack.surrogate_optimizer = c.victim.optimizer;
  c.mitigation.victim = c.victim;
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_ini(ss.str());
}

}  // namespace poisonlab
