#pragma once

// Experiment pipelines behind the CLI. A run writes one self-describing
// artifact directory:
//
//   config.ini        canonical config snapshot (hash input)
//   run.json          config hash, seed, versions, kind, CSV list, status
//   results.csv       ResultTable
//   metrics/*.csv     per-model training logs
//   checkpoints/      model and detector checkpoints
//   poison/<tag>/     saved poisoned datasets
//   ERROR             present only if the run failed part-way
//
// emit_report rebuilds plots/*.png from the CSVs alone.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <fmt/format.h>
#include <json.hpp>

#include "poisonlab/attack.hpp"
#include "poisonlab/config.hpp"
#include "poisonlab/defense.hpp"
#include "poisonlab/detection.hpp"
#include "poisonlab/directory_dataset.hpp"
#include "poisonlab/plot.hpp"
#include "poisonlab/poisoning.hpp"
#include "poisonlab/synthetic.hpp"
#include "poisonlab/training.hpp"

namespace poisonlab {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "POISONLAB_OUTPUT_ROOT";

// Training allocates and frees the same large buffers every batch; keeping
// them off mmap avoids page-fault churn.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

struct ResultRow {
  std::string dataset;
  float epsilon = 0.0f;
  std::optional<double> no_attack_acc;
  std::optional<double> attack_acc;
  std::optional<double> mitigation_acc;
  std::optional<double> advtrain_acc;
};

// Table II layout, one row per (dataset, epsilon). Missing cells are empty.
struct ResultTable {
  std::vector<ResultRow> rows;

  static constexpr const char* kHeader = "dataset,epsilon_255,no_attack_acc,attack_acc,mitigation_acc,advtrain_acc";

  void validate() const {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (const auto& v : {rows[i].no_attack_acc, rows[i].attack_acc, rows[i].mitigation_acc, rows[i].advtrain_acc}) {
        if (v && !(*v >= 0.0 && *v <= 1.0)) throw ArgumentError("result table: accuracy outside [0, 1]");
      }
      for (std::size_t j = i + 1; j < rows.size(); ++j) {
        if (rows[i].dataset == rows[j].dataset && rows[i].epsilon == rows[j].epsilon) {
          throw ArgumentError("result table: duplicate epsilon for dataset " + rows[i].dataset);
        }
      }
    }
  }

  // Dataset ascending, epsilon descending.
  void sort() {
    std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
      return a.dataset != b.dataset ? a.dataset < b.dataset : a.epsilon > b.epsilon;
    });
  }

  void write_csv(const std::filesystem::path& path) const {
    validate();
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path.string());
    auto cell = [](const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : std::string(); };
    out << kHeader << "\n";
    for (const auto& r : rows) {
      out << fmt::format("{},{:g},{},{},{},{}\n", r.dataset, std::round(r.epsilon * 255.0 * 1e4) / 1e4, cell(r.no_attack_acc),
                         cell(r.attack_acc), cell(r.mitigation_acc), cell(r.advtrain_acc));
    }
  }

  static ResultTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("missing results file " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != kHeader) throw LoadError("unexpected header in " + path.string());
    ResultTable t;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
      f.resize(6);
      auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<double>(std::stod(s)); };
      ResultRow r;
      r.dataset = f[0];
      r.epsilon = static_cast<float>(std::stod(f[1]) / 255.0);
      r.no_attack_acc = opt(f[2]);
      r.attack_acc = opt(f[3]);
      r.mitigation_acc = opt(f[4]);
      r.advtrain_acc = opt(f[5]);
      t.rows.push_back(std::move(r));
    }
    return t;
  }
};

struct DataSplits {
  std::string id;
  LabeledDataset train;
  LabeledDataset predict;
};

inline DataSplits load_data(const DatasetSource& src) {
  if (src.synthetic) {
    auto s = generate_synthetic_signs(src.spec);
    return {"synthetic", std::move(s.train), std::move(s.predict)};
  }
  DataSplits d;
  d.id = src.root.filename().empty() ? src.root.parent_path().filename().string() : src.root.filename().string();
  d.train = load_directory_dataset(src.root, src.train_split, src.image_side);
  d.predict = load_directory_dataset(src.root, src.predict_split, src.image_side);
  if (d.train.num_classes != d.predict.num_classes) {
    throw LoadError(fmt::format("train split has {} classes but predict split has {}", d.train.num_classes, d.predict.num_classes));
  }
  return d;
}

// Relative output paths are placed under $POISONLAB_OUTPUT_ROOT when it is set.
inline std::filesystem::path resolve_output(const std::filesystem::path& output) {
  if (output.is_absolute()) return output;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / output;
  return output;
}

inline std::string eps_tag(float eps) { return fmt::format("eps{:g}", std::round(eps * 255.0 * 100.0) / 100.0); }
inline std::string proportion_tag(double p) { return fmt::format("p{:g}", std::round(p * 1e4) / 1e4); }

struct RunOutcome {
  std::filesystem::path dir;
  ResultTable table;
  bool below_target = false;
};

using ProgressFn = std::function<void(const std::string&)>;

std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir);

namespace detail {

class RunContext {
 public:
  RunContext(const ExperimentConfig& cfg, std::filesystem::path dir, ProgressFn progress)
      : cfg_(cfg), dir_(std::move(dir)), progress_(std::move(progress)) {
    namespace fs = std::filesystem;
    fs::create_directories(dir_ / "metrics");
    fs::create_directories(dir_ / "checkpoints");
    fs::remove(dir_ / "ERROR");
    std::ofstream(dir_ / "config.ini") << to_ini(cfg_);
    write_meta("running");
  }

  const ExperimentConfig& cfg() const { return cfg_; }
  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path record_csv(const std::string& rel) {
    if (std::find(csvs_.begin(), csvs_.end(), rel) == csvs_.end()) csvs_.push_back(rel);
    return dir_ / rel;
  }

  void say(const std::string& msg) const {
    if (progress_) progress_(msg);
  }

  EpochObserver epoch_logger(const std::string& what) const {
    if (!progress_) return {};
    return [this, what](const EpochRecord& r) {
      say(fmt::format("{} epoch {}: loss {:.4f} train_acc {:.4f} predict_acc {:.4f}", what, r.epoch, r.train_loss,
                      r.train_accuracy, r.predict_accuracy));
    };
  }

  void write_meta(const std::string& status) const {
    nlohmann::json j;
    j["config_hash"] = hex64(config_hash(cfg_));
    j["seed"] = cfg_.seed;
    j["kind"] = to_string(cfg_.kind);
    j["version"] = kVersion;
    nlohmann::json mods;
    for (const char* m : {"imageops", "datasets", "modelkit", "attack", "defense", "detection", "harness"}) mods[m] = kVersion;
    j["modules"] = mods;
    j["csvs"] = csvs_;
    j["status"] = status;
    std::ofstream out(dir_ / "run.json");
    if (!out) throw LoadError("cannot write " + (dir_ / "run.json").string());
    out << j.dump(2) << "\n";
  }

  void write_json(const std::string& rel, nlohmann::json j) const {
    j["config_hash"] = hex64(config_hash(cfg_));
    j["seed"] = cfg_.seed;
    j["version"] = kVersion;
    std::ofstream out(dir_ / rel);
    if (!out) throw LoadError("cannot write " + (dir_ / rel).string());
    out << j.dump(2) << "\n";
  }

 private:
  const ExperimentConfig& cfg_;
  std::filesystem::path dir_;
  ProgressFn progress_;
  std::vector<std::string> csvs_;
};

inline double train_victim(RunContext& ctx, const LabeledDataset& train_set, const LabeledDataset& predict_set,
                           const std::string& name) {
  const auto& v = ctx.cfg().victim;
  Model model = build_model(v.architecture, train_set.num_classes, v.optimizer.seed, train_set.image_shape());
  TrainResult r = train(std::move(model), train_set, v.optimizer, &predict_set, {}, ctx.epoch_logger(name));
  r.log.write_csv(ctx.record_csv("metrics/" + name + ".csv"));
  save_model(r.model, ctx.dir() / "checkpoints" / (name + ".ckpt"));
  return evaluate(r.model, predict_set);
}

inline PerturbationSet craft(RunContext& ctx, const LabeledDataset& train_set, float eps) {
  AttackConfig a = ctx.cfg().attack;
  a.epsilon = eps;
  ctx.say(fmt::format("generating perturbations at eps {}/255", eps * 255.0f));
  PerturbationSet pset = generate(train_set, ctx.cfg().victim.architecture, a, [&ctx](int round, double acc) {
    ctx.say(fmt::format("round {}: train_acc on x+delta {:.4f}", round, acc));
  });
  ctx.write_json("attack_" + eps_tag(eps) + ".json",
                 {{"epsilon", eps}, {"mode", to_string(pset.mode)}, {"provenance", to_json(pset.provenance)}});
  return pset;
}

// Crafts at eps, mixes at the configured proportion, saves the poisoned set and
// returns it.
inline LabeledDataset craft_and_poison(RunContext& ctx, const LabeledDataset& train_set, float eps, PerturbationSet* out = nullptr) {
  PerturbationSet pset = craft(ctx, train_set, eps);
  PoisonedDataset mixed = mix_poison(train_set, pset, ctx.cfg().proportion, ctx.cfg().seed);
  save_poisoned(mixed, pset, ctx.dir() / "poison" / eps_tag(eps));
  if (out) *out = std::move(pset);
  return std::move(mixed.dataset);
}

inline void run_detect(RunContext& ctx, const DataSplits& data) {
  const auto& cfg = ctx.cfg();
  std::vector<float> eps = cfg.epsilons;
  std::sort(eps.begin(), eps.end(), std::greater<>());
  std::ofstream summary(ctx.record_csv("detection.csv"));
  summary << "epsilon_255,success_rate,initial_val_loss,final_val_loss,final_val_acc\n";
  for (float e : eps) {
    const PerturbationSet pset = craft(ctx, data.train, e);
    const BinaryCorpus train_corpus = make_detection_corpus(data.train, pset, cfg.seed, cfg.detection_proportion);
    const BinaryCorpus held_out = make_detection_corpus(data.predict, pset, cfg.seed, cfg.detection_proportion);
    DetectorTrainResult tr = train_detector(train_corpus, &held_out, cfg.detector, [&ctx, e](const DetectorEpoch& r) {
      ctx.say(fmt::format("detector eps {}/255 epoch {}: loss {:.4f} val_loss {:.4f} val_acc {:.4f}", e * 255.0f, r.epoch,
                          r.train_loss, r.val_loss, r.val_accuracy));
    });
    const std::string tag = eps_tag(e);
    tr.log.write_csv(ctx.record_csv("metrics/detector_" + tag + ".csv"));
    save_detector(tr.detector, ctx.dir() / "checkpoints" / ("detector_" + tag + ".ckpt"));
    const ScanReport rep = scan(tr.detector, held_out, cfg.detection_threshold);
    rep.write_csv(ctx.record_csv("scan_" + tag + ".csv"));
    ctx.write_json("scan_" + tag + ".json", rep.summary({{"epsilon", e}}));
    const auto& first = tr.log.records.front();
    const auto& last = tr.log.records.back();
    summary << fmt::format("{:g},{:.6f},{:.6f},{:.6f},{:.6f}\n", std::round(e * 255.0 * 1e4) / 1e4, *rep.success_rate,
                           first.val_loss, last.val_loss, last.val_accuracy);
  }
}

}  // namespace detail

// Runs the pipeline named by cfg.kind and renders its report. Config errors
// surface before any compute; later failures leave the partial directory
// with an ERROR file.
inline RunOutcome run(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
  cfg.validate();
  RunOutcome outcome;
  outcome.dir = resolve_output(cfg.output);
  detail::RunContext ctx(cfg, outcome.dir, progress);
  try {
    const DataSplits data = load_data(cfg.dataset);
    ctx.say(fmt::format("dataset {}: {} train / {} predict images, {} classes", data.id, data.train.size(),
                        data.predict.size(), data.train.num_classes));
    ResultTable& table = outcome.table;
    auto baseline = [&] {
      const double b = detail::train_victim(ctx, data.train, data.predict, "clean");
      ctx.say(fmt::format("clean baseline predict_acc {:.4f}", b));
      return b;
    };

    switch (cfg.kind) {
      case ExperimentKind::baseline: {
        table.rows.push_back({data.id, 0.0f, baseline(), {}, {}, {}});
        break;
      }
      case ExperimentKind::attack: {
        const double b = baseline();
        const float e = cfg.attack.epsilon;
        const LabeledDataset poisoned = detail::craft_and_poison(ctx, data.train, e);
        table.rows.push_back({data.id, e, b, detail::train_victim(ctx, poisoned, data.predict, "poisoned"), {}, {}});
        break;
      }
      case ExperimentKind::sweep: {
        const double b = baseline();
        std::vector<float> eps = cfg.epsilons;
        std::sort(eps.begin(), eps.end(), std::greater<>());
        for (float e : eps) {
          const LabeledDataset poisoned = detail::craft_and_poison(ctx, data.train, e);
          table.rows.push_back({data.id, e, b, detail::train_victim(ctx, poisoned, data.predict, "poisoned_" + eps_tag(e)), {}, {}});
        }
        break;
      }
      case ExperimentKind::proportion_sweep: {
        const double b = baseline();
        const float e = cfg.attack.epsilon;
        const PerturbationSet pset = detail::craft(ctx, data.train, e);
        std::vector<double> props = cfg.proportions;
        std::sort(props.begin(), props.end(), std::greater<>());
        std::ofstream out(ctx.record_csv("proportions.csv"));
        out << "proportion,predict_acc\n";
        std::optional<double> top;
        for (double p : props) {
          const PoisonedDataset mixed = mix_poison(data.train, pset, p, cfg.seed);
          const double acc = detail::train_victim(ctx, mixed.dataset, data.predict, "poisoned_" + proportion_tag(p));
          out << fmt::format("{:g},{:.6f}\n", p, acc);
          if (!top) top = acc;
        }
        table.rows.push_back({data.id, e, b, top, {}, {}});
        break;
      }
      case ExperimentKind::detect: {
        detail::run_detect(ctx, data);
        break;
      }
      case ExperimentKind::mitigate: {
        const double b = baseline();
        const float e = cfg.attack.epsilon;
        const LabeledDataset poisoned = detail::craft_and_poison(ctx, data.train, e);
        const double a = detail::train_victim(ctx, poisoned, data.predict, "poisoned");
        MitigationConfig m = cfg.mitigation;
        m.victim = cfg.victim;
        m.seed = cfg.seed;
        m.target_accuracy = cfg.alpha > 0.0 ? cfg.alpha : cfg.alpha_factor * b;
        ctx.say(fmt::format("mitigation target {:.4f}", m.target_accuracy));
        MitigationResult r = mitigate(poisoned, data.predict, m, [&](const MitigationStep& s) {
          ctx.say(fmt::format("mitigation iteration {} (+{}): {} images, predict_acc {:.4f}", s.iteration, to_string(s.transform),
                              s.train_size, s.predict_accuracy));
        });
        r.log.write_csv(ctx.record_csv("metrics/mitigated.csv"));
        write_mitigation_csv(r.steps, ctx.record_csv("mitigation.csv"));
        save_model(r.model, ctx.dir() / "checkpoints" / "mitigated.ckpt");
        table.rows.push_back({data.id, e, b, a, r.accuracy, {}});
        outcome.below_target = !r.reached_target;
        break;
      }
      case ExperimentKind::advtrain: {
        const double b = baseline();
        const float e = cfg.attack.epsilon;
        const LabeledDataset poisoned = detail::craft_and_poison(ctx, data.train, e);
        const double a = detail::train_victim(ctx, poisoned, data.predict, "poisoned");
        TrainResult r = adversarial_train(poisoned, data.predict, cfg.at, cfg.victim, ctx.epoch_logger("advtrain"));
        r.log.write_csv(ctx.record_csv("metrics/advtrain.csv"));
        save_model(r.model, ctx.dir() / "checkpoints" / "advtrain.ckpt");
        table.rows.push_back({data.id, e, b, a, {}, evaluate(r.model, data.predict)});
        break;
      }
    }
    table.sort();
    table.write_csv(ctx.record_csv("results.csv"));
    ctx.write_meta(outcome.below_target ? "below_target" : "ok");
    emit_report(outcome.dir);
  } catch (const std::exception& e) {
    std::ofstream(outcome.dir / "ERROR") << e.what() << "\n";
    ctx.write_meta("error");
    throw;
  }
  return outcome;
}

namespace detail {

inline std::vector<std::string> read_csv_list(const std::filesystem::path& dir) {
  const auto meta = dir / "run.json";
  std::ifstream in(meta);
  if (!in) throw LoadError("missing " + meta.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed " + meta.string() + ": " + e.what());
  }
  if (j.value("status", "") == "error") throw LoadError("run in " + dir.string() + " failed; see ERROR");
  return j.at("csvs").get<std::vector<std::string>>();
}

inline bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

inline std::string stem_of(const std::string& rel) { return std::filesystem::path(rel).stem().string(); }

}  // namespace detail

// Regenerates plots/*.png from the CSVs listed in run.json and returns their
// paths. Any listed CSV that is missing is an error naming the file.
inline std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const auto csvs = detail::read_csv_list(dir);
  for (const auto& rel : csvs) {
    if (!fs::is_regular_file(dir / rel)) throw LoadError("missing CSV " + (dir / rel).string());
  }
  fs::create_directories(dir / "plots");
  std::vector<fs::path> written;
  auto emit = [&](const LinePlot& p, const std::string& name) {
    if (p.series.empty()) return;
    save_plot(p, dir / "plots" / name);
    written.push_back(dir / "plots" / name);
  };

  LinePlot acc{"Prediction accuracy", "epoch", "accuracy", 0.0, 1.0, {}};
  LinePlot det{"Detector validation loss", "epoch", "BCE", 0.0, 0.0, {}};
  for (const auto& rel : csvs) {
    if (!detail::starts_with(rel, "metrics/")) continue;
    const std::string name = detail::stem_of(rel);
    if (detail::starts_with(name, "detector_")) {
      const DetectorLog log = DetectorLog::read_csv(dir / rel);
      Series s{name.substr(9), {}, {}};
      for (const auto& r : log.records) {
        s.x.push_back(r.epoch);
        s.y.push_back(r.val_loss);
      }
      det.series.push_back(std::move(s));
    } else {
      const MetricsLog log = MetricsLog::read_csv(dir / rel);
      Series s{name, {}, {}};
      for (const auto& r : log.records) {
        s.x.push_back(r.epoch);
        s.y.push_back(r.predict_accuracy);
      }
      acc.series.push_back(std::move(s));
    }
  }
  emit(acc, "accuracy.png");
  emit(det, "detector_loss.png");

  if (std::find(csvs.begin(), csvs.end(), "proportions.csv") != csvs.end()) {
    std::ifstream in(dir / "proportions.csv");
    std::string line;
    std::getline(in, line);
    Series s{"poisoned", {}, {}};
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      s.x.push_back(std::stod(line.substr(0, comma)));
      s.y.push_back(std::stod(line.substr(comma + 1)));
    }
    std::vector<std::size_t> order(s.x.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.x[a] < s.x[b]; });
    Series sorted{s.label, {}, {}};
    for (std::size_t i : order) {
      sorted.x.push_back(s.x[i]);
      sorted.y.push_back(s.y[i]);
    }
    emit(LinePlot{"Accuracy vs poison proportion", "proportion", "accuracy", 0.0, 1.0, {std::move(sorted)}},
         "proportions.png");
  }

  if (std::find(csvs.begin(), csvs.end(), "results.csv") != csvs.end()) {
    const ResultTable t = ResultTable::read_csv(dir / "results.csv");
    Series s{"attack", {}, {}};
    std::vector<ResultRow> rows = t.rows;
    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) { return a.epsilon < b.epsilon; });
    for (const auto& r : rows) {
      if (!r.attack_acc) continue;
      s.x.push_back(r.epsilon * 255.0);
      s.y.push_back(*r.attack_acc);
    }
    if (s.x.size() >= 2) emit(LinePlot{"Accuracy vs epsilon", "epsilon x 255", "accuracy", 0.0, 1.0, {std::move(s)}}, "epsilon.png");
  }
  return written;
}

}  // namespace poisonlab
