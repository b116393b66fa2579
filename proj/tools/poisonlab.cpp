// poisonlab command-line front end.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure,
// 3 mitigation finished below its target accuracy.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "poisonlab/harness.hpp"

namespace {

using namespace poisonlab;

enum Exit { kOk = 0, kValidation = 1, kRuntime = 2, kBelowTarget = 3 };

// Flag values; unset optionals leave the config file (or default) alone.
struct Overrides {
  std::string config;
  std::uint64_t seed = 42;
  std::optional<std::string> output, tier, dataset_root, train_split, predict_split, architecture, init, update;
  std::optional<int> image_side, num_classes, train_per_class, eval_per_class, epochs, batch_size, max_rounds;
  std::optional<double> learning_rate, proportion, alpha, lambda;
  std::optional<float> epsilon;
  std::vector<float> epsilons;
  std::vector<double> proportions;
  std::vector<std::string> transforms;
  bool quiet = false;
};

void add_run_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "INI config file (defaults apply to anything it omits)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "global seed")->default_val(42);
  cmd->add_option("-o,--output", o.output, "artifact directory (relative paths honour $POISONLAB_OUTPUT_ROOT)");
  cmd->add_option("--tier", o.tier, "synthetic (default) or full")->check(CLI::IsMember({"synthetic", "full"}));
  cmd->add_option("--dataset-root", o.dataset_root, "directory dataset root (requires --tier full)");
  cmd->add_option("--train-split", o.train_split, "training split directory name");
  cmd->add_option("--predict-split", o.predict_split, "prediction split directory name");
  cmd->add_option("--image-side", o.image_side, "working resolution");
  cmd->add_option("--num-classes", o.num_classes, "synthetic classes");
  cmd->add_option("--train-per-class", o.train_per_class, "synthetic training images per class");
  cmd->add_option("--eval-per-class", o.eval_per_class, "synthetic prediction images per class");
  cmd->add_option("--arch", o.architecture, "small_cnn or residual18");
  cmd->add_option("--epochs", o.epochs, "victim training epochs");
  cmd->add_option("--batch-size", o.batch_size, "victim batch size");
  cmd->add_option("--lr", o.learning_rate, "victim learning rate");
  cmd->add_option("--epsilon", o.epsilon, "perturbation bound in 1/255 units");
  cmd->add_option("--epsilons", o.epsilons, "sweep / detection bounds in 1/255 units")->delimiter(',');
  cmd->add_option("--lambda", o.lambda, "attack stop accuracy");
  cmd->add_option("--max-rounds", o.max_rounds, "attack round cap");
  cmd->add_option("--init", o.init, "delta initialization: zeros or uniform");
  cmd->add_option("--update", o.update, "delta update: per_pass or per_batch");
  cmd->add_option("--proportion", o.proportion, "poisoned fraction of the training set");
  cmd->add_option("--proportions", o.proportions, "proportion sweep values")->delimiter(',');
  cmd->add_option("--alpha", o.alpha, "mitigation target accuracy (0 = 0.95 x clean baseline)");
  cmd->add_option("--transforms", o.transforms, "mitigation transforms: grayscale,jitter,invert")->delimiter(',');
  cmd->add_flag("-q,--quiet", o.quiet, "no progress output");
}

ExperimentConfig build_config(ExperimentKind kind, const Overrides& o, const CLI::App* cmd) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  c.kind = kind;
  if (o.config.empty() || cmd->count("--seed")) c.apply_seed(o.seed);
  if (o.output) c.output = *o.output;
  if (o.tier) c.tier = *o.tier;
  if (o.dataset_root) {
    c.dataset.synthetic = false;
    c.dataset.root = *o.dataset_root;
  }
  if (o.train_split) c.dataset.train_split = *o.train_split;
  if (o.predict_split) c.dataset.predict_split = *o.predict_split;
  if (o.image_side) c.dataset.image_side = c.dataset.spec.image_size = *o.image_side;
  if (o.num_classes) c.dataset.spec.num_classes = *o.num_classes;
  if (o.train_per_class) c.dataset.spec.train_per_class = *o.train_per_class;
  if (o.eval_per_class) c.dataset.spec.eval_per_class = *o.eval_per_class;
  try {
    if (o.architecture) c.victim.architecture = parse_architecture(*o.architecture);
    if (o.init) c.attack.init = parse_delta_init(*o.init);
    if (o.update) c.attack.update = parse_delta_update(*o.update);
    if (!o.transforms.empty()) {
      c.mitigation.transforms.clear();
      for (const auto& t : o.transforms) c.mitigation.transforms.push_back(parse_transform(t));
    }
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (o.epochs) c.victim.optimizer.epochs = *o.epochs;
  if (o.batch_size) c.victim.optimizer.batch_size = *o.batch_size;
  if (o.learning_rate) c.victim.optimizer.learning_rate = *o.learning_rate;
  if (o.epsilon) c.attack.epsilon = *o.epsilon / 255.0f;
  if (!o.epsilons.empty()) {
    c.epsilons.clear();
    for (float e : o.epsilons) c.epsilons.push_back(e / 255.0f);
  }
  if (o.lambda) c.attack.lambda_stop = *o.lambda;
  if (o.max_rounds) c.attack.max_rounds = *o.max_rounds;
  if (o.proportion) c.proportion = *o.proportion;
  if (!o.proportions.empty()) c.proportions = o.proportions;
  if (o.alpha) c.alpha = *o.alpha;
  c.attack.surrogate_optimizer = c.victim.optimizer;
  c.mitigation.victim = c.victim;
  return c;
}

void print_table(const ResultTable& t) {
  std::printf("%s\n", ResultTable::kHeader);
  for (const auto& r : t.rows) {
    auto cell = [](const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : std::string("-"); };
    std::printf("%s,%g,%s,%s,%s,%s\n", r.dataset.c_str(), r.epsilon * 255.0, cell(r.no_attack_acc).c_str(),
                cell(r.attack_acc).c_str(), cell(r.mitigation_acc).c_str(), cell(r.advtrain_acc).c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Error-minimizing poisoning attacks on traffic-sign classifiers: attack, detection and mitigation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  struct Sub {
    ExperimentKind kind;
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {ExperimentKind::baseline, "baseline", "train on clean data"},
      {ExperimentKind::attack, "attack", "craft perturbations, poison, train the victim"},
      {ExperimentKind::sweep, "sweep", "attack at every epsilon in --epsilons"},
      {ExperimentKind::proportion_sweep, "proportion-sweep", "vary the poisoned fraction"},
      {ExperimentKind::detect, "detect", "train and scan one poison detector per epsilon"},
      {ExperimentKind::mitigate, "mitigate", "attack, then recover with the transform-accumulation scheme"},
      {ExperimentKind::advtrain, "advtrain", "attack, then train the victim adversarially"},
  };
  std::vector<Overrides> overrides(std::size(subs));
  std::vector<CLI::App*> cmds;
  for (std::size_t i = 0; i < std::size(subs); ++i) {
    auto* cmd = app.add_subcommand(subs[i].name, subs[i].help);
    add_run_flags(cmd, overrides[i]);
    cmds.push_back(cmd);
  }
  std::string report_dir;
  auto* report = app.add_subcommand("report", "regenerate plots from an artifact directory's CSVs");
  report->add_option("dir", report_dir, "artifact directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  if (*report) {
    try {
      for (const auto& p : emit_report(report_dir)) std::printf("%s\n", p.string().c_str());
      return kOk;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kRuntime;
    }
  }

  for (std::size_t i = 0; i < cmds.size(); ++i) {
    if (!*cmds[i]) continue;
    const Overrides& o = overrides[i];
    ExperimentConfig cfg;
    try {
      cfg = build_config(subs[i].kind, o, cmds[i]);
      cfg.validate();
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return kValidation;
    } catch (const ArgumentError& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return kValidation;
    }
    ProgressFn progress;
    if (!o.quiet) progress = [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
    try {
      const RunOutcome out = run(cfg, progress);
      print_table(out.table);
      std::printf("artifacts: %s\n", out.dir.string().c_str());
      if (out.below_target) {
        std::fprintf(stderr, "mitigation finished below its target accuracy\n");
        return kBelowTarget;
      }
      return kOk;
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return kValidation;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kRuntime;
    }
  }
  return kValidation;
}
