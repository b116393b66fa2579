#pragma once

// Error-minimizing ("unlearnable") perturbations.
//
// generate() alternates two minimizations of the same loss L(f(x+d; theta), y):
// a few SGD steps on theta with d frozen, then signed-gradient descent steps
// on d with theta frozen, projected back onto the eps-ball. It stops as soon as
// the surrogate classifies the whole perturbed training set with accuracy
// >= lambda_stop, or gives up after max_rounds and says so in the provenance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "poisonlab/dataset.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/losses.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/optim.hpp"
#include "poisonlab/perturbation.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/training.hpp"

namespace poisonlab {

// Where delta starts: all zeros, or uniform in [-eps, eps] drawn from the seed.
enum class DeltaInit { zeros, uniform };
// How often classwise deltas take a signed step: once per full pass over the
// training set (gradient summed over the whole class), or once per mini-batch
// (summed over the class members in that batch).
enum class DeltaUpdate { per_pass, per_batch };

inline std::string to_string(DeltaInit v) { return v == DeltaInit::zeros ? "zeros" : "uniform"; }
inline std::string to_string(DeltaUpdate v) { return v == DeltaUpdate::per_pass ? "per_pass" : "per_batch"; }

inline DeltaInit parse_delta_init(const std::string& s) {
  if (s == "zeros") return DeltaInit::zeros;
  if (s == "uniform") return DeltaInit::uniform;
  throw ArgumentError("unknown delta init '" + s + "' (expected zeros or uniform)");
}

inline DeltaUpdate parse_delta_update(const std::string& s) {
  if (s == "per_pass") return DeltaUpdate::per_pass;
  if (s == "per_batch") return DeltaUpdate::per_batch;
  throw ArgumentError("unknown delta update '" + s + "' (expected per_pass or per_batch)");
}

struct AttackConfig {
  float epsilon = 16.0f / 255.0f;
  PerturbationMode mode = PerturbationMode::classwise;
  double lambda_stop = 0.99;
  int inner_pgd_steps = 1;
  float pgd_step_size = 0.8f / 255.0f;
  int model_steps_per_round = 10;
  int max_rounds = 5000;
  std::uint64_t seed = 42;
  DeltaInit init = DeltaInit::zeros;
  DeltaUpdate update = DeltaUpdate::per_pass;
  OptimizerConfig surrogate_optimizer = OptimizerConfig::sgd();

  void validate() const {
    // eps = 0 is accepted: it makes the attack an exact no-op.
    if (!(epsilon >= 0.0f && epsilon <= 1.0f)) throw ArgumentError("attack: epsilon must be in [0, 1]");
    if (!(lambda_stop > 0.0 && lambda_stop <= 1.0)) throw ArgumentError("attack: lambda_stop must be in (0, 1]");
    if (inner_pgd_steps < 1) throw ArgumentError("attack: inner_pgd_steps must be >= 1");
    if (!(pgd_step_size > 0.0f)) throw ArgumentError("attack: pgd_step_size must be > 0");
    if (model_steps_per_round < 0) throw ArgumentError("attack: model_steps_per_round must be >= 0");
    if (max_rounds < 1) throw ArgumentError("attack: max_rounds must be >= 1");
    surrogate_optimizer.validate();
  }
};

// Called after every round with (round, training accuracy on x + delta).
using RoundObserver = std::function<void(int, double)>;

namespace detail {

inline Tensor perturbed_batch(const LabeledDataset& data, const PerturbationSet& pset,
                              std::span<const std::size_t> idx) {
  Tensor batch = gather_batch(data, idx);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& d = pset.for_sample(idx[b], data.labels[idx[b]]).deltas;
    auto px = batch.sample(static_cast<int>(b));
    for (std::size_t j = 0; j < px.size(); ++j) px[j] = std::clamp(px[j] + d[j], 0.0f, 1.0f);
  }
  return batch;
}

inline double perturbed_accuracy(Model& model, const LabeledDataset& data, const PerturbationSet& pset) {
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    idx.resize(std::min<std::size_t>(kEvalBatch, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = model.forward(perturbed_batch(data, pset, idx), Mode::eval);
    for (std::size_t b = 0; b < idx.size(); ++b) correct += argmax(logits.sample(static_cast<int>(b))) == data.labels[idx[b]];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

inline float sign_of(double v) { return static_cast<float>((v > 0.0) - (v < 0.0)); }

inline void step_classwise(PerturbationSet& pset, std::vector<std::vector<double>>& grad_sum, std::vector<char>& touched,
                           float step) {
  for (std::size_t k = 0; k < pset.deltas.size(); ++k) {
    if (!touched[k]) continue;
    auto& d = pset.deltas[k].deltas;
    auto& acc = grad_sum[k];
    for (std::size_t j = 0; j < d.size(); ++j) d[j] -= step * sign_of(acc[j]);
    project_linf_inplace(d, pset.epsilon);
    std::fill(acc.begin(), acc.end(), 0.0);
    touched[k] = 0;
  }
}

// One signed descent pass over the training set. The loss gradient reaches
// delta through clamp(x + delta, 0, 1), so components whose sum is outside
// [0,1] get zero gradient. Samplewise deltas step once each; classwise deltas
// step on the sign of the class-summed gradient (same sign as the mean),
// either once at the end of the pass or after every batch.
inline void pgd_descent_step(Model& model, const LabeledDataset& data, PerturbationSet& pset, float step,
                             DeltaUpdate update, std::size_t batch_size) {
  const std::size_t per = pset.shape.size();
  const bool classwise = pset.mode == PerturbationMode::classwise;
  std::vector<std::vector<double>> class_grad;
  std::vector<char> touched;
  if (classwise) {
    class_grad.assign(pset.deltas.size(), std::vector<double>(per, 0.0));
    touched.assign(pset.deltas.size(), 0);
  }
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor batch = perturbed_batch(data, pset, idx);
    const auto labels = gather_labels(data, idx);
    const Tensor grad = grad_wrt_input_inplace(model, batch, labels);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto g = grad.sample(static_cast<int>(b));
      const auto& x = data.images[idx[b]].values();
      if (classwise) {
        const auto k = static_cast<std::size_t>(labels[b]);
        auto& acc = class_grad[k];
        const auto& d = pset.deltas[k].deltas;
        for (std::size_t j = 0; j < per; ++j) {
          const float s = x[j] + d[j];
          if (s >= 0.0f && s <= 1.0f) acc[j] += g[j];
        }
        touched[k] = 1;
      } else {
        auto& d = pset.deltas[idx[b]].deltas;
        for (std::size_t j = 0; j < per; ++j) {
          const float s = x[j] + d[j];
          if (s >= 0.0f && s <= 1.0f) d[j] -= step * sign_of(g[j]);
        }
        project_linf_inplace(d, pset.epsilon);
      }
    }
    if (classwise && update == DeltaUpdate::per_batch) step_classwise(pset, class_grad, touched, step);
  }
  if (classwise && update == DeltaUpdate::per_pass) step_classwise(pset, class_grad, touched, step);
}

inline void initialize_deltas(PerturbationSet& pset, DeltaInit init, std::uint64_t seed) {
  if (init == DeltaInit::zeros) return;
  for (std::size_t k = 0; k < pset.deltas.size(); ++k) {
    Rng rng = make_stream(seed, {0xDE17AULL, static_cast<std::uint64_t>(k)});
    for (float& v : pset.deltas[k].deltas) v = static_cast<float>(uniform(rng, -pset.epsilon, pset.epsilon));
    project_linf_inplace(pset.deltas[k].deltas, pset.epsilon);
  }
}

}  // namespace detail

// `surrogate` must be freshly built for the dataset; it is trained in place on
// a private copy. Returns the deltas with provenance filled in.
inline PerturbationSet generate(const LabeledDataset& data, Model surrogate, const AttackConfig& cfg,
                                const RoundObserver& observer = {}) {
  cfg.validate();
  data.validate();
  if (data.empty()) throw ArgumentError("attack: empty dataset");
  if (surrogate.num_classes() != data.num_classes) throw ArgumentError("attack: surrogate class count does not match dataset");
  if (!(surrogate.input_shape() == data.image_shape())) throw ArgumentError("attack: surrogate input shape does not match dataset");

  const std::size_t keys = cfg.mode == PerturbationMode::classwise ? static_cast<std::size_t>(data.num_classes) : data.size();
  PerturbationSet pset = PerturbationSet::zeros(cfg.mode, keys, data.image_shape(), cfg.epsilon);
  pset.provenance.surrogate = to_string(surrogate.architecture());
  pset.provenance.seed = cfg.seed;
  detail::initialize_deltas(pset, cfg.init, cfg.seed);

  auto optimizer = make_optimizer(cfg.surrogate_optimizer);
  auto params = surrogate.network().parameters();
  const std::size_t batch_size = static_cast<std::size_t>(cfg.surrogate_optimizer.batch_size);
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  std::uint64_t pass = 0;
  std::vector<std::size_t> idx;

  for (int round = 1; round <= cfg.max_rounds; ++round) {
    for (int step = 0; step < cfg.model_steps_per_round; ++step) {
      if (cursor >= order.size()) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng = make_stream(cfg.seed, {0xA77AC4ULL, pass++});
        shuffle(order, rng);
        cursor = 0;
      }
      const std::size_t count = std::min(batch_size, order.size() - cursor);
      idx.assign(order.begin() + cursor, order.begin() + cursor + count);
      cursor += count;
      const Tensor batch = detail::perturbed_batch(data, pset, idx);
      const auto labels = gather_labels(data, idx);
      surrogate.network().zero_grad();
      LossGrad lg = cross_entropy_with_grad(surrogate.forward(batch, Mode::train), labels);
      if (!std::isfinite(lg.loss)) {
        throw TrainingError(fmt::format("attack: non-finite surrogate loss in round {} step {}", round, step));
      }
      surrogate.backward(lg.grad, Backprop{.param_grads = true, .input_grad = false});
      optimizer->step(params);
    }
    for (int t = 0; t < cfg.inner_pgd_steps; ++t) {
      detail::pgd_descent_step(surrogate, data, pset, cfg.pgd_step_size, cfg.update, batch_size);
    }

    const double acc = detail::perturbed_accuracy(surrogate, data, pset);
    pset.provenance.rounds_used = round;
    pset.provenance.final_train_accuracy = acc;
    if (observer) observer(round, acc);
    if (acc >= cfg.lambda_stop) {
      pset.provenance.converged = true;
      break;
    }
  }
  return pset;
}

inline PerturbationSet generate(const LabeledDataset& data, Architecture surrogate_arch, const AttackConfig& cfg,
                                const RoundObserver& observer = {}) {
  return generate(data, build_model(surrogate_arch, data.num_classes, cfg.seed, data.image_shape()), cfg, observer);
}

// clamp_valid(x_i + delta_key(i)) for every sample. Not idempotent: applying a
// set twice adds the deltas twice.
inline LabeledDataset apply(const LabeledDataset& data, const PerturbationSet& pset) {
  if (!data.empty() && !(data.image_shape() == pset.shape)) throw ArgumentError("apply: perturbation shape does not match dataset");
  if (pset.mode == PerturbationMode::samplewise && pset.deltas.size() != data.size()) {
    throw ArgumentError(fmt::format("apply: {} samplewise deltas for {} samples", pset.deltas.size(), data.size()));
  }
  LabeledDataset out = data;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.images[i] = add_perturbation(data.images[i], pset.for_sample(i, data.labels[i]).deltas);
  }
  return out;
}

struct VictimConfig {
  Architecture architecture = Architecture::small_cnn;
  OptimizerConfig optimizer = OptimizerConfig::sgd();
};

struct SweepRow {
  float epsilon = 0.0f;
  double predict_accuracy = 0.0;
  double attack_train_accuracy = 0.0;  // surrogate accuracy on x + delta when generate stopped
  bool converged = false;
};

// One generate -> apply -> train -> evaluate cycle per epsilon, all with the
// seeds from `base` and `victim`. Rows are sorted by epsilon, largest first.
inline std::vector<SweepRow> strength_sweep(const LabeledDataset& train_set, const LabeledDataset& predict_set,
                                            const std::vector<float>& epsilons, const AttackConfig& base,
                                            const VictimConfig& victim) {
  if (epsilons.empty()) throw ArgumentError("strength_sweep: no epsilons given");
  std::vector<float> sorted = epsilons;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  std::vector<SweepRow> rows;
  for (float eps : sorted) {
    AttackConfig cfg = base;
    cfg.epsilon = eps;
    const PerturbationSet pset = generate(train_set, victim.architecture, cfg);
    const LabeledDataset poisoned = apply(train_set, pset);
    Model model = build_model(victim.architecture, train_set.num_classes, victim.optimizer.seed, train_set.image_shape());
    auto result = train(std::move(model), poisoned, victim.optimizer);
    rows.push_back({eps, evaluate(result.model, predict_set), pset.provenance.final_train_accuracy,
                    pset.provenance.converged});
  }
  return rows;
}

}  // namespace poisonlab
