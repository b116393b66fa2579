#pragma once

// Mini-batch training, evaluation and input gradients for classifiers.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "poisonlab/dataset.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/losses.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/optim.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double predict_accuracy = 0.0;  // NaN when no evaluation set was given
  double seconds = 0.0;
};

struct MetricsLog {
  std::vector<EpochRecord> records;

  static constexpr const char* kHeader = "epoch,train_loss,train_acc,predict_acc,seconds";

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path.string());
    out << kHeader << "\n";
    for (const auto& r : records) {
      out << fmt::format("{},{:.6f},{:.6f},{:.6f},{:.3f}\n", r.epoch, r.train_loss, r.train_accuracy,
                         r.predict_accuracy, r.seconds);
    }
  }

  static MetricsLog read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("missing metrics file " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != kHeader) throw LoadError("unexpected header in " + path.string());
    MetricsLog log;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      EpochRecord r;
      char comma;
      ss >> r.epoch >> comma >> r.train_loss >> comma >> r.train_accuracy >> comma;
      std::string rest;
      std::getline(ss, rest, ',');
      r.predict_accuracy = rest == "nan" ? std::nan("") : std::stod(rest);
      ss >> r.seconds;
      if (!ss && !ss.eof()) throw LoadError("malformed row in " + path.string() + ": " + line);
      log.records.push_back(r);
    }
    return log;
  }
};

// Called on every training batch before the parameter update; may rewrite the
// batch in place (adversarial training crafts its inputs here).
using BatchHook = std::function<void(Model&, Tensor& batch, std::span<const int> labels)>;
using EpochObserver = std::function<void(const EpochRecord&)>;

struct TrainResult {
  Model model;
  MetricsLog log;
};

inline constexpr int kEvalBatch = 256;

inline std::vector<int> predict(const Model& model, const LabeledDataset& data) {
  Model work = model;
  std::vector<int> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    idx.resize(std::min<std::size_t>(kEvalBatch, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = work.forward(gather_batch(data, idx), Mode::eval);
    for (int i = 0; i < logits.shape().n; ++i) out.push_back(argmax(logits.sample(i)));
  }
  return out;
}

// Fraction of argmax(logits) == label. Works on a private copy of the model.
inline double evaluate(const Model& model, const LabeledDataset& data) {
  if (data.empty()) throw ArgumentError("evaluate: empty dataset");
  const auto pred = predict(model, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

inline Tensor grad_wrt_input_inplace(Model& model, const Tensor& images, std::span<const int> labels,
                                     Mode mode = Mode::eval) {
  const Tensor logits = model.forward(images, mode);
  LossGrad lg = cross_entropy_with_grad(logits, labels, Reduction::sum);
  if (!std::isfinite(lg.loss)) throw TrainingError("non-finite loss while computing input gradient");
  return model.backward(lg.grad, Backprop{.param_grads = false, .input_grad = true});
}

// Gradient of the summed per-sample cross-entropy with respect to the input
// pixels, parameters held fixed (eval mode). Each sample's gradient is
// independent of the rest of the batch.
inline Tensor grad_wrt_input(const Model& model, const Tensor& images, std::span<const int> labels) {
  Model work = model;
  return grad_wrt_input_inplace(work, images, labels);
}

inline TrainResult train(Model model, const LabeledDataset& data, const OptimizerConfig& cfg,
                         const LabeledDataset* eval_set = nullptr, const BatchHook& hook = {},
                         const EpochObserver& observer = {}) {
  cfg.validate();
  if (data.empty()) throw ArgumentError("train: empty dataset");
  if (!(data.image_shape() == model.input_shape())) throw ArgumentError("train: dataset image shape does not match model input");
  auto optimizer = make_optimizer(cfg);
  auto params = model.network().parameters();
  std::vector<std::size_t> order(data.size());
  std::vector<std::size_t> idx;
  MetricsLog log;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_stream(cfg.seed, {0x5EEDULL, static_cast<std::uint64_t>(epoch)});
    shuffle(order, rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    int batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      idx.assign(order.begin() + start, order.begin() + start + count);
      Tensor batch = gather_batch(data, idx);
      const auto labels = gather_labels(data, idx);
      if (hook) hook(model, batch, labels);
      model.network().zero_grad();
      const Tensor logits = model.forward(batch, Mode::train);
      LossGrad lg = cross_entropy_with_grad(logits, labels);
      if (!std::isfinite(lg.loss)) {
        throw TrainingError(fmt::format("non-finite training loss at epoch {} batch {}", epoch, batch_no));
      }
      model.backward(lg.grad, Backprop{.param_grads = true, .input_grad = false});
      optimizer->step(params);
      loss_sum += lg.loss * static_cast<double>(count);
      correct += lg.correct;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(data.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    rec.predict_accuracy = eval_set ? evaluate(model, *eval_set) : std::nan("");
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.records.push_back(rec);
    if (observer) observer(rec);
  }
  return {std::move(model), std::move(log)};
}

}  // namespace poisonlab
