#pragma once

// Binary poison detector:
//
//   conv3x3(3->16) relu conv3x3(16->32) relu maxpool2x2 flatten
//   fc(128) relu fc(1) sigmoid
//
// trained with binary cross-entropy (clean = 0, poisoned = 1) and Adam.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "poisonlab/dataset.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/losses.hpp"
#include "poisonlab/network.hpp"
#include "poisonlab/optim.hpp"
#include "poisonlab/poisoning.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

inline constexpr int kDetectorConv1 = 16;
inline constexpr int kDetectorConv2 = 32;
inline constexpr int kDetectorHidden = 128;
inline constexpr double kDetectionThreshold = 0.5;

class DetectorModel {
 public:
  DetectorModel() = default;
  DetectorModel(Network net, std::uint64_t seed) : net_(std::move(net)), seed_(seed) {}

  const Shape3& input_shape() const { return net_.input_shape(); }
  std::uint64_t seed() const { return seed_; }
  Network& network() { return net_; }
  const Network& network() const { return net_; }

  int flatten_width() const { return kDetectorConv2 * (input_shape().height / 2) * (input_shape().width / 2); }

  // (B,1,1,1) probabilities.
  Tensor forward(const Tensor& x, Mode mode) { return net_.forward(x, mode); }
  Tensor backward(const Tensor& grad, Backprop bp) { return net_.backward(grad, bp); }

 private:
  Network net_;
  std::uint64_t seed_ = 0;
};

inline DetectorModel build_detector(Shape3 input, std::uint64_t seed) {
  if (input.channels != 3) throw ArgumentError("build_detector: input must have 3 channels");
  if (input.height < 8 || input.width < 8) throw ArgumentError("build_detector: input must be at least 8x8");
  Sequential s;
  s.add<Conv2d>("det.conv1", 3, kDetectorConv1, 3, 1, 1);
  s.add<ReLU>();
  s.add<Conv2d>("det.conv2", kDetectorConv1, kDetectorConv2, 3, 1, 1);
  s.add<ReLU>();
  s.add<MaxPool2d>();
  s.add<Flatten>();
  s.add<Linear>("det.fc1", kDetectorConv2 * (input.height / 2) * (input.width / 2), kDetectorHidden);
  s.add<ReLU>();
  s.add<Linear>("det.fc2", kDetectorHidden, 1);
  s.add<Sigmoid>();
  Network net(std::move(s), input);
  net.initialize(seed);
  return DetectorModel(std::move(net), seed);
}

inline void save_detector(const DetectorModel& det, const std::filesystem::path& path) {
  const auto& in = det.input_shape();
  save_checkpoint(path, det.network(),
                  {{"architecture", "detector"}, {"seed", det.seed()}, {"input_shape", {in.channels, in.height, in.width}}});
}

inline DetectorModel load_detector(const std::filesystem::path& path) {
  const auto header = read_checkpoint_header(path);
  if (header.value("architecture", "") != "detector") throw IntegrityError(path.string() + " is not a detector checkpoint");
  const auto in = header.at("input_shape");
  DetectorModel det = build_detector(Shape3{in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()},
                                     header.at("seed").get<std::uint64_t>());
  load_checkpoint_into(path, det.network());
  return det;
}

// Images with binary targets: 0 = clean, 1 = poisoned.
struct BinaryCorpus {
  std::vector<Image> images;
  std::vector<float> labels;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
};

// Interleaves clean_0, poisoned_0, clean_1, poisoned_1, ... (then whichever
// is longer). Original class labels are discarded.
inline BinaryCorpus make_binary_corpus(const LabeledDataset& clean, const LabeledDataset& poisoned) {
  BinaryCorpus c;
  const std::size_t n = std::max(clean.size(), poisoned.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i < clean.size()) {
      c.images.push_back(clean.images[i]);
      c.labels.push_back(0.0f);
    }
    if (i < poisoned.size()) {
      c.images.push_back(poisoned.images[i]);
      c.labels.push_back(1.0f);
    }
  }
  return c;
}

// Poisons round(proportion * N) samples of `data` with mix_poison and labels
// each sample by whether it was poisoned.
inline BinaryCorpus make_detection_corpus(const LabeledDataset& data, const PerturbationSet& pset, std::uint64_t seed,
                                          double proportion = 0.5) {
  PoisonedDataset mixed = mix_poison(data, pset, proportion, seed);
  BinaryCorpus c;
  c.images = std::move(mixed.dataset.images);
  c.labels.assign(c.images.size(), 0.0f);
  for (std::size_t i : mixed.manifest.poisoned_indices) c.labels[i] = 1.0f;
  return c;
}

struct DetectorEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;  // NaN without a validation corpus
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct DetectorLog {
  std::vector<DetectorEpoch> records;

  static constexpr const char* kHeader = "epoch,train_loss,train_acc,val_loss,val_acc,seconds";

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path.string());
    out << kHeader << "\n";
    for (const auto& r : records) {
      out << fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.3f}\n", r.epoch, r.train_loss, r.train_accuracy, r.val_loss,
                         r.val_accuracy, r.seconds);
    }
  }

  static DetectorLog read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("missing detector log " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != kHeader) throw LoadError("unexpected header in " + path.string());
    DetectorLog log;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
      if (f.size() != 6) throw LoadError("malformed row in " + path.string() + ": " + line);
      auto num = [](const std::string& s) { return s == "nan" ? std::nan("") : std::stod(s); };
      log.records.push_back({std::stoi(f[0]), num(f[1]), num(f[2]), num(f[3]), num(f[4]), num(f[5])});
    }
    return log;
  }
};

struct DetectorTrainResult {
  DetectorModel detector;
  DetectorLog log;
};

namespace detail {

inline Tensor corpus_batch(const BinaryCorpus& c, std::span<const std::size_t> idx) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(idx.size());
  for (std::size_t i : idx) ptrs.push_back(&c.images[i]);
  return stack_images(ptrs);
}

inline std::vector<float> detector_probabilities(DetectorModel& det, const std::vector<Image>& images) {
  std::vector<float> out;
  out.reserve(images.size());
  std::vector<const Image*> ptrs;
  for (std::size_t start = 0; start < images.size(); start += 256) {
    ptrs.clear();
    for (std::size_t i = start; i < std::min(images.size(), start + 256); ++i) ptrs.push_back(&images[i]);
    const Tensor p = det.forward(stack_images(ptrs), Mode::eval);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return out;
}

}  // namespace detail

// Mean BCE and accuracy (p >= threshold counts as poisoned) over a corpus.
inline std::pair<double, double> detector_loss_accuracy(const DetectorModel& det, const BinaryCorpus& corpus,
                                                        double threshold = kDetectionThreshold) {
  if (corpus.empty()) throw ArgumentError("detector evaluation: empty corpus");
  DetectorModel work = det;
  const auto p = detail::detector_probabilities(work, corpus.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.size(); ++i) correct += (p[i] >= threshold) == (corpus.labels[i] >= 0.5f);
  return {binary_cross_entropy(p, corpus.labels), static_cast<double>(correct) / static_cast<double>(p.size())};
}

using DetectorObserver = std::function<void(const DetectorEpoch&)>;

inline DetectorTrainResult train_detector(const BinaryCorpus& train_corpus, const BinaryCorpus* val_corpus,
                                          const OptimizerConfig& cfg, const DetectorObserver& observer = {}) {
  cfg.validate();
  if (train_corpus.empty()) throw ArgumentError("train_detector: empty training corpus");
  DetectorModel det = build_detector(train_corpus.images.front().shape(), cfg.seed);
  auto optimizer = make_optimizer(cfg);
  auto params = det.network().parameters();
  std::vector<std::size_t> order(train_corpus.size());
  std::vector<std::size_t> idx;
  std::vector<float> targets;
  DetectorLog log;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_stream(cfg.seed, {0xDE7EC7ULL, static_cast<std::uint64_t>(epoch)});
    shuffle(order, rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    int batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      idx.assign(order.begin() + start, order.begin() + start + count);
      targets.clear();
      for (std::size_t i : idx) targets.push_back(train_corpus.labels[i]);
      det.network().zero_grad();
      const Tensor p = det.forward(detail::corpus_batch(train_corpus, idx), Mode::train);
      LossGrad lg = binary_cross_entropy_with_grad(p, targets);
      if (!std::isfinite(lg.loss)) throw TrainingError(fmt::format("detector: non-finite loss at epoch {} batch {}", epoch, batch_no));
      det.backward(lg.grad, Backprop{.param_grads = true, .input_grad = false});
      optimizer->step(params);
      loss_sum += lg.loss * static_cast<double>(count);
      correct += lg.correct;
    }
    DetectorEpoch rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    rec.val_loss = rec.val_accuracy = std::nan("");
    if (val_corpus && !val_corpus->empty()) std::tie(rec.val_loss, rec.val_accuracy) = detector_loss_accuracy(det, *val_corpus);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.records.push_back(rec);
    if (observer) observer(rec);
  }
  return {std::move(det), std::move(log)};
}

// Clean samples are labelled 0 and poisoned samples 1; the two sets are
// interleaved into one training corpus.
inline DetectorTrainResult train_detector(const LabeledDataset& clean, const LabeledDataset& poisoned,
                                          const OptimizerConfig& cfg = OptimizerConfig::adam()) {
  if (clean.empty() || poisoned.empty()) throw ArgumentError("train_detector: clean and poisoned sets must be nonempty");
  return train_detector(make_binary_corpus(clean, poisoned), nullptr, cfg);
}

struct ScanEntry {
  std::size_t index = 0;
  double probability = 0.0;
  bool poisoned = false;
  std::optional<bool> truth;
};

struct ScanReport {
  double threshold = kDetectionThreshold;
  std::vector<ScanEntry> entries;
  std::optional<double> success_rate;  // present iff ground truth was given

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path.string());
    const bool truth = success_rate.has_value();
    out << (truth ? "index,probability,verdict,truth\n" : "index,probability,verdict\n");
    for (const auto& e : entries) {
      out << fmt::format("{},{:.6f},{}", e.index, e.probability, e.poisoned ? "poisoned" : "clean");
      if (truth) out << "," << (*e.truth ? "poisoned" : "clean");
      out << "\n";
    }
  }

  nlohmann::json summary(const nlohmann::json& extra = nlohmann::json::object()) const {
    nlohmann::json j = extra;
    j["threshold"] = threshold;
    j["count"] = entries.size();
    j["success_rate"] = success_rate ? nlohmann::json(*success_rate) : nlohmann::json(nullptr);
    return j;
  }
};

// Pure inference; verdict is poisoned iff probability >= threshold.
inline ScanReport scan(const DetectorModel& detector, const std::vector<Image>& images, double threshold = kDetectionThreshold,
                       const std::vector<float>* ground_truth = nullptr) {
  if (ground_truth && ground_truth->size() != images.size()) throw ArgumentError("scan: ground truth size mismatch");
  for (const auto& img : images) {
    if (!(img.shape() == detector.input_shape())) throw ArgumentError("scan: image shape does not match detector input");
  }
  DetectorModel work = detector;
  const auto p = detail::detector_probabilities(work, images);
  ScanReport r;
  r.threshold = threshold;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    ScanEntry e{i, p[i], p[i] >= threshold, std::nullopt};
    if (ground_truth) {
      e.truth = (*ground_truth)[i] >= 0.5f;
      correct += e.poisoned == *e.truth;
    }
    r.entries.push_back(e);
  }
  if (ground_truth) r.success_rate = images.empty() ? 1.0 : static_cast<double>(correct) / static_cast<double>(images.size());
  return r;
}

inline ScanReport scan(const DetectorModel& detector, const BinaryCorpus& corpus, double threshold = kDetectionThreshold) {
  return scan(detector, corpus.images, threshold, &corpus.labels);
}

}  // namespace poisonlab
