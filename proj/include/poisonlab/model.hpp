#pragma once

// Classifier models. Two architectures:
//
//   small_cnn   conv3x3(3->32) relu conv3x3(32->64) relu maxpool
//               conv3x3(64->64) relu maxpool flatten fc(128) relu fc(K)
//   residual18  CIFAR-style ResNet-18: 3x3 stem, four stages of two basic
//               blocks (64/128/256/512, strides 1/2/2/2), global average
//               pool, fc(K)
//
// All convolutions are stride-1 same-padded unless noted.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "poisonlab/errors.hpp"
#include "poisonlab/network.hpp"

namespace poisonlab {

enum class Architecture { small_cnn, residual18 };

inline std::string to_string(Architecture a) { return a == Architecture::small_cnn ? "small_cnn" : "residual18"; }

inline Architecture parse_architecture(const std::string& s) {
  if (s == "small_cnn") return Architecture::small_cnn;
  if (s == "residual18") return Architecture::residual18;
  throw ArgumentError("unknown architecture '" + s + "' (expected small_cnn or residual18)");
}

class Model {
 public:
  Model() = default;
  Model(Architecture arch, int num_classes, std::uint64_t seed, Network net)
      : arch_(arch), num_classes_(num_classes), seed_(seed), net_(std::move(net)) {}

  Architecture architecture() const { return arch_; }
  int num_classes() const { return num_classes_; }
  std::uint64_t seed() const { return seed_; }
  const Shape3& input_shape() const { return net_.input_shape(); }

  Network& network() { return net_; }
  const Network& network() const { return net_; }

  Tensor forward(const Tensor& x, Mode mode) { return net_.forward(x, mode); }
  Tensor backward(const Tensor& grad, Backprop bp) { return net_.backward(grad, bp); }

  std::size_t parameter_count() const { return net_.trainable_count(); }
  std::uint64_t parameter_hash() const { return net_.parameter_hash(); }

 private:
  Architecture arch_ = Architecture::small_cnn;
  int num_classes_ = 0;
  std::uint64_t seed_ = 0;
  Network net_;
};

namespace detail {

inline Sequential small_cnn_body(int num_classes, Shape3 input) {
  Sequential s;
  s.add<Conv2d>("conv1", input.channels, 32, 3, 1, 1);
  s.add<ReLU>();
  s.add<Conv2d>("conv2", 32, 64, 3, 1, 1);
  s.add<ReLU>();
  s.add<MaxPool2d>();
  s.add<Conv2d>("conv3", 64, 64, 3, 1, 1);
  s.add<ReLU>();
  s.add<MaxPool2d>();
  s.add<Flatten>();
  const int flat = 64 * (input.height / 4) * (input.width / 4);
  s.add<Linear>("fc1", flat, 128);
  s.add<ReLU>();
  s.add<Linear>("fc2", 128, num_classes);
  return s;
}

inline Sequential residual18_body(int num_classes, Shape3 input) {
  Sequential s;
  s.add<Conv2d>("conv1", input.channels, 64, 3, 1, 1, false);
  s.add<BatchNorm2d>("bn1", 64);
  s.add<ReLU>();
  const int widths[4] = {64, 128, 256, 512};
  int in = 64;
  for (int stage = 0; stage < 4; ++stage) {
    for (int block = 0; block < 2; ++block) {
      const int stride = (stage > 0 && block == 0) ? 2 : 1;
      s.add<BasicBlock>("layer" + std::to_string(stage + 1) + "." + std::to_string(block), in, widths[stage], stride);
      in = widths[stage];
    }
  }
  s.add<GlobalAvgPool>();
  s.add<Flatten>();
  s.add<Linear>("fc", 512, num_classes);
  return s;
}

}  // namespace detail

inline Model build_model(Architecture arch, int num_classes, std::uint64_t seed, Shape3 input = {3, 32, 32}) {
  if (num_classes < 2) throw ArgumentError("build_model: num_classes must be >= 2");
  if (input.channels != 3) throw ArgumentError("build_model: classifier inputs have 3 channels");
  const int min_side = arch == Architecture::small_cnn ? 4 : 8;
  if (input.height < min_side || input.width < min_side) throw ArgumentError("build_model: input too small");
  Sequential body = arch == Architecture::small_cnn ? detail::small_cnn_body(num_classes, input)
                                                    : detail::residual18_body(num_classes, input);
  Network net(std::move(body), input);
  net.initialize(seed);
  return Model(arch, num_classes, seed, std::move(net));
}

inline Model build_model(const std::string& arch, int num_classes, std::uint64_t seed, Shape3 input = {3, 32, 32}) {
  return build_model(parse_architecture(arch), num_classes, seed, input);
}

inline void save_model(const Model& model, const std::filesystem::path& path) {
  const auto& in = model.input_shape();
  save_checkpoint(path, model.network(),
                  {{"architecture", to_string(model.architecture())},
                   {"num_classes", model.num_classes()},
                   {"seed", model.seed()},
                   {"input_shape", {in.channels, in.height, in.width}}});
}

inline Model load_model(const std::filesystem::path& path) {
  const auto header = read_checkpoint_header(path);
  const auto arch = parse_architecture(header.at("architecture").get<std::string>());
  const auto in = header.at("input_shape");
  Model model = build_model(arch, header.at("num_classes").get<int>(), header.at("seed").get<std::uint64_t>(),
                            Shape3{in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()});
  load_checkpoint_into(path, model.network());
  return model;
}

}  // namespace poisonlab
