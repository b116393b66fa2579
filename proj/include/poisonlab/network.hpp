#pragma once

// A Sequential body with a fixed input shape, plus the checkpoint format
// shared by classifiers and detectors:
//
//   "PLCKPT01" | u64 header length | JSON header | float32 blobs in header order
//
// The header carries caller metadata and a list of {name, shape} entries.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "poisonlab/dataset.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/layers.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

class Network {
 public:
  Network() = default;
  Network(Sequential body, Shape3 input) : body_(std::move(body)), input_(input) {}

  const Shape3& input_shape() const { return input_; }

  Shape4 output_shape(int batch) const { return body_.output_shape(Shape4{batch, input_.channels, input_.height, input_.width}); }

  Tensor forward(const Tensor& x, Mode mode) {
    const auto& s = x.shape();
    if (s.c != input_.channels || s.h != input_.height || s.w != input_.width) {
      throw ArgumentError("network expects input (N," + std::to_string(input_.channels) + "," +
                          std::to_string(input_.height) + "," + std::to_string(input_.width) + "), got " + s.str());
    }
    return body_.forward(x, mode);
  }

  Tensor backward(const Tensor& grad_out, Backprop bp) { return body_.backward(grad_out, bp); }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    body_.collect_parameters(out);
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    std::vector<Parameter*> tmp;
    const_cast<Sequential&>(body_).collect_parameters(tmp);
    return {tmp.begin(), tmp.end()};
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) {
      if (p->trainable) n += p->value.size();
    }
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) {
      if (p->trainable) p->grad.fill(0.0f);
    }
  }

  // Fingerprint over every parameter and buffer value.
  std::uint64_t parameter_hash() const {
    Fnv1a h;
    for (const auto* p : parameters()) {
      h.update(p->name);
      h.update(p->value.data(), p->value.size() * sizeof(float));
    }
    return h.digest();
  }

  // He-uniform weights for conv/linear layers, zero biases; BN stays at
  // gamma=1, beta=0. Each tensor draws from its own stream.
  void initialize(std::uint64_t seed) {
    std::uint64_t index = 0;
    for (auto* p : parameters()) {
      ++index;
      if (!p->trainable) continue;
      const bool is_weight = p->name.size() > 7 && p->name.ends_with(".weight");
      const std::size_t fan_in = p->value.shape().per_sample();
      if (is_weight && fan_in > 1) {
        Rng rng = make_stream(seed, {0x1417ULL, index});
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (float& v : p->value.values()) v = static_cast<float>(uniform(rng, -bound, bound));
      } else if (!is_weight) {
        p->value.fill(0.0f);
      }
    }
  }

  Sequential& body() { return body_; }

 private:
  Sequential body_;
  Shape3 input_{};
};

namespace detail {
inline constexpr char kCheckpointMagic[8] = {'P', 'L', 'C', 'K', 'P', 'T', '0', '1'};
}

inline void save_checkpoint(const std::filesystem::path& path, const Network& net, nlohmann::json meta) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto* p : net.parameters()) {
    const auto& s = p->value.shape();
    tensors.push_back({{"name", p->name}, {"shape", {s.n, s.c, s.h, s.w}}});
  }
  meta["tensors"] = tensors;
  const std::string header = meta.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write checkpoint " + path.string());
  out.write(detail::kCheckpointMagic, 8);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto* p : net.parameters()) {
    out.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!out) throw LoadError("short write to checkpoint " + path.string());
}

namespace detail {
inline nlohmann::json read_checkpoint_header(const std::filesystem::path& path, std::streamoff& data_offset) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || !std::equal(magic, magic + 8, detail::kCheckpointMagic)) throw LoadError("not a checkpoint: " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 26)) throw LoadError("corrupt checkpoint header: " + path.string());
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw LoadError("truncated checkpoint header: " + path.string());
  data_offset = static_cast<std::streamoff>(8 + sizeof(std::uint64_t) + len);
  try {
    return nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
}
}  // namespace detail

// Header only; lets callers rebuild the right architecture before loading.
inline nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  std::streamoff offset = 0;
  return detail::read_checkpoint_header(path, offset);
}

// Loads parameters into an already-built network; names and shapes must match.
inline void load_checkpoint_into(const std::filesystem::path& path, Network& net) {
  std::streamoff offset = 0;
  const nlohmann::json header = detail::read_checkpoint_header(path, offset);
  const auto& tensors = header.at("tensors");
  auto params = net.parameters();
  if (tensors.size() != params.size()) {
    throw IntegrityError("checkpoint " + path.string() + " has " + std::to_string(tensors.size()) +
                         " tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    const auto shape = t.at("shape");
    const Shape4 s{shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>(), shape.at(3).get<int>()};
    if (t.at("name").get<std::string>() != params[i]->name || !(s == params[i]->value.shape())) {
      throw IntegrityError("checkpoint tensor " + t.at("name").get<std::string>() + s.str() + " does not match model tensor " +
                           params[i]->name + params[i]->value.shape().str());
    }
  }
  std::ifstream in(path, std::ios::binary);
  in.seekg(offset);
  for (auto* p : params) {
    in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    if (!in) throw IntegrityError("truncated parameter data in " + path.string());
  }
}

}  // namespace poisonlab
