#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "poisonlab/errors.hpp"
#include "poisonlab/layers.hpp"

namespace poisonlab {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.01;
  double momentum = 0.9;  // sgd
  double weight_decay = 0.0;
  double beta1 = 0.9;  // adam
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 20;
  int batch_size = 128;
  std::uint64_t seed = 42;

  static OptimizerConfig sgd() { return {}; }
  static OptimizerConfig adam() {
    OptimizerConfig c;
    c.kind = OptimizerKind::adam;
    c.learning_rate = 1e-3;
    c.epochs = 10;
    return c;
  }

  void validate() const {
    if (!(learning_rate > 0.0)) throw ArgumentError("optimizer: learning_rate must be > 0");
    if (epochs < 1) throw ArgumentError("optimizer: epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("optimizer: batch_size must be >= 1");
  }
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(const std::vector<Parameter*>& params) = 0;
};

// Heavy-ball momentum as in torch.optim.SGD: v = mu*v + g; p -= lr*v.
class Sgd final : public Optimizer {
 public:
  explicit Sgd(const OptimizerConfig& cfg) : cfg_(cfg) {}

  void step(const std::vector<Parameter*>& params) override {
    if (velocity_.empty()) velocity_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      if (!p.trainable) continue;
      auto& v = velocity_[i];
      const bool first = v.empty();
      if (first) v.assign(p.value.size(), 0.0f);
      const float lr = static_cast<float>(cfg_.learning_rate);
      const float mu = static_cast<float>(cfg_.momentum);
      const float wd = static_cast<float>(cfg_.weight_decay);
      for (std::size_t j = 0; j < v.size(); ++j) {
        const float g = p.grad[j] + wd * p.value[j];
        v[j] = (first || mu == 0.0f) ? g : mu * v[j] + g;
        p.value[j] -= lr * v[j];
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  std::vector<std::vector<float>> velocity_;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(const OptimizerConfig& cfg) : cfg_(cfg) {}

  void step(const std::vector<Parameter*>& params) override {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    const float step = static_cast<float>(cfg_.learning_rate / bc1);
    const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const float sqrt_bc2 = static_cast<float>(std::sqrt(bc2));
    const float eps = static_cast<float>(cfg_.adam_eps);
    const float wd = static_cast<float>(cfg_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      if (!p.trainable) continue;
      if (m_[i].empty()) {
        m_[i].assign(p.value.size(), 0.0f);
        v_[i].assign(p.value.size(), 0.0f);
      }
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < m.size(); ++j) {
        const float g = p.grad[j] + wd * p.value[j];
        m[j] = b1 * m[j] + (1.0f - b1) * g;
        v[j] = b2 * v[j] + (1.0f - b2) * g * g;
        p.value[j] -= step * m[j] / (std::sqrt(v[j]) / sqrt_bc2 + eps);
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  int t_ = 0;
};

inline std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg) {
  cfg.validate();
  if (cfg.kind == OptimizerKind::adam) return std::make_unique<Adam>(cfg);
  return std::make_unique<Sgd>(cfg);
}

}  // namespace poisonlab
