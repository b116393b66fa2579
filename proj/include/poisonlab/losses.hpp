#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "poisonlab/errors.hpp"
#include "poisonlab/tensor.hpp"

namespace poisonlab {

enum class Reduction { mean, sum };

// Probabilities are floored to [kProbabilityFloor, 1 - kProbabilityFloor]
// before taking logs.
inline constexpr double kProbabilityFloor = 1e-7;

struct LossGrad {
  double loss = 0.0;  // reduced as requested
  Tensor grad;        // dLoss/dinput, same shape as the input
  std::size_t correct = 0;
};

// Lowest index wins ties.
inline int argmax(std::span<const float> row) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(row.size()); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

inline LossGrad cross_entropy_with_grad(const Tensor& logits, std::span<const int> labels,
                                        Reduction reduction = Reduction::mean) {
  const int n = logits.shape().n;
  const int k = static_cast<int>(logits.shape().per_sample());
  if (static_cast<int>(labels.size()) != n) throw ArgumentError("cross_entropy: label count does not match batch");
  LossGrad out;
  out.grad = Tensor(logits.shape());
  const double scale = reduction == Reduction::mean ? 1.0 / n : 1.0;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= k) throw ArgumentError("cross_entropy: label " + std::to_string(y) + " out of range");
    auto row = logits.sample(i);
    auto g = out.grad.sample(i);
    const float mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const double log_z = std::log(z) + mx;
    total += log_z - row[y];
    for (int j = 0; j < k; ++j) {
      const double p = std::exp(row[j] - log_z);
      g[j] = static_cast<float>((p - (j == y ? 1.0 : 0.0)) * scale);
    }
    if (argmax(row) == y) ++out.correct;
  }
  out.loss = total * scale;
  return out;
}

// Mean of -log softmax(logits)[label].
inline double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  return cross_entropy_with_grad(logits, labels).loss;
}

inline double binary_cross_entropy(double probability, double label01) {
  const double p = std::clamp(probability, kProbabilityFloor, 1.0 - kProbabilityFloor);
  return -(label01 * std::log(p) + (1.0 - label01) * std::log(1.0 - p));
}

inline double binary_cross_entropy(std::span<const float> probabilities, std::span<const float> labels01) {
  if (probabilities.size() != labels01.size() || probabilities.empty()) {
    throw ArgumentError("binary_cross_entropy: size mismatch or empty input");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) total += binary_cross_entropy(probabilities[i], labels01[i]);
  return total / static_cast<double>(probabilities.size());
}

// Gradient is taken with respect to the (floored) probability; `correct`
// counts p >= 0.5 matching label >= 0.5.
inline LossGrad binary_cross_entropy_with_grad(const Tensor& probabilities, std::span<const float> labels01) {
  const std::size_t n = probabilities.size();
  if (labels01.size() != n || n == 0) throw ArgumentError("binary_cross_entropy: size mismatch or empty input");
  LossGrad out;
  out.grad = Tensor(probabilities.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = labels01[i];
    const double p = std::clamp(static_cast<double>(probabilities[i]), kProbabilityFloor, 1.0 - kProbabilityFloor);
    total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    out.grad[i] = static_cast<float>((-y / p + (1.0 - y) / (1.0 - p)) / static_cast<double>(n));
    if ((probabilities[i] >= 0.5f) == (y >= 0.5)) ++out.correct;
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

}  // namespace poisonlab
