#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "segqc/error.hpp"

namespace segqc {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive moments with decoupled weight decay.
template <typename T>
class AdamW {
 public:
  AdamW(std::size_t n, AdamWConfig cfg) : cfg_(cfg), m_(n, T{0}), v_(n, T{0}) {
    if (!(cfg.learning_rate >= 0) || !(cfg.weight_decay >= 0)) {
      throw ArgumentError("learning rate and weight decay must be non-negative");
    }
  }

  void step(std::span<T> params, std::span<const T> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw ArgumentError("AdamW: size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T decay = static_cast<T>(cfg_.learning_rate * cfg_.weight_decay);
    const T step_scale = static_cast<T>(cfg_.learning_rate / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(cfg_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const T g = grad[i];
      m_[i] = b1 * m_[i] + (T{1} - b1) * g;
      v_[i] = b2 * v_[i] + (T{1} - b2) * g * g;
      params[i] -= decay * params[i];
      params[i] -= step_scale * m_[i] / (std::sqrt(v_[i] * inv_bc2) + eps);
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<T> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace segqc
