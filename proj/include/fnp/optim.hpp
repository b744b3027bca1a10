#pragma once

#include <vector>

#include "fnp/tensor.hpp"

namespace fnp {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled; only parameters flagged `decay`
  double clip_norm = 0.0;      // global gradient-norm clip, 0 = off
};

class AdamW {
 public:
  AdamW(ParamList params, const AdamWConfig& config);

  /// One update from the accumulated gradients (gradients are left as is).
  void step();

  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  const AdamWConfig& config() const { return config_; }
  std::size_t steps() const { return t_; }

 private:
  ParamList params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// Euclidean norm of all gradients.
double gradient_norm(const ParamList& params);

}  // namespace fnp
