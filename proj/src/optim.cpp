#include "fnp/optim.hpp"

#include <cmath>

#include "fnp/error.hpp"

namespace fnp {

AdamW::AdamW(ParamList params, const AdamWConfig& config) : params_(std::move(params)), config_(config) {
  if (!(config.learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  for (const Parameter* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  double scale = 1.0;
  if (config_.clip_norm > 0.0) {
    const double norm = gradient_norm(params_);
    if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
  }
  const double t = static_cast<double>(t_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  const double lr = config_.learning_rate;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    auto& m = m_[k];
    auto& v = v_[k];
    const double decay = p.decay ? lr * config_.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i] * scale;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      p.value[i] -= decay * p.value[i];
      p.value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
    }
  }
}

double gradient_norm(const ParamList& params) {
  double s = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad) s += g * g;
  return std::sqrt(s);
}

}  // namespace fnp
