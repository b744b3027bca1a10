#include "fnp/decoder.hpp"

#include <cmath>
#include <numbers>

#include "fnp/error.hpp"

namespace fnp {

void AnalysisDistribution::validate() const {
  if (mean.size() != n_channels * n_targets || variance.size() != mean.size())
    throw ConfigError("analysis distribution: array sizes do not match its shape");
  for (std::size_t k = 0; k < mean.size(); ++k) {
    if (!std::isfinite(mean[k]) || !std::isfinite(variance[k])) throw NumericError("analysis distribution is not finite");
    if (!(variance[k] > 0.0)) throw NumericError("analysis variance is not positive");
  }
}

TargetSampler::TargetSampler(const LatLonGrid& grid, const NormalizedCoords& targets) : grid_(grid) {
  for (std::size_t t = 0; t < targets.size(); ++t)
    if (std::abs(targets.u[t]) > 1.0 || std::abs(targets.v[t]) > 1.0) throw ConfigError("decode: target outside the domain");
  for (const GeoPoint& pt : denormalize_coords(targets, grid)) stencils_.push_back(bilinear_stencil(grid, pt));
}

Tensor3 TargetSampler::apply(const Tensor3& x) const {
  Tensor3 y(x.c, 1, stencils_.size());
  const std::size_t w = grid_.n_lon();
  for (std::size_t k = 0; k < x.c; ++k) {
    const double* src = x.channel(k).data();
    for (std::size_t t = 0; t < stencils_.size(); ++t)
      y(k, 0, t) = stencils_[t].apply([&](std::size_t i, std::size_t j) { return src[i * w + j]; });
  }
  return y;
}

Tensor3 TargetSampler::adjoint(const Tensor3& dy) const {
  Tensor3 dx(dy.c, grid_.n_lat(), grid_.n_lon());
  const std::size_t w = grid_.n_lon();
  for (std::size_t k = 0; k < dy.c; ++k) {
    double* dst = dx.channel(k).data();
    for (std::size_t t = 0; t < stencils_.size(); ++t) {
      const BilinearStencil& s = stencils_[t];
      const double g = dy(k, 0, t);
      const double top = g * (1.0 - s.fy), bot = g * s.fy;
      dst[s.i0 * w + s.j0] += top * (1.0 - s.fx);
      dst[s.i0 * w + s.j1] += top * s.fx;
      dst[s.i1 * w + s.j0] += bot * (1.0 - s.fx);
      dst[s.i1 * w + s.j1] += bot * s.fx;
    }
  }
  return dx;
}

Decoder::Decoder(const std::string& name, const DecoderConfig& config) : config_(config) {
  if (config.in_channels == 0 || config.n_outputs == 0) throw ConfigError("decoder needs inputs and outputs");
  if (!(config.variance_floor > 0.0)) throw ConfigError("variance floor must be positive");
  std::size_t in = config.in_channels + 2;
  for (std::size_t l = 0; l < config.n_hidden; ++l) {
    layers_.emplace_back(name + ".hidden" + std::to_string(l), in, config.hidden);
    in = config.hidden;
  }
  layers_.emplace_back(name + ".out", in, 2 * config.n_outputs);
}

void Decoder::init(Rng& rng) {
  for (auto& l : layers_) l.init(rng);
}

Tensor3 Decoder::forward_raw(const Tensor3& features, const NormalizedCoords& targets, Cache* cache) const {
  if (features.c != config_.in_channels) throw ConfigError("decoder: feature width mismatch");
  const std::size_t n = features.plane();
  if (targets.size() != n) throw ConfigError("decoder: feature/target count mismatch");
  Tensor3 x(config_.in_channels + 2, 1, n);
  std::copy(features.data.begin(), features.data.end(), x.data.begin());
  std::copy(targets.u.begin(), targets.u.end(), x.channel(config_.in_channels).begin());
  std::copy(targets.v.begin(), targets.v.end(), x.channel(config_.in_channels + 1).begin());
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    Tensor3 pre = layers_[l].forward(x);
    Tensor3 act = gelu(pre);
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(std::move(pre));
    }
    x = std::move(act);
  }
  Tensor3 raw = layers_.back().forward(x);
  if (cache) {
    cache->inputs.push_back(std::move(x));
    cache->raw = raw;
  }
  return raw;
}

Tensor3 Decoder::backward(const Cache& cache, const Tensor3& d_raw) {
  Tensor3 g = layers_.back().backward(cache.inputs.back(), d_raw);
  for (std::size_t l = layers_.size() - 1; l-- > 0;) {
    g = gelu_backward(cache.pre[l], g);
    g = layers_[l].backward(cache.inputs[l], g);
  }
  return slice_channels(g, 0, config_.in_channels);
}

AnalysisDistribution Decoder::to_distribution(const Tensor3& raw) const {
  const std::size_t c = config_.n_outputs, n = raw.plane();
  AnalysisDistribution d(c, n);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t t = 0; t < n; ++t) {
      d.mean_at(k, t) = raw.data[k * n + t];
      d.variance_at(k, t) = softplus(raw.data[(c + k) * n + t]) + config_.variance_floor;
    }
  return d;
}

Tensor3 Decoder::raw_gradient(const Tensor3& raw, std::span<const double> d_mean, std::span<const double> d_variance) const {
  const std::size_t c = config_.n_outputs, n = raw.plane();
  Tensor3 g(2 * c, 1, n);
  for (std::size_t k = 0; k < c * n; ++k) {
    g.data[k] = d_mean[k];
    g.data[c * n + k] = d_variance[k] * sigmoid(raw.data[c * n + k]);
  }
  return g;
}

AnalysisDistribution Decoder::decode(const FeatureMap& rep, const NormalizedCoords& targets) const {
  const TargetSampler sampler(rep.grid, targets);
  return to_distribution(forward_raw(sampler.apply(rep.values), targets));
}

void Decoder::collect(ParamList& out) {
  for (auto& l : layers_) l.collect(out);
}

double gaussian_nll(const AnalysisDistribution& dist, std::span<const double> truth, NllGradients* grad) {
  const std::size_t n = dist.mean.size();
  if (truth.size() != n || dist.variance.size() != n) throw ConfigError("gaussian_nll: shape mismatch");
  if (n == 0) throw ConfigError("gaussian_nll: no targets");
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad) {
    grad->d_mean.assign(n, 0.0);
    grad->d_variance.assign(n, 0.0);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double var = dist.variance[k];
    if (!(var > 0.0)) throw NumericError("gaussian_nll: non-positive variance");
    const double r = truth[k] - dist.mean[k];
    total += 0.5 * (log_2pi + std::log(var)) + r * r / (2.0 * var);
    if (grad) {
      grad->d_mean[k] = -r / var * inv_n;
      grad->d_variance[k] = (0.5 / var - r * r / (2.0 * var * var)) * inv_n;
    }
  }
  return total * inv_n;
}

}  // namespace fnp
