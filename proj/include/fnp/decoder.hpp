#pragma once

// Pointwise MLP decoder to a per-channel Gaussian, and the Gaussian negative
// log-likelihood.

#include <span>
#include <string>
#include <vector>

#include "fnp/grid.hpp"
#include "fnp/layers.hpp"
#include "fnp/tensor.hpp"

namespace fnp {

inline constexpr double kVarianceFloor = 1e-6;

/// Per-target, per-channel Gaussian; arrays are channels x n_targets.
struct AnalysisDistribution {
  std::size_t n_channels = 0;
  std::size_t n_targets = 0;
  std::vector<double> mean;
  std::vector<double> variance;

  AnalysisDistribution() = default;
  AnalysisDistribution(std::size_t channels, std::size_t targets)
      : n_channels(channels), n_targets(targets), mean(channels * targets), variance(channels * targets, 1.0) {}

  double& mean_at(std::size_t c, std::size_t t) { return mean[c * n_targets + t]; }
  double mean_at(std::size_t c, std::size_t t) const { return mean[c * n_targets + t]; }
  double& variance_at(std::size_t c, std::size_t t) { return variance[c * n_targets + t]; }
  double variance_at(std::size_t c, std::size_t t) const { return variance[c * n_targets + t]; }

  /// Throws NumericError on non-finite entries or variance <= 0.
  void validate() const;
};

/// Bilinear reads of a grid representation at arbitrary normalized targets,
/// with the same rule as feature alignment.
class TargetSampler {
 public:
  TargetSampler(const LatLonGrid& grid, const NormalizedCoords& targets);

  /// channels x 1 x n_targets
  Tensor3 apply(const Tensor3& x) const;
  Tensor3 adjoint(const Tensor3& dy) const;

 private:
  LatLonGrid grid_;
  std::vector<BilinearStencil> stencils_;
};

struct DecoderConfig {
  std::size_t in_channels = 0;   // representation width
  std::size_t n_outputs = 0;     // physical channels
  std::size_t hidden = 64;
  std::size_t n_hidden = 2;
  double variance_floor = kVarianceFloor;
};

/// MLP over [features at target, u, v] with a shared trunk and a final layer
/// emitting (mean, variance parameter) for every channel. Variance is
/// softplus(parameter) + floor. Biases start at zero, so a zeroed final
/// layer gives mean 0 and variance log(2) + floor.
class Decoder {
 public:
  struct Cache {
    std::vector<Tensor3> inputs;  // input of each linear layer
    std::vector<Tensor3> pre;     // pre-activation of each hidden layer
    Tensor3 raw;                  // final layer output
  };

  Decoder() = default;
  Decoder(const std::string& name, const DecoderConfig& config);

  void init(Rng& rng);

  /// features: in_channels x 1 x n. Returns raw outputs 2C x 1 x n laid out
  /// as [mean (C), variance parameter (C)].
  Tensor3 forward_raw(const Tensor3& features, const NormalizedCoords& targets, Cache* cache = nullptr) const;
  /// Gradient w.r.t. the features given the gradient of the raw outputs.
  Tensor3 backward(const Cache& cache, const Tensor3& d_raw);

  /// Raw outputs to a distribution.
  AnalysisDistribution to_distribution(const Tensor3& raw) const;
  /// Gradient of the raw outputs from gradients w.r.t. mean and variance.
  Tensor3 raw_gradient(const Tensor3& raw, std::span<const double> d_mean, std::span<const double> d_variance) const;

  /// Decode a representation at arbitrary targets inside its grid domain.
  AnalysisDistribution decode(const FeatureMap& rep, const NormalizedCoords& targets) const;

  void collect(ParamList& out);
  const DecoderConfig& config() const { return config_; }
  PointwiseLinear& layer(std::size_t k) { return layers_[k]; }
  std::size_t n_layers() const { return layers_.size(); }

 private:
  DecoderConfig config_;
  std::vector<PointwiseLinear> layers_;
};

struct NllGradients {
  std::vector<double> d_mean;
  std::vector<double> d_variance;
};

/// Mean over points and channels of 0.5 log(2 pi var) + (x - mean)^2 / (2 var).
/// `truth` is channels x n_targets. Throws NumericError on non-positive
/// variance.
double gaussian_nll(const AnalysisDistribution& dist, std::span<const double> truth, NllGradients* grad = nullptr);

}  // namespace fnp
