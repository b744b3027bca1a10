#pragma once

// Dynamic alignment and merge: bring the observation representation onto the
// target grid, extract shared features, pick per grid point the background
// or observation vector by Euclidean distance to the shared features, and
// smooth [selected, shared] with one convolution.

#include <cstdint>
#include <string>
#include <vector>

#include "fnp/grid.hpp"
#include "fnp/layers.hpp"
#include "fnp/tensor.hpp"

namespace fnp {

/// Bilinear resampling plan from one grid to another over the same domain.
class AlignPlan {
 public:
  AlignPlan(const LatLonGrid& source, const LatLonGrid& target);

  Tensor3 apply(const Tensor3& x) const;
  /// Adjoint of apply: scatters target-grid gradients back to the source grid.
  Tensor3 adjoint(const Tensor3& dy) const;

  bool identity() const { return identity_; }

 private:
  LatLonGrid source_, target_;
  bool identity_ = false;
  std::vector<BilinearStencil> stencils_;  // one per target point
};

/// Every channel (density included) bilinearly interpolated onto `target`.
/// Identical grids return an exact copy. Throws ConfigError when the domains
/// differ.
FeatureMap align(const FeatureMap& x, const LatLonGrid& target);

/// Per-point Euclidean distance over channels; result has one channel.
Tensor3 similarity(const Tensor3& y, const Tensor3& shared);

/// Which vector survives the comparison.
enum class RetainRule {
  Verbatim,  // background when sim_bg >= sim_obs
  Prose      // background when sim_bg <= sim_obs (the closer one is kept)
};

/// 1 where the background vector is selected.
std::vector<std::uint8_t> selection_mask(const Tensor3& sim_bg, const Tensor3& sim_obs, RetainRule rule);

/// Whole-vector per-point selection; no blending.
Tensor3 select_merge(const Tensor3& y_bg, const Tensor3& y_obs, const std::vector<std::uint8_t>& take_bg);

enum class SelectionMode {
  Hard,  // mask frozen during backpropagation
  Soft   // w_bg = sigmoid(+-(sim_bg - sim_obs) / temperature), differentiable
};

struct DamConfig {
  std::size_t width = 0;  // channels of each input; also shared and output width
  std::size_t smoother_kernel = 3;
  RetainRule retain = RetainRule::Verbatim;
  SelectionMode selection = SelectionMode::Hard;
  double temperature = 1.0;
};

class Dam {
 public:
  struct Cache {
    Tensor3 bg, obs_aligned;
    Tensor3 stacked;  // [bg, obs_aligned]
    Tensor3 shared;
    Tensor3 sim_bg, sim_obs;
    std::vector<double> weight_bg;  // 0/1 for hard selection
    Tensor3 merged;                 // [selected, shared]
  };

  Dam() = default;
  Dam(const std::string& name, const DamConfig& config);

  void init(Rng& rng);

  /// `bg` lives on the target grid; `obs` on its own reference grid.
  FeatureMap forward(const FeatureMap& bg, const FeatureMap& obs, Cache* cache = nullptr) const;
  /// Returns (d_bg, d_obs) on the respective input grids.
  std::pair<Tensor3, Tensor3> backward(const FeatureMap& bg, const FeatureMap& obs, const Cache& cache,
                                       const Tensor3& dy);
  void collect(ParamList& out);

  const DamConfig& config() const { return config_; }

  PointwiseLinear shared_map;  // 2 width -> width
  Conv2d smoother;             // 2 width -> width

 private:
  DamConfig config_;
};

}  // namespace fnp
