#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fnp/grid.hpp"
#include "fnp/rng.hpp"
#include "fnp/tensor.hpp"

namespace fnp::testing {

inline Tensor3 random_tensor(Rng& rng, std::size_t c, std::size_t h, std::size_t w, double scale = 1.0) {
  Tensor3 t(c, h, w);
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

inline double dot(const Tensor3& a, const Tensor3& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.data[k] * b.data[k];
  return s;
}

inline bool close_rel(double a, double b, double rel, double abs_floor = 1e-9) {
  return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b)}) + abs_floor;
}

/// Relative mismatch |fd - analytic| / max(|fd|, |analytic|) between the
/// analytic gradient and central differences, measured in the Euclidean norm
/// over every entry of `values`. `loss` is re-evaluated after each
/// perturbation; `stable` (optional) vetoes coordinates whose perturbation
/// flips a discrete decision.
inline double max_fd_error(std::vector<double>& values, const std::vector<double>& analytic,
                           const std::function<double()>& loss, double step = 1e-6,
                           const std::function<bool()>& stable = {}) {
  double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + step;
    const double lp = loss();
    const bool ok_p = !stable || stable();
    values[i] = orig - step;
    const double lm = loss();
    const bool ok_m = !stable || stable();
    values[i] = orig;
    if (!ok_p || !ok_m) continue;
    const double fd = (lp - lm) / (2.0 * step);
    diff2 += (fd - analytic[i]) * (fd - analytic[i]);
    fd2 += fd * fd;
    an2 += analytic[i] * analytic[i];
  }
  const double scale = std::sqrt(std::max(fd2, an2));
  return scale > 0.0 ? std::sqrt(diff2) / scale : std::sqrt(diff2);
}

inline std::vector<ChannelInfo> four_channels() {
  return {{"z500", 0}, {"z850", 0}, {"t2m", 1}, {"u10", 1}};
}

inline Field random_field(Rng& rng, const LatLonGrid& grid, const std::vector<ChannelInfo>& channels) {
  Field f(grid, channels);
  for (double& v : f.values) v = rng.normal();
  return f;
}

}  // namespace fnp::testing
