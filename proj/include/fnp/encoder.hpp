#pragma once

// SetConv embedding of conditional sets onto a reference grid, and the
// spatial-variable decoupled (SVD) representation built from it.

#include <memory>
#include <string>
#include <vector>

#include "fnp/grid.hpp"
#include "fnp/layers.hpp"
#include "fnp/tensor.hpp"

namespace fnp {

/// Density below this is treated as "no data": the normalized signal is 0.
inline constexpr double kDensityEpsilon = 1e-8;

/// Kernel support radius, in length scales. Beyond it the kernel is exactly 0.
inline constexpr double kKernelCutoff = 6.0;

/// Coordinate/value pairs in normalized coordinates of a reference grid.
struct ConditionalSet {
  NormalizedCoords coords;
  std::size_t n_channels = 0;
  std::vector<double> values;          // n_points x n_channels
  std::vector<std::uint8_t> mask;      // n_points x n_channels

  std::size_t size() const { return coords.size(); }
  bool present(std::size_t p, std::size_t c) const { return mask[p * n_channels + c] != 0; }
  double value(std::size_t p, std::size_t c) const { return values[p * n_channels + c]; }

  /// Same points restricted to the listed channels.
  ConditionalSet select(std::span<const std::size_t> channels) const;
};

/// Observations normalized against `reference`'s domain. Throws on non-finite
/// present values.
ConditionalSet make_conditional_set(const ObservationSet& obs, const LatLonGrid& reference);

/// Every point of an on-grid field, all entries present.
ConditionalSet field_as_set(const Field& field);

/// Empty set with the given channel count (zero density everywhere).
ConditionalSet empty_conditional_set(std::size_t n_channels, bool periodic_v);

/// Truncated isotropic Gaussian kernel in normalized coordinates:
/// exp(-d^2 / (2 l^2)) for d < 6 l, else 0. Longitude distance wraps with
/// period 2 when `periodic_v`.
double setconv_kernel(double du, double dv, double length_scale, bool periodic_v);

/// Kernel sums before the pointwise map.
struct SetConvSums {
  Tensor3 density;  // per input channel: sum_i m_ic k_c(g, x_i)
  Tensor3 signal;   // per input channel: sum_i m_ic k_c(g, x_i) y_ic
};

/// SetConv layer: kernel sums with a learnable length scale per input
/// channel (positive through exp), density-normalized signal, then a
/// pointwise linear map of [density, signals] to embed_dim channels. Output
/// channels: [density, embed_dim mapped channels], where density is the mean
/// over input channels of the per-channel kernel density.
class SetConv {
 public:
  struct Cache {
    SetConvSums sums;
    Tensor3 map_input;  // (1 + C) channels: mean density, normalized signals
  };

  SetConv() = default;
  /// Kernel sums are divided by `density_unit` (a fixed constant), so one
  /// unit of density means "as dense as the unit reference".
  SetConv(const std::string& name, std::size_t in_channels, std::size_t embed_dim, double initial_length_scale,
          double density_unit = 1.0);

  void init(Rng& rng);

  SetConvSums kernel_sums(const ConditionalSet& set, const LatLonGrid& reference) const;
  /// [mean density, normalized signals] from the sums.
  Tensor3 normalize(const SetConvSums& sums) const;

  FeatureMap forward(const ConditionalSet& set, const LatLonGrid& reference, Cache* cache = nullptr) const;
  void backward(const ConditionalSet& set, const LatLonGrid& reference, const Cache& cache, const Tensor3& d_out);

  void collect(ParamList& out);

  std::size_t in_channels() const { return in_; }
  std::size_t embed_dim() const { return embed_; }
  std::size_t out_channels() const { return embed_ + 1; }
  double length_scale(std::size_t c) const;

  Parameter log_length_scale;  // per input channel
  PointwiseLinear map;

 private:
  std::size_t in_ = 0, embed_ = 0;
  double gain_ = 1.0;
};

/// Channel grouping for the decoupled representation.
struct EncoderLayout {
  std::vector<std::vector<std::size_t>> groups;  // channel indices per variable group
  std::size_t n_channels = 0;
  std::size_t embed_dim = 128;
  bool decoupled = true;  // false: a single joint embedding (no spatial part)

  /// Groups from channel metadata, ordered by group id.
  static EncoderLayout from_channels(std::span<const ChannelInfo> channels, std::size_t embed_dim, bool decoupled = true);

  /// (n_groups + 1) * (embed_dim + 1) when decoupled, else embed_dim + 1.
  std::size_t out_channels() const;
};

/// One SetConv per variable group (spatial representation) plus one over all
/// channels (variable representation), concatenated along channels in that
/// order: [group 0 | group 1 | ... | all-variable].
class SvdEncoder {
 public:
  struct Cache {
    std::vector<SetConv::Cache> parts;
  };

  SvdEncoder() = default;
  SvdEncoder(const std::string& name, const EncoderLayout& layout, double initial_length_scale,
             double density_unit = 1.0);

  void init(Rng& rng);
  FeatureMap forward(const ConditionalSet& set, const LatLonGrid& reference, Cache* cache = nullptr) const;
  void backward(const ConditionalSet& set, const LatLonGrid& reference, const Cache& cache, const Tensor3& d_out);
  void collect(ParamList& out);

  std::size_t out_channels() const { return layout_.out_channels(); }
  const EncoderLayout& layout() const { return layout_; }
  std::size_t n_parts() const { return convs_.size(); }
  const SetConv& part(std::size_t k) const { return convs_[k]; }

 private:
  std::vector<std::size_t> part_channels(std::size_t k) const;

  EncoderLayout layout_;
  std::vector<SetConv> convs_;  // groups first, joint last
};

/// Default initial length scale: two grid cells of the coarser axis, in
/// normalized units.
double default_length_scale(const LatLonGrid& reference);

/// Kernel mass a fully observed `reference` grid puts on one point, for a
/// Gaussian of the given length scale: 2 pi l^2 / (cell_u cell_v).
double full_grid_density(const LatLonGrid& reference, double length_scale);

}  // namespace fnp
