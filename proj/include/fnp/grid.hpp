#pragma once

// Equiangular latitude/longitude grids, multi-channel fields and sparse
// observation sets.
//
// Grid convention: cell-centered. A global n_lat x n_lon grid has latitude
// centers at -90 + (i + 1/2) * 180/n_lat (south to north) and longitude
// centers at (j + 1/2) * 360/n_lon; poles are cell edges, never centers, so
// cos(latitude) is strictly positive at every point.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fnp {

struct GeoPoint {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees
};

/// Cell-edge extents of a grid domain, in degrees.
struct GridDomain {
  double lat_min = -90.0;
  double lat_max = 90.0;
  double lon_min = 0.0;
  double lon_max = 360.0;

  static GridDomain global() { return {}; }
};

class LatLonGrid {
 public:
  LatLonGrid() = default;

  /// Grid from first center and signed spacing on each axis.
  LatLonGrid(std::size_t n_lat, std::size_t n_lon, double lat0, double dlat, double lon0, double dlon);

  std::size_t n_lat() const { return n_lat_; }
  std::size_t n_lon() const { return n_lon_; }
  std::size_t size() const { return n_lat_ * n_lon_; }
  double lat0() const { return lat0_; }
  double dlat() const { return dlat_; }
  double lon0() const { return lon0_; }
  double dlon() const { return dlon_; }

  double latitude(std::size_t i) const { return lat0_ + static_cast<double>(i) * dlat_; }
  double longitude(std::size_t j) const { return lon0_ + static_cast<double>(j) * dlon_; }
  std::vector<double> latitudes() const;
  std::vector<double> longitudes() const;

  /// Cell-edge extents.
  GridDomain domain() const;

  /// True when the longitude axis wraps the whole circle.
  bool periodic_lon() const;

  /// Same shape and coordinates to within 1e-9 degrees.
  bool same_as(const LatLonGrid& other) const;

  /// Same cell-edge domain to within 1e-9 degrees (resolution may differ).
  bool same_domain(const LatLonGrid& other) const;

  /// Nominal resolution in degrees (latitude spacing magnitude).
  double resolution() const;

  bool operator==(const LatLonGrid& other) const = default;

 private:
  std::size_t n_lat_ = 0;
  std::size_t n_lon_ = 0;
  double lat0_ = 0.0;
  double dlat_ = 0.0;
  double lon0_ = 0.0;
  double dlon_ = 0.0;
};

/// Cell-centered uniform grid over `domain`.
LatLonGrid make_equiangular_grid(std::size_t n_lat, std::size_t n_lon,
                                 const GridDomain& domain = GridDomain::global());

/// Global grid with the given resolution in degrees (n_lat = 180/res, n_lon = 360/res).
LatLonGrid make_global_grid_for_resolution(double resolution_deg);

struct ChannelInfo {
  std::string name;
  std::uint32_t group = 0;

  bool operator==(const ChannelInfo&) const = default;
};

/// Multi-channel values on a grid; values laid out channel-major, then
/// row-major (lat, lon).
struct Field {
  LatLonGrid grid;
  std::vector<ChannelInfo> channels;
  std::vector<double> values;

  Field() = default;
  Field(LatLonGrid g, std::vector<ChannelInfo> ch);
  Field(LatLonGrid g, std::vector<ChannelInfo> ch, std::vector<double> v);

  std::size_t n_channels() const { return channels.size(); }
  double& at(std::size_t c, std::size_t i, std::size_t j) { return values[(c * grid.n_lat() + i) * grid.n_lon() + j]; }
  double at(std::size_t c, std::size_t i, std::size_t j) const {
    return values[(c * grid.n_lat() + i) * grid.n_lon() + j];
  }
  std::span<double> channel(std::size_t c) { return {values.data() + c * grid.size(), grid.size()}; }
  std::span<const double> channel(std::size_t c) const { return {values.data() + c * grid.size(), grid.size()}; }

  /// Throws ConfigError on shape mismatch, NumericError on non-finite values.
  void validate() const;
};

/// Sparse observations at arbitrary coordinates. Masked-out entries hold
/// `kMissing` (a quiet NaN) and must never be read.
struct ObservationSet {
  std::vector<GeoPoint> coords;
  std::size_t n_channels = 0;
  std::vector<double> values;          // n_points x n_channels
  std::vector<std::uint8_t> mask;      // n_points x n_channels, 1 = present
  double source_resolution = 0.0;      // degrees; 0 means "unknown / off-grid"

  std::size_t size() const { return coords.size(); }
  bool empty() const { return coords.empty(); }
  bool present(std::size_t p, std::size_t c) const { return mask[p * n_channels + c] != 0; }
  double value(std::size_t p, std::size_t c) const { return values[p * n_channels + c]; }

  /// Append a point; `vals`/`present` have n_channels entries.
  void push_back(GeoPoint pt, std::span<const double> vals, std::span<const std::uint8_t> present_flags);

  void validate() const;

  static ObservationSet empty_set(std::size_t n_channels, double source_resolution = 0.0);
};

extern const double kMissing;

/// Points mapped affinely onto [-1, 1] per axis: u from latitude, v from longitude.
struct NormalizedCoords {
  std::vector<double> u;
  std::vector<double> v;
  bool periodic_v = false;

  std::size_t size() const { return u.size(); }
};

/// Affine map of each axis of the grid domain onto [-1, 1]. For periodic
/// grids longitudes are first wrapped into the domain. Throws ConfigError on
/// out-of-domain points.
NormalizedCoords normalize_coords(std::span<const GeoPoint> points, const LatLonGrid& grid);

/// Inverse of normalize_coords.
std::vector<GeoPoint> denormalize_coords(const NormalizedCoords& coords, const LatLonGrid& grid);

/// Normalized coordinates of every grid center, in row-major order.
NormalizedCoords grid_normalized_coords(const LatLonGrid& grid);

/// Coordinates of every grid center, in row-major order.
std::vector<GeoPoint> grid_points(const LatLonGrid& grid);

/// Bilinear stencil: value = lerp over rows (i0,i1) with fy of lerps over
/// columns (j0,j1) with fx. Longitudes wrap on periodic grids; beyond the
/// outermost centers the stencil clamps (constant extrapolation). Exact
/// grid points produce fy = fx = 0.
struct BilinearStencil {
  std::size_t i0 = 0, i1 = 0, j0 = 0, j1 = 0;
  double fy = 0.0, fx = 0.0;

  std::size_t n00(std::size_t n_lon) const { return i0 * n_lon + j0; }

  template <class Get>
  double apply(Get&& get) const {
    const double v00 = get(i0, j0), v01 = get(i0, j1), v10 = get(i1, j0), v11 = get(i1, j1);
    const double top = v00 + fx * (v01 - v00);
    const double bot = v10 + fx * (v11 - v10);
    return top + fy * (bot - top);
  }
};

/// Stencil for reading `grid` at (lat, lon); throws ConfigError when the
/// point lies outside the grid domain.
BilinearStencil bilinear_stencil(const LatLonGrid& grid, GeoPoint pt);

/// Bilinear read of all channels of `field` at `pt`.
std::vector<double> sample_bilinear(const Field& field, GeoPoint pt);

/// Bilinear resampling of a whole field onto another grid covering the same
/// domain. Identical grids return an exact copy.
Field resample_bilinear(const Field& field, const LatLonGrid& target);

/// Perfect-instrument observation simulator: a uniformly random subset of
/// floor(ratio * H_obs * W_obs) centers of `obs_grid`, values read from
/// `truth` bilinearly, all channels present. Deterministic given `seed`.
ObservationSet sample_observations(const Field& truth, const LatLonGrid& obs_grid, double ratio,
                                   std::uint64_t seed);

/// floor(ratio * n) with a 1e-9 guard against binary round-off in ratio.
std::size_t observation_count(double ratio, std::size_t n);

}  // namespace fnp
