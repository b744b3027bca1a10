#include "fnp/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fnp/error.hpp"
#include "fnp/rng.hpp"

namespace fnp {

const double kMissing = std::numeric_limits<double>::quiet_NaN();

namespace {

constexpr double kCoordTol = 1e-9;

// Fractions this close to an integer are snapped so that reads at grid
// centers are exact copies.
constexpr double kSnapTol = 1e-9;

void axis_stencil(double r, std::size_t n, bool periodic, std::size_t& k0, std::size_t& k1, double& f) {
  const double nd = static_cast<double>(n);
  if (periodic) {
    r = std::fmod(r, nd);
    if (r < 0.0) r += nd;
    double base = std::floor(r);
    f = r - base;
    if (f < kSnapTol) {
      f = 0.0;
    } else if (f > 1.0 - kSnapTol) {
      f = 0.0;
      base += 1.0;
    }
    k0 = static_cast<std::size_t>(base) % n;
    k1 = (k0 + 1) % n;
    return;
  }
  if (r <= 0.0 || n == 1) {
    k0 = k1 = 0;
    f = 0.0;
    return;
  }
  if (r >= nd - 1.0) {
    k0 = k1 = n - 1;
    f = 0.0;
    return;
  }
  double base = std::floor(r);
  f = r - base;
  if (f < kSnapTol) {
    f = 0.0;
  } else if (f > 1.0 - kSnapTol) {
    f = 0.0;
    base += 1.0;
  }
  k0 = static_cast<std::size_t>(base);
  k1 = std::min(k0 + 1, n - 1);
}

double wrap_lon(double lon, double lon_min) {
  double x = std::fmod(lon - lon_min, 360.0);
  if (x < 0.0) x += 360.0;
  if (x >= 360.0) x -= 360.0;
  return lon_min + x;
}

}  // namespace

LatLonGrid::LatLonGrid(std::size_t n_lat, std::size_t n_lon, double lat0, double dlat, double lon0, double dlon)
    : n_lat_(n_lat), n_lon_(n_lon), lat0_(lat0), dlat_(dlat), lon0_(lon0), dlon_(dlon) {
  if (n_lat == 0 || n_lon == 0) throw ConfigError("grid sizes must be positive");
  if (!(std::isfinite(lat0) && std::isfinite(dlat) && std::isfinite(lon0) && std::isfinite(dlon)))
    throw ConfigError("grid coordinates must be finite");
  if (dlat == 0.0) throw ConfigError("latitude spacing must be nonzero");
  if (!(dlon > 0.0)) throw ConfigError("longitude spacing must be positive");
  const GridDomain d = domain();
  if (d.lat_min < -90.0 - kCoordTol || d.lat_max > 90.0 + kCoordTol)
    throw ConfigError("grid latitudes exceed [-90, 90]");
  if (d.lon_max - d.lon_min > 360.0 + kCoordTol) throw ConfigError("grid longitudes span more than 360 degrees");
  if (d.lon_min < -180.0 - kCoordTol || d.lon_max > 360.0 + kCoordTol)
    throw ConfigError("grid longitudes must lie in [0, 360) or [-180, 180)");
}

std::vector<double> LatLonGrid::latitudes() const {
  std::vector<double> out(n_lat_);
  for (std::size_t i = 0; i < n_lat_; ++i) out[i] = latitude(i);
  return out;
}

std::vector<double> LatLonGrid::longitudes() const {
  std::vector<double> out(n_lon_);
  for (std::size_t j = 0; j < n_lon_; ++j) out[j] = longitude(j);
  return out;
}

GridDomain LatLonGrid::domain() const {
  const double last_lat = latitude(n_lat_ - 1);
  const double half_lat = std::abs(dlat_) / 2.0;
  GridDomain d;
  d.lat_min = std::min(lat0_, last_lat) - half_lat;
  d.lat_max = std::max(lat0_, last_lat) + half_lat;
  d.lon_min = lon0_ - dlon_ / 2.0;
  d.lon_max = longitude(n_lon_ - 1) + dlon_ / 2.0;
  return d;
}

bool LatLonGrid::periodic_lon() const {
  return std::abs(static_cast<double>(n_lon_) * dlon_ - 360.0) < kCoordTol;
}

bool LatLonGrid::same_as(const LatLonGrid& o) const {
  return n_lat_ == o.n_lat_ && n_lon_ == o.n_lon_ && std::abs(lat0_ - o.lat0_) < kCoordTol &&
         std::abs(dlat_ - o.dlat_) < kCoordTol && std::abs(lon0_ - o.lon0_) < kCoordTol &&
         std::abs(dlon_ - o.dlon_) < kCoordTol;
}

bool LatLonGrid::same_domain(const LatLonGrid& o) const {
  const GridDomain a = domain();
  const GridDomain b = o.domain();
  return std::abs(a.lat_min - b.lat_min) < kCoordTol && std::abs(a.lat_max - b.lat_max) < kCoordTol &&
         std::abs(a.lon_min - b.lon_min) < kCoordTol && std::abs(a.lon_max - b.lon_max) < kCoordTol;
}

double LatLonGrid::resolution() const { return std::abs(dlat_); }

LatLonGrid make_equiangular_grid(std::size_t n_lat, std::size_t n_lon, const GridDomain& domain) {
  if (n_lat == 0 || n_lon == 0) throw ConfigError("grid sizes must be positive");
  if (!(domain.lat_min < domain.lat_max)) throw ConfigError("inverted latitude extents");
  if (!(domain.lon_min < domain.lon_max)) throw ConfigError("inverted longitude extents");
  const double dlat = (domain.lat_max - domain.lat_min) / static_cast<double>(n_lat);
  const double dlon = (domain.lon_max - domain.lon_min) / static_cast<double>(n_lon);
  return LatLonGrid(n_lat, n_lon, domain.lat_min + dlat / 2.0, dlat, domain.lon_min + dlon / 2.0, dlon);
}

LatLonGrid make_global_grid_for_resolution(double resolution_deg) {
  if (!(resolution_deg > 0.0)) throw ConfigError("resolution must be positive");
  const auto n_lat = static_cast<std::size_t>(std::llround(180.0 / resolution_deg));
  const auto n_lon = static_cast<std::size_t>(std::llround(360.0 / resolution_deg));
  if (n_lat == 0 || std::abs(static_cast<double>(n_lat) * resolution_deg - 180.0) > 1e-6)
    throw ConfigError("resolution does not divide the globe evenly");
  return make_equiangular_grid(n_lat, n_lon);
}

Field::Field(LatLonGrid g, std::vector<ChannelInfo> ch)
    : grid(std::move(g)), channels(std::move(ch)), values(channels.size() * grid.size(), 0.0) {}

Field::Field(LatLonGrid g, std::vector<ChannelInfo> ch, std::vector<double> v)
    : grid(std::move(g)), channels(std::move(ch)), values(std::move(v)) {
  if (values.size() != channels.size() * grid.size()) throw ConfigError("field values do not match grid x channels");
}

void Field::validate() const {
  if (values.size() != channels.size() * grid.size()) throw ConfigError("field values do not match grid x channels");
  for (std::size_t k = 0; k < values.size(); ++k)
    if (!std::isfinite(values[k])) throw NumericError("field contains a non-finite value at flat index " + std::to_string(k));
}

void ObservationSet::push_back(GeoPoint pt, std::span<const double> vals, std::span<const std::uint8_t> present_flags) {
  if (vals.size() != n_channels || present_flags.size() != n_channels)
    throw ConfigError("observation record width does not match n_channels");
  coords.push_back(pt);
  for (std::size_t c = 0; c < n_channels; ++c) {
    mask.push_back(present_flags[c] ? 1 : 0);
    values.push_back(present_flags[c] ? vals[c] : kMissing);
  }
}

void ObservationSet::validate() const {
  const std::size_t n = coords.size() * n_channels;
  if (values.size() != n || mask.size() != n) throw ConfigError("observation arrays do not match n_points x n_channels");
  for (std::size_t k = 0; k < n; ++k)
    if (mask[k] && !std::isfinite(values[k]))
      throw NumericError("observation value is non-finite at flat index " + std::to_string(k));
  for (const auto& p : coords)
    if (!std::isfinite(p.lat) || !std::isfinite(p.lon)) throw NumericError("observation coordinate is non-finite");
}

ObservationSet ObservationSet::empty_set(std::size_t n_channels, double source_resolution) {
  ObservationSet s;
  s.n_channels = n_channels;
  s.source_resolution = source_resolution;
  return s;
}

NormalizedCoords normalize_coords(std::span<const GeoPoint> points, const LatLonGrid& grid) {
  const GridDomain d = grid.domain();
  const bool periodic = grid.periodic_lon();
  NormalizedCoords out;
  out.periodic_v = periodic;
  out.u.reserve(points.size());
  out.v.reserve(points.size());
  for (const auto& p : points) {
    if (!(p.lat >= d.lat_min - kCoordTol && p.lat <= d.lat_max + kCoordTol)) {
      std::ostringstream msg;
      msg << "latitude " << p.lat << " outside grid domain [" << d.lat_min << ", " << d.lat_max << "]";
      throw ConfigError(msg.str());
    }
    double lon = p.lon;
    if (periodic) {
      lon = wrap_lon(lon, d.lon_min);
    } else if (!(lon >= d.lon_min - kCoordTol && lon <= d.lon_max + kCoordTol)) {
      std::ostringstream msg;
      msg << "longitude " << p.lon << " outside grid domain [" << d.lon_min << ", " << d.lon_max << "]";
      throw ConfigError(msg.str());
    }
    const double u = 2.0 * (p.lat - d.lat_min) / (d.lat_max - d.lat_min) - 1.0;
    const double v = 2.0 * (lon - d.lon_min) / (d.lon_max - d.lon_min) - 1.0;
    out.u.push_back(std::clamp(u, -1.0, 1.0));
    out.v.push_back(std::clamp(v, -1.0, 1.0));
  }
  return out;
}

std::vector<GeoPoint> denormalize_coords(const NormalizedCoords& coords, const LatLonGrid& grid) {
  const GridDomain d = grid.domain();
  std::vector<GeoPoint> out(coords.size());
  for (std::size_t k = 0; k < coords.size(); ++k) {
    out[k].lat = d.lat_min + (coords.u[k] + 1.0) / 2.0 * (d.lat_max - d.lat_min);
    out[k].lon = d.lon_min + (coords.v[k] + 1.0) / 2.0 * (d.lon_max - d.lon_min);
  }
  return out;
}

std::vector<GeoPoint> grid_points(const LatLonGrid& grid) {
  std::vector<GeoPoint> pts;
  pts.reserve(grid.size());
  for (std::size_t i = 0; i < grid.n_lat(); ++i)
    for (std::size_t j = 0; j < grid.n_lon(); ++j) pts.push_back({grid.latitude(i), grid.longitude(j)});
  return pts;
}

NormalizedCoords grid_normalized_coords(const LatLonGrid& grid) {
  const auto pts = grid_points(grid);
  return normalize_coords(pts, grid);
}

BilinearStencil bilinear_stencil(const LatLonGrid& grid, GeoPoint pt) {
  const GridDomain d = grid.domain();
  if (!(pt.lat >= d.lat_min - kCoordTol && pt.lat <= d.lat_max + kCoordTol))
    throw ConfigError("bilinear read outside grid latitude domain");
  const bool periodic = grid.periodic_lon();
  if (!periodic && !(pt.lon >= d.lon_min - kCoordTol && pt.lon <= d.lon_max + kCoordTol))
    throw ConfigError("bilinear read outside grid longitude domain");
  BilinearStencil s;
  axis_stencil((pt.lat - grid.lat0()) / grid.dlat(), grid.n_lat(), false, s.i0, s.i1, s.fy);
  axis_stencil((pt.lon - grid.lon0()) / grid.dlon(), grid.n_lon(), periodic, s.j0, s.j1, s.fx);
  return s;
}

std::vector<double> sample_bilinear(const Field& field, GeoPoint pt) {
  const BilinearStencil s = bilinear_stencil(field.grid, pt);
  std::vector<double> out(field.n_channels());
  for (std::size_t c = 0; c < field.n_channels(); ++c)
    out[c] = s.apply([&](std::size_t i, std::size_t j) { return field.at(c, i, j); });
  return out;
}

Field resample_bilinear(const Field& field, const LatLonGrid& target) {
  if (field.grid.same_as(target)) {
    Field copy = field;
    copy.grid = target;
    return copy;
  }
  if (!field.grid.same_domain(target)) throw ConfigError("resample: source and target grids cover different domains");
  Field out(target, field.channels);
  for (std::size_t i = 0; i < target.n_lat(); ++i) {
    for (std::size_t j = 0; j < target.n_lon(); ++j) {
      const BilinearStencil s = bilinear_stencil(field.grid, {target.latitude(i), target.longitude(j)});
      for (std::size_t c = 0; c < field.n_channels(); ++c)
        out.at(c, i, j) = s.apply([&](std::size_t a, std::size_t b) { return field.at(c, a, b); });
    }
  }
  return out;
}

std::size_t observation_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

ObservationSet sample_observations(const Field& truth, const LatLonGrid& obs_grid, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("observation ratio must lie in [0, 1]");
  if (!truth.grid.same_domain(obs_grid)) throw ConfigError("observation grid and truth grid cover different domains");
  const std::size_t count = observation_count(ratio, obs_grid.size());
  Rng rng(seed);
  std::vector<std::size_t> chosen = rng.permutation(obs_grid.size());
  chosen.resize(count);
  std::sort(chosen.begin(), chosen.end());

  ObservationSet obs = ObservationSet::empty_set(truth.n_channels(), obs_grid.resolution());
  obs.coords.reserve(count);
  obs.values.reserve(count * truth.n_channels());
  obs.mask.reserve(count * truth.n_channels());
  const std::vector<std::uint8_t> all_present(truth.n_channels(), 1);
  for (std::size_t idx : chosen) {
    const GeoPoint pt{obs_grid.latitude(idx / obs_grid.n_lon()), obs_grid.longitude(idx % obs_grid.n_lon())};
    const auto vals = sample_bilinear(truth, pt);
    obs.push_back(pt, vals, all_present);
  }
  return obs;
}

}  // namespace fnp
