#include "fnp/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "fnp/error.hpp"
#include "fnp/rng.hpp"

namespace fnp {

namespace {

struct AxisTaps {
  std::vector<std::size_t> idx;
  std::vector<double> d2;

  void clear() {
    idx.clear();
    d2.clear();
  }
};

double center(std::ptrdiff_t k, double cell) { return -1.0 + (static_cast<double>(k) + 0.5) * cell; }

void row_taps(double u, std::size_t n, double radius, AxisTaps& out) {
  out.clear();
  const double cell = 2.0 / static_cast<double>(n);
  auto lo = static_cast<std::ptrdiff_t>(std::ceil((u - radius + 1.0) / cell - 0.5));
  auto hi = static_cast<std::ptrdiff_t>(std::floor((u + radius + 1.0) / cell - 0.5));
  lo = std::max<std::ptrdiff_t>(lo, 0);
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(n) - 1);
  for (std::ptrdiff_t r = lo; r <= hi; ++r) {
    const double d = u - center(r, cell);
    out.idx.push_back(static_cast<std::size_t>(r));
    out.d2.push_back(d * d);
  }
}

void col_taps(double v, std::size_t n, double radius, bool periodic, AxisTaps& out) {
  out.clear();
  const double cell = 2.0 / static_cast<double>(n);
  auto lo = static_cast<std::ptrdiff_t>(std::ceil((v - radius + 1.0) / cell - 0.5));
  auto hi = static_cast<std::ptrdiff_t>(std::floor((v + radius + 1.0) / cell - 0.5));
  const auto nn = static_cast<std::ptrdiff_t>(n);
  if (!periodic) {
    lo = std::max<std::ptrdiff_t>(lo, 0);
    hi = std::min<std::ptrdiff_t>(hi, nn - 1);
  } else if (hi - lo + 1 >= nn) {
    for (std::ptrdiff_t j = 0; j < nn; ++j) {
      double d = v - center(j, cell);
      d -= 2.0 * std::round(d / 2.0);
      out.idx.push_back(static_cast<std::size_t>(j));
      out.d2.push_back(d * d);
    }
    return;
  }
  for (std::ptrdiff_t j = lo; j <= hi; ++j) {
    const double d = v - center(j, cell);
    out.idx.push_back(periodic ? static_cast<std::size_t>(((j % nn) + nn) % nn) : static_cast<std::size_t>(j));
    out.d2.push_back(d * d);
  }
}

// Visits every (grid index, kernel value, squared distance) within the cutoff
// of point (u, v).
template <class F>
void for_each_tap(double u, double v, const LatLonGrid& ref, double ell, bool periodic, AxisTaps& rows, AxisTaps& cols,
                  std::vector<double>& kr, std::vector<double>& kc, F&& f) {
  const double radius = kKernelCutoff * ell;
  const double r2 = radius * radius;
  const double inv = 1.0 / (2.0 * ell * ell);
  row_taps(u, ref.n_lat(), radius, rows);
  col_taps(v, ref.n_lon(), radius, periodic, cols);
  kr.resize(rows.d2.size());
  kc.resize(cols.d2.size());
  for (std::size_t a = 0; a < kr.size(); ++a) kr[a] = std::exp(-rows.d2[a] * inv);
  for (std::size_t b = 0; b < kc.size(); ++b) kc[b] = std::exp(-cols.d2[b] * inv);
  const std::size_t w = ref.n_lon();
  for (std::size_t a = 0; a < rows.idx.size(); ++a) {
    const std::size_t base = rows.idx[a] * w;
    const double du2 = rows.d2[a];
    for (std::size_t b = 0; b < cols.idx.size(); ++b) {
      const double d2 = du2 + cols.d2[b];
      if (d2 < r2) f(base + cols.idx[b], kr[a] * kc[b], d2);
    }
  }
}

}  // namespace

ConditionalSet ConditionalSet::select(std::span<const std::size_t> channels) const {
  ConditionalSet out;
  out.coords = coords;
  out.n_channels = channels.size();
  out.values.resize(size() * channels.size());
  out.mask.resize(size() * channels.size());
  for (std::size_t p = 0; p < size(); ++p)
    for (std::size_t k = 0; k < channels.size(); ++k) {
      out.values[p * channels.size() + k] = value(p, channels[k]);
      out.mask[p * channels.size() + k] = mask[p * n_channels + channels[k]];
    }
  return out;
}

ConditionalSet make_conditional_set(const ObservationSet& obs, const LatLonGrid& reference) {
  obs.validate();
  ConditionalSet s;
  s.coords = normalize_coords(obs.coords, reference);
  s.n_channels = obs.n_channels;
  s.values = obs.values;
  s.mask = obs.mask;
  return s;
}

ConditionalSet field_as_set(const Field& field) {
  field.validate();
  ConditionalSet s;
  s.coords = grid_normalized_coords(field.grid);
  s.n_channels = field.n_channels();
  const std::size_t n = field.grid.size();
  s.values.resize(n * s.n_channels);
  s.mask.assign(n * s.n_channels, 1);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < s.n_channels; ++c) s.values[p * s.n_channels + c] = field.values[c * n + p];
  return s;
}

ConditionalSet empty_conditional_set(std::size_t n_channels, bool periodic_v) {
  ConditionalSet s;
  s.n_channels = n_channels;
  s.coords.periodic_v = periodic_v;
  return s;
}

double setconv_kernel(double du, double dv, double length_scale, bool periodic_v) {
  if (periodic_v) dv -= 2.0 * std::round(dv / 2.0);
  const double d2 = du * du + dv * dv;
  const double radius = kKernelCutoff * length_scale;
  if (d2 >= radius * radius) return 0.0;
  return std::exp(-du * du / (2.0 * length_scale * length_scale)) *
         std::exp(-dv * dv / (2.0 * length_scale * length_scale));
}

double default_length_scale(const LatLonGrid& reference) {
  const double cell = std::max(2.0 / static_cast<double>(reference.n_lat()), 2.0 / static_cast<double>(reference.n_lon()));
  return 2.0 * cell;
}

double full_grid_density(const LatLonGrid& reference, double length_scale) {
  const double cell_u = 2.0 / static_cast<double>(reference.n_lat());
  const double cell_v = 2.0 / static_cast<double>(reference.n_lon());
  return 2.0 * std::numbers::pi * length_scale * length_scale / (cell_u * cell_v);
}

SetConv::SetConv(const std::string& name, std::size_t in_channels, std::size_t embed_dim, double initial_length_scale,
                 double density_unit)
    : log_length_scale(name + ".log_length_scale", {in_channels}, false),
      map(name + ".map", in_channels + 1, embed_dim),
      in_(in_channels),
      embed_(embed_dim),
      gain_(1.0 / density_unit) {
  if (in_channels == 0) throw ConfigError("SetConv '" + name + "' needs at least one input channel");
  if (!(initial_length_scale > 0.0)) throw ConfigError("SetConv length scale must be positive");
  if (!(density_unit > 0.0) || !std::isfinite(density_unit)) throw ConfigError("SetConv density unit must be positive");
  log_length_scale.fill(std::log(initial_length_scale));
}

void SetConv::init(Rng& rng) { map.init(rng); }

double SetConv::length_scale(std::size_t c) const { return std::exp(log_length_scale.value[c]); }

SetConvSums SetConv::kernel_sums(const ConditionalSet& set, const LatLonGrid& reference) const {
  if (set.n_channels != in_) throw ConfigError("SetConv: conditional set has " + std::to_string(set.n_channels) +
                                               " channels, layer expects " + std::to_string(in_));
  const std::size_t h = reference.n_lat(), w = reference.n_lon();
  SetConvSums sums{Tensor3(in_, h, w), Tensor3(in_, h, w)};
  const bool periodic = reference.periodic_lon();
  AxisTaps rows, cols;
  std::vector<double> kr, kc;
  for (std::size_t c = 0; c < in_; ++c) {
    const double ell = length_scale(c);
    double* dens = sums.density.channel(c).data();
    double* sig = sums.signal.channel(c).data();
    for (std::size_t p = 0; p < set.size(); ++p) {
      if (!set.present(p, c)) continue;
      const double y = set.value(p, c);
      if (!std::isfinite(y)) throw NumericError("SetConv: non-finite conditional value");
      for_each_tap(set.coords.u[p], set.coords.v[p], reference, ell, periodic, rows, cols, kr, kc,
                   [&](std::size_t g, double k, double) {
                     dens[g] += gain_ * k;
                     sig[g] += gain_ * k * y;
                   });
    }
  }
  return sums;
}

Tensor3 SetConv::normalize(const SetConvSums& sums) const {
  const std::size_t h = sums.density.h, w = sums.density.w, n = h * w;
  Tensor3 out(in_ + 1, h, w);
  const double inv_c = 1.0 / static_cast<double>(in_);
  for (std::size_t c = 0; c < in_; ++c) {
    const double* dens = sums.density.channel(c).data();
    const double* sig = sums.signal.channel(c).data();
    double* mean_d = out.channel(0).data();
    double* dst = out.channel(c + 1).data();
    for (std::size_t g = 0; g < n; ++g) {
      mean_d[g] += dens[g] * inv_c;
      dst[g] = dens[g] > kDensityEpsilon ? sig[g] / dens[g] : 0.0;
    }
  }
  return out;
}

FeatureMap SetConv::forward(const ConditionalSet& set, const LatLonGrid& reference, Cache* cache) const {
  SetConvSums sums = kernel_sums(set, reference);
  Tensor3 input = normalize(sums);
  Tensor3 mapped = map.forward(input);
  FeatureMap out{reference, Tensor3(embed_ + 1, reference.n_lat(), reference.n_lon())};
  std::copy(input.channel(0).begin(), input.channel(0).end(), out.values.channel(0).begin());
  std::copy(mapped.data.begin(), mapped.data.end(), out.values.data.begin() + static_cast<std::ptrdiff_t>(out.values.plane()));
  if (cache) {
    cache->sums = std::move(sums);
    cache->map_input = std::move(input);
  }
  return out;
}

void SetConv::backward(const ConditionalSet& set, const LatLonGrid& reference, const Cache& cache, const Tensor3& d_out) {
  const std::size_t h = reference.n_lat(), w = reference.n_lon(), n = h * w;
  const Tensor3 d_mapped = slice_channels(d_out, 1, embed_);
  Tensor3 d_input = map.backward(cache.map_input, d_mapped);
  // The density output channel is a direct copy of map-input channel 0.
  {
    auto dd = d_input.channel(0);
    auto src = d_out.channel(0);
    for (std::size_t g = 0; g < n; ++g) dd[g] += src[g];
  }

  const bool periodic = reference.periodic_lon();
  const double inv_c = 1.0 / static_cast<double>(in_);
  Tensor3 d_dens(in_, h, w), d_sig(in_, h, w);
  for (std::size_t c = 0; c < in_; ++c) {
    const double* dens = cache.sums.density.channel(c).data();
    const double* norm = cache.map_input.channel(c + 1).data();
    const double* d_norm = d_input.channel(c + 1).data();
    const double* d_mean = d_input.channel(0).data();
    double* dd = d_dens.channel(c).data();
    double* ds = d_sig.channel(c).data();
    for (std::size_t g = 0; g < n; ++g) {
      dd[g] = d_mean[g] * inv_c;
      if (dens[g] > kDensityEpsilon) {
        ds[g] = d_norm[g] / dens[g];
        dd[g] -= d_norm[g] * norm[g] / dens[g];
      }
    }
  }

  AxisTaps rows, cols;
  std::vector<double> kr, kc;
  for (std::size_t c = 0; c < in_; ++c) {
    const double ell = length_scale(c);
    const double inv_l2 = 1.0 / (ell * ell);
    const double* dd = d_dens.channel(c).data();
    const double* ds = d_sig.channel(c).data();
    double acc = 0.0;
    for (std::size_t p = 0; p < set.size(); ++p) {
      if (!set.present(p, c)) continue;
      const double y = set.value(p, c);
      for_each_tap(set.coords.u[p], set.coords.v[p], reference, ell, periodic, rows, cols, kr, kc,
                   [&](std::size_t g, double k, double d2) { acc += (dd[g] + ds[g] * y) * k * d2 * inv_l2; });
    }
    log_length_scale.grad[c] += gain_ * acc;
  }
}

void SetConv::collect(ParamList& out) {
  out.push_back(&log_length_scale);
  map.collect(out);
}

EncoderLayout EncoderLayout::from_channels(std::span<const ChannelInfo> channels, std::size_t embed_dim, bool decoupled) {
  EncoderLayout layout;
  layout.n_channels = channels.size();
  layout.embed_dim = embed_dim;
  layout.decoupled = decoupled;
  std::map<std::uint32_t, std::vector<std::size_t>> by_group;
  for (std::size_t c = 0; c < channels.size(); ++c) by_group[channels[c].group].push_back(c);
  for (auto& [id, members] : by_group) layout.groups.push_back(std::move(members));
  return layout;
}

std::size_t EncoderLayout::out_channels() const {
  return decoupled ? (groups.size() + 1) * (embed_dim + 1) : embed_dim + 1;
}

SvdEncoder::SvdEncoder(const std::string& name, const EncoderLayout& layout, double initial_length_scale,
                       double density_unit)
    : layout_(layout) {
  if (layout.n_channels == 0) throw ConfigError("encoder needs at least one channel");
  if (layout.embed_dim == 0) throw ConfigError("embedding dimension must be positive");
  if (layout.decoupled) {
    if (layout.groups.empty()) throw ConfigError("decoupled encoder needs at least one variable group");
    for (std::size_t g = 0; g < layout.groups.size(); ++g) {
      if (layout.groups[g].empty()) throw ConfigError("variable group " + std::to_string(g) + " has no channels");
      for (std::size_t c : layout.groups[g])
        if (c >= layout.n_channels) throw ConfigError("variable group refers to a missing channel");
      convs_.emplace_back(name + ".group" + std::to_string(g), layout.groups[g].size(), layout.embed_dim,
                          initial_length_scale, density_unit);
    }
  }
  convs_.emplace_back(name + ".joint", layout.n_channels, layout.embed_dim, initial_length_scale, density_unit);
}

void SvdEncoder::init(Rng& rng) {
  for (auto& c : convs_) c.init(rng);
}

std::vector<std::size_t> SvdEncoder::part_channels(std::size_t k) const {
  if (layout_.decoupled && k < layout_.groups.size()) return layout_.groups[k];
  std::vector<std::size_t> all(layout_.n_channels);
  for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
  return all;
}

FeatureMap SvdEncoder::forward(const ConditionalSet& set, const LatLonGrid& reference, Cache* cache) const {
  if (set.n_channels != layout_.n_channels) throw ConfigError("encoder: conditional set channel count mismatch");
  std::vector<Tensor3> parts;
  if (cache) cache->parts.assign(convs_.size(), {});
  for (std::size_t k = 0; k < convs_.size(); ++k) {
    const auto channels = part_channels(k);
    const bool whole = channels.size() == set.n_channels;
    const ConditionalSet sub = whole ? ConditionalSet{} : set.select(channels);
    parts.push_back(convs_[k].forward(whole ? set : sub, reference, cache ? &cache->parts[k] : nullptr).values);
  }
  std::vector<const Tensor3*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  return FeatureMap{reference, concat_channels(ptrs)};
}

void SvdEncoder::backward(const ConditionalSet& set, const LatLonGrid& reference, const Cache& cache, const Tensor3& d_out) {
  std::size_t offset = 0;
  for (std::size_t k = 0; k < convs_.size(); ++k) {
    const auto channels = part_channels(k);
    const bool whole = channels.size() == set.n_channels;
    const ConditionalSet sub = whole ? ConditionalSet{} : set.select(channels);
    const std::size_t width = convs_[k].out_channels();
    convs_[k].backward(whole ? set : sub, reference, cache.parts[k], slice_channels(d_out, offset, width));
    offset += width;
  }
}

void SvdEncoder::collect(ParamList& out) {
  for (auto& c : convs_) c.collect(out);
}

}  // namespace fnp
