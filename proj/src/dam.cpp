#include "fnp/dam.hpp"

#include <cmath>

#include "fnp/error.hpp"

namespace fnp {

AlignPlan::AlignPlan(const LatLonGrid& source, const LatLonGrid& target) : source_(source), target_(target) {
  if (!source.same_domain(target)) throw ConfigError("align: source and target grids cover different domains");
  identity_ = source.same_as(target);
  if (identity_) return;
  for (const GeoPoint& pt : grid_points(target)) stencils_.push_back(bilinear_stencil(source, pt));
}

Tensor3 AlignPlan::apply(const Tensor3& x) const {
  if (x.h != source_.n_lat() || x.w != source_.n_lon()) throw ConfigError("align: input does not match the source grid");
  if (identity_) return x;
  Tensor3 y(x.c, target_.n_lat(), target_.n_lon());
  const std::size_t w = source_.n_lon();
  for (std::size_t k = 0; k < x.c; ++k) {
    const double* src = x.channel(k).data();
    double* dst = y.channel(k).data();
    for (std::size_t p = 0; p < stencils_.size(); ++p)
      dst[p] = stencils_[p].apply([&](std::size_t i, std::size_t j) { return src[i * w + j]; });
  }
  return y;
}

Tensor3 AlignPlan::adjoint(const Tensor3& dy) const {
  if (identity_) return dy;
  Tensor3 dx(dy.c, source_.n_lat(), source_.n_lon());
  const std::size_t w = source_.n_lon();
  for (std::size_t k = 0; k < dy.c; ++k) {
    const double* g = dy.channel(k).data();
    double* dst = dx.channel(k).data();
    for (std::size_t p = 0; p < stencils_.size(); ++p) {
      const BilinearStencil& s = stencils_[p];
      const double top = g[p] * (1.0 - s.fy), bot = g[p] * s.fy;
      dst[s.i0 * w + s.j0] += top * (1.0 - s.fx);
      dst[s.i0 * w + s.j1] += top * s.fx;
      dst[s.i1 * w + s.j0] += bot * (1.0 - s.fx);
      dst[s.i1 * w + s.j1] += bot * s.fx;
    }
  }
  return dx;
}

FeatureMap align(const FeatureMap& x, const LatLonGrid& target) {
  const AlignPlan plan(x.grid, target);
  return FeatureMap{target, plan.apply(x.values)};
}

Tensor3 similarity(const Tensor3& y, const Tensor3& shared) {
  if (!y.same_shape(shared)) throw ConfigError("similarity: shape mismatch");
  Tensor3 out(1, y.h, y.w);
  const std::size_t n = y.plane();
  for (std::size_t k = 0; k < y.c; ++k) {
    const double* a = y.channel(k).data();
    const double* b = shared.channel(k).data();
    for (std::size_t p = 0; p < n; ++p) {
      const double d = a[p] - b[p];
      out.data[p] += d * d;
    }
  }
  for (double& v : out.data) v = std::sqrt(v);
  return out;
}

std::vector<std::uint8_t> selection_mask(const Tensor3& sim_bg, const Tensor3& sim_obs, RetainRule rule) {
  if (!sim_bg.same_shape(sim_obs)) throw ConfigError("selection: similarity maps differ in shape");
  std::vector<std::uint8_t> take(sim_bg.size());
  for (std::size_t p = 0; p < take.size(); ++p) {
    const double b = sim_bg.data[p], o = sim_obs.data[p];
    take[p] = rule == RetainRule::Verbatim ? (b >= o) : (b <= o);
  }
  return take;
}

Tensor3 select_merge(const Tensor3& y_bg, const Tensor3& y_obs, const std::vector<std::uint8_t>& take_bg) {
  if (!y_bg.same_shape(y_obs) || take_bg.size() != y_bg.plane()) throw ConfigError("select_merge: shape mismatch");
  Tensor3 out(y_bg.c, y_bg.h, y_bg.w);
  const std::size_t n = y_bg.plane();
  for (std::size_t k = 0; k < y_bg.c; ++k)
    for (std::size_t p = 0; p < n; ++p) out.data[k * n + p] = take_bg[p] ? y_bg.data[k * n + p] : y_obs.data[k * n + p];
  return out;
}

namespace {

// d sim / d y for sim = |y - s|; the other argument gets the negative.
void similarity_backward(const Tensor3& y, const Tensor3& shared, const Tensor3& sim, const std::vector<double>& d_sim,
                         Tensor3& d_y, Tensor3& d_shared) {
  const std::size_t n = y.plane();
  for (std::size_t k = 0; k < y.c; ++k)
    for (std::size_t p = 0; p < n; ++p) {
      if (sim.data[p] <= 0.0 || d_sim[p] == 0.0) continue;
      const double g = d_sim[p] * (y.data[k * n + p] - shared.data[k * n + p]) / sim.data[p];
      d_y.data[k * n + p] += g;
      d_shared.data[k * n + p] -= g;
    }
}

}  // namespace

Dam::Dam(const std::string& name, const DamConfig& config)
    : shared_map(name + ".shared", 2 * config.width, config.width),
      smoother(name + ".smoother", 2 * config.width, config.width, config.smoother_kernel),
      config_(config) {
  if (config.width == 0) throw ConfigError("DAM width must be positive");
  if (!(config.temperature > 0.0)) throw ConfigError("DAM soft-selection temperature must be positive");
}

void Dam::init(Rng& rng) {
  shared_map.init(rng);
  smoother.init(rng);
}

FeatureMap Dam::forward(const FeatureMap& bg, const FeatureMap& obs, Cache* cache) const {
  if (bg.values.c != config_.width || obs.values.c != config_.width)
    throw ConfigError("DAM: expected " + std::to_string(config_.width) + " channels per source");
  Tensor3 obs_aligned = align(obs, bg.grid).values;
  Tensor3 stacked = concat_channels(bg.values, obs_aligned);
  Tensor3 shared = shared_map.forward(stacked);
  Tensor3 sim_bg = similarity(bg.values, shared);
  Tensor3 sim_obs = similarity(obs_aligned, shared);

  const std::size_t n = bg.values.plane();
  std::vector<double> w_bg(n);
  if (config_.selection == SelectionMode::Hard) {
    const auto take = selection_mask(sim_bg, sim_obs, config_.retain);
    for (std::size_t p = 0; p < n; ++p) w_bg[p] = take[p];
  } else {
    const double sign = config_.retain == RetainRule::Verbatim ? 1.0 : -1.0;
    for (std::size_t p = 0; p < n; ++p) w_bg[p] = sigmoid(sign * (sim_bg.data[p] - sim_obs.data[p]) / config_.temperature);
  }
  Tensor3 selected(config_.width, bg.values.h, bg.values.w);
  for (std::size_t k = 0; k < config_.width; ++k)
    for (std::size_t p = 0; p < n; ++p) {
      const double b = bg.values.data[k * n + p], o = obs_aligned.data[k * n + p];
      selected.data[k * n + p] = w_bg[p] == 1.0 ? b : (w_bg[p] == 0.0 ? o : w_bg[p] * b + (1.0 - w_bg[p]) * o);
    }
  Tensor3 merged = concat_channels(selected, shared);
  FeatureMap out{bg.grid, smoother.forward(merged, bg.grid.periodic_lon())};
  if (cache) {
    cache->bg = bg.values;
    cache->obs_aligned = std::move(obs_aligned);
    cache->stacked = std::move(stacked);
    cache->shared = std::move(shared);
    cache->sim_bg = std::move(sim_bg);
    cache->sim_obs = std::move(sim_obs);
    cache->weight_bg = std::move(w_bg);
    cache->merged = std::move(merged);
  }
  return out;
}

std::pair<Tensor3, Tensor3> Dam::backward(const FeatureMap& bg, const FeatureMap& obs, const Cache& cache,
                                          const Tensor3& dy) {
  const std::size_t width = config_.width;
  const std::size_t n = cache.bg.plane();
  const Tensor3 d_merged = smoother.backward(cache.merged, dy, bg.grid.periodic_lon());
  const Tensor3 d_sel = slice_channels(d_merged, 0, width);
  Tensor3 d_shared = slice_channels(d_merged, width, width);

  Tensor3 d_bg(width, cache.bg.h, cache.bg.w), d_obs(width, cache.bg.h, cache.bg.w);
  std::vector<double> d_w(n, 0.0);
  for (std::size_t k = 0; k < width; ++k)
    for (std::size_t p = 0; p < n; ++p) {
      const double g = d_sel.data[k * n + p];
      d_bg.data[k * n + p] += cache.weight_bg[p] * g;
      d_obs.data[k * n + p] += (1.0 - cache.weight_bg[p]) * g;
      d_w[p] += g * (cache.bg.data[k * n + p] - cache.obs_aligned.data[k * n + p]);
    }

  if (config_.selection == SelectionMode::Soft) {
    const double sign = config_.retain == RetainRule::Verbatim ? 1.0 : -1.0;
    std::vector<double> d_sim_bg(n), d_sim_obs(n);
    for (std::size_t p = 0; p < n; ++p) {
      const double w = cache.weight_bg[p];
      const double dz = d_w[p] * w * (1.0 - w) * sign / config_.temperature;
      d_sim_bg[p] = dz;
      d_sim_obs[p] = -dz;
    }
    similarity_backward(cache.bg, cache.shared, cache.sim_bg, d_sim_bg, d_bg, d_shared);
    similarity_backward(cache.obs_aligned, cache.shared, cache.sim_obs, d_sim_obs, d_obs, d_shared);
  }

  const Tensor3 d_stacked = shared_map.backward(cache.stacked, d_shared);
  add_inplace(d_bg, slice_channels(d_stacked, 0, width));
  add_inplace(d_obs, slice_channels(d_stacked, width, width));

  const AlignPlan plan(obs.grid, bg.grid);
  return {std::move(d_bg), plan.adjoint(d_obs)};
}

void Dam::collect(ParamList& out) {
  shared_map.collect(out);
  smoother.collect(out);
}

}  // namespace fnp
