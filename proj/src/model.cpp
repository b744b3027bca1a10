#include "fnp/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "fnp/error.hpp"
#include "fnp/rng.hpp"

namespace fnp {

namespace {

const std::vector<std::pair<VariantTag, std::string>>& variant_table() {
  static const std::vector<std::pair<VariantTag, std::string>> table = {
      {VariantTag::Fnp, "fnp"},           {VariantTag::FnpNoNfl, "fnp_no_nfl"}, {VariantTag::FnpNoDam, "fnp_no_dam"},
      {VariantTag::FnpNoSvd, "fnp_no_svd"}, {VariantTag::ConvCnp, "convcnp"},     {VariantTag::InterpFirst, "interp_first"}};
  return table;
}

bool uses_dam(VariantTag t) {
  return t == VariantTag::Fnp || t == VariantTag::FnpNoNfl || t == VariantTag::FnpNoSvd || t == VariantTag::InterpFirst;
}

EncoderLayout layout_for(const ModelConfig& c) {
  return EncoderLayout::from_channels(c.channels, c.embed_dim, c.variant != VariantTag::FnpNoSvd);
}

StackConfig stack_for(const ModelConfig& c, std::size_t width) {
  StackConfig s;
  s.width = width;
  s.n_layers = c.n_layers;
  s.modes_lat = c.modes_lat;
  s.modes_lon = c.modes_lon;
  s.conv_kernel = c.conv_kernel;
  s.spectral = c.variant != VariantTag::FnpNoNfl && c.variant != VariantTag::ConvCnp;
  s.form = c.residual_form;
  return s;
}

std::size_t convcnp_width(const ModelConfig& c, std::size_t feature_width) {
  return c.stack_width ? c.stack_width : feature_width;
}

std::size_t setconv_count(std::size_t in, std::size_t embed) { return in + (in + 1) * embed + embed; }

std::size_t encoder_count(const EncoderLayout& l) {
  std::size_t n = setconv_count(l.n_channels, l.embed_dim);
  if (l.decoupled)
    for (const auto& g : l.groups) n += setconv_count(g.size(), l.embed_dim);
  return n;
}

std::size_t decoder_count(const ModelConfig& c, std::size_t in) {
  std::size_t n = 0, prev = in + 2;
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    n += prev * c.decoder_hidden + c.decoder_hidden;
    prev = c.decoder_hidden;
  }
  return n + prev * 2 * c.channels.size() + 2 * c.channels.size();
}

// Analytic parameter count; kept in sync with the constructor (unit-tested).
std::size_t analytic_count(const ModelConfig& c) {
  const EncoderLayout layout = layout_for(c);
  const std::size_t w = layout.out_channels();
  std::size_t n = encoder_count(layout) * (c.share_encoders ? 1 : 2);
  if (c.variant == VariantTag::ConvCnp) {
    const std::size_t ws = convcnp_width(c, w);
    n += 2 * w * ws + ws;
    n += FeatureStack::parameter_count(stack_for(c, ws));
    return n + decoder_count(c, ws);
  }
  n += 2 * FeatureStack::parameter_count(stack_for(c, w));
  if (uses_dam(c.variant))
    n += (2 * w * w + w) + Conv2d::parameter_count(2 * w, w, 3);
  else
    n += Conv2d::parameter_count(2 * w, w, 3);
  return n + decoder_count(c, w);
}

std::size_t distance(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

Tensor3 flatten(const Tensor3& t) {
  Tensor3 out = t;
  out.h = 1;
  out.w = t.h * t.w;
  return out;
}

Tensor3 unflatten(Tensor3 t, std::size_t h, std::size_t w) {
  t.h = h;
  t.w = w;
  return t;
}

ConditionalSet background_set(const Field& bg, const LatLonGrid& target) {
  ConditionalSet s = field_as_set(bg);
  if (!bg.grid.same_as(target)) {
    const auto pts = grid_points(bg.grid);
    s.coords = normalize_coords(pts, target);
  }
  return s;
}

}  // namespace

std::size_t expected_parameter_count(const ModelConfig& config) { return analytic_count(config); }

std::string variant_name(VariantTag tag) {
  for (const auto& [t, name] : variant_table())
    if (t == tag) return name;
  throw ConfigError("unknown variant");
}

VariantTag parse_variant(std::string_view name) {
  for (const auto& [t, n] : variant_table())
    if (n == name) return t;
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

const std::vector<VariantTag>& all_variants() {
  static const std::vector<VariantTag> tags = [] {
    std::vector<VariantTag> v;
    for (const auto& [t, n] : variant_table()) v.push_back(t);
    return v;
  }();
  return tags;
}

namespace {

template <class E>
using NameTable = std::vector<std::pair<E, std::string>>;

template <class E>
std::string name_of(const NameTable<E>& table, E value) {
  for (const auto& [v, n] : table)
    if (v == value) return n;
  throw ConfigError("unknown enumeration value");
}

template <class E>
E parse_name(const NameTable<E>& table, std::string_view name, const char* what) {
  for (const auto& [v, n] : table)
    if (n == name) return v;
  throw ConfigError(std::string("unknown ") + what + " '" + std::string(name) + "'");
}

const NameTable<ResidualForm> kResidualForms = {{ResidualForm::PostSum, "post_sum"},
                                                {ResidualForm::ActivateAfterSum, "activate_after_sum"}};
const NameTable<RetainRule> kRetainRules = {{RetainRule::Verbatim, "verbatim"}, {RetainRule::Prose, "prose"}};
const NameTable<SelectionMode> kSelectionModes = {{SelectionMode::Hard, "hard"}, {SelectionMode::Soft, "soft"}};

}  // namespace

std::string residual_form_name(ResidualForm form) { return name_of(kResidualForms, form); }
ResidualForm parse_residual_form(std::string_view name) { return parse_name(kResidualForms, name, "residual form"); }
std::string retain_rule_name(RetainRule rule) { return name_of(kRetainRules, rule); }
RetainRule parse_retain_rule(std::string_view name) { return parse_name(kRetainRules, name, "retain rule"); }
std::string selection_mode_name(SelectionMode mode) { return name_of(kSelectionModes, mode); }
SelectionMode parse_selection_mode(std::string_view name) {
  return parse_name(kSelectionModes, name, "selection mode");
}

ModelConfig resolve_config(const ModelConfig& config) {
  ModelConfig c = config;
  if (c.channels.empty()) throw ConfigError("model needs at least one channel");
  if (c.grid_lat == 0 || c.grid_lon == 0) throw ConfigError("model grid sizes must be positive");
  if (c.embed_dim == 0) throw ConfigError("embedding dimension must be positive");
  if (c.conv_kernel % 2 == 0) throw ConfigError("convolution kernel width must be odd");
  if (c.modes_lat == 0) c.modes_lat = std::max<std::size_t>(1, c.grid_lat / 4);
  if (c.modes_lon == 0) c.modes_lon = std::max<std::size_t>(1, c.grid_lon / 4);
  if (c.modes_lat > c.grid_lat / 2 + 1 || c.modes_lon > c.grid_lon / 2 + 1)
    throw ConfigError("spectral mode counts exceed the grid's Nyquist limit");
  if (!c.match_parameters) return c;

  ModelConfig reference = c;
  reference.variant = VariantTag::Fnp;
  const std::size_t goal = analytic_count(reference);
  auto best_of = [&](auto&& candidates, auto&& apply) {
    std::size_t best_d = SIZE_MAX;
    ModelConfig best = c;
    for (std::size_t v : candidates) {
      ModelConfig trial = c;
      apply(trial, v);
      const std::size_t d = distance(analytic_count(trial), goal);
      if (d < best_d) {
        best_d = d;
        best = trial;
      }
    }
    return best;
  };
  std::vector<std::size_t> candidates;
  switch (c.variant) {
    case VariantTag::FnpNoNfl: {
      const std::size_t limit = std::min(c.grid_lat, c.grid_lon);
      for (std::size_t k = 3; k <= limit; k += 2) candidates.push_back(k);
      if (candidates.empty()) return c;
      return best_of(candidates, [](ModelConfig& m, std::size_t k) { m.conv_kernel = k; });
    }
    case VariantTag::FnpNoSvd: {
      const std::size_t w = layout_for(reference).out_channels();
      for (std::size_t e = 1; e <= 4 * w; ++e) candidates.push_back(e);
      return best_of(candidates, [](ModelConfig& m, std::size_t e) { m.embed_dim = e; });
    }
    case VariantTag::ConvCnp: {
      if (c.stack_width) return c;
      for (std::size_t ws = 1; ws <= 1024; ++ws) candidates.push_back(ws);
      return best_of(candidates, [](ModelConfig& m, std::size_t ws) { m.stack_width = ws; });
    }
    default:
      return c;
  }
}

ObservationSet aggregate_to_grid(const ObservationSet& obs, const LatLonGrid& grid) {
  obs.validate();
  const std::size_t nc = obs.n_channels, h = grid.n_lat(), w = grid.n_lon();
  const GridDomain dom = grid.domain();
  const double cell_lat = grid.resolution(), cell_lon = std::abs(grid.dlon());
  std::vector<double> sum(h * w * nc, 0.0);
  std::vector<std::size_t> count(h * w * nc, 0);
  for (std::size_t p = 0; p < obs.size(); ++p) {
    const GeoPoint pt = obs.coords[p];
    auto i = static_cast<std::ptrdiff_t>(std::floor((pt.lat - dom.lat_min) / cell_lat));
    i = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(h) - 1);
    if (grid.dlat() < 0) i = static_cast<std::ptrdiff_t>(h) - 1 - i;
    double lon = pt.lon - dom.lon_min;
    if (grid.periodic_lon()) lon -= 360.0 * std::floor(lon / 360.0);
    auto j = static_cast<std::ptrdiff_t>(std::floor(lon / cell_lon));
    j = std::clamp<std::ptrdiff_t>(j, 0, static_cast<std::ptrdiff_t>(w) - 1);
    const std::size_t cell = static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j);
    for (std::size_t c = 0; c < nc; ++c)
      if (obs.present(p, c)) {
        sum[cell * nc + c] += obs.value(p, c);
        ++count[cell * nc + c];
      }
  }
  ObservationSet out = ObservationSet::empty_set(nc, grid.resolution());
  std::vector<double> vals(nc);
  std::vector<std::uint8_t> present(nc);
  for (std::size_t cell = 0; cell < h * w; ++cell) {
    bool any = false;
    for (std::size_t c = 0; c < nc; ++c) {
      present[c] = count[cell * nc + c] > 0;
      vals[c] = present[c] ? sum[cell * nc + c] / static_cast<double>(count[cell * nc + c]) : kMissing;
      any = any || present[c];
    }
    if (any) out.push_back({grid.latitude(cell / w), grid.longitude(cell % w)}, vals, present);
  }
  return out;
}

LatLonGrid observation_reference_grid(const ObservationSet& obs, const LatLonGrid& target) {
  if (!(obs.source_resolution > 0.0)) return target;
  const LatLonGrid global = make_equiangular_grid(1, 1);
  if (!target.same_domain(global)) return target;
  try {
    const LatLonGrid g = make_global_grid_for_resolution(obs.source_resolution);
    return g.same_as(target) ? target : g;
  } catch (const ConfigError&) {
    return target;
  }
}

AssimilationModel::AssimilationModel(const ModelConfig& config) : config_(config) {
  const EncoderLayout layout = layout_for(config_);
  const std::size_t w = layout.out_channels();
  const LatLonGrid model_grid = make_equiangular_grid(config_.grid_lat, config_.grid_lon);
  const double ell0 = default_length_scale(model_grid);
  const double unit = full_grid_density(model_grid, ell0);
  enc_bg_ = std::make_unique<SvdEncoder>("encoder.background", layout, ell0, unit);
  if (!config_.share_encoders) enc_obs_ = std::make_unique<SvdEncoder>("encoder.observation", layout, ell0, unit);

  std::size_t rep_width = w;
  if (config_.variant == VariantTag::ConvCnp) {
    rep_width = convcnp_width(config_, w);
    lift_ = std::make_unique<PointwiseLinear>("lift", 2 * w, rep_width);
    stack_bg_ = std::make_unique<FeatureStack>("stack", stack_for(config_, rep_width));
  } else {
    stack_bg_ = std::make_unique<FeatureStack>("stack.background", stack_for(config_, w));
    stack_obs_ = std::make_unique<FeatureStack>("stack.observation", stack_for(config_, w));
    if (uses_dam(config_.variant)) {
      DamConfig dc;
      dc.width = w;
      dc.retain = config_.retain;
      dc.selection = config_.selection;
      dc.temperature = config_.soft_temperature;
      dam_ = std::make_unique<Dam>("dam", dc);
    } else {
      merge_ = std::make_unique<Conv2d>("merge", 2 * w, w, 3);
    }
  }
  DecoderConfig dec;
  dec.in_channels = rep_width;
  dec.n_outputs = config_.channels.size();
  dec.hidden = config_.decoder_hidden;
  dec.n_hidden = config_.decoder_layers;
  decoder_ = std::make_unique<Decoder>("decoder", dec);

  auto rng_for = [&](const char* name) { return Rng(sub_seed(config_.seed, name)); };
  {
    Rng r = rng_for("init.encoder.background");
    enc_bg_->init(r);
  }
  if (enc_obs_) {
    Rng r = rng_for("init.encoder.observation");
    enc_obs_->init(r);
  }
  {
    Rng r = rng_for("init.stack.background");
    stack_bg_->init(r);
  }
  if (stack_obs_) {
    Rng r = rng_for("init.stack.observation");
    stack_obs_->init(r);
  }
  if (dam_) {
    Rng r = rng_for("init.dam");
    dam_->init(r);
  }
  if (merge_) {
    Rng r = rng_for("init.merge");
    merge_->init(r);
  }
  if (lift_) {
    Rng r = rng_for("init.lift");
    lift_->init(r);
  }
  {
    Rng r = rng_for("init.decoder");
    decoder_->init(r);
  }
}

AssimilationModel::~AssimilationModel() = default;
AssimilationModel::AssimilationModel(AssimilationModel&&) noexcept = default;
AssimilationModel& AssimilationModel::operator=(AssimilationModel&&) noexcept = default;

std::size_t AssimilationModel::feature_width() const { return enc_bg_->out_channels(); }

ParamList AssimilationModel::parameters() {
  ParamList out;
  enc_bg_->collect(out);
  if (enc_obs_) enc_obs_->collect(out);
  if (lift_) lift_->collect(out);
  stack_bg_->collect(out);
  if (stack_obs_) stack_obs_->collect(out);
  if (dam_) dam_->collect(out);
  if (merge_) merge_->collect(out);
  decoder_->collect(out);
  return out;
}

std::size_t AssimilationModel::parameter_count() { return count_parameters(parameters()); }

AnalysisDistribution AssimilationModel::forward(const LatLonGrid& target, const Field* background,
                                                const ObservationSet& obs, Cache* cache) const {
  const std::size_t nc = config_.channels.size();
  if (obs.n_channels != nc) throw ConfigError("observation set has " + std::to_string(obs.n_channels) +
                                              " channels, model expects " + std::to_string(nc));
  if (background) {
    if (background->n_channels() != nc) throw ConfigError("background channel count does not match the model");
    if (!background->grid.same_domain(target)) throw ConfigError("background and target grids cover different domains");
  }
  Cache local;
  Cache& k = cache ? *cache : local;
  k.target = target;
  k.bg_set = background ? background_set(*background, target) : empty_conditional_set(nc, target.periodic_lon());

  const bool on_target = config_.variant == VariantTag::ConvCnp || config_.variant == VariantTag::InterpFirst;
  const ObservationSet aggregated =
      config_.variant == VariantTag::InterpFirst ? aggregate_to_grid(obs, target) : ObservationSet{};
  const ObservationSet& o = config_.variant == VariantTag::InterpFirst ? aggregated : obs;
  k.obs_ref = on_target ? target : observation_reference_grid(o, target);
  k.obs_set = make_conditional_set(o, k.obs_ref);
  if (o.empty()) k.obs_set.coords.periodic_v = k.obs_ref.periodic_lon();

  k.e_bg = enc_bg_->forward(k.bg_set, target, &k.enc_bg);
  k.e_obs = obs_encoder().forward(k.obs_set, k.obs_ref, &k.enc_obs);

  if (config_.variant == VariantTag::ConvCnp) {
    k.merge_in = concat_channels(k.e_bg.values, k.e_obs.values);
    k.lifted = FeatureMap{target, lift_->forward(k.merge_in)};
    k.rep = stack_bg_->forward(k.lifted, &k.st_bg);
  } else {
    k.f_bg = stack_bg_->forward(k.e_bg, &k.st_bg);
    k.f_obs = stack_obs_->forward(k.e_obs, &k.st_obs);
    if (dam_) {
      k.rep = dam_->forward(k.f_bg, k.f_obs, &k.dam);
    } else {
      k.merge_in = concat_channels(k.f_bg.values, align(k.f_obs, target).values);
      k.rep = FeatureMap{target, merge_->forward(k.merge_in, target.periodic_lon())};
    }
  }

  k.targets = grid_normalized_coords(target);
  k.raw = decoder_->forward_raw(flatten(k.rep.values), k.targets, &k.dec);
  AnalysisDistribution dist = decoder_->to_distribution(k.raw);
  if (config_.background_skip && background) {
    const Field bg_on_target = resample_bilinear(*background, target);
    for (std::size_t i = 0; i < dist.mean.size(); ++i) dist.mean[i] += bg_on_target.values[i];
  }
  return dist;
}

void AssimilationModel::backward(const Cache& k, const NllGradients& grad) {
  const Tensor3 d_raw = decoder_->raw_gradient(k.raw, grad.d_mean, grad.d_variance);
  const Tensor3 d_rep = unflatten(decoder_->backward(k.dec, d_raw), k.target.n_lat(), k.target.n_lon());

  if (config_.variant == VariantTag::ConvCnp) {
    const Tensor3 d_lifted = stack_bg_->backward(k.lifted, k.st_bg, d_rep);
    const Tensor3 d_in = lift_->backward(k.merge_in, d_lifted);
    const std::size_t w = k.e_bg.values.c;
    enc_bg_->backward(k.bg_set, k.target, k.enc_bg, slice_channels(d_in, 0, w));
    obs_encoder().backward(k.obs_set, k.obs_ref, k.enc_obs, slice_channels(d_in, w, w));
    return;
  }

  Tensor3 d_fbg, d_fobs;
  if (dam_) {
    std::tie(d_fbg, d_fobs) = dam_->backward(k.f_bg, k.f_obs, k.dam, d_rep);
  } else {
    const Tensor3 d_in = merge_->backward(k.merge_in, d_rep, k.target.periodic_lon());
    const std::size_t w = k.f_bg.values.c;
    d_fbg = slice_channels(d_in, 0, w);
    d_fobs = AlignPlan(k.obs_ref, k.target).adjoint(slice_channels(d_in, w, w));
  }
  const Tensor3 d_ebg = stack_bg_->backward(k.e_bg, k.st_bg, d_fbg);
  const Tensor3 d_eobs = stack_obs_->backward(k.e_obs, k.st_obs, d_fobs);
  enc_bg_->backward(k.bg_set, k.target, k.enc_bg, d_ebg);
  obs_encoder().backward(k.obs_set, k.obs_ref, k.enc_obs, d_eobs);
}

}  // namespace fnp
