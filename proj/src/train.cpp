#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <set>
#include <tuple>

#include "fnp/error.hpp"
#include "fnp/harness.hpp"
#include "fnp/optim.hpp"
#include "fnp/rng.hpp"

namespace fnp {

namespace {

struct Prepared {
  Field background;          // standardized
  std::vector<double> truth;  // standardized, on the background grid
};

std::vector<Prepared> prepare(const Dataset& data, const Normalizer& norm, const ExperimentConfig& config) {
  const LatLonGrid grid = config.background_lat_lon();
  std::vector<Prepared> out;
  out.reserve(data.size());
  for (const Sample& s : data) {
    if (!s.truth.grid.same_as(grid) || !s.background.grid.same_as(grid))
      throw ConfigError("dataset sample does not live on the configured background grid");
    if (s.truth.channels != config.channels) throw ConfigError("dataset channels do not match the configuration");
    out.push_back({norm.apply(s.background), norm.apply(s.truth).values});
  }
  return out;
}

Field with_values(const LatLonGrid& grid, const std::vector<ChannelInfo>& channels, std::vector<double> values) {
  return Field(grid, channels, std::move(values));
}

// Physical-unit mean and variance of one analysis.
std::pair<Field, Field> run_model(const AssimilationModel& model, const Normalizer& norm, const LatLonGrid& target,
                                  const Field* background, const ObservationSet& obs) {
  const auto& channels = model.config().channels;
  std::optional<Field> bg_std;
  if (background) bg_std = norm.apply(*background);
  const AnalysisDistribution dist = model.forward(target, bg_std ? &*bg_std : nullptr, norm.apply(obs));
  dist.validate();
  Field mean = norm.invert(with_values(target, channels, dist.mean));
  Field var = with_values(target, channels, dist.variance);
  const std::size_t n = target.size();
  for (std::size_t c = 0; c < channels.size(); ++c)
    for (std::size_t p = 0; p < n; ++p) var.values[c * n + p] *= norm.stddev[c] * norm.stddev[c];
  return {std::move(mean), std::move(var)};
}

MetricsReport metadata(const ExperimentConfig& config, const std::string& id, const std::string& variant,
                       bool fine_tuned) {
  MetricsReport r;
  r.experiment_id = id;
  r.variant = variant;
  r.obs_resolution_deg = config.obs_lat_lon().resolution();
  r.ratio = config.ratio;
  r.lead_time_h = config.lead_time_h;
  r.fine_tuned = fine_tuned;
  r.seed = config.seed;
  return r;
}

std::string number_tag(double v) {
  std::string s = std::to_string(v);
  s.erase(s.find_last_not_of('0') + 1);
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

bool manifests_exist(const ExperimentConfig& config, double lead) {
  for (Split s : {Split::Train, Split::Val, Split::Test})
    if (!std::filesystem::exists(manifest_path(config, s, lead))) return false;
  return true;
}

}  // namespace

double validation_nll(AssimilationModel& model, const Normalizer& norm, const ExperimentConfig& config,
                      const Dataset& data) {
  const std::vector<Prepared> prepared = prepare(data, norm, config);
  const LatLonGrid target = config.background_lat_lon();
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ObservationSet obs = norm.apply(observe(data[i], config, sub_seed(config.seed, "val.obs", i)));
    total += gaussian_nll(model.forward(target, &prepared[i].background, obs), prepared[i].truth);
  }
  const double mean = total / static_cast<double>(std::max<std::size_t>(1, data.size()));
  if (!std::isfinite(mean)) throw NumericError("validation loss is not finite");
  return mean;
}

Checkpoint train(const ExperimentConfig& config, const Dataset& train_set, const Dataset& val_set,
                 const Checkpoint* start, std::ostream* log) {
  config.validate();
  if (train_set.empty() || val_set.empty()) throw ConfigError("training needs non-empty train and validation sets");

  Checkpoint ck;
  if (start) {
    ck = *start;
    if (ck.model.channels != config.channels) throw ConfigError("checkpoint channels do not match the configuration");
    if (ck.model.grid_lat != config.background_grid.lat || ck.model.grid_lon != config.background_grid.lon)
      throw ConfigError("checkpoint background grid does not match the configuration");
  } else {
    ck.model = model_config_for(config);
    std::vector<Field> truths;
    truths.reserve(train_set.size());
    for (const Sample& s : train_set) truths.push_back(s.truth);
    ck.normalizer = Normalizer::fit(truths);
  }
  AssimilationModel model = start ? start->instantiate() : AssimilationModel(ck.model);
  ck.train_obs_lat = config.obs_grid.lat;
  ck.train_obs_lon = config.obs_grid.lon;
  ck.fine_tuned = start != nullptr;
  ck.config_echo = format_config(config);
  ck.curve.clear();

  const Normalizer& norm = ck.normalizer;
  const std::vector<Prepared> prepared = prepare(train_set, norm, config);
  const LatLonGrid target = config.background_lat_lon();
  ParamList params = model.parameters();
  AdamWConfig opt_cfg;
  opt_cfg.learning_rate = config.learning_rate;
  opt_cfg.weight_decay = config.weight_decay;
  opt_cfg.clip_norm = config.clip_norm;
  AdamW optimizer(params, opt_cfg);

  double best = validation_nll(model, norm, config, val_set);
  ck.initial_val_nll = best;
  ck.best_epoch = 0;
  ck.capture(model);
  if (log) *log << "epoch 0 val_nll " << best << "\n";

  const std::size_t n = prepared.size();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng order_rng(sub_seed(config.seed, "train.order", epoch));
    const std::vector<std::size_t> order = order_rng.permutation(n);
    double total = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += config.batch_size) {
      const std::size_t b1 = std::min(n, b0 + config.batch_size);
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      zero_grads(params);
      for (std::size_t k = b0; k < b1; ++k) {
        const std::size_t i = order[k];
        const ObservationSet obs =
            norm.apply(observe(train_set[i], config, sub_seed(config.seed, "train.obs", epoch, i)));
        bool drop = false;
        if (config.background_dropout > 0.0) {
          Rng coin(sub_seed(config.seed, "train.dropout", epoch, i));
          drop = coin.uniform() < config.background_dropout;
        }
        AssimilationModel::Cache cache;
        const AnalysisDistribution dist =
            model.forward(target, drop ? nullptr : &prepared[i].background, obs, &cache);
        NllGradients grad;
        const double nll = gaussian_nll(dist, prepared[i].truth, &grad);
        if (!std::isfinite(nll))
          throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                             std::to_string(i) + " (learning rate " + std::to_string(config.learning_rate) + ")");
        for (double& g : grad.d_mean) g *= scale;
        for (double& g : grad.d_variance) g *= scale;
        model.backward(cache, grad);
        total += nll;
      }
      if (!std::isfinite(gradient_norm(params)))
        throw NumericError("training diverged: non-finite gradient at epoch " + std::to_string(epoch));
      optimizer.step();
    }
    const double train_nll = total / static_cast<double>(n);
    const double val_nll = validation_nll(model, norm, config, val_set);
    ck.curve.push_back({epoch, train_nll, val_nll});
    if (val_nll < best) {
      best = val_nll;
      ck.best_epoch = epoch;
      ck.capture(model);
    }
    if (log) *log << "epoch " << epoch << " train_nll " << train_nll << " val_nll " << val_nll << "\n";
  }
  return ck;
}

ExampleFields assimilate(const Checkpoint& ckpt, const LatLonGrid& target, const Field* background,
                         const ObservationSet& obs) {
  const AssimilationModel model = ckpt.instantiate();
  auto [mean, var] = run_model(model, ckpt.normalizer, target, background, obs);
  ExampleFields out;
  if (background) out.background = *background;
  out.analysis = std::move(mean);
  out.variance = std::move(var);
  return out;
}

Evaluation evaluate(const Checkpoint& ckpt, const ExperimentConfig& config, const Dataset& test_set) {
  config.validate();
  if (test_set.empty()) throw ConfigError("evaluation needs a non-empty test set");
  if (ckpt.model.variant == VariantTag::InterpFirst &&
      (config.obs_grid.lat != ckpt.train_obs_lat || config.obs_grid.lon != ckpt.train_obs_lon))
    throw ConfigError("interp_first was trained on " + std::to_string(ckpt.train_obs_lat) + "x" +
                      std::to_string(ckpt.train_obs_lon) + " observations and cannot ingest " +
                      std::to_string(config.obs_grid.lat) + "x" + std::to_string(config.obs_grid.lon) +
                      " observations without fine-tuning");
  if (ckpt.model.channels != config.channels) throw ConfigError("checkpoint channels do not match the configuration");
  const LatLonGrid target = config.background_lat_lon();
  if (ckpt.model.grid_lat != target.n_lat() || ckpt.model.grid_lon != target.n_lon())
    throw ConfigError("checkpoint background grid does not match the configuration");

  const AssimilationModel model = ckpt.instantiate();
  const Normalizer& norm = ckpt.normalizer;
  MetricsAccumulator analysis(norm), background(norm), climatology(norm);
  Field clim(target, config.channels);
  for (std::size_t c = 0; c < config.channels.size(); ++c)
    for (double& v : clim.channel(c)) v = norm.mean[c];

  Evaluation eval;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const Sample& s = test_set[i];
    if (!s.truth.grid.same_as(target)) throw ConfigError("test sample does not live on the background grid");
    const ObservationSet obs = observe(s, config, sub_seed(config.seed, "test.obs", i));
    auto [mean, var] = run_model(model, norm, target, config.drop_background ? nullptr : &s.background, obs);
    analysis.add(mean, s.truth);
    background.add(s.background, s.truth);
    climatology.add(clim, s.truth);
    if (i == 0) eval.example = ExampleFields{s.truth, s.background, std::move(mean), std::move(var)};
  }
  const std::string vname = variant_name(ckpt.model.variant);
  eval.analysis = analysis.finish(metadata(config, config.experiment_id, vname, ckpt.fine_tuned));
  eval.background = background.finish(metadata(config, config.experiment_id + ".background", "background", false));
  eval.climatology =
      climatology.finish(metadata(config, config.experiment_id + ".climatology", "climatology", false));
  eval.analysis.validate();
  return eval;
}

std::vector<Evaluation> cross_resolution_eval(const Checkpoint& ckpt, const ExperimentConfig& config,
                                              const Dataset& train_set, const Dataset& val_set,
                                              const Dataset& test_set, std::ostream* log) {
  const std::vector<GridShape> grids =
      config.eval_obs_grids.empty() ? std::vector<GridShape>{config.obs_grid} : config.eval_obs_grids;
  std::vector<Evaluation> out;
  for (GridShape g : grids) {
    ExperimentConfig c = config;
    c.obs_grid = g;
    c.experiment_id = config.experiment_id + "_obs" + std::to_string(g.lat) + "x" + std::to_string(g.lon) +
                      (config.fine_tune ? "_ft" : "");
    if (config.fine_tune) {
      c.epochs = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::lround(config.fine_tune_fraction * static_cast<double>(config.epochs))));
      if (log) *log << "fine-tuning " << c.epochs << " epochs on " << g.lat << "x" << g.lon << " observations\n";
      const Checkpoint tuned = train(c, train_set, val_set, &ckpt, log);
      out.push_back(evaluate(tuned, c, test_set));
    } else {
      out.push_back(evaluate(ckpt, c, test_set));
    }
  }
  return out;
}

std::vector<Evaluation> ablate(const ExperimentConfig& config, std::ostream* log) {
  config.validate();
  const std::vector<VariantTag> variants =
      config.variants.empty()
          ? std::vector<VariantTag>{VariantTag::Fnp, VariantTag::FnpNoNfl, VariantTag::FnpNoDam, VariantTag::FnpNoSvd}
          : config.variants;
  const std::vector<double> ratios = config.ratios.empty() ? std::vector<double>{0.01, 0.1} : config.ratios;
  const std::vector<double> leads = config.lead_times.empty() ? std::vector<double>{24.0, 48.0} : config.lead_times;

  // Every variant at the base setting, then the primary variant across the
  // ratio x lead sweep.
  std::vector<std::tuple<VariantTag, double, double>> runs;
  std::set<std::tuple<int, double, double>> seen;
  auto add = [&](VariantTag v, double r, double l) {
    if (seen.insert({static_cast<int>(v), r, l}).second) runs.emplace_back(v, r, l);
  };
  for (VariantTag v : variants) add(v, config.ratio, config.lead_time_h);
  for (double l : leads)
    for (double r : ratios) add(config.variant, r, l);

  std::vector<Evaluation> out;
  double loaded_lead = -1.0;
  Dataset train_set, val_set, test_set;
  std::sort(runs.begin(), runs.end(), [](const auto& a, const auto& b) { return std::get<2>(a) < std::get<2>(b); });
  for (const auto& [variant, ratio, lead] : runs) {
    if (lead != loaded_lead) {
      const bool on_disk = manifests_exist(config, lead);
      auto get = [&](Split s) { return on_disk ? load_split(config, s, lead) : synthesize_split(config, s, lead); };
      train_set = get(Split::Train);
      val_set = get(Split::Val);
      test_set = get(Split::Test);
      loaded_lead = lead;
    }
    ExperimentConfig c = config;
    c.variant = variant;
    c.ratio = ratio;
    c.lead_time_h = lead;
    c.experiment_id = config.experiment_id + "_" + variant_name(variant) + "_r" + number_tag(ratio) + "_l" +
                      number_tag(lead);
    if (log) *log << "ablation run " << c.experiment_id << "\n";
    const Checkpoint ck = train(c, train_set, val_set, nullptr, log);
    out.push_back(evaluate(ck, c, test_set));
  }
  return out;
}

}  // namespace fnp
