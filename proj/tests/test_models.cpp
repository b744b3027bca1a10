#include <doctest.h>

#include <cmath>

#include "fnp/decoder.hpp"
#include "fnp/error.hpp"
#include "fnp/model.hpp"
#include "support.hpp"

using namespace fnp;

namespace {

ModelConfig small_config(VariantTag variant) {
  ModelConfig c;
  c.variant = variant;
  c.channels = testing::four_channels();
  c.grid_lat = 8;
  c.grid_lon = 16;
  c.embed_dim = 4;
  c.n_layers = 2;
  c.modes_lat = 2;
  c.modes_lon = 3;
  c.decoder_hidden = 8;
  c.seed = 21;
  return resolve_config(c);
}

ModelConfig desk_config(VariantTag variant) {
  ModelConfig c;
  c.variant = variant;
  c.channels = testing::four_channels();
  c.grid_lat = 16;
  c.grid_lon = 32;
  c.embed_dim = 8;
  c.n_layers = 4;
  c.modes_lat = 4;
  c.modes_lon = 8;
  c.decoder_hidden = 32;
  return resolve_config(c);
}

bool has_spectral(AssimilationModel& m) {
  for (Parameter* p : m.parameters())
    if (p->name.find("spectral") != std::string::npos) return true;
  return false;
}

void check_distribution(const AnalysisDistribution& d, std::size_t channels, std::size_t targets) {
  CHECK(d.n_channels == channels);
  CHECK(d.n_targets == targets);
  for (double v : d.mean) CHECK(std::isfinite(v));
  for (double v : d.variance) CHECK(v > kVarianceFloor);
}

}  // namespace

TEST_CASE("variant names round-trip") {
  for (VariantTag t : all_variants()) CHECK(parse_variant(variant_name(t)) == t);
  CHECK_THROWS_AS(parse_variant("nope"), ConfigError);
  CHECK(parse_residual_form(residual_form_name(ResidualForm::ActivateAfterSum)) == ResidualForm::ActivateAfterSum);
  CHECK(parse_retain_rule(retain_rule_name(RetainRule::Prose)) == RetainRule::Prose);
  CHECK(parse_selection_mode(selection_mode_name(SelectionMode::Soft)) == SelectionMode::Soft);
  CHECK_THROWS_AS(parse_selection_mode("fuzzy"), ConfigError);
}

TEST_CASE("structural contract: spectral weights only with neural Fourier layers") {
  AssimilationModel fnp(small_config(VariantTag::Fnp));
  AssimilationModel no_nfl(small_config(VariantTag::FnpNoNfl));
  CHECK(has_spectral(fnp));
  CHECK_FALSE(has_spectral(no_nfl));
}

TEST_CASE("parameter counts are predicted and matched within 10%") {
  for (auto make : {small_config, desk_config}) {
    AssimilationModel full(make(VariantTag::Fnp));
    const double base = static_cast<double>(full.parameter_count());
    for (VariantTag t : all_variants()) {
      const ModelConfig cfg = make(t);
      AssimilationModel m(cfg);
      CHECK(m.parameter_count() == expected_parameter_count(cfg));
      const double n = static_cast<double>(m.parameter_count());
      INFO(variant_name(t), " has ", n, " parameters against ", base);
      CHECK(std::abs(n / base - 1.0) <= 0.10);
    }
  }
}

TEST_CASE("every variant honours the forward contract") {
  Rng rng(3);
  const LatLonGrid target = make_equiangular_grid(8, 16);
  const Field bg = testing::random_field(rng, target, testing::four_channels());
  const Field truth = testing::random_field(rng, target, testing::four_channels());
  const ObservationSet obs = sample_observations(truth, target, 0.2, 5);
  const ObservationSet empty = ObservationSet::empty_set(4, target.resolution());
  for (VariantTag t : all_variants()) {
    INFO(variant_name(t));
    const AssimilationModel m(small_config(t));
    check_distribution(m.forward(target, &bg, obs), 4, target.size());
    check_distribution(m.forward(target, &bg, empty), 4, target.size());
    check_distribution(m.forward(target, nullptr, obs), 4, target.size());
    const AnalysisDistribution a = m.forward(target, &bg, obs), b = m.forward(target, &bg, obs);
    CHECK(a.mean == b.mean);
    CHECK(a.variance == b.variance);
  }
}

TEST_CASE("flexible variants accept observations at any resolution") {
  Rng rng(4);
  const LatLonGrid target = make_equiangular_grid(8, 16);
  const Field bg = testing::random_field(rng, target, testing::four_channels());
  const Field fine = testing::random_field(rng, make_equiangular_grid(32, 64), testing::four_channels());
  for (VariantTag t : {VariantTag::Fnp, VariantTag::ConvCnp, VariantTag::FnpNoDam, VariantTag::FnpNoSvd}) {
    INFO(variant_name(t));
    const AssimilationModel m(small_config(t));
    for (std::size_t h : {4u, 8u, 16u, 32u}) {
      const ObservationSet obs = sample_observations(fine, make_equiangular_grid(h, 2 * h), 0.1, h);
      check_distribution(m.forward(target, &bg, obs), 4, target.size());
    }
    ObservationSet off_grid = ObservationSet::empty_set(4);
    const double v[] = {0.1, 0.2, 0.3, 0.4};
    const std::uint8_t mask[] = {1, 0, 1, 1};
    off_grid.push_back({12.3, 45.6}, v, mask);
    check_distribution(m.forward(target, &bg, off_grid), 4, target.size());
  }
}

TEST_CASE("DAM changes the output relative to the plain merge") {
  Rng rng(5);
  const LatLonGrid target = make_equiangular_grid(8, 16);
  const Field bg = testing::random_field(rng, target, testing::four_channels());
  const ObservationSet obs = sample_observations(testing::random_field(rng, target, testing::four_channels()), target, 0.3, 1);
  const AnalysisDistribution a = AssimilationModel(small_config(VariantTag::Fnp)).forward(target, &bg, obs);
  const AnalysisDistribution b = AssimilationModel(small_config(VariantTag::FnpNoDam)).forward(target, &bg, obs);
  bool differs = false;
  for (std::size_t k = 0; k < a.mean.size(); ++k) differs = differs || a.mean[k] != b.mean[k];
  CHECK(differs);
}

TEST_CASE("interpolate-first aggregation: lossless on-grid, lossy from finer observations") {
  Rng rng(6);
  const LatLonGrid coarse = make_equiangular_grid(8, 16);
  const Field truth = testing::random_field(rng, coarse, testing::four_channels());
  const ObservationSet full = sample_observations(truth, coarse, 1.0, 2);
  const ObservationSet agg = aggregate_to_grid(full, coarse);
  REQUIRE(agg.size() == coarse.size());
  const NormalizedCoords nc = normalize_coords(agg.coords, coarse);
  for (std::size_t p = 0; p < agg.size(); ++p) {
    const std::size_t i = static_cast<std::size_t>(std::floor((nc.u[p] + 1.0) / 2.0 * 8.0));
    const std::size_t j = static_cast<std::size_t>(std::floor((nc.v[p] + 1.0) / 2.0 * 16.0));
    for (std::size_t c = 0; c < 4; ++c) CHECK(agg.value(p, c) == truth.at(c, i, j));
  }

  // fine truth with intra-cell variance, half of the fine points observed
  const LatLonGrid fine_grid = make_equiangular_grid(32, 64);
  const Field fine = testing::random_field(rng, fine_grid, testing::four_channels());
  const ObservationSet part = sample_observations(fine, fine_grid, 0.5, 3);
  const ObservationSet cells = aggregate_to_grid(part, coarse);
  const NormalizedCoords cc = normalize_coords(cells.coords, coarse);
  double diff = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < cells.size(); ++p) {
    const std::size_t i = static_cast<std::size_t>(std::floor((cc.u[p] + 1.0) / 2.0 * 8.0));
    const std::size_t j = static_cast<std::size_t>(std::floor((cc.v[p] + 1.0) / 2.0 * 16.0));
    for (std::size_t c = 0; c < 4; ++c) {
      double mean = 0.0;
      for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b) mean += fine.at(c, 4 * i + a, 4 * j + b) / 16.0;
      diff += std::abs(cells.value(p, c) - mean);
      ++n;
    }
  }
  // unit-variance fine noise: the mean of 8 of 16 values misses the full mean by about 0.18
  CHECK(diff / static_cast<double>(n) > 0.05);
}

TEST_CASE("decoder: zero final layer and the variance floor") {
  Rng rng(7);
  DecoderConfig cfg;
  cfg.in_channels = 3;
  cfg.n_outputs = 2;
  cfg.hidden = 5;
  Decoder dec("d", cfg);
  dec.init(rng);
  PointwiseLinear& last = dec.layer(dec.n_layers() - 1);
  last.weight.fill(0.0);
  last.bias.fill(0.0);
  const LatLonGrid g = make_equiangular_grid(4, 8);
  const FeatureMap rep{g, testing::random_tensor(rng, 3, 4, 8)};
  const AnalysisDistribution d = dec.decode(rep, grid_normalized_coords(g));
  CHECK(d.n_targets == g.size());
  CHECK(d.n_channels == 2);
  for (double m : d.mean) CHECK(m == 0.0);
  for (double v : d.variance) CHECK(std::abs(v - (std::log(2.0) + kVarianceFloor)) < 1e-15);

  for (double& b : last.bias.value) b = -800.0;
  const AnalysisDistribution low = dec.decode(rep, grid_normalized_coords(g));
  for (double v : low.variance) CHECK(v >= kVarianceFloor);
  CHECK(softplus(-800.0) >= 0.0);
  CHECK(std::isfinite(softplus(800.0)));
}
