#include <doctest.h>

#include "fnp/dam.hpp"
#include "fnp/decoder.hpp"
#include "fnp/encoder.hpp"
#include "fnp/layers.hpp"
#include "fnp/model.hpp"
#include "fnp/nfl.hpp"
#include "support.hpp"

using namespace fnp;
using fnp::testing::dot;
using fnp::testing::max_fd_error;
using fnp::testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;

double params_fd_error(ParamList& params, const std::function<double()>& loss,
                       const std::function<bool()>& stable = {}) {
  double worst = 0.0;
  for (Parameter* p : params) {
    const double e = max_fd_error(p->value, p->grad, loss, 1e-6, stable);
    worst = std::max(worst, e);
  }
  return worst;
}

}  // namespace

TEST_CASE("pointwise linear and convolution gradients") {
  Rng rng(1);
  for (bool periodic : {true, false}) {
    Conv2d conv("c", 2, 3, 3);
    conv.init(rng);
    Tensor3 x = random_tensor(rng, 2, 4, 8);
    const Tensor3 r = random_tensor(rng, 3, 4, 8);
    auto loss = [&] { return dot(conv.forward(x, periodic), r); };
    ParamList ps;
    conv.collect(ps);
    zero_grads(ps);
    const Tensor3 dx = conv.backward(x, r, periodic);
    CHECK(params_fd_error(ps, loss) < kTol);
    CHECK(max_fd_error(x.data, dx.data, loss) < kTol);
  }
  PointwiseLinear lin("l", 3, 2);
  lin.init(rng);
  Tensor3 x = random_tensor(rng, 3, 2, 5);
  const Tensor3 r = random_tensor(rng, 2, 2, 5);
  auto loss = [&] { return dot(lin.forward(x), r); };
  ParamList ps;
  lin.collect(ps);
  zero_grads(ps);
  const Tensor3 dx = lin.backward(x, r);
  CHECK(params_fd_error(ps, loss) < kTol);
  CHECK(max_fd_error(x.data, dx.data, loss) < kTol);
}

TEST_CASE("spectral convolution gradient") {
  Rng rng(2);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{4, 8}, {5, 6}}) {
    SpectralConv sc("s", 3, 2, 2, 3);
    sc.init(rng);
    Tensor3 x = random_tensor(rng, 3, h, w);
    const Tensor3 r = random_tensor(rng, 2, h, w);
    auto loss = [&] { return dot(sc.forward(x), r); };
    ParamList ps;
    sc.collect(ps);
    zero_grads(ps);
    const Tensor3 dx = sc.backward(x, r);
    CHECK(params_fd_error(ps, loss) < kTol);
    CHECK(max_fd_error(x.data, dx.data, loss) < kTol);
  }
}

TEST_CASE("neural Fourier stack gradient on a 4x8 grid with 3 channels") {
  Rng rng(3);
  const LatLonGrid grid = make_equiangular_grid(4, 8);
  for (ResidualForm form : {ResidualForm::PostSum, ResidualForm::ActivateAfterSum}) {
    StackConfig cfg;
    cfg.width = 3;
    cfg.n_layers = 2;
    cfg.modes_lat = 2;
    cfg.modes_lon = 3;
    cfg.form = form;
    FeatureStack stack("st", cfg);
    stack.init(rng);
    FeatureMap x{grid, random_tensor(rng, 3, 4, 8)};
    const Tensor3 r = random_tensor(rng, 3, 4, 8);
    auto loss = [&] { return dot(stack.forward(x).values, r); };
    ParamList ps;
    stack.collect(ps);
    zero_grads(ps);
    FeatureStack::Cache cache;
    stack.forward(x, &cache);
    const Tensor3 dx = stack.backward(x, cache, r);
    CHECK(params_fd_error(ps, loss) < kTol);
    CHECK(max_fd_error(x.values.data, dx.data, loss) < kTol);
  }
}

TEST_CASE("SetConv gradient including the length scale") {
  Rng rng(4);
  const LatLonGrid grid = make_equiangular_grid(4, 8);
  ObservationSet obs = ObservationSet::empty_set(2);
  for (int p = 0; p < 7; ++p) {
    const double vals[2] = {rng.normal(), rng.normal()};
    const std::uint8_t present[2] = {1, static_cast<std::uint8_t>(p % 3 != 0)};
    obs.push_back({rng.uniform(-89.0, 89.0), rng.uniform(0.0, 359.0)}, vals, present);
  }
  const ConditionalSet set = make_conditional_set(obs, grid);
  SetConv sc("sc", 2, 3, 0.6);
  sc.init(rng);
  sc.log_length_scale.value[1] = std::log(0.4);
  const Tensor3 r = random_tensor(rng, 4, 4, 8);
  auto loss = [&] { return dot(sc.forward(set, grid).values, r); };
  ParamList ps;
  sc.collect(ps);
  zero_grads(ps);
  SetConv::Cache cache;
  sc.forward(set, grid, &cache);
  sc.backward(set, grid, cache, r);
  CHECK(params_fd_error(ps, loss) < kTol);
}

TEST_CASE("DAM gradient with the constant-mask convention and the soft variant") {
  Rng rng(5);
  const LatLonGrid target = make_equiangular_grid(2, 3);
  const LatLonGrid obs_grid = make_equiangular_grid(4, 6);
  for (SelectionMode mode : {SelectionMode::Hard, SelectionMode::Soft}) {
    DamConfig cfg;
    cfg.width = 3;
    cfg.selection = mode;
    Dam dam("dam", cfg);
    dam.init(rng);
    FeatureMap bg{target, random_tensor(rng, 3, 2, 3)};
    FeatureMap obs{obs_grid, random_tensor(rng, 3, 4, 6)};
    const Tensor3 r = random_tensor(rng, 3, 2, 3);
    Dam::Cache ref;
    dam.forward(bg, obs, &ref);
    auto loss = [&] { return dot(dam.forward(bg, obs).values, r); };
    auto stable = [&] {
      Dam::Cache c;
      dam.forward(bg, obs, &c);
      return mode == SelectionMode::Soft || c.weight_bg == ref.weight_bg;
    };
    ParamList ps;
    dam.collect(ps);
    zero_grads(ps);
    auto [d_bg, d_obs] = dam.backward(bg, obs, ref, r);
    CHECK(params_fd_error(ps, loss, stable) < kTol);
    CHECK(max_fd_error(bg.values.data, d_bg.data, loss, 1e-6, stable) < kTol);
    CHECK(max_fd_error(obs.values.data, d_obs.data, loss, 1e-6, stable) < kTol);
  }
}

TEST_CASE("decoder and NLL gradients") {
  Rng rng(6);
  DecoderConfig cfg;
  cfg.in_channels = 3;
  cfg.n_outputs = 2;
  cfg.hidden = 5;
  Decoder dec("dec", cfg);
  dec.init(rng);
  const LatLonGrid grid = make_equiangular_grid(4, 8);
  const NormalizedCoords targets = grid_normalized_coords(grid);
  Tensor3 feats = random_tensor(rng, 3, 1, grid.size());
  std::vector<double> truth(2 * grid.size());
  for (double& v : truth) v = rng.normal();
  auto loss = [&] { return gaussian_nll(dec.to_distribution(dec.forward_raw(feats, targets)), truth); };
  ParamList ps;
  dec.collect(ps);
  zero_grads(ps);
  Decoder::Cache cache;
  const Tensor3 raw = dec.forward_raw(feats, targets, &cache);
  NllGradients g;
  gaussian_nll(dec.to_distribution(raw), truth, &g);
  const Tensor3 d_feats = dec.backward(cache, dec.raw_gradient(raw, g.d_mean, g.d_variance));
  CHECK(params_fd_error(ps, loss) < kTol);
  CHECK(max_fd_error(feats.data, d_feats.data, loss) < kTol);

  // NLL against its own mean/variance arguments.
  AnalysisDistribution dist(2, 5);
  for (double& m : dist.mean) m = rng.normal();
  for (double& v : dist.variance) v = 0.2 + rng.uniform();
  std::vector<double> x(10);
  for (double& v : x) v = rng.normal();
  NllGradients gd;
  gaussian_nll(dist, x, &gd);
  auto nll = [&] { return gaussian_nll(dist, x); };
  CHECK(max_fd_error(dist.mean, gd.d_mean, nll) < kTol);
  CHECK(max_fd_error(dist.variance, gd.d_variance, nll) < kTol);
}

TEST_CASE("end-to-end model gradients for every variant") {
  Rng rng(7);
  const LatLonGrid target = make_equiangular_grid(4, 8);
  const auto channels = std::vector<ChannelInfo>{{"a", 0}, {"b", 1}};
  Field bg = fnp::testing::random_field(rng, target, channels);
  ObservationSet obs = sample_observations(fnp::testing::random_field(rng, make_equiangular_grid(8, 16), channels),
                                           make_equiangular_grid(8, 16), 0.3, 11);
  std::vector<double> truth(2 * target.size());
  for (double& v : truth) v = rng.normal();
  for (VariantTag tag : all_variants()) {
    CAPTURE(variant_name(tag));
    ModelConfig cfg;
    cfg.variant = tag;
    cfg.channels = channels;
    cfg.grid_lat = 4;
    cfg.grid_lon = 8;
    cfg.embed_dim = 2;
    cfg.n_layers = 1;
    cfg.decoder_hidden = 4;
    cfg.decoder_layers = 1;
    cfg.match_parameters = false;
    cfg.stack_width = 3;
    cfg.seed = 3;
    AssimilationModel model(resolve_config(cfg));
    AssimilationModel::Cache ref;
    model.forward(target, &bg, obs, &ref);
    auto loss = [&] { return gaussian_nll(model.forward(target, &bg, obs), truth); };
    auto stable = [&] {
      AssimilationModel::Cache c;
      model.forward(target, &bg, obs, &c);
      return c.dam.weight_bg == ref.dam.weight_bg;
    };
    ParamList ps = model.parameters();
    zero_grads(ps);
    NllGradients g;
    gaussian_nll(model.forward(target, &bg, obs, &ref), truth, &g);
    model.backward(ref, g);
    CHECK(params_fd_error(ps, loss, stable) < kTol);
  }
}
