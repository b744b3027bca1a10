#include <doctest.h>

#include <cmath>

#include "fnp/dam.hpp"
#include "fnp/encoder.hpp"
#include "fnp/error.hpp"
#include "fnp/nfl.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fnp;
using fnp::testing::random_tensor;

using oracle::direct_dft;
using oracle::permuted;
using oracle::random_set;
using oracle::rel_norm_diff;
using oracle::signed_bin;

TEST_CASE("SetConv: empty set gives zero density and signal") {
  const LatLonGrid g = make_equiangular_grid(4, 8);
  SetConv sc("s", 3, 4, 0.3);
  Rng rng(1);
  sc.init(rng);
  const SetConvSums sums = sc.kernel_sums(empty_conditional_set(3, true), g);
  for (double v : sums.density.data) CHECK(v == 0.0);
  for (double v : sums.signal.data) CHECK(v == 0.0);
  const Tensor3 norm = sc.normalize(sums);
  for (double v : norm.data) CHECK(v == 0.0);
  const FeatureMap fm = sc.forward(empty_conditional_set(3, true), g);
  for (double v : fm.values.channel(0)) CHECK(v == 0.0);
  for (double v : fm.values.data) CHECK(std::isfinite(v));
}

TEST_CASE("SetConv: single observation at a grid point reproduces the kernel") {
  const LatLonGrid g = make_equiangular_grid(4, 4);
  const double ell = 0.4;
  SetConv sc("s", 1, 2, ell);
  const NormalizedCoords grid_nc = grid_normalized_coords(g);
  const std::size_t g0 = 5;
  ConditionalSet s;
  s.n_channels = 1;
  s.coords.periodic_v = true;
  s.coords.u = {grid_nc.u[g0]};
  s.coords.v = {grid_nc.v[g0]};
  s.values = {1.0};
  s.mask = {1};
  const SetConvSums sums = sc.kernel_sums(s, g);
  std::size_t peak = 0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    const double expect = setconv_kernel(grid_nc.u[p] - grid_nc.u[g0], grid_nc.v[p] - grid_nc.v[g0], ell, true);
    CHECK(std::abs(sums.density.data[p] - expect) <= 1e-12);
    CHECK(sums.density.data[p] == sums.signal.data[p]);
    if (sums.density.data[p] > sums.density.data[peak]) peak = p;
  }
  CHECK(peak == g0);
  CHECK(sums.density.data[g0] == doctest::Approx(1.0));
}

TEST_CASE("SetConv: permutation invariance") {
  Rng rng(2);
  const LatLonGrid g = make_equiangular_grid(8, 16);
  SetConv sc("s", 3, 5, 0.2);
  sc.init(rng);
  for (int trial = 0; trial < 5; ++trial) {
    const ConditionalSet s = random_set(rng, 60, 3);
    const ConditionalSet p = permuted(s, rng.permutation(s.size()));
    const FeatureMap a = sc.forward(s, g), b = sc.forward(p, g);
    CHECK(rel_norm_diff(b.values.data, a.values.data) <= 1e-6);
  }
}

TEST_CASE("SetConv: locality beyond the kernel cutoff") {
  const LatLonGrid g = make_equiangular_grid(16, 32);
  const double ell = 0.05;
  SetConv sc("s", 1, 2, ell);
  ConditionalSet base;
  base.n_channels = 1;
  base.coords.periodic_v = true;
  base.coords.u = {0.0, 0.5};
  base.coords.v = {0.0, 0.5};
  base.values = {1.0, 2.0};
  base.mask = {1, 1};
  ConditionalSet moved = base;
  moved.coords.u[1] = 0.5 + 0.01;  // stays far from the probed point
  const NormalizedCoords nc = grid_normalized_coords(g);
  const SetConvSums a = sc.kernel_sums(base, g), b = sc.kernel_sums(moved, g);
  for (std::size_t p = 0; p < g.size(); ++p) {
    const double d0 = std::hypot(nc.u[p] - 0.5, nc.v[p] - 0.5);
    const double d1 = std::hypot(nc.u[p] - 0.51, nc.v[p] - 0.5);
    if (d0 >= kKernelCutoff * ell && d1 >= kKernelCutoff * ell) {
      CHECK(std::abs(a.density.data[p] - b.density.data[p]) <= 1e-8);
      CHECK(std::abs(a.signal.data[p] - b.signal.data[p]) <= 1e-8);
    }
  }
  CHECK(setconv_kernel(kKernelCutoff * ell * 1.0001, 0.0, ell, false) == 0.0);
}

TEST_CASE("SetConv: on-grid points match a masked convolution") {
  Rng rng(3);
  for (bool periodic : {true, false}) {
    const LatLonGrid g = periodic ? make_equiangular_grid(8, 16)
                                  : make_equiangular_grid(8, 12, GridDomain{-40.0, 40.0, 0.0, 120.0});
    const std::size_t h = g.n_lat(), w = g.n_lon();
    const double ell = 0.3;
    SetConv sc("s", 2, 3, ell);
    sc.init(rng);
    const NormalizedCoords nc = grid_normalized_coords(g);
    ConditionalSet s;
    s.n_channels = 2;
    s.coords.periodic_v = periodic;
    std::vector<double> y(2 * h * w, 0.0), m(2 * h * w, 0.0);
    for (std::size_t p = 0; p < h * w; ++p) {
      if (rng.uniform() < 0.6) continue;
      s.coords.u.push_back(nc.u[p]);
      s.coords.v.push_back(nc.v[p]);
      for (std::size_t c = 0; c < 2; ++c) {
        const bool present = rng.uniform() < 0.8;
        const double v = rng.normal();
        s.values.push_back(present ? v : kMissing);
        s.mask.push_back(present ? 1 : 0);
        if (present) {
          y[c * h * w + p] = v;
          m[c * h * w + p] = 1.0;
        }
      }
    }
    const auto [dens, sig] = oracle::masked_conv_sums(y, m, 2, h, w, ell, periodic);
    const SetConvSums sums = sc.kernel_sums(s, g);
    CHECK(rel_norm_diff(sums.density.data, dens) <= 1e-6);
    CHECK(rel_norm_diff(sums.signal.data, sig) <= 1e-6);
  }
}

TEST_CASE("SVD encoder channel layout") {
  std::vector<ChannelInfo> paper_like;
  for (std::uint32_t gid = 0; gid < 5; ++gid)
    for (int lvl = 0; lvl < 2; ++lvl) paper_like.push_back({"u" + std::to_string(gid) + std::to_string(lvl), gid});
  paper_like.push_back({"t2m", 5});
  paper_like.push_back({"u10", 5});
  const EncoderLayout layout = EncoderLayout::from_channels(paper_like, 4);
  CHECK(layout.groups.size() == 6);
  SvdEncoder enc("e", layout, 0.2);
  CHECK(enc.n_parts() == 7);
  CHECK(enc.out_channels() == 7 * 5);

  const std::vector<ChannelInfo> single = {{"a", 0}, {"b", 0}};
  const EncoderLayout one = EncoderLayout::from_channels(single, 6);
  CHECK(one.out_channels() == 2 * 6 + 2);
  const EncoderLayout joint = EncoderLayout::from_channels(single, 6, false);
  CHECK(joint.out_channels() == 7);

  // an empty observation set leaves zero density; the background map is unaffected
  Rng rng(4);
  const LatLonGrid g = make_equiangular_grid(4, 8);
  SvdEncoder e_bg("bg", one, 0.3), e_obs("obs", one, 0.3);
  e_bg.init(rng);
  e_obs.init(rng);
  const Field bg = testing::random_field(rng, g, single);
  const FeatureMap before = e_bg.forward(field_as_set(bg), g);
  const FeatureMap obs_map = e_obs.forward(empty_conditional_set(2, true), g);
  for (std::size_t part = 0; part < 2; ++part)
    for (double v : obs_map.values.channel(part * 7)) CHECK(v == 0.0);
  CHECK(e_bg.forward(field_as_set(bg), g).values.data == before.values.data);
}

TEST_CASE("length scales stay positive") {
  SetConv sc("s", 2, 2, 0.25);
  CHECK(sc.length_scale(0) == doctest::Approx(0.25));
  sc.log_length_scale.value[1] = -50.0;
  CHECK(sc.length_scale(1) > 0.0);
  CHECK_THROWS_AS(SetConv("bad", 1, 1, -1.0), ConfigError);
}

TEST_CASE("NFL: zero branches give the identity") {
  Rng rng(5);
  for (ResidualForm form : {ResidualForm::PostSum, ResidualForm::ActivateAfterSum}) {
    ResidualBlock block("b", 3, 3, true, 2, 3, form);
    block.init(rng);
    block.spectral().weight.fill(0.0);
    block.conv().weight.fill(0.0);
    block.conv().bias.fill(0.0);
    const Tensor3 x = form == ResidualForm::PostSum ? random_tensor(rng, 3, 4, 8) : Tensor3(3, 4, 8, 0.0);
    CHECK(block.forward(x, true).data == x.data);
  }
}

TEST_CASE("NFL: identity mixing at full modes inverts the transform") {
  Rng rng(6);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {6, 10}, {5, 7}}) {
    SpectralConv sc("s", 2, 2, h / 2 + 1, w / 2 + 1);
    sc.set_identity_mixing();
    const Tensor3 x = random_tensor(rng, 2, h, w);
    CHECK(rel_norm_diff(sc.forward(x).data, x.data) <= 1e-6);
  }
}

TEST_CASE("NFL: spectral truncation and Parseval against a direct transform") {
  Rng rng(7);
  const std::size_t h = 8, w = 8;
  for (auto [m1, m2] : {std::pair<std::size_t, std::size_t>{2, 2}, {3, 4}, {1, 1}}) {
    SpectralConv sc("s", 2, 3, m1, m2);
    sc.init(rng);
    const Tensor3 x = random_tensor(rng, 2, h, w);
    const Tensor3 y = sc.forward(x);
    CHECK(y.same_shape(Tensor3(3, h, w)));
    for (std::size_t c = 0; c < y.c; ++c) {
      const auto spec = direct_dft(y.channel(c), h, w);
      double total = 0.0, outside = 0.0, spatial = 0.0;
      for (std::size_t k1 = 0; k1 < h; ++k1)
        for (std::size_t k2 = 0; k2 < w; ++k2) {
          const double e = std::norm(spec[k1 * w + k2]);
          total += e;
          const bool inside = std::abs(signed_bin(k1, h)) < static_cast<std::ptrdiff_t>(m1) &&
                              std::abs(signed_bin(k2, w)) < static_cast<std::ptrdiff_t>(m2);
          if (!inside) outside += e;
        }
      for (double v : y.channel(c)) spatial += v * v;
      CHECK(outside <= 1e-10 * total);
      CHECK(std::abs(spatial - total / static_cast<double>(h * w)) <= 1e-8 * spatial);
    }
  }
}

TEST_CASE("NFL: mode limits and shape preservation") {
  SpectralConv sc("s", 1, 1, 5, 3);
  CHECK_THROWS_AS(sc.forward(Tensor3(1, 6, 8)), ConfigError);
  Rng rng(8);
  StackConfig cfg{3, 4, 2, 3, 3, true, ResidualForm::PostSum};
  FeatureStack stack("st", cfg);
  stack.init(rng);
  const FeatureMap in{make_equiangular_grid(4, 8), random_tensor(rng, 3, 4, 8)};
  const FeatureMap out = stack.forward(in);
  CHECK(out.values.same_shape(in.values));
  CHECK(out.grid == in.grid);
  // the same weights accept another resolution
  const FeatureMap big{make_equiangular_grid(8, 16), random_tensor(rng, 3, 8, 16)};
  CHECK(stack.forward(big).values.same_shape(big.values));
}

TEST_CASE("align: identity, constants and bilinear reproduction") {
  Rng rng(9);
  const LatLonGrid g = make_equiangular_grid(4, 8);
  const FeatureMap x{g, random_tensor(rng, 3, 4, 8)};
  CHECK(align(x, g).values.data == x.values.data);

  FeatureMap c{g, Tensor3(2, 4, 8, -1.75)};
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{3, 5}, {9, 17}, {16, 32}})
    for (double v : align(c, make_equiangular_grid(h, w)).values.data) CHECK(v == -1.75);

  // 2x2 -> 3x3 latitude ramp: interior rows reproduce the ramp, outer rows clamp
  const LatLonGrid g2 = make_equiangular_grid(2, 2), g3 = make_equiangular_grid(3, 3);
  FeatureMap ramp{g2, Tensor3(1, 2, 2)};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) ramp.values(0, i, j) = 1.0 + 0.1 * g2.latitude(i);
  const FeatureMap up = align(ramp, g3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double lat = std::clamp(g3.latitude(i), -45.0, 45.0);
      CHECK(std::abs(up.values(0, i, j) - (1.0 + 0.1 * lat)) <= 1e-12);
    }

  // bilinear field on a regional grid, targets inside the source hull
  const GridDomain dom{-40.0, 40.0, 10.0, 90.0};
  const LatLonGrid src = make_equiangular_grid(8, 8, dom), dst = make_equiangular_grid(5, 5, dom);
  auto field = [](double lat, double lon) { return 0.5 + 0.02 * lat - 0.03 * lon + 0.001 * lat * lon; };
  FeatureMap bl{src, Tensor3(1, 8, 8)};
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) bl.values(0, i, j) = field(src.latitude(i), src.longitude(j));
  const FeatureMap down = align(bl, dst);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      CHECK(std::abs(down.values(0, i, j) - field(dst.latitude(i), dst.longitude(j))) <= 1e-12);

  CHECK_THROWS_AS(align(x, make_equiangular_grid(4, 4, dom)), ConfigError);
}

TEST_CASE("shared feature map: zero, identity-selecting and random weights") {
  Rng rng(10);
  const std::size_t k = 3;
  PointwiseLinear lin("shared", 2 * k, k);
  const Tensor3 stacked = random_tensor(rng, 2 * k, 2, 2);
  lin.weight.fill(0.0);
  lin.bias.fill(0.0);
  for (double v : lin.forward(stacked).data) CHECK(v == 0.0);
  for (std::size_t o = 0; o < k; ++o) lin.weight.value[o * 2 * k + o] = 1.0;
  CHECK(lin.forward(stacked).data == slice_channels(stacked, 0, k).data);
  lin.init(rng);
  for (double& b : lin.bias.value) b = rng.normal();
  const Tensor3 y = lin.forward(stacked);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t o = 0; o < k; ++o) {
      double s = lin.bias.value[o];
      for (std::size_t i = 0; i < 2 * k; ++i) s += lin.weight.value[o * 2 * k + i] * stacked.data[i * 4 + p];
      CHECK(std::abs(y.data[o * 4 + p] - s) <= 1e-12);
    }
}

TEST_CASE("smoothing convolution: delta, averaging and zero kernels") {
  Rng rng(11);
  const std::size_t c = 2;
  Conv2d conv("smooth", c, c, 3);
  const Tensor3 x = random_tensor(rng, c, 4, 6);
  conv.weight.fill(0.0);
  conv.bias.fill(0.0);
  for (double v : conv.forward(x, true).data) CHECK(v == 0.0);
  for (std::size_t o = 0; o < c; ++o) conv.weight.value[((o * c + o) * 3 + 1) * 3 + 1] = 1.0;
  CHECK(conv.forward(x, true).data == x.data);

  Conv2d avg("avg", 1, 1, 3);
  avg.weight.fill(1.0 / 9.0);
  avg.bias.fill(0.0);
  Tensor3 impulse(1, 5, 6);
  impulse(0, 2, 0) = 1.0;  // column 0: the neighborhood wraps to column 5
  const Tensor3 out = avg.forward(impulse, true);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      const bool near = (i >= 1 && i <= 3) && (j <= 1 || j == 5);
      CHECK(std::abs(out(0, i, j) - (near ? 1.0 / 9.0 : 0.0)) <= 1e-15);
    }
  // latitude mirrors about the outer edge: an impulse on row 0 is counted twice there
  Tensor3 edge(1, 5, 6);
  edge(0, 0, 3) = 1.0;
  CHECK(std::abs(avg.forward(edge, true)(0, 0, 3) - 2.0 / 9.0) <= 1e-15);
}

TEST_CASE("DAM output keeps exactly one source per point") {
  Rng rng(12);
  DamConfig cfg;
  cfg.width = 4;
  Dam dam("dam", cfg);
  dam.init(rng);
  const LatLonGrid g = make_equiangular_grid(4, 8), obs_grid = make_equiangular_grid(8, 16);
  const FeatureMap bg{g, random_tensor(rng, 4, 4, 8)}, obs{obs_grid, random_tensor(rng, 4, 8, 16)};
  Dam::Cache cache;
  const FeatureMap out = dam.forward(bg, obs, &cache);
  CHECK(out.values.same_shape(Tensor3(4, 4, 8)));
  const Tensor3 selected = slice_channels(cache.merged, 0, 4);
  for (std::size_t p = 0; p < g.size(); ++p) {
    const Tensor3& src = cache.weight_bg[p] == 1.0 ? cache.bg : cache.obs_aligned;
    for (std::size_t k = 0; k < 4; ++k) CHECK(selected.data[k * g.size() + p] == src.data[k * g.size() + p]);
  }
  const FeatureMap again = dam.forward(bg, obs);
  CHECK(again.values.data == out.values.data);
}
