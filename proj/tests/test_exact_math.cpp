#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fnp/dam.hpp"
#include "fnp/decoder.hpp"
#include "fnp/error.hpp"
#include "fnp/metrics.hpp"
#include "fnp/var.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fnp;
using fnp::testing::random_tensor;

namespace {

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

Tensor3 constant(std::size_t c, std::size_t h, std::size_t w, double v) { return Tensor3(c, h, w, v); }

}  // namespace

TEST_CASE("similarity: zero distance, Pythagorean case and loop oracle") {
  Rng rng(1);
  const Tensor3 y = random_tensor(rng, 5, 3, 4);
  for (double v : similarity(y, y).data) CHECK(v == 0.0);

  Tensor3 a(2, 1, 1), b(2, 1, 1);
  a(0, 0, 0) = 3.0;
  a(1, 0, 0) = 4.0;
  CHECK(similarity(a, b)(0, 0, 0) == 5.0);

  for (int trial = 0; trial < 100; ++trial) {
    const Tensor3 p = random_tensor(rng, 8, 3, 5), q = random_tensor(rng, 8, 3, 5);
    const Tensor3 s = similarity(p, q);
    REQUIRE(s.c == 1);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) CHECK(rel_close(s(0, i, j), oracle::similarity_at(p, q, i, j), 1e-12));
  }
  CHECK_THROWS_AS(similarity(random_tensor(rng, 2, 2, 2), random_tensor(rng, 3, 2, 2)), ConfigError);
}

TEST_CASE("selection: ties keep the background, branches follow the comparison") {
  Rng rng(2);
  const Tensor3 y_bg = random_tensor(rng, 4, 3, 3), y_obs = random_tensor(rng, 4, 3, 3);

  const Tensor3 tie = random_tensor(rng, 1, 3, 3);
  const auto m_tie = selection_mask(tie, tie, RetainRule::Verbatim);
  CHECK(select_merge(y_bg, y_obs, m_tie).data == y_bg.data);

  const auto m_bg = selection_mask(constant(1, 3, 3, 1.0), constant(1, 3, 3, 0.0), RetainRule::Verbatim);
  CHECK(select_merge(y_bg, y_obs, m_bg).data == y_bg.data);
  const auto m_obs = selection_mask(constant(1, 3, 3, 0.0), constant(1, 3, 3, 1.0), RetainRule::Verbatim);
  CHECK(select_merge(y_bg, y_obs, m_obs).data == y_obs.data);
  const auto m_prose = selection_mask(constant(1, 3, 3, 1.0), constant(1, 3, 3, 0.0), RetainRule::Prose);
  CHECK(select_merge(y_bg, y_obs, m_prose).data == y_obs.data);

  for (int trial = 0; trial < 100; ++trial) {
    const Tensor3 a = random_tensor(rng, 6, 3, 3), b = random_tensor(rng, 6, 3, 3);
    Tensor3 sb = random_tensor(rng, 1, 3, 3), so = random_tensor(rng, 1, 3, 3);
    so(0, 1, 1) = sb(0, 1, 1);  // one tie per instance
    const Tensor3 got = select_merge(a, b, selection_mask(sb, so, RetainRule::Verbatim));
    CHECK(got.data == oracle::select(a, b, sb, so).data);
  }
}

TEST_CASE("select_merge picks whole vectors and is deterministic") {
  Rng rng(3);
  const Tensor3 a = random_tensor(rng, 5, 4, 6), b = random_tensor(rng, 5, 4, 6);
  const Tensor3 sa = random_tensor(rng, 1, 4, 6), sb = random_tensor(rng, 1, 4, 6);
  const auto mask = selection_mask(sa, sb, RetainRule::Verbatim);
  CHECK(mask == selection_mask(sa, sb, RetainRule::Verbatim));
  const Tensor3 out = select_merge(a, b, mask);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      bool all_a = true, all_b = true;
      for (std::size_t k = 0; k < 5; ++k) {
        all_a = all_a && out(k, i, j) == a(k, i, j);
        all_b = all_b && out(k, i, j) == b(k, i, j);
      }
      CHECK((all_a || all_b));
    }
}

TEST_CASE("latitude weights and RMSE") {
  const LatLonGrid g = make_equiangular_grid(6, 12);
  const auto wts = latitude_weights(g);
  double total = 0.0;
  for (double v : wts) total += v * static_cast<double>(g.n_lon());
  CHECK(std::abs(total - static_cast<double>(g.size())) < 1e-10);

  Rng rng(4);
  const Field t = testing::random_field(rng, g, {{"a", 0}, {"b", 0}});
  CHECK(latitude_weighted_rmse(t, t, 0) == 0.0);
  Field shifted = t;
  for (double& v : shifted.values) v += 1.0;
  CHECK(std::abs(latitude_weighted_rmse(shifted, t, 1) - 1.0) < 1e-12);

  // 2x2 grid with centers at +-45 degrees
  const LatLonGrid g2 = make_equiangular_grid(2, 2);
  Field z(g2, {{"a", 0}}), e(g2, {{"a", 0}});
  e.values = {1.0, 0.0, 0.0, 1.0};
  CHECK(std::abs(latitude_weighted_rmse(e, z, 0) - std::sqrt(0.5)) < 1e-12);

  for (int trial = 0; trial < 100; ++trial) {
    const LatLonGrid gg = make_equiangular_grid(2 + trial % 5, 3 + trial % 7);
    const Field a = testing::random_field(rng, gg, {{"a", 0}, {"b", 1}});
    const Field b = testing::random_field(rng, gg, {{"a", 0}, {"b", 1}});
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(rel_close(latitude_weighted_rmse(a, b, c), oracle::weighted_rmse(a, b, c), 1e-12));
  }

  // rotation in longitude changes nothing
  const Field a = testing::random_field(rng, g, {{"a", 0}});
  const Field b = testing::random_field(rng, g, {{"a", 0}});
  Field ra = a, rb = b;
  for (std::size_t i = 0; i < g.n_lat(); ++i)
    for (std::size_t j = 0; j < g.n_lon(); ++j) {
      ra.at(0, i, (j + 5) % g.n_lon()) = a.at(0, i, j);
      rb.at(0, i, (j + 5) % g.n_lon()) = b.at(0, i, j);
    }
  CHECK(std::abs(latitude_weighted_rmse(ra, rb, 0) - latitude_weighted_rmse(a, b, 0)) < 1e-12);
  CHECK(latitude_weighted_rmse(a, b, 0) > 0.0);
}

TEST_CASE("standardized MSE and MAE") {
  const LatLonGrid g = make_equiangular_grid(3, 3);
  Rng rng(5);
  const Field t = testing::random_field(rng, g, {{"a", 0}, {"b", 0}});
  Normalizer norm;
  norm.mean = {0.3, -1.0};
  norm.stddev = {2.0, 0.5};
  CHECK(overall_mse(t, t, norm) == 0.0);
  CHECK(overall_mae(t, t, norm) == 0.0);
  Field off = t;
  for (std::size_t k = 0; k < 9; ++k) {
    off.values[k] += 4.0;      // 2 standard deviations
    off.values[9 + k] -= 1.0;  // 2 standard deviations
  }
  CHECK(std::abs(overall_mse(off, t, norm) - 4.0) < 1e-12);
  CHECK(std::abs(overall_mae(off, t, norm) - 2.0) < 1e-12);

  for (int trial = 0; trial < 20; ++trial) {
    const Field a = testing::random_field(rng, g, {{"a", 0}, {"b", 0}});
    const Field b = testing::random_field(rng, g, {{"a", 0}, {"b", 0}});
    double se = 0.0, ae = 0.0;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t k = 0; k < 9; ++k) {
        const double d = (a.values[c * 9 + k] - b.values[c * 9 + k]) / norm.stddev[c];
        se += d * d;
        ae += std::abs(d);
      }
    CHECK(rel_close(overall_mse(a, b, norm), se / 18.0, 1e-12));
    CHECK(rel_close(overall_mae(a, b, norm), ae / 18.0, 1e-12));
  }
}

TEST_CASE("Gaussian NLL closed forms and loop oracle") {
  AnalysisDistribution d(1, 1);
  d.mean = {0.7};
  d.variance = {1.0 / (2.0 * std::numbers::pi)};
  const std::vector<double> x = {0.7};
  CHECK(std::abs(gaussian_nll(d, x)) < 1e-15);
  d.variance = {1.0};
  CHECK(std::abs(gaussian_nll(d, x) - 0.5 * std::log(2.0 * std::numbers::pi)) < 1e-15);
  CHECK(std::abs(gaussian_nll(d, x) - 0.918939) < 1e-6);

  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 1 + trial % 4, n = 3 + trial % 9;
    AnalysisDistribution dist(c, n);
    std::vector<double> truth(c * n);
    for (std::size_t k = 0; k < c * n; ++k) {
      dist.mean[k] = rng.normal();
      dist.variance[k] = rng.uniform(0.05, 3.0);
      truth[k] = rng.normal();
    }
    CHECK(rel_close(gaussian_nll(dist, truth), oracle::nll(dist.mean, dist.variance, truth), 1e-12));
  }

  d.variance = {0.0};
  CHECK_THROWS_AS(gaussian_nll(d, x), NumericError);
}

TEST_CASE("NLL is minimized at the squared residual") {
  const double mu = 0.2, xv = 1.5, best = (xv - mu) * (xv - mu);
  AnalysisDistribution d(1, 1);
  d.mean = {mu};
  const std::vector<double> x = {xv};
  d.variance = {best};
  const double at_best = gaussian_nll(d, x);
  for (double f : {0.5, 0.9, 0.99, 1.01, 1.1, 2.0}) {
    d.variance = {best * f};
    CHECK(gaussian_nll(d, x) > at_best);
  }
}

TEST_CASE("variational cost: closed forms and loop oracle") {
  VarProblem p;
  p.x_b = Eigen::VectorXd::Zero(1);
  p.y = Eigen::VectorXd::Ones(1);
  p.B = Eigen::MatrixXd::Identity(1, 1);
  p.R = Eigen::MatrixXd::Identity(1, 1);
  p.H_op = Eigen::MatrixXd::Identity(1, 1);
  CHECK(cost(Eigen::VectorXd::Zero(1), p) == 0.5);
  CHECK(std::abs(analytic_analysis(p)(0) - 0.5) < 1e-15);

  Rng rng(7);
  VarProblem q = oracle::random_problem(rng, 4, 3);
  q.y = q.H_op * q.x_b;
  CHECK(std::abs(cost(q.x_b, q)) < 1e-14);

  for (int trial = 0; trial < 100; ++trial) {
    const VarProblem r = oracle::random_problem(rng, 3, 2);
    Eigen::VectorXd x(3);
    for (int i = 0; i < 3; ++i) x(i) = rng.normal();
    CHECK(rel_close(cost(x, r), oracle::cost(x, r), 1e-12));
  }
}

TEST_CASE("analytic analysis: optimality, limits and observation permutation") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const VarProblem p = oracle::random_problem(rng, 4 + trial % 5, 2 + trial % 3);
    const Eigen::VectorXd xa = analytic_analysis(p);
    CHECK(cost_gradient(xa, p).norm() <= 1e-8);
    CHECK((xa - oracle::minimize_cost(p)).norm() <= 1e-6 * std::max(1.0, xa.norm()));
    CHECK(cost(xa, p) <= cost(p.x_b, p));
    // least-squares fit of the observations alone
    const Eigen::VectorXd fit = p.H_op.completeOrthogonalDecomposition().solve(p.y);
    CHECK(cost(xa, p) <= cost(fit, p));

    VarProblem perm = p;
    const Eigen::Index m = p.y.size();
    Eigen::PermutationMatrix<Eigen::Dynamic> P(m);
    P.setIdentity();
    for (Eigen::Index k = m - 1; k > 0; --k) P.applyTranspositionOnTheRight(k, static_cast<Eigen::Index>(rng.below(k + 1)));
    perm.y = P * p.y;
    perm.H_op = P * p.H_op;
    perm.R = P * p.R * P.transpose();
    CHECK((analytic_analysis(perm) - xa).norm() <= 1e-12 * std::max(1.0, xa.norm()));

    VarProblem weak = p;
    weak.R *= 1e9;
    const Eigen::VectorXd xw = analytic_analysis(weak);
    CHECK((xw - p.x_b).norm() <= 1e-6 * std::max(1.0, p.x_b.norm()));
  }
}

TEST_CASE("variational problem validation") {
  Rng rng(9);
  VarProblem p = oracle::random_problem(rng, 3, 2);
  p.B(0, 1) += 0.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = oracle::random_problem(rng, 3, 2);
  p.R = -p.R;
  CHECK_THROWS_AS(analytic_analysis(p), Error);
  p = oracle::random_problem(rng, 3, 2);
  p.H_op = Eigen::MatrixXd::Zero(2, 4);
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("var problem from a field and observations") {
  const LatLonGrid g = make_equiangular_grid(3, 4);
  Rng rng(10);
  const Field bg = testing::random_field(rng, g, {{"a", 0}});
  const ObservationSet obs = sample_observations(bg, g, 0.5, 3);
  const VarProblem p = make_var_problem(bg, obs, 1.0, 0.5, 2000.0);
  CHECK(p.n() == g.size());
  CHECK(p.m() == obs.size());
  p.validate();
  // observations of the background itself leave the analysis at the background
  CHECK((analytic_analysis(p) - p.x_b).norm() < 1e-10);
}
