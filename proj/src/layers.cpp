#include "fnp/layers.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "fnp/error.hpp"
#include "fnp/rng.hpp"

namespace fnp {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

Tensor3 gelu(const Tensor3& x) {
  Tensor3 y = x;
  for (double& v : y.data) v = gelu(v);
  return y;
}

Tensor3 gelu_backward(const Tensor3& pre, const Tensor3& dy) {
  Tensor3 dx = dy;
  for (std::size_t k = 0; k < dx.size(); ++k) dx.data[k] *= gelu_grad(pre.data[k]);
  return dx;
}

PointwiseLinear::PointwiseLinear(const std::string& name, std::size_t in, std::size_t out)
    : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}, false), in_(in), out_(out) {}

void PointwiseLinear::init(Rng& rng) {
  weight.init_uniform(rng, 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, in_))));
  bias.fill(0.0);
}

Tensor3 PointwiseLinear::forward(const Tensor3& x) const {
  if (x.c != in_) throw ConfigError("pointwise linear '" + weight.name + "': expected " + std::to_string(in_) +
                                    " channels, got " + std::to_string(x.c));
  Tensor3 y(out_, x.h, x.w);
  const std::size_t p = x.plane();
  MapMat Y(y.data.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(p));
  Y.noalias() = CMapMat(weight.value.data(), out_, in_) * CMapMat(x.data.data(), in_, p);
  for (std::size_t o = 0; o < out_; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += bias.value[o];
  return y;
}

Tensor3 PointwiseLinear::backward(const Tensor3& x, const Tensor3& dy) {
  const std::size_t p = x.plane();
  CMapMat X(x.data.data(), in_, p);
  CMapMat DY(dy.data.data(), out_, p);
  MapMat(weight.grad.data(), out_, in_).noalias() += DY * X.transpose();
  for (std::size_t o = 0; o < out_; ++o) bias.grad[o] += DY.row(static_cast<Eigen::Index>(o)).sum();
  Tensor3 dx(in_, x.h, x.w);
  MapMat(dx.data.data(), in_, p).noalias() = CMapMat(weight.value.data(), out_, in_).transpose() * DY;
  return dx;
}

void PointwiseLinear::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

std::size_t mirror_index(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - 1 - m;
  return static_cast<std::size_t>(m);
}

std::size_t wrap_index(std::ptrdiff_t i, std::size_t n) {
  const auto nn = static_cast<std::ptrdiff_t>(n);
  std::ptrdiff_t m = i % nn;
  if (m < 0) m += nn;
  return static_cast<std::size_t>(m);
}

std::vector<std::uint32_t> conv_index_table(std::size_t h, std::size_t w, std::size_t k, bool periodic_lon) {
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  std::vector<std::uint32_t> table(k * k * h * w);
  std::size_t t = 0;
  for (std::size_t di = 0; di < k; ++di)
    for (std::size_t dj = 0; dj < k; ++dj)
      for (std::size_t i = 0; i < h; ++i) {
        const std::size_t si = mirror_index(static_cast<std::ptrdiff_t>(i + di) - r, h);
        for (std::size_t j = 0; j < w; ++j) {
          const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - r;
          const std::size_t sj = periodic_lon ? wrap_index(jj, w) : mirror_index(jj, w);
          table[t++] = static_cast<std::uint32_t>(si * w + sj);
        }
      }
  return table;
}

Conv2d::Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel)
    : weight(name + ".weight", {out, in, kernel, kernel}), bias(name + ".bias", {out}, false), in_(in), out_(out), k_(kernel) {
  if (kernel % 2 == 0) throw ConfigError("convolution kernel width must be odd");
}

void Conv2d::init(Rng& rng) {
  weight.init_uniform(rng, 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, in_ * k_ * k_))));
  bias.fill(0.0);
}

namespace {

RowMat im2col(const Tensor3& x, const std::vector<std::uint32_t>& table, std::size_t k) {
  const std::size_t p = x.plane();
  const std::size_t taps = k * k;
  RowMat cols(static_cast<Eigen::Index>(x.c * taps), static_cast<Eigen::Index>(p));
  for (std::size_t c = 0; c < x.c; ++c) {
    const double* src = x.data.data() + c * p;
    for (std::size_t t = 0; t < taps; ++t) {
      double* dst = cols.data() + (c * taps + t) * p;
      const std::uint32_t* idx = table.data() + t * p;
      for (std::size_t q = 0; q < p; ++q) dst[q] = src[idx[q]];
    }
  }
  return cols;
}

}  // namespace

Tensor3 Conv2d::forward(const Tensor3& x, bool periodic_lon) const {
  if (x.c != in_) throw ConfigError("conv '" + weight.name + "': expected " + std::to_string(in_) + " channels, got " +
                                    std::to_string(x.c));
  const auto table = conv_index_table(x.h, x.w, k_, periodic_lon);
  const RowMat cols = im2col(x, table, k_);
  Tensor3 y(out_, x.h, x.w);
  MapMat Y(y.data.data(), out_, x.plane());
  Y.noalias() = CMapMat(weight.value.data(), out_, in_ * k_ * k_) * cols;
  for (std::size_t o = 0; o < out_; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += bias.value[o];
  return y;
}

Tensor3 Conv2d::backward(const Tensor3& x, const Tensor3& dy, bool periodic_lon) {
  const std::size_t p = x.plane();
  const std::size_t taps = k_ * k_;
  const auto table = conv_index_table(x.h, x.w, k_, periodic_lon);
  const RowMat cols = im2col(x, table, k_);
  CMapMat DY(dy.data.data(), out_, p);
  MapMat(weight.grad.data(), out_, in_ * taps).noalias() += DY * cols.transpose();
  for (std::size_t o = 0; o < out_; ++o) bias.grad[o] += DY.row(static_cast<Eigen::Index>(o)).sum();
  const RowMat dcols = CMapMat(weight.value.data(), out_, in_ * taps).transpose() * DY;
  Tensor3 dx(in_, x.h, x.w);
  for (std::size_t c = 0; c < in_; ++c) {
    double* dst = dx.data.data() + c * p;
    for (std::size_t t = 0; t < taps; ++t) {
      const double* src = dcols.data() + (c * taps + t) * p;
      const std::uint32_t* idx = table.data() + t * p;
      for (std::size_t q = 0; q < p; ++q) dst[idx[q]] += src[q];
    }
  }
  return dx;
}

void Conv2d::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

}  // namespace fnp
