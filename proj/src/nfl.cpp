#include "fnp/nfl.hpp"

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

double twiddle_angle(std::size_t k, std::size_t t, std::size_t n) {
  return 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
}

struct Twiddles {
  RowMat lon_cos, lon_sin;      // W x m2
  RowMat inv_cos, inv_sin;      // m2 x W, scaled by the Hermitian multiplicity
  RowMat lat_cos, lat_sin;      // K x H, zero rows for aliased slots

  Twiddles(std::size_t h, std::size_t w, std::size_t m1, std::size_t m2) {
    lon_cos.resize(w, m2);
    lon_sin.resize(w, m2);
    inv_cos.resize(m2, w);
    inv_sin.resize(m2, w);
    for (std::size_t k = 0; k < m2; ++k) {
      const bool self_conjugate = k == 0 || (w % 2 == 0 && k == w / 2);
      const double mult = self_conjugate ? 1.0 : 2.0;
      for (std::size_t t = 0; t < w; ++t) {
        const double ang = twiddle_angle(k, t, w);
        lon_cos(t, k) = std::cos(ang);
        lon_sin(t, k) = std::sin(ang);
        inv_cos(k, t) = mult * std::cos(ang);
        inv_sin(k, t) = mult * std::sin(ang);
      }
    }
    const auto bins = retained_lat_bins(m1, h);
    lat_cos = RowMat::Zero(bins.size(), h);
    lat_sin = RowMat::Zero(bins.size(), h);
    for (std::size_t a = 0; a < bins.size(); ++a) {
      if (bins[a] < 0) continue;
      for (std::size_t t = 0; t < h; ++t) {
        const double ang = twiddle_angle(static_cast<std::size_t>(bins[a]), t, h);
        lat_cos(a, t) = std::cos(ang);
        lat_sin(a, t) = std::sin(ang);
      }
    }
  }
};

// Forward-normalized coefficients on the retained modes, per channel.
struct Coefficients {
  std::vector<RowMat> re, im;  // per channel: K x m2
};

Coefficients analyze(const Tensor3& x, const Twiddles& tw) {
  const std::size_t h = x.h, w = x.w;
  const double inv_n = 1.0 / static_cast<double>(h * w);
  CMapMat X(x.data.data(), x.c * h, w);
  const RowMat ar_all = X * tw.lon_cos;
  const RowMat ai_all = -(X * tw.lon_sin);
  Coefficients out;
  out.re.resize(x.c);
  out.im.resize(x.c);
  for (std::size_t c = 0; c < x.c; ++c) {
    const auto ar = ar_all.middleRows(c * h, h);
    const auto ai = ai_all.middleRows(c * h, h);
    out.re[c] = (tw.lat_cos * ar + tw.lat_sin * ai) * inv_n;
    out.im[c] = (tw.lat_cos * ai - tw.lat_sin * ar) * inv_n;
  }
  return out;
}

}  // namespace

std::vector<std::ptrdiff_t> retained_lat_bins(std::size_t modes_lat, std::size_t n) {
  std::vector<std::ptrdiff_t> bins;
  if (modes_lat == 0) return bins;
  std::vector<bool> used(n, false);
  for (std::size_t k = 0; k < modes_lat; ++k) {
    const std::size_t b = k % n;
    bins.push_back(used[b] ? -1 : static_cast<std::ptrdiff_t>(b));
    used[b] = true;
  }
  for (std::size_t k = modes_lat - 1; k >= 1; --k) {
    const std::size_t b = (n - (k % n)) % n;
    bins.push_back(used[b] ? -1 : static_cast<std::ptrdiff_t>(b));
    used[b] = true;
  }
  return bins;
}

SpectralConv::SpectralConv(const std::string& name, std::size_t in, std::size_t out, std::size_t modes_lat,
                           std::size_t modes_lon)
    : weight(name + ".spectral_weight", {2 * modes_lat - 1, modes_lon, out, in, 2}), in_(in), out_(out), m1_(modes_lat),
      m2_(modes_lon) {
  if (modes_lat == 0 || modes_lon == 0) throw ConfigError("spectral mode counts must be positive");
}

void SpectralConv::init(Rng& rng) { weight.init_uniform(rng, 1.0 / static_cast<double>(std::max<std::size_t>(1, in_))); }

void SpectralConv::set_identity_mixing() {
  weight.fill(0.0);
  for (std::size_t a = 0; a < 2 * m1_ - 1; ++a)
    for (std::size_t k = 0; k < m2_; ++k)
      for (std::size_t o = 0; o < std::min(in_, out_); ++o) weight.value[weight_index(a, k, o, o)] = 1.0;
}

void SpectralConv::check_grid(std::size_t h, std::size_t w) const {
  if (m1_ > h / 2 + 1 || m2_ > w / 2 + 1)
    throw ConfigError("spectral modes (" + std::to_string(m1_) + ", " + std::to_string(m2_) + ") exceed the Nyquist limit of a " +
                      std::to_string(h) + "x" + std::to_string(w) + " grid");
}

Tensor3 SpectralConv::forward(const Tensor3& x) const {
  if (x.c != in_) throw ConfigError("spectral conv: channel mismatch");
  check_grid(x.h, x.w);
  const std::size_t h = x.h, w = x.w, kk = 2 * m1_ - 1;
  const Twiddles tw(h, w, m1_, m2_);
  const Coefficients X = analyze(x, tw);

  RowMat z_re(out_ * h, m2_), z_im(out_ * h, m2_);
  RowMat yr(kk, m2_), yi(kk, m2_);
  const double* wv = weight.value.data();
  for (std::size_t o = 0; o < out_; ++o) {
    yr.setZero();
    yi.setZero();
    for (std::size_t a = 0; a < kk; ++a)
      for (std::size_t k = 0; k < m2_; ++k) {
        double sr = 0.0, si = 0.0;
        for (std::size_t i = 0; i < in_; ++i) {
          const std::size_t idx = weight_index(a, k, o, i);
          const double wr = wv[idx], wi = wv[idx + 1];
          const double xr = X.re[i](a, k), xi = X.im[i](a, k);
          sr += wr * xr - wi * xi;
          si += wr * xi + wi * xr;
        }
        yr(a, k) = sr;
        yi(a, k) = si;
      }
    z_re.middleRows(o * h, h) = tw.lat_cos.transpose() * yr - tw.lat_sin.transpose() * yi;
    z_im.middleRows(o * h, h) = tw.lat_cos.transpose() * yi + tw.lat_sin.transpose() * yr;
  }
  Tensor3 y(out_, h, w);
  MapMat(y.data.data(), out_ * h, w).noalias() = z_re * tw.inv_cos - z_im * tw.inv_sin;
  return y;
}

Tensor3 SpectralConv::backward(const Tensor3& x, const Tensor3& dy) {
  const std::size_t h = x.h, w = x.w, kk = 2 * m1_ - 1;
  const double inv_n = 1.0 / static_cast<double>(h * w);
  const Twiddles tw(h, w, m1_, m2_);
  const Coefficients X = analyze(x, tw);

  CMapMat DY(dy.data.data(), out_ * h, w);
  const RowMat dz_re = DY * tw.inv_cos.transpose();
  const RowMat dz_im = -(DY * tw.inv_sin.transpose());

  std::vector<RowMat> dx_re(in_, RowMat::Zero(kk, m2_)), dx_im(in_, RowMat::Zero(kk, m2_));
  const double* wv = weight.value.data();
  double* wg = weight.grad.data();
  for (std::size_t o = 0; o < out_; ++o) {
    const auto dzr = dz_re.middleRows(o * h, h);
    const auto dzi = dz_im.middleRows(o * h, h);
    const RowMat dyr = tw.lat_cos * dzr + tw.lat_sin * dzi;
    const RowMat dyi = tw.lat_cos * dzi - tw.lat_sin * dzr;
    for (std::size_t a = 0; a < kk; ++a)
      for (std::size_t k = 0; k < m2_; ++k) {
        const double gr = dyr(a, k), gi = dyi(a, k);
        for (std::size_t i = 0; i < in_; ++i) {
          const std::size_t idx = weight_index(a, k, o, i);
          const double wr = wv[idx], wi = wv[idx + 1];
          const double xr = X.re[i](a, k), xi = X.im[i](a, k);
          wg[idx] += gr * xr + gi * xi;
          wg[idx + 1] += gi * xr - gr * xi;
          dx_re[i](a, k) += wr * gr + wi * gi;
          dx_im[i](a, k) += wr * gi - wi * gr;
        }
      }
  }

  RowMat da_re(in_ * h, m2_), da_im(in_ * h, m2_);
  for (std::size_t i = 0; i < in_; ++i) {
    da_re.middleRows(i * h, h) = (tw.lat_cos.transpose() * dx_re[i] - tw.lat_sin.transpose() * dx_im[i]) * inv_n;
    da_im.middleRows(i * h, h) = (tw.lat_sin.transpose() * dx_re[i] + tw.lat_cos.transpose() * dx_im[i]) * inv_n;
  }
  Tensor3 dx(in_, h, w);
  MapMat(dx.data.data(), in_ * h, w).noalias() = da_re * tw.lon_cos.transpose() - da_im * tw.lon_sin.transpose();
  return dx;
}

void SpectralConv::collect(ParamList& out) { out.push_back(&weight); }

ResidualBlock::ResidualBlock(const std::string& name, std::size_t width, std::size_t conv_kernel, bool spectral,
                             std::size_t modes_lat, std::size_t modes_lon, ResidualForm form)
    : conv_(name + ".conv", width, width, conv_kernel), form_(form) {
  if (spectral) spectral_.emplace(name, width, width, modes_lat, modes_lon);
}

void ResidualBlock::init(Rng& rng) {
  if (spectral_) spectral_->init(rng);
  conv_.init(rng);
}

Tensor3 ResidualBlock::forward(const Tensor3& x, bool periodic_lon, Cache* cache) const {
  if (conv_.kernel() > x.h || conv_.kernel() > x.w)
    throw ConfigError("grid " + std::to_string(x.h) + "x" + std::to_string(x.w) + " is smaller than the " +
                      std::to_string(conv_.kernel()) + "-wide convolution support");
  Tensor3 pre = conv_.forward(x, periodic_lon);
  if (spectral_) add_inplace(pre, spectral_->forward(x));
  Tensor3 out;
  if (form_ == ResidualForm::PostSum) {
    out = gelu(pre);
    add_inplace(out, x);
  } else {
    Tensor3 s = pre;
    add_inplace(s, x);
    out = gelu(s);
  }
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
  }
  return out;
}

Tensor3 ResidualBlock::backward(const Cache& cache, const Tensor3& dy, bool periodic_lon) {
  Tensor3 dpre;
  if (form_ == ResidualForm::PostSum) {
    dpre = gelu_backward(cache.pre, dy);
  } else {
    Tensor3 s = cache.pre;
    add_inplace(s, cache.x);
    dpre = gelu_backward(s, dy);
  }
  Tensor3 dx = form_ == ResidualForm::PostSum ? dy : dpre;
  add_inplace(dx, conv_.backward(cache.x, dpre, periodic_lon));
  if (spectral_) add_inplace(dx, spectral_->backward(cache.x, dpre));
  return dx;
}

void ResidualBlock::collect(ParamList& out) {
  if (spectral_) spectral_->collect(out);
  conv_.collect(out);
}

FeatureStack::FeatureStack(const std::string& name, const StackConfig& config) : config_(config) {
  if (config.width == 0) throw ConfigError("feature stack width must be positive");
  for (std::size_t l = 0; l < config.n_layers; ++l)
    layers_.emplace_back(name + ".layer" + std::to_string(l), config.width, config.conv_kernel, config.spectral,
                         config.modes_lat, config.modes_lon, config.form);
}

void FeatureStack::init(Rng& rng) {
  for (auto& l : layers_) l.init(rng);
}

FeatureMap FeatureStack::forward(const FeatureMap& x, Cache* cache) const {
  const bool periodic = x.grid.periodic_lon();
  if (cache) cache->layers.assign(layers_.size(), {});
  Tensor3 cur = x.values;
  for (std::size_t l = 0; l < layers_.size(); ++l) cur = layers_[l].forward(cur, periodic, cache ? &cache->layers[l] : nullptr);
  return FeatureMap{x.grid, std::move(cur)};
}

Tensor3 FeatureStack::backward(const FeatureMap& x, const Cache& cache, const Tensor3& dy) {
  const bool periodic = x.grid.periodic_lon();
  Tensor3 g = dy;
  for (std::size_t l = layers_.size(); l-- > 0;) g = layers_[l].backward(cache.layers[l], g, periodic);
  return g;
}

void FeatureStack::collect(ParamList& out) {
  for (auto& l : layers_) l.collect(out);
}

std::size_t FeatureStack::parameter_count(const StackConfig& c) {
  std::size_t per = Conv2d::parameter_count(c.width, c.width, c.conv_kernel);
  if (c.spectral) per += (2 * c.modes_lat - 1) * c.modes_lon * c.width * c.width * 2;
  return per * c.n_layers;
}

}  // namespace fnp
