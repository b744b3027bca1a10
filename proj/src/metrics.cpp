#include "fnp/metrics.hpp"

#include <cmath>
#include <numbers>

#include "fnp/error.hpp"

namespace fnp {

namespace {

void check_pair(const Field& a, const Field& b) {
  if (!a.grid.same_as(b.grid)) throw ConfigError("metrics: estimate and truth live on different grids");
  if (a.n_channels() != b.n_channels()) throw ConfigError("metrics: channel count mismatch");
}

template <class F>
double standardized_mean(const Field& estimate, const Field& truth, const Normalizer& norm, F&& op) {
  check_pair(estimate, truth);
  if (norm.n_channels() != estimate.n_channels()) throw ConfigError("metrics: normalizer channel mismatch");
  const std::size_t n = estimate.grid.size();
  double total = 0.0;
  for (std::size_t c = 0; c < estimate.n_channels(); ++c) {
    const double inv = 1.0 / norm.stddev[c];
    double acc = 0.0;
    for (std::size_t p = 0; p < n; ++p) acc += op((estimate.values[c * n + p] - truth.values[c * n + p]) * inv);
    total += acc;
  }
  return total / static_cast<double>(n * estimate.n_channels());
}

}  // namespace

std::vector<double> latitude_weights(const LatLonGrid& grid) {
  const std::size_t h = grid.n_lat();
  std::vector<double> w(h);
  double sum = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    w[i] = std::cos(grid.latitude(i) * std::numbers::pi / 180.0);
    sum += w[i];
  }
  if (!(sum > 0.0)) throw NumericError("latitude weights: non-positive cosine sum");
  for (double& x : w) x *= static_cast<double>(h) / sum;
  return w;
}

double latitude_weighted_rmse(const Field& estimate, const Field& truth, std::size_t channel) {
  check_pair(estimate, truth);
  if (channel >= estimate.n_channels()) throw ConfigError("metrics: channel index out of range");
  const auto wts = latitude_weights(estimate.grid);
  const std::size_t h = estimate.grid.n_lat(), w = estimate.grid.n_lon();
  double acc = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      const double d = estimate.at(channel, i, j) - truth.at(channel, i, j);
      row += d * d;
    }
    acc += wts[i] * row;
  }
  return std::sqrt(acc / static_cast<double>(h * w));
}

Normalizer Normalizer::fit(std::span<const Field> fields) {
  if (fields.empty()) throw ConfigError("normalizer: no fields");
  const std::size_t nc = fields[0].n_channels();
  Normalizer n;
  n.mean.assign(nc, 0.0);
  n.stddev.assign(nc, 0.0);
  std::vector<double> count(nc, 0.0);
  for (const Field& f : fields) {
    if (f.n_channels() != nc) throw ConfigError("normalizer: inconsistent channel counts");
    for (std::size_t c = 0; c < nc; ++c)
      for (double v : f.channel(c)) {
        n.mean[c] += v;
        count[c] += 1.0;
      }
  }
  for (std::size_t c = 0; c < nc; ++c) n.mean[c] /= count[c];
  for (const Field& f : fields)
    for (std::size_t c = 0; c < nc; ++c)
      for (double v : f.channel(c)) n.stddev[c] += (v - n.mean[c]) * (v - n.mean[c]);
  for (std::size_t c = 0; c < nc; ++c) {
    n.stddev[c] = std::sqrt(n.stddev[c] / count[c]);
    if (!(n.stddev[c] > 0.0)) n.stddev[c] = 1.0;
  }
  return n;
}

Normalizer Normalizer::identity(std::size_t n_channels) {
  return Normalizer{std::vector<double>(n_channels, 0.0), std::vector<double>(n_channels, 1.0)};
}

Field Normalizer::apply(const Field& f) const {
  if (f.n_channels() != n_channels()) throw ConfigError("normalizer: channel mismatch");
  Field out = f;
  const std::size_t n = f.grid.size();
  for (std::size_t c = 0; c < n_channels(); ++c)
    for (std::size_t p = 0; p < n; ++p) out.values[c * n + p] = (f.values[c * n + p] - mean[c]) / stddev[c];
  return out;
}

Field Normalizer::invert(const Field& f) const {
  if (f.n_channels() != n_channels()) throw ConfigError("normalizer: channel mismatch");
  Field out = f;
  const std::size_t n = f.grid.size();
  for (std::size_t c = 0; c < n_channels(); ++c)
    for (std::size_t p = 0; p < n; ++p) out.values[c * n + p] = f.values[c * n + p] * stddev[c] + mean[c];
  return out;
}

ObservationSet Normalizer::apply(const ObservationSet& obs) const {
  if (obs.n_channels != n_channels()) throw ConfigError("normalizer: channel mismatch");
  ObservationSet out = obs;
  for (std::size_t i = 0; i < obs.size(); ++i)
    for (std::size_t c = 0; c < obs.n_channels; ++c)
      if (obs.present(i, c)) out.values[i * obs.n_channels + c] = (obs.value(i, c) - mean[c]) / stddev[c];
  return out;
}

double overall_mse(const Field& estimate, const Field& truth, const Normalizer& norm) {
  return standardized_mean(estimate, truth, norm, [](double d) { return d * d; });
}

double overall_mae(const Field& estimate, const Field& truth, const Normalizer& norm) {
  return standardized_mean(estimate, truth, norm, [](double d) { return std::abs(d); });
}

double MetricsReport::rmse(const std::string& channel) const {
  for (std::size_t c = 0; c < channel_names.size(); ++c)
    if (channel_names[c] == channel) return rmse_per_channel[c];
  throw ConfigError("metrics report has no channel '" + channel + "'");
}

void MetricsReport::validate() const {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!ok(mse) || !ok(mae)) throw NumericError("metrics report: non-finite overall metric");
  for (double r : rmse_per_channel)
    if (!ok(r)) throw NumericError("metrics report: non-finite RMSE");
}

void MetricsAccumulator::add(const Field& estimate, const Field& truth) {
  check_pair(estimate, truth);
  if (count_ == 0) {
    for (const auto& ch : truth.channels) names_.push_back(ch.name);
    rmse_sum_.assign(names_.size(), 0.0);
  }
  for (std::size_t c = 0; c < names_.size(); ++c) rmse_sum_[c] += latitude_weighted_rmse(estimate, truth, c);
  mse_sum_ += overall_mse(estimate, truth, norm_);
  mae_sum_ += overall_mae(estimate, truth, norm_);
  ++count_;
}

MetricsReport MetricsAccumulator::finish(MetricsReport meta) const {
  if (count_ == 0) throw ConfigError("metrics: no samples evaluated");
  const double inv = 1.0 / static_cast<double>(count_);
  meta.mse = mse_sum_ * inv;
  meta.mae = mae_sum_ * inv;
  meta.channel_names = names_;
  meta.rmse_per_channel.resize(names_.size());
  for (std::size_t c = 0; c < names_.size(); ++c) meta.rmse_per_channel[c] = rmse_sum_[c] * inv;
  meta.sample_count = count_;
  return meta;
}

}  // namespace fnp
