#pragma once

// Evaluation metrics and per-channel standardization.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fnp/grid.hpp"

namespace fnp {

/// Per-latitude weights H cos(lat) / sum_h cos(lat_h); they sum to H over a
/// column, so the full grid sums to H * W.
std::vector<double> latitude_weights(const LatLonGrid& grid);

/// sqrt(1/(HW) sum_{h,w} weight_h (estimate - truth)^2) for one channel.
double latitude_weighted_rmse(const Field& estimate, const Field& truth, std::size_t channel);

/// Per-channel mean and standard deviation (z-scoring).
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t n_channels() const { return mean.size(); }

  /// Statistics pooled over all points of the given fields.
  static Normalizer fit(std::span<const Field> fields);
  static Normalizer identity(std::size_t n_channels);

  Field apply(const Field& f) const;
  Field invert(const Field& f) const;
  /// Present entries only; masked entries keep their sentinel.
  ObservationSet apply(const ObservationSet& obs) const;
};

/// Means over channels x points of squared / absolute standardized error.
double overall_mse(const Field& estimate, const Field& truth, const Normalizer& norm);
double overall_mae(const Field& estimate, const Field& truth, const Normalizer& norm);

struct MetricsReport {
  std::string experiment_id;
  std::string variant;
  double obs_resolution_deg = 0.0;
  double ratio = 0.0;
  double lead_time_h = 0.0;
  bool fine_tuned = false;
  std::uint64_t seed = 0;

  double mse = 0.0;
  double mae = 0.0;
  std::vector<std::string> channel_names;
  std::vector<double> rmse_per_channel;
  std::size_t sample_count = 0;

  double rmse(const std::string& channel) const;
  /// Throws NumericError on non-finite or negative values.
  void validate() const;
};

/// Averages per-sample metrics over a test set.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(Normalizer norm) : norm_(std::move(norm)) {}

  void add(const Field& estimate, const Field& truth);
  /// Fills the metric fields of `meta` (metadata is kept).
  MetricsReport finish(MetricsReport meta) const;

 private:
  Normalizer norm_;
  std::vector<std::string> names_;
  std::vector<double> rmse_sum_;
  double mse_sum_ = 0.0, mae_sum_ = 0.0;
  std::size_t count_ = 0;
};

}  // namespace fnp
