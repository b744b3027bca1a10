#pragma once

// Synthetic truth fields and lead-time dependent backgrounds.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fnp/grid.hpp"

namespace fnp {

struct FieldSpec {
  std::vector<ChannelInfo> channels;
  double spectral_slope = -3.0;       // exponent of the isotropic power spectrum
  std::vector<double> amplitude;      // per-channel standard deviation, > 0
  double cross_channel_corr = 0.0;    // correlation of channels 1.. with channel 0

  void validate() const;
};

struct BackgroundSpec {
  double lead_time_h = 24.0;
  double smoothing_scale = 1.0;           // blur width in grid cells per 24 h
  double noise_amplitude = 0.3;           // noise std per 24 h, as a fraction of the channel's std
  double noise_correlation_length = 3.0;  // grid cells

  void validate() const;
};

/// Zero-mean Gaussian random field per channel with power spectrum
/// |k|^spectral_slope (physical wavenumber, DC removed) and pointwise
/// variance amplitude^2. Synthesized on a torus with twice the latitude
/// extent and cropped, so the field is not periodic in latitude.
/// Values are rounded to f32. Deterministic given `seed`.
Field generate_truth(const FieldSpec& spec, const LatLonGrid& grid, std::uint64_t seed);

/// Forecast-error surrogate: Gaussian blur of width
/// smoothing_scale * lead/24 cells (mirror boundary in latitude, periodic in
/// longitude) plus spatially correlated noise of std
/// noise_amplitude * lead/24 * std(truth channel). The noise pattern depends
/// only on `seed`, so longer leads scale the same pattern. lead_time = 0
/// returns the truth unchanged.
Field generate_background(const Field& truth, const BackgroundSpec& spec, std::uint64_t seed);

/// Gaussian blur in grid cells (same boundary rule as the background).
Field gaussian_blur(const Field& field, double sigma_cells);

/// Mean energy per mode in the top quartile of wavenumber magnitudes of the
/// channel, averaged over rows after removing the channel mean. Used to
/// compare field smoothness.
double high_wavenumber_energy(const Field& field, std::size_t channel);

/// One line of a dataset manifest.
struct SampleRecord {
  std::string truth_path;
  std::string background_path;
  double lead_time_h = 24.0;
  std::uint64_t seed = 0;
};

void write_manifest(const std::vector<SampleRecord>& records, const std::filesystem::path& path);
std::vector<SampleRecord> read_manifest(const std::filesystem::path& path);

}  // namespace fnp
