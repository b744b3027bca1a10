#include "fnp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "fnp/dft.hpp"
#include "fnp/error.hpp"
#include "fnp/io.hpp"
#include "fnp/rng.hpp"

namespace fnp {

namespace {

// Signed frequency index of DFT bin k on an axis of length n.
double signed_freq(std::size_t k, std::size_t n) {
  return k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

std::vector<cplx> white_noise(std::size_t n, Rng& rng) {
  std::vector<cplx> out(n);
  for (auto& v : out) v = rng.normal();
  return out;
}

// Applies a real, even spectral filter (given per bin) to a real array on the
// n0 x n1 torus, returning the real part.
std::vector<double> spectral_filter(std::vector<cplx> data, std::size_t n0, std::size_t n1,
                                    const std::vector<double>& transfer) {
  dft2_inplace(data, n0, n1, false);
  for (std::size_t k = 0; k < data.size(); ++k) data[k] *= transfer[k];
  dft2_inplace(data, n0, n1, true);
  const double inv = 1.0 / static_cast<double>(n0 * n1);
  std::vector<double> out(data.size());
  for (std::size_t k = 0; k < data.size(); ++k) out[k] = data[k].real() * inv;
  return out;
}

// Gaussian transfer function with std `sigma` cells on the n0 x n1 torus.
std::vector<double> gaussian_transfer(std::size_t n0, std::size_t n1, double sigma) {
  std::vector<double> t(n0 * n1);
  for (std::size_t a = 0; a < n0; ++a) {
    const double f0 = signed_freq(a, n0) / static_cast<double>(n0);
    for (std::size_t b = 0; b < n1; ++b) {
      const double f1 = signed_freq(b, n1) / static_cast<double>(n1);
      t[a * n1 + b] = std::exp(-2.0 * std::numbers::pi * std::numbers::pi * sigma * sigma * (f0 * f0 + f1 * f1));
    }
  }
  return t;
}

// Unit-variance correlated noise on the H x W grid (torus of 2H rows, cropped).
std::vector<double> correlated_noise(std::size_t h, std::size_t w, double corr_length, std::uint64_t seed) {
  const std::size_t n0 = 2 * h;
  Rng rng(seed);
  auto xi = white_noise(n0 * w, rng);
  auto transfer = gaussian_transfer(n0, w, corr_length);
  double mean_sq = 0.0;
  for (double g : transfer) mean_sq += g * g;
  mean_sq /= static_cast<double>(transfer.size());
  const double scale = 1.0 / std::sqrt(mean_sq);
  for (double& g : transfer) g *= scale;
  auto full = spectral_filter(std::move(xi), n0, w, transfer);
  full.resize(h * w);
  return full;
}

double channel_std(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace

void FieldSpec::validate() const {
  if (channels.empty()) throw ConfigError("field spec needs at least one channel");
  if (amplitude.size() != channels.size()) throw ConfigError("field spec needs one amplitude per channel");
  for (double a : amplitude)
    if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("channel amplitude must be positive");
  if (!(spectral_slope <= 0.0)) throw ConfigError("spectral slope must be finite and <= 0");
  if (!(cross_channel_corr >= -1.0 && cross_channel_corr <= 1.0))
    throw ConfigError("cross-channel correlation must lie in [-1, 1]");
}

void BackgroundSpec::validate() const {
  if (!(lead_time_h >= 0.0)) throw ConfigError("lead time must be non-negative");
  if (!(smoothing_scale >= 0.0)) throw ConfigError("smoothing scale must be non-negative");
  if (!(noise_amplitude >= 0.0)) throw ConfigError("noise amplitude must be non-negative");
  if (!(noise_correlation_length >= 0.0)) throw ConfigError("noise correlation length must be non-negative");
}

Field generate_truth(const FieldSpec& spec, const LatLonGrid& grid, std::uint64_t seed) {
  spec.validate();
  const std::size_t h = grid.n_lat();
  const std::size_t w = grid.n_lon();
  const std::size_t n0 = 2 * h;
  const std::size_t m = n0 * w;

  // Power-law amplitude filter in physical wavenumber (cycles per degree).
  std::vector<double> transfer(m, 0.0);
  double total = 0.0;
  for (std::size_t a = 0; a < n0; ++a) {
    const double f0 = signed_freq(a, n0) / (static_cast<double>(n0) * std::abs(grid.dlat()));
    for (std::size_t b = 0; b < w; ++b) {
      const double f1 = signed_freq(b, w) / (static_cast<double>(w) * grid.dlon());
      const double kappa = std::sqrt(f0 * f0 + f1 * f1);
      if (kappa > 0.0) {
        const double s = std::pow(kappa, spec.spectral_slope);
        transfer[a * w + b] = s;
        total += s;
      }
    }
  }
  // Normalize so that the pointwise variance (1/M) sum S_k equals one.
  const double norm = total > 0.0 ? static_cast<double>(m) / total : 0.0;
  for (double& s : transfer) s = std::sqrt(s * norm);

  Field out(grid, spec.channels);
  Rng base_rng(sub_seed(seed, "truth", 0));
  const auto base = white_noise(m, base_rng);
  const double rho = spec.cross_channel_corr;
  for (std::size_t c = 0; c < spec.channels.size(); ++c) {
    std::vector<cplx> xi;
    if (c == 0) {
      xi = base;
    } else {
      Rng rng(sub_seed(seed, "truth", c));
      xi = white_noise(m, rng);
      const double own = std::sqrt(std::max(0.0, 1.0 - rho * rho));
      for (std::size_t k = 0; k < m; ++k) xi[k] = rho * base[k] + own * xi[k];
    }
    const auto full = spectral_filter(std::move(xi), n0, w, transfer);
    auto dst = out.channel(c);
    for (std::size_t k = 0; k < h * w; ++k) dst[k] = spec.amplitude[c] * full[k];
  }
  quantize_to_storage(out.values);
  return out;
}

Field gaussian_blur(const Field& field, double sigma_cells) {
  if (!(sigma_cells > 0.0)) return field;
  const std::size_t h = field.grid.n_lat();
  const std::size_t w = field.grid.n_lon();
  const std::size_t n0 = 2 * h;
  const auto transfer = gaussian_transfer(n0, w, sigma_cells);
  Field out = field;
  for (std::size_t c = 0; c < field.n_channels(); ++c) {
    // Mirror in latitude so the torus filter acts with a reflecting boundary.
    std::vector<cplx> ext(n0 * w);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        ext[i * w + j] = field.at(c, i, j);
        ext[(n0 - 1 - i) * w + j] = field.at(c, i, j);
      }
    const auto blurred = spectral_filter(std::move(ext), n0, w, transfer);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(c, i, j) = blurred[i * w + j];
  }
  return out;
}

Field generate_background(const Field& truth, const BackgroundSpec& spec, std::uint64_t seed) {
  spec.validate();
  truth.validate();
  if (spec.lead_time_h == 0.0) return truth;
  const double scale = spec.lead_time_h / 24.0;
  Field out = gaussian_blur(truth, spec.smoothing_scale * scale);
  if (spec.noise_amplitude > 0.0) {
    const std::size_t h = truth.grid.n_lat();
    const std::size_t w = truth.grid.n_lon();
    for (std::size_t c = 0; c < truth.n_channels(); ++c) {
      const auto noise = correlated_noise(h, w, spec.noise_correlation_length, sub_seed(seed, "background", c));
      const double amp = spec.noise_amplitude * scale * channel_std(truth.channel(c));
      auto dst = out.channel(c);
      for (std::size_t k = 0; k < h * w; ++k) dst[k] += amp * noise[k];
    }
  }
  quantize_to_storage(out.values);
  return out;
}

double high_wavenumber_energy(const Field& field, std::size_t channel) {
  const std::size_t h = field.grid.n_lat();
  const std::size_t w = field.grid.n_lon();
  const auto src = field.channel(channel);
  double mean = 0.0;
  for (double x : src) mean += x;
  mean /= static_cast<double>(src.size());
  std::vector<cplx> data(h * w);
  for (std::size_t k = 0; k < data.size(); ++k) data[k] = src[k] - mean;
  dft2_inplace(data, h, w, false);

  std::vector<std::pair<double, double>> modes;  // (|k|, energy)
  modes.reserve(data.size());
  for (std::size_t a = 0; a < h; ++a) {
    const double f0 = signed_freq(a, h) / static_cast<double>(h);
    for (std::size_t b = 0; b < w; ++b) {
      const double f1 = signed_freq(b, w) / static_cast<double>(w);
      modes.emplace_back(std::sqrt(f0 * f0 + f1 * f1), std::norm(data[a * w + b]));
    }
  }
  std::sort(modes.begin(), modes.end());
  const std::size_t start = modes.size() - modes.size() / 4;
  double e = 0.0;
  for (std::size_t k = start; k < modes.size(); ++k) e += modes[k].second;
  return e / static_cast<double>(std::max<std::size_t>(1, modes.size() - start));
}

void write_manifest(const std::vector<SampleRecord>& records, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot open manifest '" + path.string() + "' for writing");
  os << "# truth_path background_path lead_time_h seed\n";
  for (const auto& r : records) os << r.truth_path << ' ' << r.background_path << ' ' << r.lead_time_h << ' ' << r.seed << '\n';
}

std::vector<SampleRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open manifest '" + path.string() + "'");
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SampleRecord r;
    if (!(ls >> r.truth_path >> r.background_path >> r.lead_time_h >> r.seed))
      throw ConfigError("manifest '" + path.string() + "' line " + std::to_string(lineno) + " is malformed");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace fnp
