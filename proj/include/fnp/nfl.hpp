#pragma once

// Neural Fourier layers: truncated spectral channel mixing + local
// convolution + identity shortcut.

#include <optional>
#include <string>
#include <vector>

#include "fnp/layers.hpp"
#include "fnp/tensor.hpp"

namespace fnp {

/// Retained latitude frequencies for `modes_lat` on an axis of length n:
/// 0..m-1 followed by -(m-1)..-1, as bin indices (k mod n). Entries that
/// alias a positive frequency already listed are marked invalid (-1), so the
/// list length 2m-1 (and therefore the weight shape) is grid independent.
std::vector<std::ptrdiff_t> retained_lat_bins(std::size_t modes_lat, std::size_t n);

/// Spectral branch: forward DFT over (lat, lon) with 1/(H W) normalization,
/// complex channel mixing on the retained modes, every other mode zeroed,
/// inverse real transform (Hermitian along longitude). Because the forward
/// transform is normalized, the same weights act consistently on any grid
/// resolution.
class SpectralConv {
 public:
  SpectralConv() = default;
  SpectralConv(const std::string& name, std::size_t in, std::size_t out, std::size_t modes_lat, std::size_t modes_lon);

  void init(Rng& rng);
  Tensor3 forward(const Tensor3& x) const;
  Tensor3 backward(const Tensor3& x, const Tensor3& dy);
  void collect(ParamList& out);

  /// Throws ConfigError when the mode counts exceed the grid's Nyquist limits.
  void check_grid(std::size_t h, std::size_t w) const;

  std::size_t modes_lat() const { return m1_; }
  std::size_t modes_lon() const { return m2_; }

  /// Complex weight for (lat mode slot a, lon mode k, out o, in i).
  std::size_t weight_index(std::size_t a, std::size_t k, std::size_t o, std::size_t i) const {
    return ((((a * m2_ + k) * out_ + o) * in_ + i) * 2);
  }
  void set_identity_mixing();

  Parameter weight;  // (2*modes_lat - 1) x modes_lon x out x in x {re, im}

 private:
  std::size_t in_ = 0, out_ = 0, m1_ = 0, m2_ = 0;
};

/// Activation placement relative to the identity shortcut.
enum class ResidualForm {
  PostSum,          // out = act(spectral(x) + conv(x)) + x
  ActivateAfterSum  // out = act(spectral(x) + conv(x) + x)
};

/// One residual block: optional spectral branch + odd-width convolution.
/// With the spectral branch this is a neural Fourier layer; without it, the
/// plain residual convolution block used by the ablations and ConvCNP.
class ResidualBlock {
 public:
  struct Cache {
    Tensor3 x;
    Tensor3 pre;
  };

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, std::size_t width, std::size_t conv_kernel, bool spectral,
                std::size_t modes_lat, std::size_t modes_lon, ResidualForm form);

  void init(Rng& rng);
  Tensor3 forward(const Tensor3& x, bool periodic_lon, Cache* cache = nullptr) const;
  Tensor3 backward(const Cache& cache, const Tensor3& dy, bool periodic_lon);
  void collect(ParamList& out);

  bool has_spectral() const { return spectral_.has_value(); }
  SpectralConv& spectral() { return *spectral_; }
  Conv2d& conv() { return conv_; }

 private:
  std::optional<SpectralConv> spectral_;
  Conv2d conv_;
  ResidualForm form_ = ResidualForm::PostSum;
};

struct StackConfig {
  std::size_t width = 0;
  std::size_t n_layers = 4;
  std::size_t modes_lat = 0;
  std::size_t modes_lon = 0;
  std::size_t conv_kernel = 3;
  bool spectral = true;
  ResidualForm form = ResidualForm::PostSum;
};

/// Shape-preserving stack of residual blocks (an NFL stack when
/// `spectral`).
class FeatureStack {
 public:
  struct Cache {
    std::vector<ResidualBlock::Cache> layers;
  };

  FeatureStack() = default;
  FeatureStack(const std::string& name, const StackConfig& config);

  void init(Rng& rng);
  FeatureMap forward(const FeatureMap& x, Cache* cache = nullptr) const;
  Tensor3 backward(const FeatureMap& x, const Cache& cache, const Tensor3& dy);
  void collect(ParamList& out);

  const StackConfig& config() const { return config_; }
  std::size_t size() const { return layers_.size(); }
  ResidualBlock& layer(std::size_t k) { return layers_[k]; }

  static std::size_t parameter_count(const StackConfig& config);

 private:
  StackConfig config_;
  std::vector<ResidualBlock> layers_;
};

}  // namespace fnp
