#pragma once

// Differentiable building blocks. Every layer exposes
//   forward(x, ...)            -> y
//   backward(x, dy, ...)       -> dx, accumulating parameter gradients
// and keeps no per-call state, so one instance can be applied many times.

#include <cstdint>
#include <string>
#include <vector>

#include "fnp/tensor.hpp"

namespace fnp {

/// GELU (erf form); gelu(0) = 0.
double gelu(double x);
double gelu_grad(double x);
Tensor3 gelu(const Tensor3& x);
/// dy * gelu'(pre), elementwise.
Tensor3 gelu_backward(const Tensor3& pre, const Tensor3& dy);

/// softplus(z) = log(1 + e^z), computed without overflow.
double softplus(double z);
double sigmoid(double z);

/// 1x1 convolution: y[o, p] = sum_i W[o, i] x[i, p] + b[o].
class PointwiseLinear {
 public:
  PointwiseLinear() = default;
  PointwiseLinear(const std::string& name, std::size_t in, std::size_t out);

  void init(Rng& rng);
  Tensor3 forward(const Tensor3& x) const;
  Tensor3 backward(const Tensor3& x, const Tensor3& dy);
  void collect(ParamList& out);

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

  Parameter weight;  // out x in
  Parameter bias;    // out

 private:
  std::size_t in_ = 0, out_ = 0;
};

/// Boundary rule for spatial convolutions: longitude wraps when the grid is
/// periodic (mirrors otherwise); latitude mirrors about the outer cell edge
/// (index -1 reads row 0, index H reads row H-1).
std::size_t mirror_index(std::ptrdiff_t i, std::size_t n);
std::size_t wrap_index(std::ptrdiff_t i, std::size_t n);

/// For each kernel tap (di, dj) and output pixel p, the source pixel index.
std::vector<std::uint32_t> conv_index_table(std::size_t h, std::size_t w, std::size_t k, bool periodic_lon);

/// Odd-width square spatial convolution with the boundary rule above.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel);

  void init(Rng& rng);
  Tensor3 forward(const Tensor3& x, bool periodic_lon) const;
  Tensor3 backward(const Tensor3& x, const Tensor3& dy, bool periodic_lon);
  void collect(ParamList& out);

  std::size_t kernel() const { return k_; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

  /// Parameter count for given shape (weights + bias).
  static std::size_t parameter_count(std::size_t in, std::size_t out, std::size_t kernel) {
    return out * in * kernel * kernel + out;
  }

  Parameter weight;  // out x in x k x k
  Parameter bias;    // out

 private:
  std::size_t in_ = 0, out_ = 0, k_ = 1;
};

}  // namespace fnp
