#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fnp/grid.hpp"

namespace fnp {

class Rng;

/// Dense channels x rows x cols array of doubles.
struct Tensor3 {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t channels, std::size_t rows, std::size_t cols, double fill = 0.0)
      : c(channels), h(rows), w(cols), data(channels * rows * cols, fill) {}

  std::size_t plane() const { return h * w; }
  std::size_t size() const { return data.size(); }
  double& operator()(std::size_t k, std::size_t i, std::size_t j) { return data[(k * h + i) * w + j]; }
  double operator()(std::size_t k, std::size_t i, std::size_t j) const { return data[(k * h + i) * w + j]; }
  std::span<double> channel(std::size_t k) { return {data.data() + k * plane(), plane()}; }
  std::span<const double> channel(std::size_t k) const { return {data.data() + k * plane(), plane()}; }
  bool same_shape(const Tensor3& o) const { return c == o.c && h == o.h && w == o.w; }
};

/// Concatenate along channels (all inputs share h, w).
Tensor3 concat_channels(std::span<const Tensor3* const> parts);
Tensor3 concat_channels(const Tensor3& a, const Tensor3& b);

/// Copy channels [first, first + count).
Tensor3 slice_channels(const Tensor3& t, std::size_t first, std::size_t count);

/// Add `src` into channels [first, first + src.c) of `dst`.
void add_into_channels(Tensor3& dst, const Tensor3& src, std::size_t first);

void add_inplace(Tensor3& dst, const Tensor3& src);

/// Gridded functional representation. Channel 0 of an encoder output holds
/// the density of the conditional set.
struct FeatureMap {
  static constexpr std::size_t kDensityChannel = 0;

  LatLonGrid grid;
  Tensor3 values;

  std::size_t channels() const { return values.c; }
};

/// Trainable array with gradient accumulator.
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool decay = true;  // subject to decoupled weight decay

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> s, bool with_decay = true);

  std::size_t size() const { return value.size(); }
  void zero_grad();
  void fill(double v);
  void init_uniform(Rng& rng, double bound);
};

using ParamList = std::vector<Parameter*>;

std::size_t count_parameters(const ParamList& params);
void zero_grads(const ParamList& params);

}  // namespace fnp
