#include "fnp/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "fnp/error.hpp"
#include "fnp/rng.hpp"

namespace fnp {

Tensor3 concat_channels(std::span<const Tensor3* const> parts) {
  if (parts.empty()) return {};
  const std::size_t h = parts.front()->h, w = parts.front()->w;
  std::size_t total = 0;
  for (const auto* p : parts) {
    if (p->h != h || p->w != w) throw ConfigError("concat_channels: spatial shapes differ");
    total += p->c;
  }
  Tensor3 out(total, h, w);
  auto it = out.data.begin();
  for (const auto* p : parts) it = std::copy(p->data.begin(), p->data.end(), it);
  return out;
}

Tensor3 concat_channels(const Tensor3& a, const Tensor3& b) {
  const Tensor3* parts[] = {&a, &b};
  return concat_channels(parts);
}

Tensor3 slice_channels(const Tensor3& t, std::size_t first, std::size_t count) {
  if (first + count > t.c) throw ConfigError("slice_channels: range exceeds channel count");
  Tensor3 out(count, t.h, t.w);
  std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(first * t.plane()), count * t.plane(), out.data.begin());
  return out;
}

void add_into_channels(Tensor3& dst, const Tensor3& src, std::size_t first) {
  if (src.h != dst.h || src.w != dst.w || first + src.c > dst.c) throw ConfigError("add_into_channels: shape mismatch");
  double* d = dst.data.data() + first * dst.plane();
  for (std::size_t k = 0; k < src.size(); ++k) d[k] += src.data[k];
}

void add_inplace(Tensor3& dst, const Tensor3& src) {
  if (!dst.same_shape(src)) throw ConfigError("add_inplace: shape mismatch");
  for (std::size_t k = 0; k < dst.size(); ++k) dst.data[k] += src.data[k];
}

Parameter::Parameter(std::string n, std::vector<std::size_t> s, bool with_decay)
    : name(std::move(n)), shape(std::move(s)), decay(with_decay) {
  const std::size_t total = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  value.assign(total, 0.0);
  grad.assign(total, 0.0);
}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void Parameter::fill(double v) { std::fill(value.begin(), value.end(), v); }

void Parameter::init_uniform(Rng& rng, double bound) {
  for (double& v : value) v = rng.uniform(-bound, bound);
}

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->size();
  return n;
}

void zero_grads(const ParamList& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace fnp
