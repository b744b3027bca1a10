#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace fnp {

using cplx = std::complex<double>;

/// In-place unnormalized DFT: X_k = sum_n x_n exp(-+2 pi i k n / N), sign +
/// when `inverse`. Radix-2 for powers of two, direct summation otherwise.
void dft_inplace(std::vector<cplx>& a, bool inverse);

/// In-place unnormalized 2-D DFT of a row-major n0 x n1 array.
void dft2_inplace(std::vector<cplx>& a, std::size_t n0, std::size_t n1, bool inverse);

}  // namespace fnp
