#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace cvsa {

// In-place radix-2 complex FFT; n must be a power of two. The inverse
// transform includes the 1/n scaling.
void fft_inplace(std::complex<double>* data, std::size_t n, bool inverse);

// 2-D transform over an h×w row-major grid (both powers of two).
void fft2d(std::vector<std::complex<double>>& grid, std::size_t h, std::size_t w, bool inverse);

}  // namespace cvsa
