#include "cvsa/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace cvsa {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace

void fft_inplace(std::complex<double>* data, std::size_t n, bool inverse) {
  if (!is_pow2(n)) throw std::invalid_argument("fft: length must be a power of two");
  // bit reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  const double pi = 3.14159265358979323846;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = data[i + k];
        const std::complex<double> v = data[i + k + len / 2] * w;
        data[i + k] = u + v;
        data[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) data[i] *= scale;
  }
}

void fft2d(std::vector<std::complex<double>>& grid, std::size_t h, std::size_t w, bool inverse) {
  if (grid.size() != h * w) throw std::invalid_argument("fft2d: grid size mismatch");
  for (std::size_t y = 0; y < h; ++y) fft_inplace(grid.data() + y * w, w, inverse);
  std::vector<std::complex<double>> col(h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) col[y] = grid[y * w + x];
    fft_inplace(col.data(), h, inverse);
    for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = col[y];
  }
}

}  // namespace cvsa
