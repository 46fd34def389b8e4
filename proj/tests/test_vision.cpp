#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <complex>
#include <filesystem>

#include "cvsa/boxsearch.hpp"
#include "cvsa/fft.hpp"
#include "cvsa/image.hpp"
#include "cvsa/png.hpp"
#include "cvsa/rng.hpp"
#include "cvsa/saliency.hpp"
#include "zlib_vectors.hpp"

using namespace cvsa;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "cvsa_vision_tests";
  fs::create_directories(dir);
  return dir;
}

SaliencyMap random_map(std::size_t w, std::size_t h, Rng& rng) {
  SaliencyMap m;
  m.width = w;
  m.height = h;
  m.values.resize(w * h);
  for (double& v : m.values) v = rng.uniform();
  return m;
}

// oracle: the same objective enumerated in a different loop order
BBox max_avg_second_enumeration(const SaliencyMap& map, double min_area_frac) {
  const int W = static_cast<int>(map.width), H = static_cast<int>(map.height);
  const double min_area = min_area_frac * W * H;
  const IntegralImage integral(map);
  double best_score = -1e300;
  BBox best{0, 0, 1, 1};
  bool have = false;
  for (int w = W; w >= 1; --w) {
    for (int h = H; h >= 1; --h) {
      const double area = static_cast<double>(w) * h;
      if (area < min_area) continue;
      for (int l = W - w; l >= 0; --l) {
        for (int t = H - h; t >= 0; --t) {
          const BBox b{l, t, w, h};
          const double score = integral.rect_sum(b) / area;
          bool take = false;
          if (!have || score > best_score) {
            take = true;
          } else if (score == best_score) {
            if (b.area() < best.area()) {
              take = true;
            } else if (b.area() == best.area()) {
              take = std::tuple(b.t, b.l, b.h, b.w) < std::tuple(best.t, best.l, best.h, best.w);
            }
          }
          if (take) {
            best_score = score;
            best = b;
            have = true;
          }
        }
      }
    }
  }
  return best;
}

}  // namespace

TEST_CASE("zlib inflate decodes externally produced streams") {
  CHECK(zlib_inflate(zlib_vectors::stored_z) == zlib_vectors::stored_raw);
  CHECK(zlib_inflate(zlib_vectors::fixed_z) == zlib_vectors::fixed_raw);
  CHECK(zlib_inflate(zlib_vectors::dynamic_z) == zlib_vectors::dynamic_raw);
}

TEST_CASE("zlib stored round-trip and corruption detection") {
  Rng rng(9);
  std::vector<std::uint8_t> data(70000);
  for (auto& b : data) b = static_cast<std::uint8_t>(rng.uniform_int(256));
  std::vector<std::uint8_t> z = zlib_deflate_stored(data);
  CHECK(zlib_inflate(z) == data);
  z[z.size() - 1] ^= 0x5a;  // break the adler32 trailer
  CHECK_THROWS_AS(zlib_inflate(z), std::runtime_error);
}

TEST_CASE("png round-trips RGB and grayscale rasters") {
  Rng rng(10);
  RawImage8 img{13, 9, 3, {}};
  img.pixels.resize(13 * 9 * 3);
  for (auto& b : img.pixels) b = static_cast<std::uint8_t>(rng.uniform_int(256));
  RawImage8 back = decode_png(encode_png(img));
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.channels == 3);
  CHECK(back.pixels == img.pixels);

  RawImage8 gray{16, 5, 1, {}};
  gray.pixels.resize(16 * 5);
  for (auto& b : gray.pixels) b = static_cast<std::uint8_t>(rng.uniform_int(256));
  RawImage8 gback = decode_png(encode_png(gray));
  CHECK(gback.channels == 1);
  CHECK(gback.pixels == gray.pixels);
}

TEST_CASE("png decoder handles all scanline filters") {
  // 4x3 grayscale, one filter per row (sub, up, paeth), assembled by hand
  const std::vector<std::uint8_t> pixels = {10, 20, 30, 40, 15, 25, 35, 45, 90, 70, 50, 30};
  auto filt = [&](std::size_t y, std::size_t x) { return pixels[y * 4 + x]; };
  std::vector<std::uint8_t> raw;
  raw.push_back(1);  // Sub
  for (std::size_t x = 0; x < 4; ++x) {
    raw.push_back(static_cast<std::uint8_t>(filt(0, x) - (x ? filt(0, x - 1) : 0)));
  }
  raw.push_back(2);  // Up
  for (std::size_t x = 0; x < 4; ++x) {
    raw.push_back(static_cast<std::uint8_t>(filt(1, x) - filt(0, x)));
  }
  raw.push_back(4);  // Paeth
  for (std::size_t x = 0; x < 4; ++x) {
    const int a = x ? filt(2, x - 1) : 0;
    const int b = filt(1, x);
    const int c = x ? filt(1, x - 1) : 0;
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    const int pred = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
    raw.push_back(static_cast<std::uint8_t>(filt(2, x) - pred));
  }

  std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  auto put_u32 = [&png](std::uint32_t v) {
    png.push_back(static_cast<std::uint8_t>(v >> 24));
    png.push_back(static_cast<std::uint8_t>(v >> 16));
    png.push_back(static_cast<std::uint8_t>(v >> 8));
    png.push_back(static_cast<std::uint8_t>(v));
  };
  auto chunk = [&](const char type[4], const std::vector<std::uint8_t>& data) {
    put_u32(static_cast<std::uint32_t>(data.size()));
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    png.insert(png.end(), body.begin(), body.end());
    put_u32(crc32(body));
  };
  std::vector<std::uint8_t> ihdr;
  {
    std::vector<std::uint8_t> tmp;
    std::swap(png, tmp);
    put_u32(4);
    put_u32(3);
    std::swap(png, tmp);
    ihdr = {0, 0, 0, 4, 0, 0, 0, 3, 8, 0, 0, 0, 0};
  }
  chunk("IHDR", ihdr);
  chunk("IDAT", zlib_deflate_stored(raw));
  chunk("IEND", {});

  RawImage8 img = decode_png(png);
  CHECK(img.width == 4);
  CHECK(img.height == 3);
  CHECK(img.pixels == pixels);
}

TEST_CASE("image file round-trips") {
  const fs::path dir = temp_dir();
  Rng rng(12);
  Image img(16, 12);
  for (double& v : img.rgb) v = rng.uniform();
  for (const char* name : {"roundtrip.png", "roundtrip.ppm"}) {
    save_image(img, dir / name);
    Image back = load_image(dir / name);
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) {
      // quantization to 8 bits and back
      CHECK(std::fabs(back.rgb[i] - img.rgb[i]) <= 0.5 / 255.0 + 1e-12);
    }
  }
  CHECK_THROWS_AS(load_image(dir / "missing.png"), std::runtime_error);
  save_image(img, dir / "color.png");
  CHECK_THROWS_AS(load_gray8(dir / "color.png"), std::runtime_error);
}

TEST_CASE("fft matches the naive DFT oracle and inverts") {
  Rng rng(13);
  const std::size_t n = 8;
  std::vector<std::complex<double>> sig(n);
  for (auto& c : sig) c = {rng.uniform(-1, 1), rng.uniform(-1, 1)};

  // oracle: direct O(n^2) DFT
  std::vector<std::complex<double>> want(n);
  const double pi = 3.14159265358979323846;
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double ang = -2.0 * pi * static_cast<double>(k * j) / static_cast<double>(n);
      acc += sig[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    want[k] = acc;
  }
  std::vector<std::complex<double>> got = sig;
  fft_inplace(got.data(), n, false);
  for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(got[k] - want[k]) <= 1e-12);

  fft_inplace(got.data(), n, true);
  for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(got[k] - sig[k]) <= 1e-12);

  // 2-D round trip
  std::vector<std::complex<double>> grid(16 * 8);
  for (auto& c : grid) c = {rng.uniform(-1, 1), 0.0};
  std::vector<std::complex<double>> orig = grid;
  fft2d(grid, 8, 16, false);
  fft2d(grid, 8, 16, true);
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(std::abs(grid[i] - orig[i]) <= 1e-12);
}

TEST_CASE("spectral residual detector") {
  SUBCASE("flat image is flagged constant") {
    Image img(32, 32);
    for (double& v : img.rgb) v = 0.5;
    SaliencyMap m = spectral_residual(img);
    CHECK(m.constant);
  }
  SUBCASE("white square on black field peaks inside the square") {
    Image img(64, 64);
    for (std::size_t y = 24; y < 40; ++y)
      for (std::size_t x = 24; x < 40; ++x)
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = 1.0;
    SaliencyMap m = spectral_residual(img);
    CHECK_FALSE(m.constant);
    std::size_t best = 0;
    for (std::size_t i = 1; i < m.values.size(); ++i) {
      if (m.values[i] > m.values[best]) best = i;
    }
    const std::size_t by = best / 64, bx = best % 64;
    CHECK(by >= 24);
    CHECK(by < 40);
    CHECK(bx >= 24);
    CHECK(bx < 40);
  }
  SUBCASE("nonconstant inputs are normalized to [0, 1] exactly") {
    Rng rng(14);
    Image img(48, 32);
    for (double& v : img.rgb) v = rng.uniform(0.2, 0.7);
    SaliencyMap m = spectral_residual(img);
    const auto [mn, mx] = std::minmax_element(m.values.begin(), m.values.end());
    CHECK(*mn == 0.0);
    CHECK(*mx == 1.0);
  }
  SUBCASE("uniform brightness shift leaves the output unchanged") {
    Rng rng(15);
    Image a(32, 32);
    for (double& v : a.rgb) v = rng.uniform(0.2, 0.7);
    Image b = a;
    for (double& v : b.rgb) v += 0.05;
    SaliencyMap ma = spectral_residual(a);
    SaliencyMap mb = spectral_residual(b);
    for (std::size_t i = 0; i < ma.values.size(); ++i) {
      CHECK(std::fabs(ma.values[i] - mb.values[i]) <= 1e-6);
    }
  }
}

TEST_CASE("saliency map files") {
  const fs::path dir = temp_dir();
  SUBCASE("all-255 file loads as all ones") {
    RawImage8 raw{10, 10, 1, std::vector<std::uint8_t>(100, 255)};
    save_gray8(raw, dir / "ones.png");
    SaliencyMap m = load_saliency_map(dir / "ones.png", 10, 10);
    for (double v : m.values) CHECK(v == 1.0);
    CHECK(m.constant);
  }
  SUBCASE("all-0 file is a constant map") {
    RawImage8 raw{10, 10, 1, std::vector<std::uint8_t>(100, 0)};
    save_gray8(raw, dir / "zeros.pgm");
    SaliencyMap m = load_saliency_map(dir / "zeros.pgm", 10, 10);
    CHECK(m.constant);
  }
  SUBCASE("checkerboard round-trips bit-exactly") {
    SaliencyMap m;
    m.width = m.height = 12;
    m.values.resize(144);
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 12; ++x) m.at(y, x) = (x + y) % 2 ? 1.0 : 0.0;
    save_saliency_map(m, dir / "checker.png");
    SaliencyMap back = load_saliency_map(dir / "checker.png", 12, 12);
    CHECK(back.values == m.values);
  }
  SUBCASE("dimension mismatch with the paired image is an error") {
    RawImage8 raw{6, 8, 1, std::vector<std::uint8_t>(48, 7)};
    save_gray8(raw, dir / "small.pgm");
    CHECK_THROWS_AS(load_saliency_map(dir / "small.pgm", 10, 10), std::runtime_error);
  }
}

TEST_CASE("boxes_as_saliency") {
  SUBCASE("full-image box gives all ones") {
    SaliencyMap m = boxes_as_saliency(BBox{0, 0, 10, 10}, 10, 10);
    for (double v : m.values) CHECK(v == 1.0);
  }
  SUBCASE("box (2,3,4,5) on 10x10 has exactly 20 ones") {
    SaliencyMap m = boxes_as_saliency(BBox{2, 3, 4, 5}, 10, 10);
    double sum = 0;
    for (double v : m.values) sum += v;
    CHECK(sum == 20.0);
  }
  SUBCASE("out-of-bounds box is rejected") {
    CHECK_THROWS_AS(boxes_as_saliency(BBox{8, 8, 4, 4}, 10, 10), std::invalid_argument);
  }
}

TEST_CASE("integral image") {
  SUBCASE("zero map gives zero sums") {
    SaliencyMap m;
    m.width = 4;
    m.height = 3;
    m.values.assign(12, 0.0);
    IntegralImage ii(m);
    CHECK(ii.rect_sum(BBox{0, 0, 4, 3}) == 0.0);
  }
  SUBCASE("all-ones 3x3 full rectangle sums to 9") {
    SaliencyMap m;
    m.width = m.height = 3;
    m.values.assign(9, 1.0);
    IntegralImage ii(m);
    CHECK(ii.rect_sum(BBox{0, 0, 3, 3}) == 9.0);
  }
  SUBCASE("50 random rectangles match direct summation") {
    Rng rng(16);
    SaliencyMap m = random_map(12, 9, rng);
    IntegralImage ii(m);
    for (int trial = 0; trial < 50; ++trial) {
      const int w = 1 + static_cast<int>(rng.uniform_int(12));
      const int h = 1 + static_cast<int>(rng.uniform_int(9));
      const int l = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(12 - w + 1)));
      const int t = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(9 - h + 1)));
      double direct = 0.0;
      for (int y = t; y < t + h; ++y)
        for (int x = l; x < l + w; ++x) direct += m.at(y, x);
      CHECK(std::fabs(ii.rect_sum(BBox{l, t, w, h}) - direct) <= 1e-9);
    }
  }
}

TEST_CASE("max_avg_box_bruteforce") {
  SUBCASE("single bright pixel forces a 1x1 box") {
    SaliencyMap m;
    m.width = m.height = 8;
    m.values.assign(64, 0.0);
    m.at(4, 4) = 1.0;
    CHECK(max_avg_box_bruteforce(m, 1.0 / 64.0) == BBox{4, 4, 1, 1});
  }
  SUBCASE("uniform map: smallest admissible area, topmost-leftmost") {
    SaliencyMap m;
    m.width = m.height = 6;
    m.values.assign(36, 0.5);
    // min area 10.8 -> area 12; (t,l,h,w) lex prefers h=2, w=6 at origin
    CHECK(max_avg_box_bruteforce(m, 0.3) == BBox{0, 0, 6, 2});
  }
  SUBCASE("matches an independent second enumeration on 100 random 10x8 maps") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
      SaliencyMap m = random_map(10, 8, rng);
      const double frac = 0.02 + 0.3 * rng.uniform();
      CHECK(max_avg_box_bruteforce(m, frac) == max_avg_second_enumeration(m, frac));
    }
  }
}

TEST_CASE("max_excess_box") {
  SUBCASE("box indicator map with theta 0.5 recovers the box") {
    SaliencyMap m = boxes_as_saliency(BBox{2, 3, 4, 5}, 10, 10);
    CHECK(max_excess_box(m, 0.5) == BBox{2, 3, 4, 5});
    CHECK(max_excess_box_bruteforce(m, 0.5) == BBox{2, 3, 4, 5});
  }
  SUBCASE("all-zero map with theta 0 falls back to 1x1 at the origin") {
    SaliencyMap m;
    m.width = 5;
    m.height = 4;
    m.values.assign(20, 0.0);
    CHECK(max_excess_box(m, 0.0) == BBox{0, 0, 1, 1});
    CHECK(max_excess_box_bruteforce(m, 0.0) == BBox{0, 0, 1, 1});
  }
  SUBCASE("fast solver equals the brute-force oracle on 200 random maps") {
    Rng rng(18);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t w = 2 + rng.uniform_int(15);  // up to 16
      const std::size_t h = 2 + rng.uniform_int(11);  // up to 12
      SaliencyMap m = random_map(w, h, rng);
      double mean = 0.0;
      for (double v : m.values) mean += v;
      mean /= static_cast<double>(m.values.size());
      const BBox fast = max_excess_box(m, mean);
      const BBox brute = max_excess_box_bruteforce(m, mean);
      REQUIRE(fast == brute);
    }
  }
  SUBCASE("positive scaling of map and theta leaves the argmax unchanged") {
    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
      SaliencyMap m = random_map(9, 7, rng);
      const double theta = 0.4 + 0.2 * rng.uniform();
      const double c = 0.1 + 5.0 * rng.uniform();
      SaliencyMap scaled = m;
      for (double& v : scaled.values) v *= c;
      CHECK(max_excess_box(m, theta) == max_excess_box(scaled, c * theta));
    }
  }
}

TEST_CASE("saliency_bbox dispatch") {
  SUBCASE("gt mode returns the annotation") {
    Rng rng(20);
    SaliencyMap m = random_map(12, 12, rng);
    BoxSearchConfig cfg;
    cfg.mode = BoxSearchConfig::Mode::gt;
    cfg.gt_box = BBox{1, 1, 5, 5};
    CHECK(saliency_bbox(m, cfg) == BBox{1, 1, 5, 5});
  }
  SUBCASE("constant 10x10 map returns the centered half-area box") {
    SaliencyMap m;
    m.width = m.height = 10;
    m.values.assign(100, 0.3);
    m.constant = true;
    CHECK(saliency_bbox(m, {}) == BBox{2, 2, 7, 7});
  }
  SUBCASE("gt fixed point: annotation -> indicator map -> box search") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t W = 10 + rng.uniform_int(30);
      const std::size_t H = 10 + rng.uniform_int(30);
      const int w = 1 + static_cast<int>(rng.uniform_int(W - 1));  // proper sub-box
      const int h = 1 + static_cast<int>(rng.uniform_int(H - 1));
      const int l = static_cast<int>(rng.uniform_int(W - static_cast<std::size_t>(w) + 1));
      const int t = static_cast<int>(rng.uniform_int(H - static_cast<std::size_t>(h) + 1));
      const BBox box{l, t, w, h};
      SaliencyMap m = boxes_as_saliency(box, W, H);
      if (m.constant) continue;  // full-image boxes carry no signal
      CHECK(saliency_bbox(m, {}) == box);
    }
  }
  SUBCASE("returned boxes always satisfy the bounds invariants") {
    Rng rng(26);
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t w = 2 + rng.uniform_int(20);
      const std::size_t h = 2 + rng.uniform_int(20);
      SaliencyMap m = random_map(w, h, rng);
      CHECK(saliency_bbox(m, {}).within(w, h));
    }
  }
  SUBCASE("spectral map of a synthetic white square localizes with IoU >= 0.3") {
    Image img(64, 64);
    Rng rng(22);
    for (double& v : img.rgb) v = rng.uniform(0.0, 0.1);
    const BBox truth{20, 28, 18, 18};
    for (int y = truth.t; y < truth.bottom(); ++y)
      for (int x = truth.l; x < truth.right(); ++x)
        for (std::size_t c = 0; c < 3; ++c)
          img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = 1.0;
    SaliencyMap m = spectral_residual(img);
    const BBox found = saliency_bbox(m, {});
    CHECK(iou(found, truth) >= 0.3);
  }
}
