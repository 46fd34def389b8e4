#include "cvsa/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <stdexcept>

#include "cvsa/fft.hpp"
#include "cvsa/tape.hpp"
#include "json.hpp"

namespace cvsa {

namespace {

constexpr std::size_t kWorkRes = 64;
constexpr double kBlurSigma = 2.5;

bool all_equal(const std::vector<double>& v) {
  for (double x : v) {
    if (x != v[0]) return false;
  }
  return true;
}

std::size_t gaussian_kernel_for_sigma(double sigma) {
  // covers +-3 sigma, odd size
  std::size_t r = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  return 2 * r + 1;
}

}  // namespace

void gaussian_blur_raw(double* plane, std::size_t h, std::size_t w, std::size_t channels,
                       double sigma, std::size_t kernel_size) {
  if (kernel_size % 2 == 0) throw std::invalid_argument("gaussian blur kernel must be odd");
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(kernel_size / 2);
  std::vector<double> k(kernel_size);
  double sum = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;

  std::vector<double> tmp(h * w * channels);
  // horizontal pass, replicate borders
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -r; i <= r; ++i) {
          std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + i;
          xx = std::clamp<std::ptrdiff_t>(xx, 0, static_cast<std::ptrdiff_t>(w) - 1);
          acc += k[static_cast<std::size_t>(i + r)] *
                 plane[(y * w + static_cast<std::size_t>(xx)) * channels + c];
        }
        tmp[(y * w + x) * channels + c] = acc;
      }
    }
  }
  // vertical pass
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -r; i <= r; ++i) {
          std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + i;
          yy = std::clamp<std::ptrdiff_t>(yy, 0, static_cast<std::ptrdiff_t>(h) - 1);
          acc += k[static_cast<std::size_t>(i + r)] *
                 tmp[(static_cast<std::size_t>(yy) * w + x) * channels + c];
        }
        plane[(y * w + x) * channels + c] = acc;
      }
    }
  }
}

SaliencyMap spectral_residual(const Image& img) {
  if (img.width < 8 || img.height < 8) {
    throw std::invalid_argument("spectral_residual: image must be at least 8x8");
  }
  SaliencyMap out;
  out.width = img.width;
  out.height = img.height;
  out.values.assign(img.width * img.height, 0.0);

  std::vector<double> gray = img.gray();
  if (all_equal(gray)) {
    out.constant = true;
    return out;
  }

  // working resolution
  std::vector<double> work(kWorkRes * kWorkRes);
  bilinear_resample_raw(gray.data(), img.height, img.width, work.data(), kWorkRes, kWorkRes, 1);

  // recenter to a fixed mean of 0.5: uniform brightness shifts cannot reach
  // the spectrum, while the (now constant-valued) DC term still lets bright
  // object interiors dominate the reconstruction
  double mean = 0.0;
  for (double v : work) mean += v;
  mean /= static_cast<double>(work.size());
  for (double& v : work) v += 0.5 - mean;

  std::vector<std::complex<double>> grid(work.size());
  for (std::size_t i = 0; i < work.size(); ++i) grid[i] = {work[i], 0.0};
  fft2d(grid, kWorkRes, kWorkRes, false);
  // the DC bin is 0.5*N*N by construction; pin it exactly
  grid[0] = {0.5 * static_cast<double>(kWorkRes) * static_cast<double>(kWorkRes), 0.0};

  std::vector<double> log_amp(grid.size());
  std::vector<double> phase(grid.size());
  std::vector<double> amps(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) amps[i] = std::abs(grid[i]);
  // Floor the amplitude at a tenth of the median so exact spectral nulls
  // (axis-aligned synthetic shapes produce them) cannot blow up the residual
  // of their neighbors. The floor scales with the spectrum, keeping the
  // residual invariant to input gain.
  std::vector<double> sorted = amps;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double floor_amp = std::max(0.1 * sorted[sorted.size() / 2], 1e-300);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    log_amp[i] = std::log(std::max(amps[i], floor_amp));
    phase[i] = std::arg(grid[i]);
  }

  // 3x3 box filter of the log amplitude; the spectrum is periodic, so the
  // filter wraps (this keeps the Hermitian symmetry of a real input intact)
  std::vector<double> smooth(log_amp.size());
  auto la = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    y = (y + kWorkRes) % kWorkRes;
    x = (x + kWorkRes) % kWorkRes;
    return log_amp[static_cast<std::size_t>(y) * kWorkRes + static_cast<std::size_t>(x)];
  };
  for (std::ptrdiff_t y = 0; y < static_cast<std::ptrdiff_t>(kWorkRes); ++y) {
    for (std::ptrdiff_t x = 0; x < static_cast<std::ptrdiff_t>(kWorkRes); ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) acc += la(y + dy, x + dx);
      smooth[static_cast<std::size_t>(y) * kWorkRes + static_cast<std::size_t>(x)] = acc / 9.0;
    }
  }

  // recompose with the residual amplitude and the original phase
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double amp = std::exp(log_amp[i] - smooth[i]);
    grid[i] = std::polar(amp, phase[i]);
  }
  fft2d(grid, kWorkRes, kWorkRes, true);

  std::vector<double> sal(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) sal[i] = std::norm(grid[i]);

  gaussian_blur_raw(sal.data(), kWorkRes, kWorkRes, 1, kBlurSigma,
                    gaussian_kernel_for_sigma(kBlurSigma));

  const auto [mn_it, mx_it] = std::minmax_element(sal.begin(), sal.end());
  const double mn = *mn_it, mx = *mx_it;
  if (mx - mn < 1e-300) {
    out.constant = true;
    return out;
  }
  for (double& v : sal) v = (v - mn) / (mx - mn);

  bilinear_resample_raw(sal.data(), kWorkRes, kWorkRes, out.values.data(), img.height, img.width,
                        1);
  // resizing interpolates inside [0,1]; re-normalize so the contract
  // min=0, max=1 holds at the output resolution as well
  const auto [omn_it, omx_it] = std::minmax_element(out.values.begin(), out.values.end());
  const double omn = *omn_it, omx = *omx_it;
  if (omx - omn < 1e-300) {
    out.constant = true;
    std::fill(out.values.begin(), out.values.end(), 0.0);
    return out;
  }
  for (double& v : out.values) v = (v - omn) / (omx - omn);
  return out;
}

SaliencyMap load_saliency_map(const std::filesystem::path& path, std::size_t expect_w,
                              std::size_t expect_h) {
  const RawImage8 raw = load_gray8(path);
  if (raw.width != expect_w || raw.height != expect_h) {
    throw std::runtime_error("saliency map '" + path.string() + "' is " +
                             std::to_string(raw.width) + "x" + std::to_string(raw.height) +
                             " but the paired image is " + std::to_string(expect_w) + "x" +
                             std::to_string(expect_h));
  }
  SaliencyMap map;
  map.width = raw.width;
  map.height = raw.height;
  map.values.resize(raw.pixels.size());
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) map.values[i] = raw.pixels[i] / 255.0;
  map.constant = all_equal(map.values);
  return map;
}

void save_saliency_map(const SaliencyMap& map, const std::filesystem::path& path) {
  RawImage8 raw{map.width, map.height, 1, {}};
  raw.pixels.resize(map.values.size());
  for (std::size_t i = 0; i < map.values.size(); ++i) raw.pixels[i] = to_byte(map.values[i]);
  save_gray8(raw, path);
}

SaliencyMap boxes_as_saliency(const BBox& box, std::size_t width, std::size_t height) {
  if (!box.within(width, height)) {
    throw std::invalid_argument("annotation box " + to_string(box) + " is outside a " +
                                std::to_string(width) + "x" + std::to_string(height) + " image");
  }
  SaliencyMap map;
  map.width = width;
  map.height = height;
  map.values.assign(width * height, 0.0);
  for (int y = box.t; y < box.bottom(); ++y) {
    for (int x = box.l; x < box.right(); ++x) {
      map.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1.0;
    }
  }
  map.constant = all_equal(map.values);
  return map;
}

std::vector<BoxAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotations '" + path.string() + "'");
  std::vector<BoxAnnotation> anns;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("annotations '" + path.string() + "' line " +
                               std::to_string(lineno) + ": " + e.what());
    }
    BoxAnnotation a;
    a.image = j.at("image").get<std::string>();
    const auto& b = j.at("box");
    if (!b.is_array() || b.size() != 4) {
      throw std::runtime_error("annotations '" + path.string() + "' line " +
                               std::to_string(lineno) + ": box must be [l, t, w, h]");
    }
    a.box = BBox{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
    anns.push_back(std::move(a));
  }
  return anns;
}

void save_annotations(const std::vector<BoxAnnotation>& anns, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write annotations '" + path.string() + "'");
  for (const BoxAnnotation& a : anns) {
    nlohmann::ordered_json j;
    j["image"] = a.image;
    j["box"] = {a.box.l, a.box.t, a.box.w, a.box.h};
    out << j.dump() << "\n";
  }
}

}  // namespace cvsa
