#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cvsa/bbox.hpp"
#include "cvsa/image.hpp"

namespace cvsa {

// Per-pixel foreground-likelihood intensities in [0,1]. Maps whose values are
// all equal carry no localization signal and are flagged `constant`; the box
// search falls back deterministically on them.
struct SaliencyMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  // row-major height×width
  bool constant = false;

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
};

struct BoxAnnotation {
  std::string image;  // relative path
  BBox box;
};

// Built-in detector: spectral residual of the log-amplitude spectrum at a
// fixed 64×64 working resolution, Gaussian-smoothed (sigma 2.5) and min-max
// normalized, then resized back to the input dimensions. The input mean is
// removed before the transform so uniform brightness shifts cannot move the
// output. Degenerate (all-equal) images yield a `constant`-flagged zero map.
SaliencyMap spectral_residual(const Image& img);

// Loads an 8-bit grayscale map (PNG or PGM), scaling values by 1/255. The
// file dimensions must match the paired image.
SaliencyMap load_saliency_map(const std::filesystem::path& path, std::size_t expect_w,
                              std::size_t expect_h);
void save_saliency_map(const SaliencyMap& map, const std::filesystem::path& path);

// Indicator map of a ground-truth box: 1 inside, 0 outside.
SaliencyMap boxes_as_saliency(const BBox& box, std::size_t width, std::size_t height);

// Newline-delimited JSON: {"image": "<relative path>", "box": [l, t, w, h]}.
std::vector<BoxAnnotation> load_annotations(const std::filesystem::path& path);
void save_annotations(const std::vector<BoxAnnotation>& anns, const std::filesystem::path& path);

// Separable Gaussian blur with replicated borders, shared with the
// augmentation pipeline. `plane` is h×w with `channels` interleaved values.
void gaussian_blur_raw(double* plane, std::size_t h, std::size_t w, std::size_t channels,
                       double sigma, std::size_t kernel_size);

}  // namespace cvsa
