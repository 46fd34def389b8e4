#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cvsa/bbox.hpp"
#include "cvsa/image.hpp"
#include "cvsa/rng.hpp"

namespace cvsa {

// {0,1} raster paired with a view; marks the pasted foreground region.
struct BinaryMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  BinaryMask(std::size_t w, std::size_t h) : width(w), height(h), values(w * h, 0) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * width + x]; }

  std::size_t count_ones() const;
  void fill_box(const BBox& b);
  void flip_horizontal();
};

struct AugConfig {
  double lambda = 0.5;  // patch area-ratio floor, mode I and II
  double beta = 0.2;    // paste area-ratio floor, mode II
  double aspect_lo = 0.75;
  double aspect_hi = 4.0 / 3.0;

  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double jitter_prob = 0.8;
  double grayscale_prob = 0.2;
  std::size_t blur_kernel = 23;
  double blur_sigma_lo = 0.1;
  double blur_sigma_hi = 2.0;
  double blur_prob = 0.5;
  double flip_prob = 0.5;

  enum class FusionMode { same, cross };
  FusionMode fusion = FusionMode::same;

  void validate() const;  // throws on out-of-range fields
};

struct ViewPair {
  Image q, k;
  BinaryMask m_q, m_k;
};

// Random patch inside b_f: area ratio ~ U(lambda, 1) of area(b_f), aspect
// exp-uniform in [aspect_lo, aspect_hi], clipped to fit, uniformly placed.
// Re-tries up to 10 times when clipping undercuts the area floor, then falls
// back to b_f itself.
BBox sample_patch_in_box(const BBox& b_f, double lambda, Rng& rng, double aspect_lo = 0.75,
                         double aspect_hi = 4.0 / 3.0);

struct FusedView {
  Image image;
  BinaryMask mask;
  BBox pasted;
};

// Mode I: resize the foreground patch onto the background's own saliency box.
FusedView fuse_same_dataset(const Image& fg, const BBox& patch, const Image& bg,
                            const BBox& bg_box);

// Mode II: resize the patch (aspect preserved, clipped) to a U(beta,1) area
// ratio of the background and paste it at a uniform random location.
FusedView fuse_cross_dataset(const Image& fg, const BBox& patch, const Image& bg, double beta,
                             Rng& rng);

// Corpus handle for augmentation: images plus their precomputed saliency
// boxes (boxes are required for mode I backgrounds).
struct AugPool {
  const std::vector<Image>* images = nullptr;
  const std::vector<BBox>* boxes = nullptr;

  std::size_t size() const { return images ? images->size() : 0; }
};

struct SwapResult {
  Image image;
  BinaryMask mask;
  BBox fg_box;
  BBox patch;
  BBox pasted;
};

// SaliencySwap: crop a patch from the source saliency box and fuse it into a
// randomly drawn background per the configured mode. The returned view always
// contains foreground (mask nonempty by construction).
SwapResult saliency_swap(const Image& src, const BBox& src_box, const AugPool& bg_pool,
                         const AugConfig& cfg, Rng& rng);

// Color jitter (random order), random grayscale, Gaussian blur and horizontal
// flip. Geometric ops (the flip) are mirrored onto the mask when given.
Image apply_photometric(const Image& img, BinaryMask* mask, const AugConfig& cfg, Rng& rng);

struct CropResult {
  Image image;
  BBox crop;
};

// The conventional view-generation baseline.
CropResult random_resized_crop(const Image& img, double scale_lo, double scale_hi, Rng& rng,
                               double aspect_lo = 0.75, double aspect_hi = 4.0 / 3.0);

// Two SaliencySwap draws, each followed by the photometric suite.
ViewPair make_view_pair(const Image& src, const BBox& src_box, const AugPool& bg_pool,
                        const AugConfig& cfg, Rng& rng);

// ---- synthetic corpus ----

struct SyntheticItem {
  std::string name;  // relative image filename
  Image image;
  BBox box;  // tight foreground box
  int label = 0;
};

// Textured-noise backgrounds with one class-coded foreground shape each;
// foreground box area 5-25% of the image, classes balanced to ±1.
std::vector<SyntheticItem> generate_synthetic_corpus(std::size_t n, std::size_t n_classes,
                                                     std::size_t img_size, std::uint64_t seed);

// Writes images plus annotations.jsonl / labels.jsonl into dir.
void write_synthetic_corpus(const std::vector<SyntheticItem>& items,
                            const std::filesystem::path& dir);

}  // namespace cvsa
