#pragma once

#include <optional>

#include "cvsa/bbox.hpp"
#include "cvsa/saliency.hpp"

namespace cvsa {

// (H+1)×(W+1) prefix sums of a saliency map; rectangle sums in four lookups.
class IntegralImage {
 public:
  explicit IntegralImage(const SaliencyMap& map);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }

  // Sum over the half-open pixel rectangle rows [t, t+h), cols [l, l+w).
  double rect_sum(const BBox& b) const {
    const std::size_t t = static_cast<std::size_t>(b.t), l = static_cast<std::size_t>(b.l);
    const std::size_t bo = t + static_cast<std::size_t>(b.h), r = l + static_cast<std::size_t>(b.w);
    return p(bo, r) - p(t, r) - p(bo, l) + p(t, l);
  }

 private:
  double p(std::size_t i, std::size_t j) const { return prefix_[i * (width_ + 1) + j]; }

  std::size_t width_ = 0, height_ = 0;
  std::vector<double> prefix_;
};

// Literal reading of the box objective: among all boxes with
// area >= min_area_frac * W * H, the one with the highest mean saliency.
// Ties break to the smaller area, then lexicographic (t, l, h, w).
BBox max_avg_box_bruteforce(const SaliencyMap& map, double min_area_frac);

// Default solver: the box maximizing the excess sum Σ (S - theta), found in
// O(H²·W) via column prefix sums and a 1-D max-subarray scan per row band.
// If no value exceeds theta the max-saliency pixel's 1×1 box is returned.
// Ties as above.
BBox max_excess_box(const SaliencyMap& map, double theta);

// O(W²H²) enumeration of the same objective; the oracle the fast solver is
// checked against (same tie-break).
BBox max_excess_box_bruteforce(const SaliencyMap& map, double theta);

struct BoxSearchConfig {
  enum class Mode { excess, avg_brute, gt };
  Mode mode = Mode::excess;
  double theta_kappa = 0.0;      // excess: theta = mean + kappa * std
  double min_area_frac = 0.05;   // avg_brute floor
  std::optional<BBox> gt_box;    // gt mode
};

// Dispatch: gt mode returns the annotation; constant-flagged maps return the
// centered box covering 50% of the area; otherwise max_excess_box with
// theta = mean + kappa*std.
BBox saliency_bbox(const SaliencyMap& map, const BoxSearchConfig& cfg = {});

// The deterministic fallback box for constant maps (50% area, centered,
// rounding toward the center).
BBox centered_half_area_box(std::size_t width, std::size_t height);

}  // namespace cvsa
