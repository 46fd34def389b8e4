#include "cvsa/boxsearch.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

namespace cvsa {

namespace {

// Shared candidate ordering: larger score first, then smaller area, then
// lexicographic (t, l, h, w). Both solvers and the oracle must use exactly
// this rule for box-level equivalence to be testable.
struct Candidate {
  double score = -std::numeric_limits<double>::infinity();
  BBox box;

  bool beats(const Candidate& other) const {
    if (score != other.score) return score > other.score;
    const long long a = box.area(), b = other.box.area();
    if (a != b) return a < b;
    return std::tuple(box.t, box.l, box.h, box.w) <
           std::tuple(other.box.t, other.box.l, other.box.h, other.box.w);
  }
};

BBox single_max_pixel_box(const SaliencyMap& map) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < map.values.size(); ++i) {
    if (map.values[i] > map.values[best]) best = i;
  }
  return BBox{static_cast<int>(best % map.width), static_cast<int>(best / map.width), 1, 1};
}

}  // namespace

IntegralImage::IntegralImage(const SaliencyMap& map) : width_(map.width), height_(map.height) {
  prefix_.assign((height_ + 1) * (width_ + 1), 0.0);
  for (std::size_t y = 0; y < height_; ++y) {
    double row = 0.0;
    for (std::size_t x = 0; x < width_; ++x) {
      row += map.at(y, x);
      prefix_[(y + 1) * (width_ + 1) + (x + 1)] = prefix_[y * (width_ + 1) + (x + 1)] + row;
    }
  }
}

BBox max_avg_box_bruteforce(const SaliencyMap& map, double min_area_frac) {
  if (!(min_area_frac > 0.0 && min_area_frac <= 1.0)) {
    throw std::invalid_argument("max_avg_box_bruteforce: min_area_frac must be in (0, 1]");
  }
  const int W = static_cast<int>(map.width), H = static_cast<int>(map.height);
  const double min_area = min_area_frac * static_cast<double>(W) * static_cast<double>(H);
  const IntegralImage integral(map);
  Candidate best;
  for (int t = 0; t < H; ++t) {
    for (int l = 0; l < W; ++l) {
      for (int h = 1; t + h <= H; ++h) {
        for (int w = 1; l + w <= W; ++w) {
          const double area = static_cast<double>(h) * w;
          if (area < min_area) continue;
          const BBox b{l, t, w, h};
          const Candidate cand{integral.rect_sum(b) / area, b};
          if (cand.beats(best)) best = cand;
        }
      }
    }
  }
  return best.box;
}

BBox max_excess_box_bruteforce(const SaliencyMap& map, double theta) {
  if (!std::isfinite(theta)) throw std::invalid_argument("max_excess_box: theta must be finite");
  const int W = static_cast<int>(map.width), H = static_cast<int>(map.height);
  bool any_above = false;
  for (double v : map.values) {
    if (v > theta) {
      any_above = true;
      break;
    }
  }
  if (!any_above) return single_max_pixel_box(map);

  // excess matrix computed once; box sums via its integral image
  SaliencyMap excess = map;
  for (double& v : excess.values) v -= theta;
  const IntegralImage integral(excess);
  Candidate best;
  for (int t = 0; t < H; ++t) {
    for (int l = 0; l < W; ++l) {
      for (int h = 1; t + h <= H; ++h) {
        for (int w = 1; l + w <= W; ++w) {
          const BBox b{l, t, w, h};
          const Candidate cand{integral.rect_sum(b), b};
          if (cand.beats(best)) best = cand;
        }
      }
    }
  }
  return best.box;
}

BBox max_excess_box(const SaliencyMap& map, double theta) {
  if (!std::isfinite(theta)) throw std::invalid_argument("max_excess_box: theta must be finite");
  const std::size_t W = map.width, H = map.height;
  bool any_above = false;
  for (double v : map.values) {
    if (v > theta) {
      any_above = true;
      break;
    }
  }
  if (!any_above) return single_max_pixel_box(map);

  Candidate best;
  // col_sum[x] accumulates excess over rows [top, bottom]
  std::vector<double> col_sum(W);
  std::vector<double> prefix(W + 1);
  for (std::size_t top = 0; top < H; ++top) {
    std::fill(col_sum.begin(), col_sum.end(), 0.0);
    for (std::size_t bottom = top; bottom < H; ++bottom) {
      for (std::size_t x = 0; x < W; ++x) col_sum[x] += map.at(bottom, x) - theta;
      // best interval of col_sum under (sum desc, width asc, l asc)
      prefix[0] = 0.0;
      for (std::size_t x = 0; x < W; ++x) prefix[x + 1] = prefix[x] + col_sum[x];
      double min_p = prefix[0];
      std::size_t min_l = 0;  // largest index achieving min_p => smallest width
      double band_sum = -std::numeric_limits<double>::infinity();
      std::size_t band_l = 0, band_r = 0;
      for (std::size_t r = 0; r < W; ++r) {
        const double s = prefix[r + 1] - min_p;
        if (s > band_sum ||
            (s == band_sum && (r - min_l + 1) < (band_r - band_l + 1))) {
          band_sum = s;
          band_l = min_l;
          band_r = r;
        }
        if (prefix[r + 1] <= min_p) {
          min_p = prefix[r + 1];
          min_l = r + 1;
        }
      }
      const Candidate cand{band_sum,
                           BBox{static_cast<int>(band_l), static_cast<int>(top),
                                static_cast<int>(band_r - band_l + 1),
                                static_cast<int>(bottom - top + 1)}};
      if (cand.beats(best)) best = cand;
    }
  }
  return best.box;
}

BBox centered_half_area_box(std::size_t width, std::size_t height) {
  const double f = std::sqrt(0.5);
  auto side = [f](std::size_t dim) {
    long long s = std::llround(f * static_cast<double>(dim));
    if (s < 1) s = 1;
    if (s > static_cast<long long>(dim)) s = static_cast<long long>(dim);
    return static_cast<int>(s);
  };
  const int w = side(width), h = side(height);
  // offset rounds toward the center
  const int l = (static_cast<int>(width) - w + 1) / 2;
  const int t = (static_cast<int>(height) - h + 1) / 2;
  return BBox{l, t, w, h};
}

BBox saliency_bbox(const SaliencyMap& map, const BoxSearchConfig& cfg) {
  switch (cfg.mode) {
    case BoxSearchConfig::Mode::gt: {
      if (!cfg.gt_box) {
        throw std::invalid_argument("saliency_bbox: gt mode requires an annotation box");
      }
      if (!cfg.gt_box->within(map.width, map.height)) {
        throw std::invalid_argument("saliency_bbox: annotation box " + to_string(*cfg.gt_box) +
                                    " is outside the image");
      }
      return *cfg.gt_box;
    }
    case BoxSearchConfig::Mode::avg_brute: {
      if (map.constant) return centered_half_area_box(map.width, map.height);
      return max_avg_box_bruteforce(map, cfg.min_area_frac);
    }
    case BoxSearchConfig::Mode::excess:
    default: {
      if (map.constant) return centered_half_area_box(map.width, map.height);
      double mean = 0.0;
      for (double v : map.values) mean += v;
      mean /= static_cast<double>(map.values.size());
      double theta = mean;
      if (cfg.theta_kappa != 0.0) {
        double var = 0.0;
        for (double v : map.values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(map.values.size());
        theta += cfg.theta_kappa * std::sqrt(var);
      }
      return max_excess_box(map, theta);
    }
  }
}

}  // namespace cvsa
