#pragma once

#include <cstddef>
#include <string>

namespace cvsa {

// Axis-aligned pixel box: left column, top row, width, height.
struct BBox {
  int l = 0;
  int t = 0;
  int w = 1;
  int h = 1;

  long long area() const { return static_cast<long long>(w) * h; }
  int right() const { return l + w; }   // exclusive
  int bottom() const { return t + h; }  // exclusive

  bool operator==(const BBox&) const = default;

  bool within(std::size_t img_w, std::size_t img_h) const {
    return l >= 0 && t >= 0 && w >= 1 && h >= 1 &&
           static_cast<std::size_t>(l + w) <= img_w &&
           static_cast<std::size_t>(t + h) <= img_h;
  }
};

std::string to_string(const BBox& b);

// Intersection-over-union of two boxes; 0 when disjoint.
double iou(const BBox& a, const BBox& b);

// Intersection area in pixels.
long long intersection_area(const BBox& a, const BBox& b);

}  // namespace cvsa
