#include "cvsa/bbox.hpp"

#include <algorithm>

namespace cvsa {

std::string to_string(const BBox& b) {
  return "(" + std::to_string(b.l) + ", " + std::to_string(b.t) + ", " + std::to_string(b.w) +
         ", " + std::to_string(b.h) + ")";
}

long long intersection_area(const BBox& a, const BBox& b) {
  const int x0 = std::max(a.l, b.l);
  const int y0 = std::max(a.t, b.t);
  const int x1 = std::min(a.right(), b.right());
  const int y1 = std::min(a.bottom(), b.bottom());
  if (x1 <= x0 || y1 <= y0) return 0;
  return static_cast<long long>(x1 - x0) * (y1 - y0);
}

double iou(const BBox& a, const BBox& b) {
  const long long inter = intersection_area(a, b);
  const long long uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace cvsa
