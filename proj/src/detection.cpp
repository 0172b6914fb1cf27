#include "zoomdet/detection.hpp"

#include <algorithm>

namespace zoomdet {

double area(const BBox& b) { return b.w * b.h; }

bool contains(const BBox& b, double px, double py) {
  return px >= b.x && px < b.x + b.w && py >= b.y && py < b.y + b.h;
}

bool intersects(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
  return iw > 0.0 && ih > 0.0;
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = area(a) + area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

}  // namespace zoomdet
