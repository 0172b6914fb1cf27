#pragma once

#include <cmath>
#include <string>
#include <vector>

namespace zoomdet {

// Axis-aligned rectangle in continuous pixel coordinates (x, y = top-left).
// Used both for detections and for zoom actions.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }

  bool valid() const {
    return w > 0.0 && h > 0.0 && std::isfinite(x) && std::isfinite(y) &&
           std::isfinite(w) && std::isfinite(h);
  }
};

double area(const BBox& b);

// Half-open membership [x, x+w) x [y, y+h), so adjacent tiles never share a
// point.
bool contains(const BBox& b, double px, double py);

// Intersection over union; symmetric, 0 for disjoint boxes, 1 for identical.
double iou(const BBox& a, const BBox& b);

bool intersects(const BBox& a, const BBox& b);

enum class Source { coarse, fine };

struct Detection {
  BBox box;
  double score = 0.0;
  std::vector<double> feature;
  Source source = Source::coarse;
};

struct GroundTruthObject {
  BBox box;
  std::string object_class = "object";
};

}  // namespace zoomdet
