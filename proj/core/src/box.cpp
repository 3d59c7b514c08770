#include "ovw/box.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ovw/errors.hpp"

namespace ovw {

Box Box::from_span(std::span<const double> v) {
  if (v.size() != 4) throw InputError("a box needs 4 coordinates, got " + std::to_string(v.size()));
  return {v[0], v[1], v[2], v[3]};
}

bool Box::well_formed() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 < x2 && y1 < y2;
}

void require_well_formed(const Box& b, const char* what) {
  if (!b.well_formed()) {
    throw InputError(std::string(what) + ": malformed box [" + std::to_string(b.x1) + ", " + std::to_string(b.y1) +
                     ", " + std::to_string(b.x2) + ", " + std::to_string(b.y2) + "]");
  }
}

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

double iou(const Box& a, const Box& b) {
  require_well_formed(a, "iou");
  require_well_formed(b, "iou");
  const double inter = intersection_area(a, b);
  return inter / (a.area() + b.area() - inter);
}

}  // namespace ovw
