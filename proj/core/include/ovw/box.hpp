#pragma once

#include <array>
#include <span>

namespace ovw {

// Axis-aligned box in absolute pixels, (x1, y1) top-left, (x2, y2) bottom-right.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  static Box from_span(std::span<const double> v);
  std::array<double, 4> as_array() const { return {x1, y1, x2, y2}; }

  bool well_formed() const;
  double area() const { return (x2 - x1) * (y2 - y1); }

  friend bool operator==(const Box&, const Box&) = default;
};

// Throws InputError naming `what` unless x1 < x2, y1 < y2 and all finite.
void require_well_formed(const Box& b, const char* what);

double intersection_area(const Box& a, const Box& b);
// Validates both boxes.
double iou(const Box& a, const Box& b);

}  // namespace ovw
