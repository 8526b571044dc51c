#pragma once

#include <array>
#include <vector>

namespace rem {

/// Oriented 3D box. Centers and extents in meters, heading in radians
/// about +z, normalized to [-pi, pi).
struct Box3D {
  double center_x = 0.0;
  double center_y = 0.0;
  double center_z = 0.0;
  double length = 1.0;
  double width = 1.0;
  double height = 1.0;
  double heading = 0.0;

  friend bool operator==(const Box3D&, const Box3D&) = default;
};

enum class SizeCategory { small, regular, large };

const char* to_string(SizeCategory c);

/// Wraps an angle into [-pi, pi).
double normalize_heading(double radians);

/// Throws ValidationError when an extent is not positive or a field is
/// non-finite. The heading is not required to be pre-normalized.
void validate_box(const Box3D& box);

/// max(length, width, height).
double vehicle_size(const Box3D& box);

/// regular: size in [3, 7); large: size >= 7; small: size < 3.
SizeCategory size_category(const Box3D& box);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// BEV footprint corners in counter-clockwise order.
std::array<Point2, 4> bev_corners(const Box3D& box);

/// True when (x, y) lies inside or on the box's BEV footprint.
bool bev_contains(const Box3D& box, double x, double y);

/// Area of a simple polygon (shoelace); positive for CCW order.
double polygon_area(const std::vector<Point2>& polygon);

/// Intersection of two convex CCW polygons (Sutherland-Hodgman).
std::vector<Point2> clip_convex(const std::vector<Point2>& subject,
                                const std::vector<Point2>& clip);

/// Rotated-rectangle IoU of the BEV footprints. Symmetric, in [0, 1].
double bev_iou(const Box3D& a, const Box3D& b);

/// Cheap conservative test: false guarantees zero overlap.
bool bev_may_overlap(const Box3D& a, const Box3D& b);

}  // namespace rem
