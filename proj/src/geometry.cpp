#include "rem/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>

#include "rem/error.hpp"

namespace rem {

const char* to_string(SizeCategory c) {
  switch (c) {
    case SizeCategory::small:
      return "small";
    case SizeCategory::regular:
      return "regular";
    case SizeCategory::large:
      return "large";
  }
  return "unknown";
}

double normalize_heading(double radians) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(radians + std::numbers::pi, two_pi);
  if (r < 0.0) r += two_pi;
  r -= std::numbers::pi;
  // fmod can land exactly on +pi after the shift due to rounding
  if (r >= std::numbers::pi) r -= two_pi;
  return r;
}

void validate_box(const Box3D& box) {
  const double fields[] = {box.center_x, box.center_y, box.center_z, box.length,
                           box.width,    box.height,   box.heading};
  for (double f : fields) {
    if (!std::isfinite(f)) throw ValidationError("box has a non-finite field");
  }
  if (box.length <= 0.0 || box.width <= 0.0 || box.height <= 0.0) {
    throw ValidationError("box extents must be positive");
  }
}

double vehicle_size(const Box3D& box) {
  return std::max({box.length, box.width, box.height});
}

SizeCategory size_category(const Box3D& box) {
  const double size = vehicle_size(box);
  if (size >= 7.0) return SizeCategory::large;
  if (size >= 3.0) return SizeCategory::regular;
  return SizeCategory::small;
}

std::array<Point2, 4> bev_corners(const Box3D& box) {
  const double c = std::cos(box.heading);
  const double s = std::sin(box.heading);
  const double hl = 0.5 * box.length;
  const double hw = 0.5 * box.width;
  // local (+-hl, +-hw) in CCW order
  const double local[4][2] = {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}};
  std::array<Point2, 4> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {box.center_x + c * local[i][0] - s * local[i][1],
              box.center_y + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

bool bev_contains(const Box3D& box, double x, double y) {
  const double dx = x - box.center_x;
  const double dy = y - box.center_y;
  const double c = std::cos(box.heading);
  const double s = std::sin(box.heading);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * box.length && std::abs(ly) <= 0.5 * box.width;
}

double polygon_area(const std::vector<Point2>& polygon) {
  const std::size_t n = polygon.size();
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& p = polygon[i];
    const Point2& q = polygon[(i + 1) % n];
    twice += p.x * q.y - q.x * p.y;
  }
  return 0.5 * twice;
}

namespace {

double cross(const Point2& a, const Point2& b, const Point2& p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

Point2 segment_line_intersection(const Point2& p, const Point2& q, const Point2& a,
                                 const Point2& b) {
  const double cp = cross(a, b, p);
  const double cq = cross(a, b, q);
  const double t = cp / (cp - cq);
  return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

}  // namespace

std::vector<Point2> clip_convex(const std::vector<Point2>& subject,
                                const std::vector<Point2>& clip) {
  std::vector<Point2> output = subject;
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !output.empty(); ++e) {
    const Point2& a = clip[e];
    const Point2& b = clip[(e + 1) % m];
    std::vector<Point2> input;
    input.swap(output);
    const std::size_t n = input.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Point2& cur = input[i];
      const Point2& prev = input[(i + n - 1) % n];
      const bool cur_in = cross(a, b, cur) >= 0.0;
      const bool prev_in = cross(a, b, prev) >= 0.0;
      if (cur_in) {
        if (!prev_in) output.push_back(segment_line_intersection(prev, cur, a, b));
        output.push_back(cur);
      } else if (prev_in) {
        output.push_back(segment_line_intersection(prev, cur, a, b));
      }
    }
  }
  return output;
}

bool bev_may_overlap(const Box3D& a, const Box3D& b) {
  const double ra = 0.5 * std::hypot(a.length, a.width);
  const double rb = 0.5 * std::hypot(b.length, b.width);
  return std::hypot(a.center_x - b.center_x, a.center_y - b.center_y) <= ra + rb;
}

namespace {

auto field_tuple(const Box3D& b) {
  return std::tie(b.center_x, b.center_y, b.center_z, b.length, b.width, b.height,
                  b.heading);
}

}  // namespace

double bev_iou(const Box3D& first, const Box3D& second) {
  if (!bev_may_overlap(first, second)) return 0.0;
  // canonical argument order makes the result bit-for-bit symmetric
  const bool swap = field_tuple(second) < field_tuple(first);
  const Box3D& a = swap ? second : first;
  const Box3D& b = swap ? first : second;
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const std::vector<Point2> pa(ca.begin(), ca.end());
  const std::vector<Point2> pb(cb.begin(), cb.end());
  const double inter = std::max(0.0, polygon_area(clip_convex(pa, pb)));
  // shoelace areas so identical boxes give exactly 1
  const double area_a = polygon_area(pa);
  const double area_b = polygon_area(pb);
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace rem
