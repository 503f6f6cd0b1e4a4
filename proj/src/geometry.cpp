#include "relate3d/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace relate3d {

double normalize_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a > kPi) {
    a -= 2.0 * kPi;
  } else if (a <= -kPi) {
    a += 2.0 * kPi;
  }
  return a;
}

bool is_valid_box(const Box3D& b) {
  bool finite = std::isfinite(b.x) && std::isfinite(b.y) && std::isfinite(b.z) &&
                std::isfinite(b.h) && std::isfinite(b.w) && std::isfinite(b.l) &&
                std::isfinite(b.theta);
  return finite && b.h > 0.0 && b.w > 0.0 && b.l > 0.0 && b.theta > -kPi && b.theta <= kPi;
}

Box3D make_box(double x, double y, double z, double h, double w, double l, double theta) {
  return Box3D{x, y, z, h, w, l, normalize_angle(theta)};
}

double box_volume(const Box3D& b) { return b.h * b.w * b.l; }

double polygon_area(const Polygon2D& p) {
  const auto& v = p.vertices;
  if (v.size() < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    twice += v[j].x() * v[i].y() - v[i].x() * v[j].y();
  }
  return 0.5 * twice;
}

Polygon2D bev_corners(const Box3D& b) {
  const double c = std::cos(b.theta);
  const double s = std::sin(b.theta);
  const double hl = 0.5 * b.l;
  const double hw = 0.5 * b.w;
  // Local rectangle corners in CCW order, length axis along local x.
  const double lx[4] = {-hl, hl, hl, -hl};
  const double ly[4] = {-hw, -hw, hw, hw};
  Polygon2D poly;
  poly.vertices.reserve(4);
  for (int i = 0; i < 4; ++i) {
    poly.vertices.emplace_back(b.x + c * lx[i] - s * ly[i], b.y + s * lx[i] + c * ly[i]);
  }
  return poly;
}

namespace {

// Signed area of the triangle (a, b, p); > 0 when p is left of a->b.
double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

Eigen::Vector2d line_intersection(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                                  const Eigen::Vector2d& p, const Eigen::Vector2d& q) {
  const Eigen::Vector2d r = b - a;
  const Eigen::Vector2d s = q - p;
  const double denom = r.x() * s.y() - r.y() * s.x();
  const double t = ((p - a).x() * s.y() - (p - a).y() * s.x()) / denom;
  return a + t * r;
}

}  // namespace

double convex_intersection_area(const Polygon2D& a, const Polygon2D& b) {
  if (a.vertices.size() < 3 || b.vertices.size() < 3) return 0.0;
  std::vector<Eigen::Vector2d> output = a.vertices;
  const auto& clip = b.vertices;
  for (std::size_t e = 0, e_prev = clip.size() - 1; e < clip.size(); e_prev = e++) {
    const Eigen::Vector2d& c1 = clip[e_prev];
    const Eigen::Vector2d& c2 = clip[e];
    std::vector<Eigen::Vector2d> input;
    input.swap(output);
    if (input.empty()) break;
    for (std::size_t i = 0, i_prev = input.size() - 1; i < input.size(); i_prev = i++) {
      const Eigen::Vector2d& prev = input[i_prev];
      const Eigen::Vector2d& curr = input[i];
      const bool prev_in = cross(c1, c2, prev) >= 0.0;
      const bool curr_in = cross(c1, c2, curr) >= 0.0;
      if (curr_in) {
        if (!prev_in) output.push_back(line_intersection(prev, curr, c1, c2));
        output.push_back(curr);
      } else if (prev_in) {
        output.push_back(line_intersection(prev, curr, c1, c2));
      }
    }
  }
  Polygon2D clipped;
  clipped.vertices = std::move(output);
  // Degenerate results can come out with slightly negative area; clamp.
  return std::max(0.0, polygon_area(clipped));
}

namespace {

// Clipping is order-sensitive at the ulp level; evaluating every pair in a
// canonical order makes the IoUs exactly symmetric.
bool box_before(const Box3D& a, const Box3D& b) {
  const double ka[7] = {a.x, a.y, a.z, a.h, a.w, a.l, a.theta};
  const double kb[7] = {b.x, b.y, b.z, b.h, b.w, b.l, b.theta};
  for (int i = 0; i < 7; ++i) {
    if (ka[i] != kb[i]) return ka[i] < kb[i];
  }
  return true;
}

}  // namespace

// Footprint areas below go through the same shoelace as the clipped
// intersection so that identical boxes give exactly 1.
double iou_bev(const Box3D& a, const Box3D& b) {
  if (!box_before(a, b)) return iou_bev(b, a);
  const Polygon2D fa = bev_corners(a);
  const Polygon2D fb = bev_corners(b);
  const double inter = convex_intersection_area(fa, fb);
  const double uni = polygon_area(fa) + polygon_area(fb) - inter;
  return inter / uni;
}

double iou_3d(const Box3D& a, const Box3D& b) {
  if (!box_before(a, b)) return iou_3d(b, a);
  const Polygon2D fa = bev_corners(a);
  const Polygon2D fb = bev_corners(b);
  const double inter_area = convex_intersection_area(fa, fb);
  const double lo = std::max(a.z - 0.5 * a.h, b.z - 0.5 * b.h);
  const double hi = std::min(a.z + 0.5 * a.h, b.z + 0.5 * b.h);
  const double overlap_h = std::max(0.0, hi - lo);
  const double inter_vol = inter_area * overlap_h;
  const double uni = polygon_area(fa) * a.h + polygon_area(fb) * b.h - inter_vol;
  return inter_vol / uni;
}

Box3D transform_flip_x(const Box3D& b) {
  return Box3D{b.x, -b.y, b.z, b.h, b.w, b.l, normalize_angle(-b.theta)};
}

Box3D transform_rotate_z(const Box3D& b, double phi) {
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  return Box3D{c * b.x - s * b.y, s * b.x + c * b.y, b.z,
               b.h,               b.w,               b.l,
               normalize_angle(b.theta + phi)};
}

Box3D transform_scale(const Box3D& b, double s) {
  if (!(s > 0.0)) {
    throw std::invalid_argument("transform_scale: scale factor must be > 0, got " +
                                std::to_string(s));
  }
  return Box3D{b.x * s, b.y * s, b.z * s, b.h * s, b.w * s, b.l * s, b.theta};
}

}  // namespace relate3d
