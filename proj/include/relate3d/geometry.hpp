#pragma once

#include <Eigen/Dense>
#include <vector>

namespace relate3d {

inline constexpr double kPi = 3.14159265358979323846;

// Wrap an angle to (-pi, pi].
double normalize_angle(double a);

// Oriented 3D box: center (x, y, z), size (h, w, l), heading theta about the
// vertical axis. theta = 0 points the length axis along +x. The vertical
// extent is [z - h/2, z + h/2]; z is the center, not the bottom.
struct Box3D {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double h = 1.0;
  double w = 1.0;
  double l = 1.0;
  double theta = 0.0;
};

// Sizes positive, theta in (-pi, pi], everything finite.
bool is_valid_box(const Box3D& b);

// Construct with theta wrapped into (-pi, pi].
Box3D make_box(double x, double y, double z, double h, double w, double l, double theta);

double box_volume(const Box3D& b);

// Convex polygon in the ground plane, counter-clockwise winding.
// Empty is allowed and has area 0.
struct Polygon2D {
  std::vector<Eigen::Vector2d> vertices;
};

double polygon_area(const Polygon2D& p);

// Footprint of the box in the ground plane: an l x w rectangle centered at
// (x, y), rotated by theta, corners in counter-clockwise order.
Polygon2D bev_corners(const Box3D& b);

// Area of a ∩ b via Sutherland-Hodgman clipping + shoelace. Both inputs
// convex CCW. Degenerate contact (shared edge, touching corner) yields 0.
double convex_intersection_area(const Polygon2D& a, const Polygon2D& b);

// Footprint intersection over union, in [0, 1].
double iou_bev(const Box3D& a, const Box3D& b);

// Volume intersection over union; intersection volume is the footprint
// intersection area times the vertical overlap length.
double iou_3d(const Box3D& a, const Box3D& b);

// Mirror across the x axis: y -> -y, theta -> -theta.
Box3D transform_flip_x(const Box3D& b);

// Rotate center about the origin by phi and add phi to the heading.
Box3D transform_rotate_z(const Box3D& b, double phi);

// Scale center and sizes by s > 0; heading unchanged. Throws on s <= 0.
Box3D transform_scale(const Box3D& b, double s);

}  // namespace relate3d
