#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "relate3d/geometry.hpp"
#include "relate3d/reference.hpp"
#include "relate3d/rng.hpp"

using namespace relate3d;

namespace {

Box3D random_box(Rng& rng) {
  return make_box(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-1.0, 1.0),
                  rng.uniform(0.5, 2.5), rng.uniform(0.5, 3.0), rng.uniform(0.5, 6.0),
                  rng.uniform(-kPi, kPi));
}

// Half of the random pairs overlap; disjoint pairs say nothing about clipping.
std::pair<Box3D, Box3D> random_pair(Rng& rng) {
  const Box3D a = random_box(rng);
  if (rng.uniform() < 0.5) {
    return {a, make_box(a.x + rng.normal(0.0, 1.5), a.y + rng.normal(0.0, 1.5),
                        a.z + rng.normal(0.0, 0.5), rng.uniform(0.5, 2.5), rng.uniform(0.5, 3.0),
                        rng.uniform(0.5, 6.0), rng.uniform(-kPi, kPi))};
  }
  return {a, random_box(rng)};
}

bool corner_set_matches(const Polygon2D& poly, const std::vector<Eigen::Vector2d>& expected,
                        double tol = 1e-12) {
  if (poly.vertices.size() != expected.size()) return false;
  std::vector<bool> used(expected.size(), false);
  for (const auto& v : poly.vertices) {
    bool found = false;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (!used[i] && (v - expected[i]).norm() < tol) {
        used[i] = true;
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("normalize_angle wraps to (-pi, pi]") {
  CHECK(normalize_angle(kPi) == kPi);
  CHECK(normalize_angle(-kPi) == kPi);
  CHECK(normalize_angle(0.0) == 0.0);
  CHECK(normalize_angle(3.0 * kPi) == doctest::Approx(kPi).epsilon(1e-12));
  CHECK(normalize_angle(6.0) == doctest::Approx(6.0 - 2.0 * kPi).epsilon(1e-12));
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const double a = normalize_angle(rng.uniform(-50.0, 50.0));
    CHECK(a > -kPi);
    CHECK(a <= kPi);
  }
}

TEST_CASE("bev_corners of a unit box is the unit square") {
  const Box3D box = make_box(0, 0, 0, 1, 1, 1, 0);
  const std::vector<Eigen::Vector2d> expected = {
      {0.5, 0.5}, {0.5, -0.5}, {-0.5, 0.5}, {-0.5, -0.5}};
  CHECK(corner_set_matches(bev_corners(box), expected));
  // Quarter turn maps a square footprint onto the same corner set.
  CHECK(corner_set_matches(bev_corners(make_box(0, 0, 0, 1, 1, 1, kPi / 2)), expected));
}

TEST_CASE("bev_corners: 90 degree heading swaps the footprint extents") {
  const Box3D box = make_box(0, 0, 0, 1, 1, 2, kPi / 2);
  const std::vector<Eigen::Vector2d> expected = {
      {0.5, 1.0}, {0.5, -1.0}, {-0.5, 1.0}, {-0.5, -1.0}};
  CHECK(corner_set_matches(bev_corners(box), expected));
}

TEST_CASE("bev_corners winding is counter-clockwise") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    CHECK(polygon_area(bev_corners(random_box(rng))) > 0.0);
  }
}

TEST_CASE("convex_intersection_area: identity and analytic overlap") {
  const Polygon2D square = bev_corners(make_box(0, 0, 0, 1, 1, 1, 0));
  CHECK(convex_intersection_area(square, square) == polygon_area(square));

  const Polygon2D shifted = bev_corners(make_box(0.5, 0, 0, 1, 1, 1, 0));
  CHECK(convex_intersection_area(square, shifted) == doctest::Approx(0.5).epsilon(1e-12));

  const Polygon2D empty{};
  CHECK(convex_intersection_area(square, empty) == 0.0);
}

TEST_CASE("unit square vs itself rotated 45 degrees") {
  const Polygon2D square = bev_corners(make_box(0, 0, 0, 1, 1, 1, 0));
  const Polygon2D rotated = bev_corners(make_box(0, 0, 0, 1, 1, 1, kPi / 4));
  const double area = convex_intersection_area(square, rotated);
  // Octagon area 2*(sqrt(2)-1), cross-checked against the rasterization
  // reference at its own resolution.
  CHECK(area == doctest::Approx(2.0 * (std::sqrt(2.0) - 1.0)).epsilon(1e-12));
  const double raster = reference::rasterized_intersection_area(square, rotated, 2000);
  CHECK(std::abs(area - raster) < 2e-3);
}

TEST_CASE("intersection area never exceeds either input") {
  Rng rng(17);
  for (int i = 0; i < 500; ++i) {
    const auto [a, b] = random_pair(rng);
    const Polygon2D fa = bev_corners(a);
    const Polygon2D fb = bev_corners(b);
    const double inter = convex_intersection_area(fa, fb);
    CHECK(inter >= 0.0);
    CHECK(inter <= std::min(polygon_area(fa), polygon_area(fb)) + 1e-9);
  }
}

TEST_CASE("iou_bev basics") {
  const Box3D box = make_box(1, 2, 0, 1.5, 1.8, 4.0, 0.7);
  CHECK(iou_bev(box, box) == 1.0);

  const Box3D far = make_box(100, 2, 0, 1.5, 1.8, 4.0, 0.7);
  CHECK(iou_bev(box, far) == 0.0);

  const Box3D a = make_box(0, 0, 0, 1, 1, 1, 0);
  const Box3D b = make_box(0.5, 0, 0, 1, 1, 1, 0);
  CHECK(iou_bev(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("iou_3d basics") {
  const Box3D box = make_box(1, 2, 0.5, 1.5, 1.8, 4.0, 0.7);
  CHECK(iou_3d(box, box) == 1.0);

  // Same footprint, vertical ranges disjoint.
  const Box3D above = make_box(1, 2, 5.0, 1.5, 1.8, 4.0, 0.7);
  CHECK(iou_3d(box, above) == 0.0);

  // Same unit footprint, h = 1 each, vertical overlap 0.5.
  const Box3D a = make_box(0, 0, 0.0, 1, 1, 1, 0);
  const Box3D b = make_box(0, 0, 0.5, 1, 1, 1, 0);
  CHECK(iou_3d(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("iou is exactly symmetric and bounded") {
  Rng rng(23);
  for (int i = 0; i < 500; ++i) {
    const auto [a, b] = random_pair(rng);
    const double bev = iou_bev(a, b);
    const double v3d = iou_3d(a, b);
    CHECK(bev == iou_bev(b, a));
    CHECK(v3d == iou_3d(b, a));
    CHECK(bev >= 0.0);
    CHECK(bev <= 1.0);
    CHECK(v3d >= 0.0);
    CHECK(v3d <= 1.0);
    CHECK(v3d <= bev + 1e-12);
  }
}

TEST_CASE("distant boxes have exactly zero IoU") {
  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    Box3D a = random_box(rng);
    Box3D b = random_box(rng);
    const double diag_a = 0.5 * std::hypot(a.l, a.w);
    const double diag_b = 0.5 * std::hypot(b.l, b.w);
    b.x = a.x + diag_a + diag_b + rng.uniform(0.1, 10.0);
    b.y = a.y;
    CHECK(iou_bev(a, b) == 0.0);
  }
}

TEST_CASE("iou_bev is invariant under rigid motion") {
  Rng rng(37);
  for (int i = 0; i < 300; ++i) {
    const auto [a, b] = random_pair(rng);
    const double phi = rng.uniform(-kPi, kPi);
    const double before = iou_bev(a, b);
    const double after = iou_bev(transform_rotate_z(a, phi), transform_rotate_z(b, phi));
    CHECK(std::abs(before - after) < 1e-9);
  }
}

TEST_CASE("iou_bev matches the rasterization reference") {
  Rng rng(41);
  double max_err = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto [a, b] = random_pair(rng);
    max_err = std::max(max_err, std::abs(iou_bev(a, b) - reference::rasterized_iou_bev(a, b, 2000)));
  }
  CHECK(max_err < 2e-3);
}

TEST_CASE("transform_flip_x") {
  const Box3D box = make_box(1, 2, 0, 1, 1, 1, 0.3);
  const Box3D flipped = transform_flip_x(box);
  CHECK(flipped.x == 1.0);
  CHECK(flipped.y == -2.0);
  CHECK(flipped.theta == doctest::Approx(-0.3).epsilon(1e-15));

  const Box3D fixed_point = make_box(1, 0, 0, 1, 1, 1, 0);
  const Box3D same = transform_flip_x(fixed_point);
  CHECK(same.y == 0.0);
  CHECK(same.theta == 0.0);

  Rng rng(43);
  for (int i = 0; i < 200; ++i) {
    const Box3D b = random_box(rng);
    const Box3D twice = transform_flip_x(transform_flip_x(b));
    CHECK(twice.x == b.x);
    CHECK(twice.y == b.y);
    CHECK(twice.z == b.z);
    CHECK(twice.theta == b.theta);
  }
}

TEST_CASE("transform_rotate_z") {
  const Box3D box = make_box(1, 0, 0, 1, 1, 1, 0);
  const Box3D identity = transform_rotate_z(box, 0.0);
  CHECK(identity.x == box.x);
  CHECK(identity.theta == box.theta);

  const Box3D quarter = transform_rotate_z(box, kPi / 2);
  CHECK(quarter.x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(quarter.y == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(quarter.theta == doctest::Approx(kPi / 2).epsilon(1e-12));

  Rng rng(47);
  for (int i = 0; i < 200; ++i) {
    const Box3D b = random_box(rng);
    const double phi = rng.uniform(-kPi, kPi);
    const Box3D back = transform_rotate_z(transform_rotate_z(b, phi), -phi);
    CHECK(std::abs(back.x - b.x) < 1e-12);
    CHECK(std::abs(back.y - b.y) < 1e-12);
    CHECK(std::abs(normalize_angle(back.theta - b.theta)) < 1e-12);
  }
}

TEST_CASE("transform_scale") {
  const Box3D box = make_box(1, 1, 1, 1, 1, 1, 0.4);
  const Box3D same = transform_scale(box, 1.0);
  CHECK(same.x == box.x);
  CHECK(same.l == box.l);

  const Box3D grown = transform_scale(box, 2.0);
  CHECK(grown.x == 2.0);
  CHECK(grown.y == 2.0);
  CHECK(grown.z == 2.0);
  CHECK(grown.h == 2.0);
  CHECK(grown.w == 2.0);
  CHECK(grown.l == 2.0);
  CHECK(grown.theta == box.theta);

  CHECK_THROWS_AS(transform_scale(box, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(transform_scale(box, -1.5), std::invalid_argument);

  Rng rng(53);
  for (int i = 0; i < 200; ++i) {
    const auto [a, b] = random_pair(rng);
    const double s = rng.uniform(0.95, 1.05);
    CHECK(std::abs(iou_bev(transform_scale(a, s), transform_scale(b, s)) - iou_bev(a, b)) < 1e-9);
  }
}

TEST_CASE("box validity") {
  CHECK(is_valid_box(make_box(0, 0, 0, 1, 1, 1, 10.0)));
  Box3D bad = make_box(0, 0, 0, 1, 1, 1, 0);
  bad.h = 0.0;
  CHECK_FALSE(is_valid_box(bad));
  bad = make_box(0, 0, 0, 1, 1, 1, 0);
  bad.x = std::numeric_limits<double>::infinity();
  CHECK_FALSE(is_valid_box(bad));
  bad = make_box(0, 0, 0, 1, 1, 1, 0);
  bad.theta = 4.0;
  CHECK_FALSE(is_valid_box(bad));
}
