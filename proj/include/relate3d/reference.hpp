#pragma once

#include <Eigen/Dense>
#include <vector>

#include "relate3d/autodiff.hpp"
#include "relate3d/geometry.hpp"
#include "relate3d/spatial_graph.hpp"

// Independent reference implementations used to cross-check the fast paths.
// Nothing here may call the implementation it validates: graphs are O(n^2)
// scans (no kd-tree), IoU is cell counting (no clipping), the MLP is a
// straight-line recomputation (no tape).
namespace relate3d::reference {

// Intersection area of two convex CCW polygons, measured by counting grid
// cell centers inside both over their joint bounding box.
double rasterized_intersection_area(const Polygon2D& a, const Polygon2D& b, int cells_per_axis);

// Rasterized BEV IoU; footprint areas are the exact rectangle areas l*w.
double rasterized_iou_bev(const Box3D& a, const Box3D& b, int cells_per_axis);

RelationGraph knn_graph_brute_force(const std::vector<Eigen::Vector3d>& centers, int k);
RelationGraph radius_graph_brute_force(const std::vector<Eigen::Vector3d>& centers, double r);

// Tape-free MLP recomputation, bitwise-comparable with the engine's output.
nn::Matrix mlp_reference(const nn::MlpSpec& spec, const nn::Parameters& params,
                         const nn::Matrix& input);

}  // namespace relate3d::reference
