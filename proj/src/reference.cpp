#include "relate3d/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace relate3d::reference {

namespace {

// x-interval of a convex polygon on the horizontal line y = yc, or an empty
// (inverted) interval when the line misses it.
std::pair<double, double> row_interval(const Polygon2D& poly, double yc) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  const auto& v = poly.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const Eigen::Vector2d& p = v[j];
    const Eigen::Vector2d& q = v[i];
    if ((p.y() > yc) == (q.y() > yc)) continue;
    const double x = p.x() + (q.x() - p.x()) * (yc - p.y()) / (q.y() - p.y());
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  return {lo, hi};
}

}  // namespace

double rasterized_intersection_area(const Polygon2D& a, const Polygon2D& b, int cells_per_axis) {
  if (cells_per_axis < 1) {
    throw std::invalid_argument("rasterized_intersection_area: need at least one cell");
  }
  if (a.vertices.size() < 3 || b.vertices.size() < 3) return 0.0;

  double min_x = std::numeric_limits<double>::infinity();
  double min_y = min_x;
  double max_x = -min_x;
  double max_y = -min_x;
  for (const auto* poly : {&a, &b}) {
    for (const Eigen::Vector2d& v : poly->vertices) {
      min_x = std::min(min_x, v.x());
      max_x = std::max(max_x, v.x());
      min_y = std::min(min_y, v.y());
      max_y = std::max(max_y, v.y());
    }
  }
  const double dx = (max_x - min_x) / cells_per_axis;
  const double dy = (max_y - min_y) / cells_per_axis;
  if (dx <= 0.0 || dy <= 0.0) return 0.0;

  // Count cell centers inside both polygons, row by row. For a convex
  // polygon the inside of one row is a single interval, so this equals the
  // naive per-cell test at O(rows) cost.
  long long inside = 0;
  for (int row = 0; row < cells_per_axis; ++row) {
    const double yc = min_y + (row + 0.5) * dy;
    const auto [lo_a, hi_a] = row_interval(a, yc);
    if (lo_a > hi_a) continue;
    const auto [lo_b, hi_b] = row_interval(b, yc);
    if (lo_b > hi_b) continue;
    const double lo = std::max(lo_a, lo_b);
    const double hi = std::min(hi_a, hi_b);
    if (lo > hi) continue;
    long long j_min = static_cast<long long>(std::ceil((lo - min_x) / dx - 0.5));
    long long j_max = static_cast<long long>(std::floor((hi - min_x) / dx - 0.5));
    j_min = std::max(j_min, 0ll);
    j_max = std::min(j_max, static_cast<long long>(cells_per_axis) - 1);
    if (j_max >= j_min) inside += j_max - j_min + 1;
  }
  return static_cast<double>(inside) * dx * dy;
}

double rasterized_iou_bev(const Box3D& a, const Box3D& b, int cells_per_axis) {
  const double inter = rasterized_intersection_area(bev_corners(a), bev_corners(b),
                                                    cells_per_axis);
  const double uni = a.l * a.w + b.l * b.w - inter;
  return inter / uni;
}

RelationGraph knn_graph_brute_force(const std::vector<Eigen::Vector3d>& centers, int k) {
  if (k < 1) throw std::invalid_argument("knn_graph_brute_force: k must be >= 1");
  const int n = static_cast<int>(centers.size());
  RelationGraph g;
  g.num_nodes = n;
  g.neighbors.resize(n);
  if (n <= 1) return g;
  const int effective_k = std::min(k, n - 1);
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> all;
    all.reserve(n - 1);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      all.emplace_back((centers[j] - centers[i]).squaredNorm(), j);
    }
    std::sort(all.begin(), all.end());
    g.neighbors[i].reserve(effective_k);
    for (int t = 0; t < effective_k; ++t) g.neighbors[i].push_back(all[t].second);
    std::sort(g.neighbors[i].begin(), g.neighbors[i].end());
  }
  return g;
}

RelationGraph radius_graph_brute_force(const std::vector<Eigen::Vector3d>& centers, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("radius_graph_brute_force: r must be > 0");
  const int n = static_cast<int>(centers.size());
  RelationGraph g;
  g.num_nodes = n;
  g.neighbors.resize(n);
  const double r2 = r * r;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j != i && (centers[j] - centers[i]).squaredNorm() <= r2) g.neighbors[i].push_back(j);
    }
  }
  return g;
}

nn::Matrix mlp_reference(const nn::MlpSpec& spec, const nn::Parameters& params,
                         const nn::Matrix& input) {
  nn::Matrix x = input;
  for (int layer = 0; layer < spec.num_layers(); ++layer) {
    const nn::Matrix& w = params.layers[layer].weight;
    const nn::Matrix& bias = params.layers[layer].bias;
    nn::Matrix y(x.rows(), w.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      y.row(r) = x.row(r) * w;
      y.row(r) += bias.row(0);
    }
    if (layer + 1 < spec.num_layers()) y = y.cwiseMax(0.0);
    x = std::move(y);
  }
  return x;
}

}  // namespace relate3d::reference
