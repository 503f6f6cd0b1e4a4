#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

namespace relate3d {

// Directed neighbor structure over proposal centers. neighbors[i] holds N(i)
// sorted ascending by node index; (i, j) and (j, i) are distinct edges.
struct RelationGraph {
  int num_nodes = 0;
  std::vector<std::vector<int>> neighbors;

  std::size_t num_edges() const;
  std::vector<std::pair<int, int>> edges() const;
  bool operator==(const RelationGraph&) const = default;
};

struct GraphStrategy {
  enum class Kind { knn, radius };
  Kind kind = Kind::knn;
  int k = 16;
  double r = 6.0;

  static GraphStrategy make_knn(int k) { return {Kind::knn, k, 0.0}; }
  static GraphStrategy make_radius(double r) { return {Kind::radius, 0, r}; }
};

// Balanced kd-tree over 3D points. Queries match a brute-force scan exactly,
// including tie handling: equal distances resolve toward the lower index.
class SpatialIndex {
 public:
  explicit SpatialIndex(std::vector<Eigen::Vector3d> points);

  std::size_t size() const { return points_.size(); }
  const std::vector<Eigen::Vector3d>& points() const { return points_; }

  // The k nearest points to points()[query], query itself excluded, ordered
  // by (squared distance, index) ascending. Returns fewer when size() <= k.
  std::vector<int> k_nearest(int query, int k) const;

  // All j != query with ||p_j - p_query|| <= r (boundary inclusive),
  // ascending index order.
  std::vector<int> within_radius(int query, double r) const;

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(std::vector<int>& order, int begin, int end);

  std::vector<Eigen::Vector3d> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

// N(i) = the min(k, n-1) nearest nodes by Euclidean distance on 3D centers.
// Requires k >= 1.
RelationGraph knn_graph(const std::vector<Eigen::Vector3d>& centers, int k);

// N(i) = { j != i : ||c_j - c_i|| <= r }. Requires r > 0.
RelationGraph radius_graph(const std::vector<Eigen::Vector3d>& centers, double r);

RelationGraph build_graph(const std::vector<Eigen::Vector3d>& centers, const GraphStrategy& s);

struct DegreeStats {
  int min_degree = 0;
  int max_degree = 0;
  double mean_degree = 0.0;
};

DegreeStats graph_degree_stats(const RelationGraph& g);

// {"num_nodes": n, "neighbors": [[...], ...]}
std::string graph_to_json(const RelationGraph& g);
RelationGraph graph_from_json(const std::string& text);

}  // namespace relate3d
