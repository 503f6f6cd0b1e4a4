#include "relate3d/spatial_graph.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <stdexcept>

#include "json.hpp"
#include "relate3d/errors.hpp"

namespace relate3d {

std::size_t RelationGraph::num_edges() const {
  std::size_t total = 0;
  for (const auto& n : neighbors) total += n.size();
  return total;
}

std::vector<std::pair<int, int>> RelationGraph::edges() const {
  std::vector<std::pair<int, int>> out;
  out.reserve(num_edges());
  for (int i = 0; i < num_nodes; ++i) {
    for (int j : neighbors[i]) out.emplace_back(i, j);
  }
  return out;
}

SpatialIndex::SpatialIndex(std::vector<Eigen::Vector3d> points) : points_(std::move(points)) {
  if (points_.empty()) return;
  std::vector<int> order(points_.size());
  std::iota(order.begin(), order.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(order, 0, static_cast<int>(order.size()));
}

int SpatialIndex::build(std::vector<int>& order, int begin, int end) {
  if (begin >= end) return -1;
  // Split on the widest axis of this subset's bounding box.
  Eigen::Vector3d lo = points_[order[begin]];
  Eigen::Vector3d hi = lo;
  for (int i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(points_[order[i]]);
    hi = hi.cwiseMax(points_[order[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);

  const int mid = begin + (end - begin) / 2;
  std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                   [&](int a, int b) {
                     const double ca = points_[a][axis];
                     const double cb = points_[b][axis];
                     return ca < cb || (ca == cb && a < b);
                   });

  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{order[mid], axis, -1, -1});
  const int left = build(order, begin, mid);
  const int right = build(order, mid + 1, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

namespace {

struct Cand {
  double d2;
  int idx;
};

// "Worse" ordering for the k-best heap: larger distance first, then larger
// index, so ties at the boundary keep the lower index.
struct CandWorse {
  bool operator()(const Cand& a, const Cand& b) const {
    return a.d2 < b.d2 || (a.d2 == b.d2 && a.idx < b.idx);
  }
};

}  // namespace

std::vector<int> SpatialIndex::k_nearest(int query, int k) const {
  std::vector<int> result;
  if (k <= 0 || root_ < 0) return result;
  const Eigen::Vector3d& q = points_[query];
  std::priority_queue<Cand, std::vector<Cand>, CandWorse> best;

  auto consider = [&](int point_idx) {
    if (point_idx == query) return;
    const double d2 = (points_[point_idx] - q).squaredNorm();
    if (static_cast<int>(best.size()) < k) {
      best.push(Cand{d2, point_idx});
      return;
    }
    const Cand& worst = best.top();
    if (d2 < worst.d2 || (d2 == worst.d2 && point_idx < worst.idx)) {
      best.pop();
      best.push(Cand{d2, point_idx});
    }
  };

  auto search = [&](auto&& self, int node_id) -> void {
    if (node_id < 0) return;
    const Node& node = nodes_[node_id];
    consider(node.point);
    const double delta = q[node.axis] - points_[node.point][node.axis];
    const int near = delta < 0.0 ? node.left : node.right;
    const int far = delta < 0.0 ? node.right : node.left;
    self(self, near);
    // <= keeps equal-distance candidates on the far side reachable so index
    // tie-breaking stays exact.
    if (static_cast<int>(best.size()) < k || delta * delta <= best.top().d2) {
      self(self, far);
    }
  };
  search(search, root_);

  std::vector<Cand> cands;
  cands.reserve(best.size());
  while (!best.empty()) {
    cands.push_back(best.top());
    best.pop();
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    return a.d2 < b.d2 || (a.d2 == b.d2 && a.idx < b.idx);
  });
  result.reserve(cands.size());
  for (const Cand& c : cands) result.push_back(c.idx);
  return result;
}

std::vector<int> SpatialIndex::within_radius(int query, double r) const {
  std::vector<int> result;
  if (root_ < 0 || r < 0.0) return result;
  const Eigen::Vector3d& q = points_[query];
  const double r2 = r * r;

  auto search = [&](auto&& self, int node_id) -> void {
    if (node_id < 0) return;
    const Node& node = nodes_[node_id];
    if (node.point != query && (points_[node.point] - q).squaredNorm() <= r2) {
      result.push_back(node.point);
    }
    const double delta = q[node.axis] - points_[node.point][node.axis];
    const int near = delta < 0.0 ? node.left : node.right;
    const int far = delta < 0.0 ? node.right : node.left;
    self(self, near);
    if (delta * delta <= r2) self(self, far);
  };
  search(search, root_);

  std::sort(result.begin(), result.end());
  return result;
}

RelationGraph knn_graph(const std::vector<Eigen::Vector3d>& centers, int k) {
  if (k < 1) throw std::invalid_argument("knn_graph: k must be >= 1");
  const int n = static_cast<int>(centers.size());
  RelationGraph g;
  g.num_nodes = n;
  g.neighbors.resize(n);
  if (n <= 1) return g;
  const SpatialIndex index(centers);
  const int effective_k = std::min(k, n - 1);
  for (int i = 0; i < n; ++i) {
    g.neighbors[i] = index.k_nearest(i, effective_k);
    std::sort(g.neighbors[i].begin(), g.neighbors[i].end());
  }
  return g;
}

RelationGraph radius_graph(const std::vector<Eigen::Vector3d>& centers, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("radius_graph: r must be > 0");
  const int n = static_cast<int>(centers.size());
  RelationGraph g;
  g.num_nodes = n;
  g.neighbors.resize(n);
  if (n <= 1) return g;
  const SpatialIndex index(centers);
  for (int i = 0; i < n; ++i) {
    g.neighbors[i] = index.within_radius(i, r);
  }
  return g;
}

RelationGraph build_graph(const std::vector<Eigen::Vector3d>& centers, const GraphStrategy& s) {
  return s.kind == GraphStrategy::Kind::knn ? knn_graph(centers, s.k) : radius_graph(centers, s.r);
}

DegreeStats graph_degree_stats(const RelationGraph& g) {
  DegreeStats stats;
  if (g.num_nodes == 0) return stats;
  stats.min_degree = static_cast<int>(g.neighbors[0].size());
  stats.max_degree = stats.min_degree;
  std::size_t total = 0;
  for (const auto& n : g.neighbors) {
    const int d = static_cast<int>(n.size());
    stats.min_degree = std::min(stats.min_degree, d);
    stats.max_degree = std::max(stats.max_degree, d);
    total += n.size();
  }
  stats.mean_degree = static_cast<double>(total) / g.num_nodes;
  return stats;
}

std::string graph_to_json(const RelationGraph& g) {
  nlohmann::ordered_json j;
  j["num_nodes"] = g.num_nodes;
  j["neighbors"] = g.neighbors;
  return j.dump();
}

RelationGraph graph_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("graph_from_json: ") + e.what());
  }
  RelationGraph g;
  g.num_nodes = j.at("num_nodes").get<int>();
  g.neighbors = j.at("neighbors").get<std::vector<std::vector<int>>>();
  if (static_cast<int>(g.neighbors.size()) != g.num_nodes) {
    throw DataError("graph_from_json: neighbors length does not match num_nodes");
  }
  return g;
}

}  // namespace relate3d
