#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "relate3d/reference.hpp"
#include "relate3d/rng.hpp"
#include "relate3d/spatial_graph.hpp"

using namespace relate3d;

namespace {

std::vector<Eigen::Vector3d> random_centers(Rng& rng, int n) {
  std::vector<Eigen::Vector3d> centers;
  centers.reserve(n);
  for (int i = 0; i < n; ++i) {
    centers.emplace_back(rng.uniform(0.0, 60.0), rng.uniform(-20.0, 20.0),
                         rng.uniform(-1.0, 2.0));
  }
  return centers;
}

// Coordinates on a 1/1024 grid: translations by grid-aligned vectors are
// then exact in floating point, so distance comparisons cannot flip.
std::vector<Eigen::Vector3d> grid_centers(Rng& rng, int n) {
  std::vector<Eigen::Vector3d> centers;
  centers.reserve(n);
  auto snap = [](double v) { return std::round(v * 1024.0) / 1024.0; };
  for (int i = 0; i < n; ++i) {
    centers.emplace_back(snap(rng.uniform(0.0, 60.0)), snap(rng.uniform(-20.0, 20.0)),
                         snap(rng.uniform(-1.0, 2.0)));
  }
  return centers;
}

std::vector<Eigen::Vector3d> line_points(std::initializer_list<double> xs) {
  std::vector<Eigen::Vector3d> centers;
  for (double x : xs) centers.emplace_back(x, 0.0, 0.0);
  return centers;
}

}  // namespace

TEST_CASE("SpatialIndex trivia") {
  const SpatialIndex empty{{}};
  CHECK(empty.size() == 0);
  CHECK(empty.k_nearest(0, 3).empty());

  const SpatialIndex single{{Eigen::Vector3d{1, 2, 3}}};
  CHECK(single.k_nearest(0, 1).empty());
  CHECK(single.within_radius(0, 100.0).empty());
}

TEST_CASE("SpatialIndex k-NN matches a brute-force sort") {
  Rng rng(101);
  const auto centers = random_centers(rng, 200);
  const SpatialIndex index(centers);
  for (int q = 0; q < 200; q += 7) {
    for (int k : {1, 5, 32, 199, 500}) {
      std::vector<std::pair<double, int>> all;
      for (int j = 0; j < 200; ++j) {
        if (j != q) all.emplace_back((centers[j] - centers[q]).squaredNorm(), j);
      }
      std::sort(all.begin(), all.end());
      std::vector<int> expected;
      for (int t = 0; t < std::min<int>(k, 199); ++t) expected.push_back(all[t].second);
      CHECK(index.k_nearest(q, k) == expected);
    }
  }
}

TEST_CASE("knn_graph handles the spec's line fixture") {
  // Nodes at x = 0, 1, 2. Node 1 is equidistant from 0 and 2; the tie goes
  // to the lower index.
  const RelationGraph g = knn_graph(line_points({0.0, 1.0, 2.0}), 1);
  CHECK(g.neighbors[0] == std::vector<int>{1});
  CHECK(g.neighbors[1] == std::vector<int>{0});
  CHECK(g.neighbors[2] == std::vector<int>{1});
}

TEST_CASE("knn_graph trivia") {
  CHECK(knn_graph({{Eigen::Vector3d{1, 2, 3}}}, 4).num_edges() == 0);
  CHECK(knn_graph({}, 3).num_nodes == 0);
  CHECK_THROWS_AS(knn_graph(line_points({0.0, 1.0}), 0), std::invalid_argument);

  Rng rng(103);
  const auto centers = random_centers(rng, 12);
  const RelationGraph g = knn_graph(centers, 100);  // k >= n-1: complete digraph
  CHECK(g.num_edges() == 12 * 11);
  const DegreeStats stats = graph_degree_stats(g);
  CHECK(stats.min_degree == 11);
  CHECK(stats.max_degree == 11);
}

TEST_CASE("knn out-degree is exactly min(k, n-1)") {
  Rng rng(107);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rng.uniform_int(1, 60);
    const int k = rng.uniform_int(1, 70);
    const RelationGraph g = knn_graph(random_centers(rng, n), k);
    for (const auto& nbrs : g.neighbors) {
      CHECK(static_cast<int>(nbrs.size()) == std::min(k, n - 1));
    }
  }
}

TEST_CASE("knn graphs can be asymmetric") {
  // 0 and 1 pick each other; 2 points at 1 but 1 does not point back.
  const RelationGraph g = knn_graph(line_points({0.0, 1.0, 3.0}), 1);
  CHECK(g.neighbors[2] == std::vector<int>{1});
  CHECK(g.neighbors[1] == std::vector<int>{0});
}

TEST_CASE("radius_graph on the line fixture") {
  const RelationGraph g = radius_graph(line_points({0.0, 1.0, 2.0}), 1.5);
  CHECK(g.neighbors[0] == std::vector<int>{1});
  CHECK(g.neighbors[1] == (std::vector<int>{0, 2}));
  CHECK(g.neighbors[2] == std::vector<int>{1});
  CHECK(graph_degree_stats(g).mean_degree == doctest::Approx(4.0 / 3.0));

  CHECK(radius_graph(line_points({0.0, 10.0, 20.0}), 1.0).num_edges() == 0);
  CHECK_THROWS_AS(radius_graph(line_points({0.0}), 0.0), std::invalid_argument);
}

TEST_CASE("radius boundary is inclusive") {
  const RelationGraph g = radius_graph(line_points({0.0, 2.0}), 2.0);
  CHECK(g.neighbors[0] == std::vector<int>{1});
  CHECK(g.neighbors[1] == std::vector<int>{0});
}

TEST_CASE("radius graphs are symmetric") {
  Rng rng(109);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.uniform_int(2, 80);
    const RelationGraph g = radius_graph(random_centers(rng, n), rng.uniform(1.0, 15.0));
    for (int i = 0; i < n; ++i) {
      for (int j : g.neighbors[i]) {
        CHECK(std::binary_search(g.neighbors[j].begin(), g.neighbors[j].end(), i));
      }
    }
  }
}

TEST_CASE("kd-backed graphs equal brute force") {
  Rng rng(113);
  for (int trial = 0; trial < 150; ++trial) {
    const int n = rng.uniform_int(0, 200);
    const auto centers = random_centers(rng, n);
    for (int k : {1, 4, 16, 32}) {
      CHECK(knn_graph(centers, k) == reference::knn_graph_brute_force(centers, k));
    }
    for (double r : {2.0, 6.0, 10.0}) {
      CHECK(radius_graph(centers, r) == reference::radius_graph_brute_force(centers, r));
    }
  }
}

TEST_CASE("graphs handle exact duplicate points") {
  std::vector<Eigen::Vector3d> centers = line_points({1.0, 1.0, 1.0, 4.0});
  const RelationGraph g = knn_graph(centers, 2);
  CHECK(g == reference::knn_graph_brute_force(centers, 2));
  CHECK(g.neighbors[0] == (std::vector<int>{1, 2}));
  CHECK(g.neighbors[1] == (std::vector<int>{0, 2}));
  CHECK(g.neighbors[3] == (std::vector<int>{0, 1}));
}

TEST_CASE("graphs are deterministic and translation invariant") {
  Rng rng(127);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = rng.uniform_int(2, 100);
    const auto centers = grid_centers(rng, n);
    const RelationGraph knn_a = knn_graph(centers, 5);
    CHECK(knn_a == knn_graph(centers, 5));

    const Eigen::Vector3d t(std::floor(rng.uniform(-100.0, 100.0)),
                            std::floor(rng.uniform(-100.0, 100.0)),
                            std::floor(rng.uniform(-10.0, 10.0)));
    std::vector<Eigen::Vector3d> moved = centers;
    for (auto& c : moved) c += t;
    CHECK(knn_graph(moved, 5) == knn_a);
    CHECK(radius_graph(moved, 6.0) == radius_graph(centers, 6.0));
  }
}

TEST_CASE("degree stats of the empty graph") {
  const DegreeStats stats = graph_degree_stats(RelationGraph{});
  CHECK(stats.min_degree == 0);
  CHECK(stats.max_degree == 0);
  CHECK(stats.mean_degree == 0.0);
}

TEST_CASE("graph JSON round trip") {
  Rng rng(131);
  const RelationGraph g = knn_graph(random_centers(rng, 20), 3);
  const RelationGraph back = graph_from_json(graph_to_json(g));
  CHECK(back == g);
  CHECK(graph_to_json(RelationGraph{}) == "{\"num_nodes\":0,\"neighbors\":[]}");
}

TEST_CASE("edges lists every directed pair") {
  const RelationGraph g = radius_graph(line_points({0.0, 1.0, 2.0}), 1.5);
  const auto edges = g.edges();
  CHECK(edges.size() == 4);
  CHECK(edges[0] == std::make_pair(0, 1));
  CHECK(edges[1] == std::make_pair(1, 0));
  CHECK(edges[2] == std::make_pair(1, 2));
  CHECK(edges[3] == std::make_pair(2, 1));
}
