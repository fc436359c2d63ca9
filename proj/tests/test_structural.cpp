#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "teg/graph.hpp"
#include "teg/rng.hpp"
#include "teg/structural.hpp"

using namespace teg;

namespace {

Graph make_graph(std::size_t n, const std::vector<std::pair<int, int>>& edges) {
  Tensor x({n, 1});
  return Graph::create(n, 1, edges, x, std::vector<int>(n, 0));
}

Graph random_graph(std::size_t n, double density, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<int, int>> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      if (rng.uniform() < density) {
        edges.emplace_back(static_cast<int>(u), static_cast<int>(v));
      }
    }
  }
  return make_graph(n, edges);
}

constexpr int kInf = 1 << 28;

// All-pairs shortest hop counts on an explicit adjacency list; the
// independent oracle for every BFS result below.
std::vector<std::vector<int>> floyd_warshall(
    std::size_t n, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<int>> d(n, std::vector<int>(n, kInf));
  for (std::size_t v = 0; v < n; ++v) d[v][v] = 0;
  for (const auto& [u, v] : edges) {
    d[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] = 1;
    d[static_cast<std::size_t>(v)][static_cast<std::size_t>(u)] = 1;
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (d[i][k] + d[k][j] < d[i][j]) d[i][j] = d[i][k] + d[k][j];
      }
    }
  }
  return d;
}

}  // namespace

TEST_CASE("bfs matches floyd-warshall on random graphs") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const std::size_t n = 20 + seed * 7;
    const double density = seed % 2 ? 0.15 : 0.04;  // sparse cases disconnect
    const Graph g = random_graph(n, density, 31 + seed);
    const auto oracle = floyd_warshall(n, g.edges());
    for (std::size_t s = 0; s < n; ++s) {
      const std::vector<int> dist = bfs_from_node(g, static_cast<int>(s));
      for (std::size_t v = 0; v < n; ++v) {
        const int expect = oracle[s][v] >= kInf ? kUnreachable : oracle[s][v];
        CHECK(dist[v] == expect);
      }
    }
  }
}

TEST_CASE("bfs validates the source node") {
  const Graph g = make_graph(3, {{0, 1}});
  CHECK_THROWS_AS(bfs_from_node(g, -1), std::invalid_argument);
  CHECK_THROWS_AS(bfs_from_node(g, 3), std::invalid_argument);
}

TEST_CASE("anchor distances match floyd-warshall on the augmented graph") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const std::size_t n = 30;
    const Graph g = random_graph(n, 0.06, 41 + seed);
    const AnchorSet anchors = attach_anchors(g, 5, 77 + seed);

    // Augmented oracle: anchors become explicit vertices n..n+4 and their
    // links become explicit edges.
    std::vector<std::pair<int, int>> aug_edges = g.edges();
    for (int a = 0; a < anchors.count; ++a) {
      for (int v : anchors.links[static_cast<std::size_t>(a)]) {
        aug_edges.emplace_back(v, static_cast<int>(n) + a);
      }
    }
    const auto oracle = floyd_warshall(n + 5, aug_edges);
    for (int a = 0; a < anchors.count; ++a) {
      const std::vector<int> dist = bfs_anchor_distances(g, anchors, a);
      REQUIRE(dist.size() == n);
      for (std::size_t v = 0; v < n; ++v) {
        const int o = oracle[n + static_cast<std::size_t>(a)][v];
        CHECK(dist[v] == (o >= kInf ? kUnreachable : o));
      }
    }
  }
}

TEST_CASE("anchors can act as shortcuts between components") {
  // Two disconnected triangles; one anchor linked into both.
  const Graph g = make_graph(6, {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}});
  AnchorSet anchors;
  anchors.count = 1;
  anchors.links = {{0, 3}};

  const std::vector<int> dist = bfs_anchor_distances(g, anchors, 0);
  CHECK(dist == std::vector<int>{1, 2, 2, 1, 2, 2});

  const Tensor features = build_structural_features(g, anchors);
  CHECK(features.at(0, 0) == 0.5);
  CHECK(features.at(1, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(features.at(3, 0) == 0.5);
  CHECK(zero_ratio(features) == 0.0);
}

TEST_CASE("paths may pass through other anchors") {
  // 0 and 1 share no edge; anchor 0 links {0}, anchor 1 links {0, 1}.
  // Distance from anchor 0 to node 1 goes anchor0 - 0 - anchor1 - 1 = 3.
  const Graph g = make_graph(2, {});
  AnchorSet anchors;
  anchors.count = 2;
  anchors.links = {{0}, {0, 1}};
  const std::vector<int> dist = bfs_anchor_distances(g, anchors, 0);
  CHECK(dist == std::vector<int>{1, 3});
}

TEST_CASE("structural features follow the inverse distance law") {
  // Path 0-1-2-3 with a single anchor at node 0.
  const Graph g = make_graph(4, {{0, 1}, {1, 2}, {2, 3}});
  AnchorSet anchors;
  anchors.count = 1;
  anchors.links = {{0}};
  const Tensor f = build_structural_features(g, anchors);
  REQUIRE(f.shape() == std::vector<std::size_t>{4, 1});
  CHECK(f.at(0, 0) == doctest::Approx(1.0 / 2.0));
  CHECK(f.at(1, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(f.at(2, 0) == doctest::Approx(1.0 / 4.0));
  CHECK(f.at(3, 0) == doctest::Approx(1.0 / 5.0));

  // An unattached anchor contributes an all-zero column.
  AnchorSet with_empty;
  with_empty.count = 2;
  with_empty.links = {{0}, {}};
  const Tensor f2 = build_structural_features(g, with_empty);
  for (std::size_t v = 0; v < 4; ++v) CHECK(f2.at(v, 1) == 0.0);
  CHECK(zero_ratio(f2) == 0.5);
}

TEST_CASE("expected-count anchors have the prescribed degrees") {
  const Graph g = random_graph(1000, 0.004, 51);
  const AnchorSet anchors = attach_anchors(g, 16, 5, AnchorScheme::kExpectedCount);
  REQUIRE(anchors.count == 16);
  for (int a = 0; a < 16; ++a) {
    const auto& links = anchors.links[static_cast<std::size_t>(a)];
    const double p = std::ldexp(1.0, -(a + 1));
    const std::size_t expect =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(p * 1000.0)));
    CHECK(links.size() == expect);
    CHECK(std::is_sorted(links.begin(), links.end()));
    CHECK(std::adjacent_find(links.begin(), links.end()) == links.end());
    if (!links.empty()) {
      CHECK(links.front() >= 0);
      CHECK(links.back() < 1000);
    }
  }
  CHECK(anchors.links[0].size() == 500);
  CHECK(anchors.links[8].size() == 2);    // round(1000 / 512)
  CHECK(anchors.links[15].size() == 1);   // floor would be 0; kept at 1

  const AnchorSet again = attach_anchors(g, 16, 5, AnchorScheme::kExpectedCount);
  CHECK(again.links == anchors.links);
  const AnchorSet other = attach_anchors(g, 16, 6, AnchorScheme::kExpectedCount);
  CHECK(other.links != anchors.links);
}

TEST_CASE("bernoulli anchors follow their attachment distribution") {
  const Graph g = random_graph(2000, 0.002, 52);

  // Anchor 4 links each node with probability 1/16: the observed degree
  // stays within 4 sigma of the binomial expectation.
  std::size_t seen = 0;
  const AnchorSet anchors = attach_anchors(g, 6, 7, AnchorScheme::kBernoulli);
  seen = anchors.links[3].size();
  const double mean = 2000.0 / 16.0;
  const double sd = std::sqrt(2000.0 * (1.0 / 16.0) * (15.0 / 16.0));
  CHECK(std::abs(static_cast<double>(seen) - mean) < 4.0 * sd);

  // A depth-16 anchor on 1000 nodes is unattached with probability
  // (1 - 2^-16)^1000, about 0.985. Over 200 seeds the frequency of empty
  // link lists must reproduce that.
  const Graph small = random_graph(1000, 0.004, 53);
  std::size_t empty = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const AnchorSet a = attach_anchors(small, 16, seed, AnchorScheme::kBernoulli);
    if (a.links[15].empty()) ++empty;
  }
  CHECK(empty >= 190);  // expectation 197, 4 sigma is about 7
  CHECK(empty <= 200);
}

TEST_CASE("anchor attachment validates its arguments") {
  const Graph g = make_graph(3, {{0, 1}});
  CHECK_THROWS_AS(attach_anchors(g, 0, 1), std::invalid_argument);
  AnchorSet anchors = attach_anchors(g, 2, 1);
  CHECK_THROWS_AS(bfs_anchor_distances(g, anchors, 2), std::invalid_argument);
  CHECK_THROWS_AS(bfs_anchor_distances(g, anchors, -1), std::invalid_argument);
  CHECK_THROWS_AS(zero_ratio(Tensor({0, 3})), std::invalid_argument);
}
