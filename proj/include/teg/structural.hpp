#pragma once

#include <cstdint>
#include <vector>

#include "teg/graph.hpp"
#include "teg/tensor.hpp"

namespace teg {

inline constexpr int kUnreachable = -1;

// How anchor-to-node links are drawn. Anchor i (1-based) targets an
// expected degree of |V| / 2^i either way.
enum class AnchorScheme {
  // Exactly max(1, round(|V| / 2^i)) distinct nodes per anchor. Guarantees
  // every anchor touches the graph, so dense structural coverage survives
  // even for deep anchors on small graphs.
  kExpectedCount,
  // Each node linked independently with probability 1 / 2^i. Matches the
  // idealized sampling story but leaves deep anchors unattached with high
  // probability, producing all-zero feature columns.
  kBernoulli,
};

// Virtual anchor nodes attached on top of a graph. Anchors never become
// part of the graph itself; they exist only as extra BFS sources. links[i]
// holds the sorted real nodes adjacent to anchor i.
struct AnchorSet {
  int count = 0;
  AnchorScheme scheme = AnchorScheme::kExpectedCount;
  std::vector<std::vector<int>> links;
};

AnchorSet attach_anchors(const Graph& graph, int count, std::uint64_t seed,
                         AnchorScheme scheme = AnchorScheme::kExpectedCount);

// Hop distances from a real source node in the plain graph; kUnreachable
// where no path exists.
std::vector<int> bfs_from_node(const Graph& graph, int source);

// Hop distances from anchor `anchor_index` to every real node, through the
// augmented graph: paths may pass through real nodes and other anchors
// alike. Anchor-to-linked-node distance is 1.
std::vector<int> bfs_anchor_distances(const Graph& graph,
                                      const AnchorSet& anchors,
                                      int anchor_index);

// |V| x k matrix with entry (v, i) = 1 / (dist(v, anchor_i) + 1), zero when
// the anchor cannot reach v. Values lie in [0, 1/2].
Tensor build_structural_features(const Graph& graph, const AnchorSet& anchors);

// Fraction of exactly-zero entries; the coverage diagnostic for structural
// features.
double zero_ratio(const Tensor& features);

}  // namespace teg
