#include "teg/structural.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "teg/rng.hpp"

namespace teg {
namespace {

// Inverted link index: for each real node, the anchors adjacent to it.
std::vector<std::vector<int>> node_to_anchors(std::size_t num_nodes,
                                              const AnchorSet& anchors) {
  std::vector<std::vector<int>> out(num_nodes);
  for (int a = 0; a < anchors.count; ++a) {
    for (int v : anchors.links[static_cast<std::size_t>(a)]) {
      out[static_cast<std::size_t>(v)].push_back(a);
    }
  }
  return out;
}

// BFS over the augmented vertex set {real nodes} + {anchors}, starting at
// one anchor. Writes hop distances for real nodes only.
std::vector<int> anchor_bfs(const Graph& graph, const AnchorSet& anchors,
                            const std::vector<std::vector<int>>& anchors_of,
                            int start_anchor) {
  const std::size_t n = graph.num_nodes();
  const std::size_t total = n + static_cast<std::size_t>(anchors.count);
  std::vector<int> dist(total, kUnreachable);
  std::deque<std::size_t> queue;

  const std::size_t start = n + static_cast<std::size_t>(start_anchor);
  dist[start] = 0;
  queue.push_back(start);
  while (!queue.empty()) {
    const std::size_t cur = queue.front();
    queue.pop_front();
    const int d = dist[cur];
    auto visit = [&](std::size_t next) {
      if (dist[next] == kUnreachable) {
        dist[next] = d + 1;
        queue.push_back(next);
      }
    };
    if (cur < n) {
      for (int w : graph.neighbors(cur)) visit(static_cast<std::size_t>(w));
      for (int a : anchors_of[cur]) visit(n + static_cast<std::size_t>(a));
    } else {
      for (int w : anchors.links[cur - n]) visit(static_cast<std::size_t>(w));
    }
  }
  dist.resize(n);
  return dist;
}

}  // namespace

AnchorSet attach_anchors(const Graph& graph, int count, std::uint64_t seed,
                         AnchorScheme scheme) {
  if (count < 1) {
    throw std::invalid_argument("attach_anchors: anchor count must be >= 1");
  }
  const std::size_t n = graph.num_nodes();
  if (n == 0) throw std::invalid_argument("attach_anchors: empty graph");

  AnchorSet anchors;
  anchors.count = count;
  anchors.scheme = scheme;
  anchors.links.resize(static_cast<std::size_t>(count));
  for (int a = 0; a < count; ++a) {
    // Anchor indices are 1-based in the attachment probability 1 / 2^i.
    const double p = std::ldexp(1.0, -(a + 1));
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(a + 1)));
    std::vector<int>& links = anchors.links[static_cast<std::size_t>(a)];
    if (scheme == AnchorScheme::kExpectedCount) {
      const auto rounded =
          static_cast<std::size_t>(std::llround(p * static_cast<double>(n)));
      const std::size_t target = std::min(n, std::max<std::size_t>(1, rounded));
      links = rng.sample_without_replacement(n, target);
    } else {
      for (std::size_t v = 0; v < n; ++v) {
        if (rng.uniform() < p) links.push_back(static_cast<int>(v));
      }
    }
    std::sort(links.begin(), links.end());
  }
  return anchors;
}

std::vector<int> bfs_from_node(const Graph& graph, int source) {
  const std::size_t n = graph.num_nodes();
  if (source < 0 || static_cast<std::size_t>(source) >= n) {
    throw std::invalid_argument("bfs_from_node: source " +
                                std::to_string(source) + " out of range");
  }
  std::vector<int> dist(n, kUnreachable);
  std::deque<int> queue;
  dist[static_cast<std::size_t>(source)] = 0;
  queue.push_back(source);
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    for (int w : graph.neighbors(static_cast<std::size_t>(cur))) {
      if (dist[static_cast<std::size_t>(w)] == kUnreachable) {
        dist[static_cast<std::size_t>(w)] = dist[static_cast<std::size_t>(cur)] + 1;
        queue.push_back(w);
      }
    }
  }
  return dist;
}

std::vector<int> bfs_anchor_distances(const Graph& graph,
                                      const AnchorSet& anchors,
                                      int anchor_index) {
  if (anchor_index < 0 || anchor_index >= anchors.count) {
    throw std::invalid_argument("bfs_anchor_distances: anchor index " +
                                std::to_string(anchor_index) + " out of range");
  }
  const auto anchors_of = node_to_anchors(graph.num_nodes(), anchors);
  return anchor_bfs(graph, anchors, anchors_of, anchor_index);
}

Tensor build_structural_features(const Graph& graph, const AnchorSet& anchors) {
  const std::size_t n = graph.num_nodes();
  const auto k = static_cast<std::size_t>(anchors.count);
  const auto anchors_of = node_to_anchors(n, anchors);
  Tensor features({n, k});
  for (std::size_t a = 0; a < k; ++a) {
    const std::vector<int> dist =
        anchor_bfs(graph, anchors, anchors_of, static_cast<int>(a));
    for (std::size_t v = 0; v < n; ++v) {
      if (dist[v] != kUnreachable) {
        features.at(v, a) = 1.0 / (static_cast<double>(dist[v]) + 1.0);
      }
    }
  }
  return features;
}

double zero_ratio(const Tensor& features) {
  if (features.numel() == 0) {
    throw std::invalid_argument("zero_ratio: empty tensor");
  }
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < features.numel(); ++i) {
    if (features[i] == 0.0) ++zeros;
  }
  return static_cast<double>(zeros) / static_cast<double>(features.numel());
}

}  // namespace teg
