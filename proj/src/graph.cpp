#include "teg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "teg/rng.hpp"

namespace teg {
namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t line,
                             const std::string& msg) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + msg);
}

// ceil(fraction * count) with a guard against products that land a hair
// above an integer, e.g. 0.7 * 10 evaluating to 7.000000000000001.
std::size_t scaled_ceil(double fraction, std::size_t count) {
  const double x = fraction * static_cast<double>(count) - 1e-9;
  const double c = std::ceil(x);
  return c <= 0.0 ? 0 : static_cast<std::size_t>(c);
}

}  // namespace

Graph Graph::create(std::size_t num_nodes, std::size_t num_classes,
                    std::vector<std::pair<int, int>> edge_list, Tensor features,
                    std::vector<int> labels) {
  if (features.rank() != 2 || features.rows() != num_nodes) {
    fail("Graph: features are " + features.shape_str() + " for " +
         std::to_string(num_nodes) + " nodes");
  }
  if (labels.size() != num_nodes) {
    fail("Graph: " + std::to_string(labels.size()) + " labels for " +
         std::to_string(num_nodes) + " nodes");
  }
  if (num_classes == 0 && num_nodes > 0) fail("Graph: zero classes");
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (labels[v] < 0 || static_cast<std::size_t>(labels[v]) >= num_classes) {
      fail("Graph: label " + std::to_string(labels[v]) + " of node " +
           std::to_string(v) + " outside [0, " + std::to_string(num_classes) +
           ")");
    }
  }

  Graph g;
  g.num_classes_ = num_classes;
  g.features_ = std::move(features);
  g.labels_ = std::move(labels);

  for (auto& [u, v] : edge_list) {
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= num_nodes ||
        static_cast<std::size_t>(v) >= num_nodes) {
      fail("Graph: edge (" + std::to_string(u) + ", " + std::to_string(v) +
           ") has an endpoint outside [0, " + std::to_string(num_nodes) + ")");
    }
    if (u == v) fail("Graph: self loop at node " + std::to_string(u));
    if (u > v) std::swap(u, v);
  }
  std::sort(edge_list.begin(), edge_list.end());
  edge_list.erase(std::unique(edge_list.begin(), edge_list.end()),
                  edge_list.end());
  g.edges_ = std::move(edge_list);

  g.adjacency_.assign(num_nodes, {});
  for (const auto& [u, v] : g.edges_) {
    g.adjacency_[static_cast<std::size_t>(u)].push_back(v);
    g.adjacency_[static_cast<std::size_t>(v)].push_back(u);
  }
  for (auto& list : g.adjacency_) std::sort(list.begin(), list.end());
  return g;
}

std::vector<int> Graph::nodes_with_label(int label) const {
  std::vector<int> out;
  for (std::size_t v = 0; v < labels_.size(); ++v) {
    if (labels_[v] == label) out.push_back(static_cast<int>(v));
  }
  return out;
}

Graph load_graph(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_graph: cannot open '" + path + "'");

  std::size_t line_no = 0;
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(is, line)) {
      parse_fail(path, line_no + 1, "unexpected end of file");
    }
    ++line_no;
  };

  next_line();
  std::size_t n = 0, dim = 0, classes = 0;
  if (std::sscanf(line.c_str(), "nodes=%zu features=%zu classes=%zu", &n, &dim,
                  &classes) != 3) {
    parse_fail(path, line_no, "malformed header '" + line + "'");
  }

  Tensor features({n, dim});
  std::vector<int> labels(n);
  for (std::size_t v = 0; v < n; ++v) {
    next_line();
    std::istringstream ls(line);
    long long label = 0;
    if (!(ls >> label)) parse_fail(path, line_no, "missing node label");
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      parse_fail(path, line_no,
                 "label " + std::to_string(label) + " outside [0, " +
                     std::to_string(classes) + ")");
    }
    labels[v] = static_cast<int>(label);
    for (std::size_t f = 0; f < dim; ++f) {
      if (!(ls >> features.at(v, f))) {
        parse_fail(path, line_no, "expected " + std::to_string(dim) +
                                      " feature values");
      }
    }
    std::string extra;
    if (ls >> extra) {
      parse_fail(path, line_no, "trailing token '" + extra + "'");
    }
  }

  next_line();
  std::size_t m = 0;
  if (std::sscanf(line.c_str(), "edges=%zu", &m) != 1) {
    parse_fail(path, line_no, "malformed edge header '" + line + "'");
  }
  std::vector<std::pair<int, int>> edges;
  edges.reserve(m);
  for (std::size_t e = 0; e < m; ++e) {
    next_line();
    std::istringstream ls(line);
    long long u = 0, v = 0;
    std::string extra;
    if (!(ls >> u >> v) || (ls >> extra)) {
      parse_fail(path, line_no, "malformed edge '" + line + "'");
    }
    edges.emplace_back(static_cast<int>(u), static_cast<int>(v));
  }

  try {
    return Graph::create(n, classes, std::move(edges), std::move(features),
                         std::move(labels));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void save_graph(const Graph& graph, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_graph: cannot open '" + path + "'");
  os << "nodes=" << graph.num_nodes() << " features=" << graph.feature_dim()
     << " classes=" << graph.num_classes() << "\n";
  char buf[32];
  for (std::size_t v = 0; v < graph.num_nodes(); ++v) {
    os << graph.label(v);
    for (std::size_t f = 0; f < graph.feature_dim(); ++f) {
      // 17 significant digits reload to the identical double.
      std::snprintf(buf, sizeof(buf), "%.17g", graph.features().at(v, f));
      os << ' ' << buf;
    }
    os << "\n";
  }
  os << "edges=" << graph.num_edges() << "\n";
  for (const auto& [u, v] : graph.edges()) os << u << ' ' << v << "\n";
  if (!os) throw std::runtime_error("save_graph: write to '" + path + "' failed");
}

ClassSplit split_classes(const Graph& graph, std::size_t num_base,
                         std::size_t num_valid, std::size_t num_novel,
                         std::uint64_t seed) {
  const std::size_t total = graph.num_classes();
  if (num_base == 0) fail("split_classes: base split must be non-empty");
  if (num_base + num_valid + num_novel > total) {
    fail("split_classes: requested " +
         std::to_string(num_base + num_valid + num_novel) + " classes of " +
         std::to_string(total));
  }
  std::vector<int> order(total);
  for (std::size_t c = 0; c < total; ++c) order[c] = static_cast<int>(c);
  Rng rng(seed);
  rng.shuffle(order);

  ClassSplit split;
  auto take = [&](std::size_t offset, std::size_t count) {
    std::vector<int> out(order.begin() + static_cast<std::ptrdiff_t>(offset),
                         order.begin() + static_cast<std::ptrdiff_t>(offset + count));
    std::sort(out.begin(), out.end());
    return out;
  };
  split.base = take(0, num_base);
  split.valid = take(num_base, num_valid);
  split.novel = take(num_base + num_valid, num_novel);
  return split;
}

LabelPool::LabelPool(std::map<int, std::vector<int>> pool) : pool_(std::move(pool)) {
  for (auto it = pool_.begin(); it != pool_.end();) {
    if (it->second.empty()) {
      it = pool_.erase(it);
    } else {
      classes_.push_back(it->first);
      ++it;
    }
  }
}

const std::vector<int>& LabelPool::nodes(int cls) const {
  auto it = pool_.find(cls);
  if (it == pool_.end()) {
    fail("LabelPool: class " + std::to_string(cls) + " not in pool");
  }
  return it->second;
}

bool LabelPool::feasible(std::size_t n_way, std::size_t k_shot,
                         std::size_t m_query) const {
  std::size_t eligible = 0;
  for (const auto& [cls, nodes] : pool_) {
    if (nodes.size() >= k_shot + m_query) ++eligible;
  }
  return n_way >= 1 && eligible >= n_way;
}

LabelPool full_pool(const Graph& graph, const std::vector<int>& classes) {
  std::map<int, std::vector<int>> pool;
  for (int cls : classes) pool[cls] = graph.nodes_with_label(cls);
  return LabelPool(std::move(pool));
}

LabelPool restrict_pool(const Graph& graph, const ClassSplit& split,
                        double class_fraction, double label_availability,
                        std::uint64_t seed) {
  if (class_fraction <= 0.0 || class_fraction > 1.0 ||
      label_availability <= 0.0 || label_availability > 1.0) {
    fail("restrict_pool: fractions must lie in (0, 1]");
  }
  // Seeded-shuffle prefixes make the restriction monotone: a smaller
  // fraction keeps a prefix of the same permutation, hence a subset.
  std::vector<int> classes = split.base;
  std::sort(classes.begin(), classes.end());
  Rng class_rng(mix_seed(seed, 0xc1a55));
  class_rng.shuffle(classes);
  classes.resize(scaled_ceil(class_fraction, classes.size()));

  std::map<int, std::vector<int>> pool;
  for (int cls : classes) {
    std::vector<int> nodes = graph.nodes_with_label(cls);
    Rng node_rng(mix_seed(seed, 0x10de5, static_cast<std::uint64_t>(cls)));
    node_rng.shuffle(nodes);
    nodes.resize(scaled_ceil(label_availability, nodes.size()));
    std::sort(nodes.begin(), nodes.end());
    pool[cls] = std::move(nodes);
  }
  return LabelPool(std::move(pool));
}

Graph generate_sbm(const SbmConfig& config) {
  if (config.num_classes == 0 || config.nodes_per_class == 0) {
    fail("generate_sbm: empty block structure");
  }
  if (config.p_in < 0.0 || config.p_in > 1.0 || config.p_out < 0.0 ||
      config.p_out > 1.0) {
    fail("generate_sbm: edge probabilities must lie in [0, 1]");
  }
  const std::size_t n = config.num_classes * config.nodes_per_class;
  Rng rng(config.seed);

  Tensor means({config.num_classes, config.feature_dim});
  for (std::size_t i = 0; i < means.numel(); ++i) {
    means[i] = config.class_mean_scale * rng.normal();
  }

  Tensor features({n, config.feature_dim});
  std::vector<int> labels(n);
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t cls = v / config.nodes_per_class;
    labels[v] = static_cast<int>(cls);
    for (std::size_t f = 0; f < config.feature_dim; ++f) {
      features.at(v, f) = means.at(cls, f) + config.noise_scale * rng.normal();
    }
  }

  std::vector<std::pair<int, int>> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      const double p = labels[u] == labels[v] ? config.p_in : config.p_out;
      if (rng.uniform() < p) {
        edges.emplace_back(static_cast<int>(u), static_cast<int>(v));
      }
    }
  }
  return Graph::create(n, config.num_classes, std::move(edges),
                       std::move(features), std::move(labels));
}

}  // namespace teg
