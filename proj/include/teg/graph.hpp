#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "teg/tensor.hpp"

namespace teg {

// Undirected node-labeled attributed graph. Edges are stored canonically
// (u < v, sorted ascending) and adjacency lists are sorted, so two graphs
// with the same content compare equal and serialize identically.
class Graph {
 public:
  Graph() = default;

  // Validates endpoints, labels and feature shape. Edge list may contain
  // duplicates and reversed copies; they collapse to one undirected edge.
  // Self loops are rejected.
  static Graph create(std::size_t num_nodes, std::size_t num_classes,
                      std::vector<std::pair<int, int>> edge_list,
                      Tensor features, std::vector<int> labels);

  std::size_t num_nodes() const { return labels_.size(); }
  std::size_t num_edges() const { return edges_.size(); }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t feature_dim() const { return features_.cols(); }

  const Tensor& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  int label(std::size_t v) const { return labels_.at(v); }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  const std::vector<int>& neighbors(std::size_t v) const {
    return adjacency_.at(v);
  }
  std::size_t degree(std::size_t v) const { return adjacency_.at(v).size(); }
  // All nodes carrying the given label, ascending.
  std::vector<int> nodes_with_label(int label) const;

  bool operator==(const Graph& other) const {
    return num_classes_ == other.num_classes_ && labels_ == other.labels_ &&
           edges_ == other.edges_ && features_ == other.features_;
  }

 private:
  std::size_t num_classes_ = 0;
  Tensor features_;             // num_nodes x feature_dim
  std::vector<int> labels_;     // values in [0, num_classes)
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::vector<int>> adjacency_;
};

// Text format round-trip. Layout:
//   nodes=<n> features=<F> classes=<C>
//   <label> <f_1> ... <f_F>     (n lines)
//   edges=<m>
//   <u> <v>                     (m lines)
// Floats are written with enough digits to reload bit-exactly.
Graph load_graph(const std::string& path);
void save_graph(const Graph& graph, const std::string& path);

// Disjoint class partition for episodic training/validation/testing.
struct ClassSplit {
  std::vector<int> base;   // meta-train classes
  std::vector<int> valid;  // validation classes
  std::vector<int> novel;  // held-out evaluation classes
};

// Shuffles class ids with the seed and deals them out as
// (base, valid, novel) counts. The counts must sum to at most the number of
// classes and base must be non-empty.
ClassSplit split_classes(const Graph& graph, std::size_t num_base,
                         std::size_t num_valid, std::size_t num_novel,
                         std::uint64_t seed);

// Labeled nodes available for episode sampling, per class. Classes with an
// empty node list are dropped at construction.
class LabelPool {
 public:
  LabelPool() = default;
  explicit LabelPool(std::map<int, std::vector<int>> pool);

  const std::vector<int>& classes() const { return classes_; }
  const std::vector<int>& nodes(int cls) const;
  std::size_t num_classes() const { return classes_.size(); }
  // True when an n-way episode with k support and m query nodes per class
  // can be sampled without replacement.
  bool feasible(std::size_t n_way, std::size_t k_shot,
                std::size_t m_query) const;

 private:
  std::map<int, std::vector<int>> pool_;
  std::vector<int> classes_;  // ascending, non-empty lists only
};

// Pool holding every node of the given classes.
LabelPool full_pool(const Graph& graph, const std::vector<int>& classes);

// Diversity-restricted pool over the base classes: keeps
// ceil(class_fraction * |base|) classes, and within each kept class
// ceil(label_availability * |nodes|) nodes. Selection is a seeded-shuffle
// prefix, so lowering either knob always yields a subset of the larger
// pool's nodes (monotone restriction). Fractions must lie in (0, 1].
LabelPool restrict_pool(const Graph& graph, const ClassSplit& split,
                        double class_fraction, double label_availability,
                        std::uint64_t seed);

// Stochastic block model generator for synthetic experiments. Nodes are
// dealt evenly into classes; same-class pairs connect with p_in, others
// with p_out. Features are a per-class Gaussian mean plus unit noise.
struct SbmConfig {
  std::size_t num_classes = 10;
  std::size_t nodes_per_class = 40;
  std::size_t feature_dim = 32;
  double p_in = 0.15;
  double p_out = 0.02;
  double class_mean_scale = 1.0;  // spacing of class means in feature space
  double noise_scale = 1.0;       // per-node feature noise
  std::uint64_t seed = 1;
};

Graph generate_sbm(const SbmConfig& config);

}  // namespace teg
