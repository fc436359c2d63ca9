#pragma once

#include <cstdint>
#include <vector>

#include "teg/graph.hpp"
#include "teg/tape.hpp"
#include "teg/tensor.hpp"

namespace teg {

// One N-way K-shot episode. Node lists are class-major: the first k_shot
// support entries belong to episode class 0, and so on; likewise m_query
// query entries per class. Episode labels are therefore position / k_shot
// (or / m_query), while `classes` remembers the original graph labels.
struct MetaTask {
  int n_way = 0;
  int k_shot = 0;
  int m_query = 0;
  std::vector<int> classes;        // sampled graph classes, draw order
  std::vector<int> support_nodes;  // n_way * k_shot graph node ids
  std::vector<int> query_nodes;    // n_way * m_query graph node ids

  int num_support() const { return n_way * k_shot; }
  int num_query() const { return n_way * m_query; }
  int num_nodes() const { return num_support() + num_query(); }
  std::vector<int> support_labels() const;
  std::vector<int> query_labels() const;
  // Support then query node ids; row order of every task tensor.
  std::vector<int> all_nodes() const;
};

// Samples an episode without replacement: n_way distinct classes drawn
// uniformly from the pool's eligible classes (those with at least
// k_shot + m_query nodes), then k_shot + m_query distinct nodes per class.
// Throws std::invalid_argument when the pool cannot field the episode.
MetaTask sample_task(const LabelPool& pool, int n_way, int k_shot, int m_query,
                     std::uint64_t seed);

// Class prototypes: mean of the k_shot support rows of each class.
// `support` is class-major (n_way * k_shot) x d; result is n_way x d.
Tape::ValueId prototype_rows(Tape& tape, Tape::ValueId support, int n_way,
                             int k_shot);

// Log class probabilities from squared Euclidean distances to prototypes:
// row q is log softmax over -||query_q - proto_c||^2.
Tape::ValueId proto_log_probs(Tape& tape, Tape::ValueId queries,
                              Tape::ValueId protos);

// Summed (not averaged) negative log likelihood of the correct classes for
// all n_way * m_query queries, support and queries class-major.
Tape::ValueId proto_nll(Tape& tape, Tape::ValueId support,
                        Tape::ValueId queries, int n_way, int k_shot,
                        int m_query);

// Inference-path counterparts of the tape ops above.
Tensor prototype_matrix(const Tensor& support, int n_way, int k_shot);
// Rows are proper distributions (non-negative, summing to one).
Tensor class_probabilities(const Tensor& queries, const Tensor& protos);
// Row-wise argmax; ties resolve to the lowest class index.
std::vector<int> predict_classes(const Tensor& probabilities);
double accuracy(const std::vector<int>& predictions,
                const std::vector<int>& labels);

}  // namespace teg
