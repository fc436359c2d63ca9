#include "teg/episodes.hpp"

#include <cmath>
#include <stdexcept>

#include "teg/rng.hpp"

namespace teg {
namespace {

std::vector<int> position_labels(int groups, int per_group) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(groups) * static_cast<std::size_t>(per_group));
  for (int c = 0; c < groups; ++c) {
    for (int i = 0; i < per_group; ++i) out.push_back(c);
  }
  return out;
}

}  // namespace

std::vector<int> MetaTask::support_labels() const {
  return position_labels(n_way, k_shot);
}

std::vector<int> MetaTask::query_labels() const {
  return position_labels(n_way, m_query);
}

std::vector<int> MetaTask::all_nodes() const {
  std::vector<int> out = support_nodes;
  out.insert(out.end(), query_nodes.begin(), query_nodes.end());
  return out;
}

MetaTask sample_task(const LabelPool& pool, int n_way, int k_shot, int m_query,
                     std::uint64_t seed) {
  if (n_way < 1 || k_shot < 1 || m_query < 0) {
    throw std::invalid_argument("sample_task: need n_way >= 1, k_shot >= 1, m_query >= 0");
  }
  const std::size_t per_class =
      static_cast<std::size_t>(k_shot) + static_cast<std::size_t>(m_query);
  std::vector<int> eligible;
  for (int cls : pool.classes()) {
    if (pool.nodes(cls).size() >= per_class) eligible.push_back(cls);
  }
  if (eligible.size() < static_cast<std::size_t>(n_way)) {
    throw std::invalid_argument(
        "sample_task: only " + std::to_string(eligible.size()) +
        " classes can field " + std::to_string(per_class) + " nodes, need " +
        std::to_string(n_way));
  }

  Rng rng(seed);
  MetaTask task;
  task.n_way = n_way;
  task.k_shot = k_shot;
  task.m_query = m_query;
  for (int idx : rng.sample_without_replacement(eligible.size(),
                                                static_cast<std::size_t>(n_way))) {
    task.classes.push_back(eligible[static_cast<std::size_t>(idx)]);
  }

  std::vector<std::vector<int>> queries_per_class;
  for (int cls : task.classes) {
    const std::vector<int>& nodes = pool.nodes(cls);
    const std::vector<int> picks =
        rng.sample_without_replacement(nodes.size(), per_class);
    for (int i = 0; i < k_shot; ++i) {
      task.support_nodes.push_back(nodes[static_cast<std::size_t>(picks[i])]);
    }
    std::vector<int> queries;
    for (std::size_t i = static_cast<std::size_t>(k_shot); i < per_class; ++i) {
      queries.push_back(nodes[static_cast<std::size_t>(picks[i])]);
    }
    queries_per_class.push_back(std::move(queries));
  }
  for (const auto& queries : queries_per_class) {
    task.query_nodes.insert(task.query_nodes.end(), queries.begin(),
                            queries.end());
  }
  return task;
}

Tape::ValueId prototype_rows(Tape& tape, Tape::ValueId support, int n_way,
                             int k_shot) {
  const Tensor& s = tape.value(support);
  if (s.rank() != 2 ||
      s.rows() != static_cast<std::size_t>(n_way) * static_cast<std::size_t>(k_shot)) {
    throw std::invalid_argument("prototype_rows: support is " + s.shape_str() +
                                " for " + std::to_string(n_way) + "x" +
                                std::to_string(k_shot));
  }
  std::vector<int> segments(s.rows());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    segments[r] = static_cast<int>(r) / k_shot;
  }
  return tape.scale(
      tape.segment_sum(support, std::move(segments), static_cast<std::size_t>(n_way)),
      1.0 / static_cast<double>(k_shot));
}

Tape::ValueId proto_log_probs(Tape& tape, Tape::ValueId queries,
                              Tape::ValueId protos) {
  return tape.log_softmax(
      tape.scale(tape.pairwise_sqdist(queries, protos), -1.0));
}

Tape::ValueId proto_nll(Tape& tape, Tape::ValueId support,
                        Tape::ValueId queries, int n_way, int k_shot,
                        int m_query) {
  const Tensor& q = tape.value(queries);
  if (q.rank() != 2 ||
      q.rows() != static_cast<std::size_t>(n_way) * static_cast<std::size_t>(m_query)) {
    throw std::invalid_argument("proto_nll: queries are " + q.shape_str() +
                                " for " + std::to_string(n_way) + "x" +
                                std::to_string(m_query));
  }
  const auto protos = prototype_rows(tape, support, n_way, k_shot);
  return tape.nll(proto_log_probs(tape, queries, protos),
                  position_labels(n_way, m_query));
}

Tensor prototype_matrix(const Tensor& support, int n_way, int k_shot) {
  Tape tape;
  return tape.value(
      prototype_rows(tape, tape.constant(support), n_way, k_shot));
}

Tensor class_probabilities(const Tensor& queries, const Tensor& protos) {
  const Tensor log_probs = kernels::log_softmax(
      kernels::scale(kernels::pairwise_sqdist(queries, protos), -1.0));
  Tensor out = log_probs;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  return out;
}

std::vector<int> predict_classes(const Tensor& probabilities) {
  if (probabilities.rank() != 2 || probabilities.cols() == 0) {
    throw std::invalid_argument("predict_classes: need a (queries x classes) matrix");
  }
  std::vector<int> out(probabilities.rows());
  for (std::size_t r = 0; r < probabilities.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probabilities.cols(); ++c) {
      // Strict comparison keeps the lowest index on ties.
      if (probabilities.at(r, c) > probabilities.at(r, best)) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const std::vector<int>& predictions,
                const std::vector<int>& labels) {
  if (predictions.size() != labels.size() || predictions.empty()) {
    throw std::invalid_argument("accuracy: size mismatch or empty input");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

}  // namespace teg
