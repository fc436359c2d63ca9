#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "teg/params.hpp"
#include "teg/rng.hpp"
#include "teg/tape.hpp"
#include "teg/tensor.hpp"

namespace teg {

// Connectivity of the per-task graph over support and query nodes.
enum class TaskGraphMode {
  kComplete,   // every pair of task nodes exchanges messages
  kBipartite,  // support-support and support-query only; queries never
               // message each other, mirroring their isolation at test time
};

// Directed message edges over task nodes 0..num_nodes-1, where nodes
// 0..num_support-1 are support nodes and the rest are queries. Each
// undirected pair appears in both directions.
struct TaskGraph {
  int num_nodes = 0;
  int num_support = 0;
  TaskGraphMode mode = TaskGraphMode::kComplete;
  std::vector<int> edge_dst;
  std::vector<int> edge_src;
};

TaskGraph build_task_graph(int num_support, int num_query, TaskGraphMode mode);

struct EgnnConfig {
  int layers = 2;
  int coord_dim = 64;    // dimension of the equivariant channel
  int prop_dim = 16;     // dimension of the invariant channel
  int message_dim = 64;  // hidden width of the three update networks
};

// Equivariant task embedder. Each layer passes messages built from node
// properties and squared coordinate distances, then updates coordinates
// along difference vectors and properties from aggregated messages. The
// coordinate channel therefore transforms exactly like its input under any
// orthogonal map plus translation, while the property channel is invariant.
class TaskEmbedder {
 public:
  explicit TaskEmbedder(EgnnConfig config, std::string param_prefix = "egnn");

  void init_params(ParamStore& store, Rng& rng) const;

  struct Output {
    Tape::ValueId coords;
    Tape::ValueId props;
  };

  // Messages of one layer: an |edges| x message_dim matrix whose row e is
  // the message from edge_src[e] to edge_dst[e].
  Tape::ValueId messages(Tape& tape, Tape::ValueId coords, Tape::ValueId props,
                         const TaskGraph& graph, const ParamStore& store,
                         int layer) const;

  // One full layer: coordinate update along difference vectors scaled by
  // 1/(num_nodes - 1), property update from summed incoming messages.
  Output layer(Tape& tape, Tape::ValueId coords, Tape::ValueId props,
               const TaskGraph& graph, const ParamStore& store,
               int layer) const;

  // All configured layers; zero layers return the inputs untouched.
  Output embed(Tape& tape, Tape::ValueId coords, Tape::ValueId props,
               const TaskGraph& graph, const ParamStore& store) const;

  const EgnnConfig& config() const { return config_; }
  std::string param_name(int layer, const std::string& net,
                         const std::string& leaf) const;

 private:
  void check_inputs(const Tape& tape, Tape::ValueId coords,
                    Tape::ValueId props, const TaskGraph& graph) const;

  EgnnConfig config_;
  std::string prefix_;
};

}  // namespace teg
