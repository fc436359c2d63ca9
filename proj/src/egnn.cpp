#include "teg/egnn.hpp"

#include <stdexcept>

namespace teg {

TaskGraph build_task_graph(int num_support, int num_query, TaskGraphMode mode) {
  if (num_support < 1 || num_query < 0) {
    throw std::invalid_argument("build_task_graph: needs support nodes");
  }
  TaskGraph g;
  g.num_support = num_support;
  g.num_nodes = num_support + num_query;
  g.mode = mode;
  for (int i = 0; i < g.num_nodes; ++i) {
    for (int j = 0; j < g.num_nodes; ++j) {
      if (i == j) continue;
      if (mode == TaskGraphMode::kBipartite && i >= num_support &&
          j >= num_support) {
        continue;  // queries stay mutually unconnected
      }
      g.edge_dst.push_back(i);
      g.edge_src.push_back(j);
    }
  }
  return g;
}

TaskEmbedder::TaskEmbedder(EgnnConfig config, std::string param_prefix)
    : config_(config), prefix_(std::move(param_prefix)) {
  if (config_.layers < 0 || config_.coord_dim < 1 || config_.prop_dim < 1 ||
      config_.message_dim < 1) {
    throw std::invalid_argument("TaskEmbedder: invalid configuration");
  }
}

std::string TaskEmbedder::param_name(int layer, const std::string& net,
                                     const std::string& leaf) const {
  return prefix_ + ".l" + std::to_string(layer) + "." + net + "." + leaf;
}

void TaskEmbedder::init_params(ParamStore& store, Rng& rng) const {
  const auto ds = static_cast<std::size_t>(config_.prop_dim);
  const auto dm = static_cast<std::size_t>(config_.message_dim);
  for (int l = 0; l < config_.layers; ++l) {
    auto dense = [&](const std::string& net, const std::string& idx,
                     std::size_t in, std::size_t out) {
      store.create(param_name(l, net, "w" + idx), {in, out},
                   Init::kGlorotUniform, rng);
      store.create(param_name(l, net, "b" + idx), {out}, Init::kZeros, rng);
    };
    // Message net: properties of both endpoints plus the squared distance.
    dense("phi_m", "0", 2 * ds + 1, dm);
    dense("phi_m", "1", dm, dm);
    // Coordinate weight net: message to scalar, one hidden nonlinearity.
    dense("phi_l", "0", dm, dm);
    dense("phi_l", "1", dm, dm);
    dense("phi_l", "2", dm, 1);
    // Property net: node properties joined with aggregated messages.
    dense("phi_s", "0", ds + dm, dm);
    dense("phi_s", "1", dm, ds);
  }
}

void TaskEmbedder::check_inputs(const Tape& tape, Tape::ValueId coords,
                                Tape::ValueId props,
                                const TaskGraph& graph) const {
  const Tensor& c = tape.value(coords);
  const Tensor& p = tape.value(props);
  const auto n = static_cast<std::size_t>(graph.num_nodes);
  if (c.rank() != 2 || c.rows() != n ||
      c.cols() != static_cast<std::size_t>(config_.coord_dim)) {
    throw std::invalid_argument("TaskEmbedder: coords are " + c.shape_str() +
                                ", expected (" + std::to_string(n) + "x" +
                                std::to_string(config_.coord_dim) + ")");
  }
  if (p.rank() != 2 || p.rows() != n ||
      p.cols() != static_cast<std::size_t>(config_.prop_dim)) {
    throw std::invalid_argument("TaskEmbedder: props are " + p.shape_str() +
                                ", expected (" + std::to_string(n) + "x" +
                                std::to_string(config_.prop_dim) + ")");
  }
}

Tape::ValueId TaskEmbedder::messages(Tape& tape, Tape::ValueId coords,
                                     Tape::ValueId props,
                                     const TaskGraph& graph,
                                     const ParamStore& store,
                                     int layer) const {
  check_inputs(tape, coords, props, graph);
  auto linear = [&](Tape::ValueId x, const std::string& net,
                    const std::string& idx) {
    return tape.add_row(
        tape.matmul(x, use_param(tape, store, param_name(layer, net, "w" + idx))),
        use_param(tape, store, param_name(layer, net, "b" + idx)));
  };

  const auto props_dst = tape.gather_rows(props, graph.edge_dst);
  const auto props_src = tape.gather_rows(props, graph.edge_src);
  const auto diff = tape.subtract(tape.gather_rows(coords, graph.edge_dst),
                                  tape.gather_rows(coords, graph.edge_src));
  const auto sqdist = tape.row_sums(tape.square(diff));
  const auto input =
      tape.concat_cols(tape.concat_cols(props_dst, props_src), sqdist);
  return tape.silu(linear(tape.silu(linear(input, "phi_m", "0")), "phi_m", "1"));
}

TaskEmbedder::Output TaskEmbedder::layer(Tape& tape, Tape::ValueId coords,
                                         Tape::ValueId props,
                                         const TaskGraph& graph,
                                         const ParamStore& store,
                                         int layer) const {
  check_inputs(tape, coords, props, graph);
  const auto n = static_cast<std::size_t>(graph.num_nodes);
  auto linear = [&](Tape::ValueId x, const std::string& net,
                    const std::string& idx) {
    return tape.add_row(
        tape.matmul(x, use_param(tape, store, param_name(layer, net, "w" + idx))),
        use_param(tape, store, param_name(layer, net, "b" + idx)));
  };

  Tape::ValueId new_coords = coords;
  Tape::ValueId incoming;
  if (graph.edge_dst.empty()) {
    // Single-node task: no messages arrive; coordinates stay put and the
    // property update sees a zero aggregate.
    incoming = tape.constant(
        Tensor({n, static_cast<std::size_t>(config_.message_dim)}));
  } else {
    const auto msgs = messages(tape, coords, props, graph, store, layer);
    const auto diff = tape.subtract(tape.gather_rows(coords, graph.edge_dst),
                                    tape.gather_rows(coords, graph.edge_src));

    // Coordinate update: difference vectors weighted by a scalar net of the
    // message, aggregated per destination, normalized by num_nodes - 1.
    const auto weight =
        linear(tape.silu(linear(msgs, "phi_l", "0")), "phi_l", "1");
    const auto edge_scale = linear(weight, "phi_l", "2");
    const auto moved = tape.segment_sum(tape.row_scale(diff, edge_scale),
                                        graph.edge_dst, n);
    new_coords = tape.add(
        coords, tape.scale(moved, 1.0 / static_cast<double>(graph.num_nodes - 1)));

    incoming = tape.segment_sum(msgs, graph.edge_dst, n);
  }

  const auto new_props = linear(
      tape.silu(linear(tape.concat_cols(props, incoming), "phi_s", "0")),
      "phi_s", "1");
  return {new_coords, new_props};
}

TaskEmbedder::Output TaskEmbedder::embed(Tape& tape, Tape::ValueId coords,
                                         Tape::ValueId props,
                                         const TaskGraph& graph,
                                         const ParamStore& store) const {
  check_inputs(tape, coords, props, graph);
  Output out{coords, props};
  for (int l = 0; l < config_.layers; ++l) {
    out = layer(tape, out.coords, out.props, graph, store, l);
  }
  return out;
}

}  // namespace teg
