#include "teg/gcn.hpp"

#include <cmath>
#include <stdexcept>

namespace teg {

NormalizedAdjacency normalize_adjacency(const Graph& graph) {
  const std::size_t n = graph.num_nodes();
  NormalizedAdjacency out;
  CsrMatrix& m = out.matrix;
  m.num_rows = n;
  m.num_cols = n;
  m.row_ptr.reserve(n + 1);
  m.row_ptr.push_back(0);

  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t v = 0; v < n; ++v) {
    inv_sqrt_deg[v] = 1.0 / std::sqrt(static_cast<double>(graph.degree(v)) + 1.0);
  }

  for (std::size_t v = 0; v < n; ++v) {
    // Neighbor list is sorted; splice the self loop in at its position.
    bool self_done = false;
    auto push = [&](std::size_t u) {
      m.col_idx.push_back(u);
      m.values.push_back(inv_sqrt_deg[v] * inv_sqrt_deg[u]);
    };
    for (int w : graph.neighbors(v)) {
      const auto u = static_cast<std::size_t>(w);
      if (!self_done && u > v) {
        push(v);
        self_done = true;
      }
      push(u);
    }
    if (!self_done) push(v);
    m.row_ptr.push_back(m.col_idx.size());
  }
  return out;
}

GcnEncoder::GcnEncoder(GcnConfig config, std::string param_prefix)
    : config_(config), prefix_(std::move(param_prefix)) {
  if (config_.input_dim == 0 || config_.output_dim == 0) {
    throw std::invalid_argument("GcnEncoder: dimensions must be positive");
  }
  if (config_.layers == 0) {
    throw std::invalid_argument("GcnEncoder: needs at least one layer");
  }
  if (config_.dropout_rate < 0.0 || config_.dropout_rate >= 1.0) {
    throw std::invalid_argument("GcnEncoder: dropout rate must lie in [0, 1)");
  }
}

std::string GcnEncoder::weight_name(std::size_t layer) const {
  return prefix_ + ".w" + std::to_string(layer);
}

void GcnEncoder::init_params(ParamStore& store, Rng& rng) const {
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::size_t in = l == 0 ? config_.input_dim : config_.output_dim;
    store.create(weight_name(l), {in, config_.output_dim},
                 Init::kGlorotUniform, rng);
  }
}

Tape::ValueId GcnEncoder::forward(Tape& tape,
                                  const NormalizedAdjacency& adjacency,
                                  Tape::ValueId features,
                                  const ParamStore& store, bool train,
                                  Rng* dropout_rng) const {
  const Tensor& x = tape.value(features);
  if (x.rank() != 2 || x.cols() != config_.input_dim) {
    throw std::invalid_argument("GcnEncoder: features are " + x.shape_str() +
                                ", expected input dim " +
                                std::to_string(config_.input_dim));
  }
  if (adjacency.matrix.num_rows != x.rows()) {
    throw std::invalid_argument("GcnEncoder: adjacency covers " +
                                std::to_string(adjacency.matrix.num_rows) +
                                " nodes, features " + std::to_string(x.rows()));
  }

  Tape::ValueId h =
      tape.dropout(features, config_.dropout_rate, train, dropout_rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const Tape::ValueId w = use_param(tape, store, weight_name(l));
    h = tape.spmm(&adjacency.matrix, tape.matmul(h, w));
    if (l + 1 < config_.layers) h = tape.relu(h);
  }
  return h;
}

}  // namespace teg
