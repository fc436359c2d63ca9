#pragma once

#include <cstdint>
#include <string>

#include "teg/graph.hpp"
#include "teg/params.hpp"
#include "teg/rng.hpp"
#include "teg/tape.hpp"
#include "teg/tensor.hpp"

namespace teg {

// Symmetrically normalized adjacency with self loops,
// D~^{-1/2} (A + I) D~^{-1/2}, the propagation operator of graph
// convolution. Symmetric, so forward and backward products share the
// matrix.
struct NormalizedAdjacency {
  CsrMatrix matrix;
};

NormalizedAdjacency normalize_adjacency(const Graph& graph);

struct GcnConfig {
  std::size_t input_dim = 0;
  std::size_t output_dim = 64;
  std::size_t layers = 1;
  double dropout_rate = 0.5;  // applied to the input features while training
};

// Graph convolutional encoder over the full node set. The default single
// layer is one propagation step H = A_hat (X W) with no bias and no output
// activation; deeper stacks insert ReLU between layers. Inference and
// training share the code path, differing only in dropout.
class GcnEncoder {
 public:
  explicit GcnEncoder(GcnConfig config, std::string param_prefix = "gcn");

  // Creates <prefix>.w<l> weights, Glorot-initialized, in layer order.
  void init_params(ParamStore& store, Rng& rng) const;

  // Embeds all nodes transductively. `features` must be |V| x input_dim and
  // `adjacency` must outlive the tape. `dropout_rng` is only touched when
  // train is true and the dropout rate is positive.
  Tape::ValueId forward(Tape& tape, const NormalizedAdjacency& adjacency,
                        Tape::ValueId features, const ParamStore& store,
                        bool train, Rng* dropout_rng) const;

  const GcnConfig& config() const { return config_; }
  std::string weight_name(std::size_t layer) const;

 private:
  GcnConfig config_;
  std::string prefix_;
};

}  // namespace teg
