#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "teg/rng.hpp"
#include "teg/tensor.hpp"

namespace teg {

// Reverse-mode automatic differentiation over a linear record of ops.
// Values are appended in creation order, so parents always precede children
// and the reverse sweep is a single backward pass over the record. Forward
// evaluation happens eagerly inside each op; calling backward() is optional,
// which makes the same code path usable for inference.
//
// Every op checks its output for NaN/Inf and throws std::runtime_error
// naming the op if the check fails, so numerical blow-ups surface at the
// op that produced them instead of downstream.
class Tape {
 public:
  using ValueId = std::size_t;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(ValueId id) const { return nodes_.at(id).value; }

  // Leaves -----------------------------------------------------------------
  ValueId constant(Tensor value);
  // Registers a named trainable leaf. Re-registering the same name returns
  // the existing id so one tape sees each parameter once.
  ValueId param(const std::string& name, const Tensor& value);

  // Differentiable ops -----------------------------------------------------
  ValueId matmul(ValueId a, ValueId b);
  ValueId spmm(const CsrMatrix* a, ValueId x);  // a must outlive the tape
  ValueId add(ValueId a, ValueId b);
  ValueId subtract(ValueId a, ValueId b);
  ValueId add_row(ValueId m, ValueId row);
  ValueId scale(ValueId a, double s);
  ValueId hadamard(ValueId a, ValueId b);
  ValueId concat_cols(ValueId a, ValueId b);
  ValueId row_sums(ValueId a);
  ValueId mean_rows(ValueId a);
  ValueId sum_all(ValueId a);
  ValueId square(ValueId a);
  ValueId relu(ValueId a);
  ValueId silu(ValueId a);
  ValueId pairwise_sqdist(ValueId a, ValueId b);
  ValueId log_softmax(ValueId a);
  // Sum over rows of -log_probs[r, labels[r]].
  ValueId nll(ValueId log_probs, const std::vector<int>& labels);
  ValueId gather_rows(ValueId a, std::vector<int> idx);
  ValueId segment_sum(ValueId a, std::vector<int> segments,
                      std::size_t num_segments);
  ValueId row_scale(ValueId a, ValueId s);
  // Inverted dropout: kept entries are scaled by 1/(1-rate). In inference
  // mode (train == false) or at rate 0 this is the identity and consumes no
  // random numbers.
  ValueId dropout(ValueId a, double rate, bool train, Rng* rng);

  // Gradients --------------------------------------------------------------
  // Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. `loss` must hold
  // exactly one element. May be called once per tape.
  void backward(ValueId loss);
  // Gradient of the last backward() target w.r.t. `id`; zeros if the value
  // did not contribute to the loss.
  Tensor grad(ValueId id) const;
  // Named parameter leaves registered on this tape.
  const std::vector<std::pair<std::string, ValueId>>& params() const {
    return params_;
  }

 private:
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  struct Node {
    Tensor value;
    BackwardFn backward;  // empty for leaves and non-differentiable paths
    bool needs_grad = false;
  };

  ValueId record(const char* op, Tensor value, bool needs_grad,
                 BackwardFn backward);
  bool any_needs_grad(std::initializer_list<ValueId> ids) const;
  void accumulate(ValueId id, const Tensor& partial);
  const Tensor& checked(ValueId id) const;

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, ValueId>> params_;
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
  bool backward_done_ = false;
};

}  // namespace teg
