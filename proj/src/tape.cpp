#include "teg/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace teg {

namespace {

using kernels::sigmoid;

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

}  // namespace

const Tensor& Tape::checked(ValueId id) const {
  if (id >= nodes_.size()) fail("Tape: value id out of range");
  return nodes_[id].value;
}

bool Tape::any_needs_grad(std::initializer_list<ValueId> ids) const {
  for (ValueId id : ids) {
    if (nodes_[id].needs_grad) return true;
  }
  return false;
}

Tape::ValueId Tape::record(const char* op, Tensor value, bool needs_grad,
                           BackwardFn backward) {
  if (!value.all_finite()) {
    throw std::runtime_error(std::string("non-finite values in output of ") +
                             op);
  }
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  if (needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Tape::accumulate(ValueId id, const Tensor& partial) {
  if (!nodes_[id].needs_grad) return;
  if (!has_grad_[id]) {
    grads_[id] = partial;
    has_grad_[id] = true;
    return;
  }
  Tensor& g = grads_[id];
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] += partial[i];
}

Tape::ValueId Tape::constant(Tensor value) {
  return record("constant", std::move(value), false, nullptr);
}

Tape::ValueId Tape::param(const std::string& name, const Tensor& value) {
  for (const auto& [existing, id] : params_) {
    if (existing == name) return id;
  }
  const ValueId id = record("param", value, true, nullptr);
  params_.emplace_back(name, id);
  return id;
}

Tape::ValueId Tape::matmul(ValueId a, ValueId b) {
  Tensor out = kernels::matmul(checked(a), checked(b));
  return record("matmul", std::move(out), any_needs_grad({a, b}),
                [a, b](Tape& t, const Tensor& g) {
                  t.accumulate(
                      a, kernels::matmul(g, kernels::transpose(t.value(b))));
                  t.accumulate(
                      b, kernels::matmul(kernels::transpose(t.value(a)), g));
                });
}

Tape::ValueId Tape::spmm(const CsrMatrix* m, ValueId x) {
  if (m == nullptr) fail("spmm: null matrix");
  Tensor out = m->multiply(checked(x));
  return record("spmm", std::move(out), any_needs_grad({x}),
                [m, x](Tape& t, const Tensor& g) {
                  t.accumulate(x, m->multiply_transposed(g));
                });
}

Tape::ValueId Tape::add(ValueId a, ValueId b) {
  Tensor out = kernels::add(checked(a), checked(b));
  return record("add", std::move(out), any_needs_grad({a, b}),
                [a, b](Tape& t, const Tensor& g) {
                  t.accumulate(a, g);
                  t.accumulate(b, g);
                });
}

Tape::ValueId Tape::subtract(ValueId a, ValueId b) {
  Tensor out = kernels::subtract(checked(a), checked(b));
  return record("subtract", std::move(out), any_needs_grad({a, b}),
                [a, b](Tape& t, const Tensor& g) {
                  t.accumulate(a, g);
                  t.accumulate(b, kernels::scale(g, -1.0));
                });
}

Tape::ValueId Tape::add_row(ValueId m, ValueId row) {
  Tensor out = kernels::add_row(checked(m), checked(row));
  return record("add_row", std::move(out), any_needs_grad({m, row}),
                [m, row](Tape& t, const Tensor& g) {
                  t.accumulate(m, g);
                  t.accumulate(row, kernels::col_sums(g));
                });
}

Tape::ValueId Tape::scale(ValueId a, double s) {
  Tensor out = kernels::scale(checked(a), s);
  return record("scale", std::move(out), any_needs_grad({a}),
                [a, s](Tape& t, const Tensor& g) {
                  t.accumulate(a, kernels::scale(g, s));
                });
}

Tape::ValueId Tape::hadamard(ValueId a, ValueId b) {
  Tensor out = kernels::hadamard(checked(a), checked(b));
  return record("hadamard", std::move(out), any_needs_grad({a, b}),
                [a, b](Tape& t, const Tensor& g) {
                  t.accumulate(a, kernels::hadamard(g, t.value(b)));
                  t.accumulate(b, kernels::hadamard(g, t.value(a)));
                });
}

Tape::ValueId Tape::concat_cols(ValueId a, ValueId b) {
  Tensor out = kernels::concat_cols(checked(a), checked(b));
  const std::size_t ca = checked(a).cols();
  const std::size_t cb = checked(b).cols();
  return record("concat_cols", std::move(out), any_needs_grad({a, b}),
                [a, b, ca, cb](Tape& t, const Tensor& g) {
                  Tensor ga({g.rows(), ca});
                  Tensor gb({g.rows(), cb});
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < ca; ++c) ga.at(r, c) = g.at(r, c);
                    for (std::size_t c = 0; c < cb; ++c) {
                      gb.at(r, c) = g.at(r, ca + c);
                    }
                  }
                  t.accumulate(a, ga);
                  t.accumulate(b, gb);
                });
}

Tape::ValueId Tape::row_sums(ValueId a) {
  Tensor out = kernels::row_sums(checked(a));
  const std::size_t cols = checked(a).cols();
  return record("row_sums", std::move(out), any_needs_grad({a}),
                [a, cols](Tape& t, const Tensor& g) {
                  Tensor ga({g.rows(), cols});
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                      ga.at(r, c) = g.at(r, 0);
                    }
                  }
                  t.accumulate(a, ga);
                });
}

Tape::ValueId Tape::mean_rows(ValueId a) {
  Tensor out = kernels::mean_rows(checked(a));
  const std::size_t rows = checked(a).rows();
  return record("mean_rows", std::move(out), any_needs_grad({a}),
                [a, rows](Tape& t, const Tensor& g) {
                  const double inv = 1.0 / static_cast<double>(rows);
                  Tensor ga({rows, g.cols()});
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < g.cols(); ++c) {
                      ga.at(r, c) = g.at(0, c) * inv;
                    }
                  }
                  t.accumulate(a, ga);
                });
}

Tape::ValueId Tape::sum_all(ValueId a) {
  Tensor out = kernels::sum_all(checked(a));
  return record("sum_all", std::move(out), any_needs_grad({a}),
                [a](Tape& t, const Tensor& g) {
                  const double gv = g.scalar_value();
                  t.accumulate(a, Tensor::full(t.value(a).shape(), gv));
                });
}

Tape::ValueId Tape::square(ValueId a) {
  Tensor out = kernels::square(checked(a));
  return record("square", std::move(out), any_needs_grad({a}),
                [a](Tape& t, const Tensor& g) {
                  Tensor ga = kernels::hadamard(g, t.value(a));
                  t.accumulate(a, kernels::scale(ga, 2.0));
                });
}

Tape::ValueId Tape::relu(ValueId a) {
  Tensor out = kernels::relu(checked(a));
  return record("relu", std::move(out), any_needs_grad({a}),
                [a](Tape& t, const Tensor& g) {
                  const Tensor& x = t.value(a);
                  Tensor ga = g;
                  for (std::size_t i = 0; i < ga.numel(); ++i) {
                    if (x[i] <= 0.0) ga[i] = 0.0;
                  }
                  t.accumulate(a, ga);
                });
}

Tape::ValueId Tape::silu(ValueId a) {
  Tensor out = kernels::silu(checked(a));
  return record("silu", std::move(out), any_needs_grad({a}),
                [a](Tape& t, const Tensor& g) {
                  const Tensor& x = t.value(a);
                  Tensor ga = g;
                  for (std::size_t i = 0; i < ga.numel(); ++i) {
                    const double s = sigmoid(x[i]);
                    ga[i] *= s * (1.0 + x[i] * (1.0 - s));
                  }
                  t.accumulate(a, ga);
                });
}

Tape::ValueId Tape::pairwise_sqdist(ValueId a, ValueId b) {
  Tensor out = kernels::pairwise_sqdist(checked(a), checked(b));
  return record(
      "pairwise_sqdist", std::move(out), any_needs_grad({a, b}),
      [a, b](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        const std::size_t d = av.cols();
        Tensor ga({av.rows(), d});
        Tensor gb({bv.rows(), d});
        for (std::size_t i = 0; i < av.rows(); ++i) {
          for (std::size_t j = 0; j < bv.rows(); ++j) {
            const double w = 2.0 * g.at(i, j);
            if (w == 0.0) continue;
            for (std::size_t c = 0; c < d; ++c) {
              const double diff = av.at(i, c) - bv.at(j, c);
              ga.at(i, c) += w * diff;
              gb.at(j, c) -= w * diff;
            }
          }
        }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
      });
}

Tape::ValueId Tape::log_softmax(ValueId a) {
  Tensor out = kernels::log_softmax(checked(a));
  // nodes_.size() is the id record() will assign to this op's output; the
  // backward pass reads the output back instead of recomputing it.
  return record("log_softmax", std::move(out), any_needs_grad({a}),
                [a, id = nodes_.size()](Tape& t, const Tensor& g) {
                  const Tensor& y = t.value(id);
                  Tensor ga = g;
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < g.cols(); ++c) s += g.at(r, c);
                    for (std::size_t c = 0; c < g.cols(); ++c) {
                      ga.at(r, c) -= std::exp(y.at(r, c)) * s;
                    }
                  }
                  t.accumulate(a, ga);
                });
}

Tape::ValueId Tape::nll(ValueId log_probs, const std::vector<int>& labels) {
  const Tensor& lp = checked(log_probs);
  if (lp.rank() != 2 || labels.size() != lp.rows()) {
    fail("nll: exactly one label per log-prob row required");
  }
  double loss = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= lp.cols()) {
      fail("nll: label " + std::to_string(y) + " out of range");
    }
    loss -= lp.at(r, static_cast<std::size_t>(y));
  }
  return record("nll", Tensor::scalar(loss), any_needs_grad({log_probs}),
                [log_probs, labels](Tape& t, const Tensor& g) {
                  const double gv = g.scalar_value();
                  const Tensor& lp = t.value(log_probs);
                  Tensor ga({lp.rows(), lp.cols()});
                  for (std::size_t r = 0; r < labels.size(); ++r) {
                    ga.at(r, static_cast<std::size_t>(labels[r])) -= gv;
                  }
                  t.accumulate(log_probs, ga);
                });
}

Tape::ValueId Tape::gather_rows(ValueId a, std::vector<int> idx) {
  Tensor out = kernels::gather_rows(checked(a), idx);
  return record("gather_rows", std::move(out), any_needs_grad({a}),
                [a, idx = std::move(idx)](Tape& t, const Tensor& g) {
                  const Tensor& x = t.value(a);
                  Tensor ga({x.rows(), x.cols()});
                  for (std::size_t r = 0; r < idx.size(); ++r) {
                    const auto src = static_cast<std::size_t>(idx[r]);
                    for (std::size_t c = 0; c < g.cols(); ++c) {
                      ga.at(src, c) += g.at(r, c);
                    }
                  }
                  t.accumulate(a, ga);
                });
}

Tape::ValueId Tape::segment_sum(ValueId a, std::vector<int> segments,
                                std::size_t num_segments) {
  Tensor out = kernels::segment_sum(checked(a), segments, num_segments);
  return record("segment_sum", std::move(out), any_needs_grad({a}),
                [a, segments = std::move(segments)](Tape& t, const Tensor& g) {
                  const Tensor& x = t.value(a);
                  Tensor ga({x.rows(), x.cols()});
                  for (std::size_t r = 0; r < segments.size(); ++r) {
                    const auto s = static_cast<std::size_t>(segments[r]);
                    for (std::size_t c = 0; c < g.cols(); ++c) {
                      ga.at(r, c) = g.at(s, c);
                    }
                  }
                  t.accumulate(a, ga);
                });
}

Tape::ValueId Tape::row_scale(ValueId a, ValueId s) {
  Tensor out = kernels::row_scale(checked(a), checked(s));
  return record("row_scale", std::move(out), any_needs_grad({a, s}),
                [a, s](Tape& t, const Tensor& g) {
                  const Tensor& av = t.value(a);
                  const Tensor& sv = t.value(s);
                  Tensor ga = g;
                  Tensor gs({sv.rows(), 1});
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < g.cols(); ++c) {
                      dot += g.at(r, c) * av.at(r, c);
                      ga.at(r, c) *= sv.at(r, 0);
                    }
                    gs.at(r, 0) = dot;
                  }
                  t.accumulate(a, ga);
                  t.accumulate(s, gs);
                });
}

Tape::ValueId Tape::dropout(ValueId a, double rate, bool train, Rng* rng) {
  if (rate < 0.0 || rate >= 1.0) fail("dropout: rate must lie in [0, 1)");
  if (!train || rate == 0.0) return a;  // identity, no node recorded
  if (rng == nullptr) fail("dropout: rng required in training mode");
  const Tensor& x = checked(a);
  Tensor mask(x.shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    mask[i] = (rng->uniform() >= rate) ? keep_scale : 0.0;
  }
  Tensor out = kernels::hadamard(x, mask);
  return record("dropout", std::move(out), any_needs_grad({a}),
                [a, mask = std::move(mask)](Tape& t, const Tensor& g) {
                  t.accumulate(a, kernels::hadamard(g, mask));
                });
}

void Tape::backward(ValueId loss) {
  if (backward_done_) {
    throw std::logic_error("Tape::backward: already called on this tape");
  }
  const Tensor& l = checked(loss);
  if (l.numel() != 1) {
    throw std::invalid_argument("Tape::backward: loss has " +
                                std::to_string(l.numel()) +
                                " elements, expected a scalar");
  }
  backward_done_ = true;
  grads_.assign(nodes_.size(), Tensor());
  has_grad_.assign(nodes_.size(), false);
  grads_[loss] = Tensor::full(l.shape(), 1.0);
  has_grad_[loss] = true;
  for (std::size_t i = loss + 1; i-- > 0;) {
    if (has_grad_[i] && nodes_[i].backward) {
      nodes_[i].backward(*this, grads_[i]);
    }
  }
}

Tensor Tape::grad(ValueId id) const {
  checked(id);
  if (!backward_done_) {
    throw std::logic_error("Tape::grad: backward has not been run");
  }
  if (id < has_grad_.size() && has_grad_[id]) return grads_[id];
  return Tensor::zeros(nodes_[id].value.shape());
}

}  // namespace teg
