#include "teg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace teg {
namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

[[noreturn]] void shape_error(const std::string& op, const Tensor& a) {
  throw std::invalid_argument(op + ": bad shape " + a.shape_str());
}

[[noreturn]] void shape_error(const std::string& op, const Tensor& a,
                              const Tensor& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + a.shape_str() +
                              " and " + b.shape_str());
}

void require_rank2(const std::string& op, const Tensor& a) {
  if (a.rank() != 2) shape_error(op, a);
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("Tensor: data size does not match shape " +
                                shape_str());
  }
}

Tensor Tensor::scalar(double value) {
  Tensor t(std::vector<std::size_t>{});
  t.data_[0] = value;
  return t;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  return Tensor(std::move(shape));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = value;
  return t;
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("rows: tensor is not rank 2");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("cols: tensor is not rank 2");
  return shape_[1];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return data_[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return data_[r * cols() + c];
}

double Tensor::scalar_value() const {
  if (numel() != 1) {
    throw std::invalid_argument("scalar_value: tensor has " +
                                std::to_string(numel()) + " elements");
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ')';
  return os.str();
}

Tensor CsrMatrix::multiply(const Tensor& dense) const {
  if (dense.rank() != 2 || dense.rows() != num_cols) {
    throw std::invalid_argument("CsrMatrix::multiply: operand is " +
                                dense.shape_str() + ", expected " +
                                std::to_string(num_cols) + " rows");
  }
  const std::size_t d = dense.cols();
  Tensor out({num_rows, d});
  for (std::size_t r = 0; r < num_rows; ++r) {
    double* out_row = out.data() + r * d;
    for (std::size_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e) {
      const double v = values[e];
      const double* in_row = dense.data() + col_idx[e] * d;
      for (std::size_t c = 0; c < d; ++c) out_row[c] += v * in_row[c];
    }
  }
  return out;
}

Tensor CsrMatrix::multiply_transposed(const Tensor& dense) const {
  if (dense.rank() != 2 || dense.rows() != num_rows) {
    throw std::invalid_argument("CsrMatrix::multiply_transposed: operand is " +
                                dense.shape_str() + ", expected " +
                                std::to_string(num_rows) + " rows");
  }
  const std::size_t d = dense.cols();
  Tensor out({num_cols, d});
  for (std::size_t r = 0; r < num_rows; ++r) {
    const double* in_row = dense.data() + r * d;
    for (std::size_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e) {
      const double v = values[e];
      double* out_row = out.data() + col_idx[e] * d;
      for (std::size_t c = 0; c < d; ++c) out_row[c] += v * in_row[c];
    }
  }
  return out;
}

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out({n, m});
  // i-k-j loop order: streams through b and out rows, vectorizes well.
  for (std::size_t i = 0; i < n; ++i) {
    const double* a_row = a.data() + i * k;
    double* out_row = out.data() + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a_row[kk];
      const double* b_row = b.data() + kk * m;
      for (std::size_t j = 0; j < m; ++j) out_row[j] += av * b_row[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  Tensor out({a.cols(), a.rows()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out.at(c, r) = a.at(r, c);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("add", a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("subtract", a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

Tensor add_row(const Tensor& m, const Tensor& row) {
  require_rank2("add_row", m);
  if (row.rank() != 1 || row.shape()[0] != m.cols()) {
    shape_error("add_row", m, row);
  }
  Tensor out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out.at(r, c) += row[c];
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("hadamard", a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2("concat_cols", a);
  require_rank2("concat_cols", b);
  if (a.rows() != b.rows()) shape_error("concat_cols", a, b);
  Tensor out({a.rows(), a.cols() + b.cols()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out.at(r, c) = a.at(r, c);
    for (std::size_t c = 0; c < b.cols(); ++c) {
      out.at(r, a.cols() + c) = b.at(r, c);
    }
  }
  return out;
}

Tensor row_sums(const Tensor& a) {
  require_rank2("row_sums", a);
  Tensor out({a.rows(), 1});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) s += a.at(r, c);
    out.at(r, 0) = s;
  }
  return out;
}

Tensor col_sums(const Tensor& a) {
  require_rank2("col_sums", a);
  Tensor out({a.cols()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out[c] += a.at(r, c);
  }
  return out;
}

Tensor mean_rows(const Tensor& a) {
  require_rank2("mean_rows", a);
  if (a.rows() == 0) shape_error("mean_rows", a);
  Tensor out({1, a.cols()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out.at(0, c) += a.at(r, c);
  }
  for (std::size_t c = 0; c < a.cols(); ++c) {
    out.at(0, c) /= static_cast<double>(a.rows());
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
  return Tensor::scalar(s);
}

Tensor square(const Tensor& a) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= out[i];
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (out[i] < 0.0) out[i] = 0.0;
  }
  return out;
}

double sigmoid(double x) {
  // Split form avoids overflow of exp for large |x|.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor silu(const Tensor& a) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= sigmoid(out[i]);
  return out;
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  require_rank2("pairwise_sqdist", a);
  require_rank2("pairwise_sqdist", b);
  if (a.cols() != b.cols()) shape_error("pairwise_sqdist", a, b);
  Tensor out({a.rows(), b.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < a.cols(); ++c) {
        const double d = a.at(i, c) - b.at(j, c);
        s += d * d;
      }
      out.at(i, j) = s;
    }
  }
  return out;
}

Tensor log_softmax(const Tensor& a) {
  require_rank2("log_softmax", a);
  if (a.cols() == 0) shape_error("log_softmax", a);
  Tensor out = a;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double mx = a.at(r, 0);
    for (std::size_t c = 1; c < a.cols(); ++c) mx = std::max(mx, a.at(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) sum += std::exp(a.at(r, c) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t c = 0; c < a.cols(); ++c) out.at(r, c) = a.at(r, c) - lse;
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  require_rank2("gather_rows", a);
  Tensor out({idx.size(), a.cols()});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= a.rows()) {
      throw std::invalid_argument("gather_rows: index " +
                                  std::to_string(idx[r]) + " out of range for " +
                                  a.shape_str());
    }
    for (std::size_t c = 0; c < a.cols(); ++c) {
      out.at(r, c) = a.at(static_cast<std::size_t>(idx[r]), c);
    }
  }
  return out;
}

Tensor segment_sum(const Tensor& a, const std::vector<int>& segments,
                   std::size_t num_segments) {
  require_rank2("segment_sum", a);
  if (segments.size() != a.rows()) {
    throw std::invalid_argument("segment_sum: " + std::to_string(segments.size()) +
                                " segment ids for " + a.shape_str());
  }
  Tensor out({num_segments, a.cols()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const int s = segments[r];
    if (s < 0 || static_cast<std::size_t>(s) >= num_segments) {
      throw std::invalid_argument("segment_sum: segment id " +
                                  std::to_string(s) + " out of range");
    }
    for (std::size_t c = 0; c < a.cols(); ++c) {
      out.at(static_cast<std::size_t>(s), c) += a.at(r, c);
    }
  }
  return out;
}

Tensor row_scale(const Tensor& a, const Tensor& s) {
  require_rank2("row_scale", a);
  if (s.rank() != 2 || s.cols() != 1 || s.rows() != a.rows()) {
    shape_error("row_scale", a, s);
  }
  Tensor out = a;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double v = s.at(r, 0);
    for (std::size_t c = 0; c < a.cols(); ++c) out.at(r, c) *= v;
  }
  return out;
}

}  // namespace kernels
}  // namespace teg
