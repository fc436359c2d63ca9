#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace teg {

// Dense row-major tensor of doubles. Rank 0 (shape {}) is a scalar with one
// element; the library otherwise uses rank 1 for bias vectors and rank 2 for
// everything else.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  // Rank-2 accessors; throw on other ranks.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double scalar_value() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Compressed sparse row matrix. Used for the normalized adjacency; values
// stay in CSR order, so products are bit-reproducible.
struct CsrMatrix {
  std::size_t num_rows = 0;
  std::size_t num_cols = 0;
  std::vector<std::size_t> row_ptr;  // size num_rows + 1
  std::vector<std::size_t> col_idx;  // size nnz, ascending within each row
  std::vector<double> values;        // size nnz

  // Dense product: (num_rows x num_cols) * (num_cols x d).
  Tensor multiply(const Tensor& dense) const;
  // Transposed product: (num_cols x num_rows) * (num_rows x d).
  Tensor multiply_transposed(const Tensor& dense) const;
};

// Raw kernels. Every differentiable Tape op wraps one of these; they are
// also usable directly for oracle computations in tests. All of them
// validate shapes and throw std::invalid_argument on mismatch.
namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor add_row(const Tensor& m, const Tensor& row);  // row: rank 1, size cols
Tensor scale(const Tensor& a, double s);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor row_sums(const Tensor& a);   // n x d -> n x 1
Tensor col_sums(const Tensor& a);   // n x d -> rank-1 d
Tensor mean_rows(const Tensor& a);  // n x d -> 1 x d
Tensor sum_all(const Tensor& a);    // scalar
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor silu(const Tensor& a);
double sigmoid(double x);
// Squared Euclidean distance between every row of a and every row of b.
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);
// Row-wise log softmax, max-shifted so finite inputs give finite outputs.
Tensor log_softmax(const Tensor& a);
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
// Sums rows with equal segment id; segment ids must lie in [0, num_segments).
Tensor segment_sum(const Tensor& a, const std::vector<int>& segments,
                   std::size_t num_segments);
Tensor row_scale(const Tensor& a, const Tensor& s);  // s: n x 1

}  // namespace kernels
}  // namespace teg
