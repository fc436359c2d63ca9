#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "teg/rng.hpp"
#include "teg/tensor.hpp"

using namespace teg;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.rank() == 2);
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  t.at(1, 2) = 4.5;
  CHECK(t[5] == 4.5);

  const Tensor s = Tensor::scalar(7.0);
  CHECK(s.rank() == 0);
  CHECK(s.scalar_value() == 7.0);
  CHECK_THROWS_AS(t.scalar_value(), std::invalid_argument);
  CHECK_THROWS_AS((void)Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("matmul matches hand-computed product") {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
  const Tensor c = kernels::matmul(a, b);
  CHECK(c.at(0, 0) == 58.0);
  CHECK(c.at(0, 1) == 64.0);
  CHECK(c.at(1, 0) == 139.0);
  CHECK(c.at(1, 1) == 154.0);
  CHECK_THROWS_AS(kernels::matmul(a, a), std::invalid_argument);
}

TEST_CASE("matmul associativity on random operands") {
  Rng rng(11);
  const Tensor a = random_tensor({4, 5}, rng);
  const Tensor b = random_tensor({5, 3}, rng);
  const Tensor c = random_tensor({3, 6}, rng);
  const Tensor left = kernels::matmul(kernels::matmul(a, b), c);
  const Tensor right = kernels::matmul(a, kernels::matmul(b, c));
  for (std::size_t i = 0; i < left.numel(); ++i) {
    CHECK(left[i] == doctest::Approx(right[i]).epsilon(1e-12));
  }
}

TEST_CASE("transpose is an involution") {
  Rng rng(12);
  const Tensor a = random_tensor({3, 7}, rng);
  CHECK(kernels::transpose(kernels::transpose(a)) == a);
}

TEST_CASE("csr multiply matches dense oracle") {
  // 3x3 matrix [[0,2,0],[1,0,3],[0,0,4]] in CSR form.
  CsrMatrix m;
  m.num_rows = 3;
  m.num_cols = 3;
  m.row_ptr = {0, 1, 3, 4};
  m.col_idx = {1, 0, 2, 2};
  m.values = {2, 1, 3, 4};

  Rng rng(13);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor dense({3, 3}, {0, 2, 0, 1, 0, 3, 0, 0, 4});
  const Tensor expect = kernels::matmul(dense, x);
  const Tensor got = m.multiply(x);
  for (std::size_t i = 0; i < got.numel(); ++i) {
    CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-14));
  }

  const Tensor expect_t = kernels::matmul(kernels::transpose(dense), x);
  const Tensor got_t = m.multiply_transposed(x);
  for (std::size_t i = 0; i < got_t.numel(); ++i) {
    CHECK(got_t[i] == doctest::Approx(expect_t[i]).epsilon(1e-14));
  }
}

TEST_CASE("elementwise ops") {
  const Tensor a({2, 2}, {1, -2, 3, -4});
  const Tensor b({2, 2}, {10, 20, 30, 40});
  CHECK(kernels::add(a, b) == Tensor({2, 2}, {11, 18, 33, 36}));
  CHECK(kernels::subtract(b, a) == Tensor({2, 2}, {9, 22, 27, 44}));
  CHECK(kernels::hadamard(a, b) == Tensor({2, 2}, {10, -40, 90, -160}));
  CHECK(kernels::scale(a, -0.5) == Tensor({2, 2}, {-0.5, 1, -1.5, 2}));
  CHECK(kernels::square(a) == Tensor({2, 2}, {1, 4, 9, 16}));
  CHECK(kernels::relu(a) == Tensor({2, 2}, {1, 0, 3, 0}));
  CHECK_THROWS_AS(kernels::add(a, Tensor({1, 4})), std::invalid_argument);
}

TEST_CASE("reductions and broadcasts") {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(kernels::row_sums(a) == Tensor({2, 1}, {6, 15}));
  CHECK(kernels::col_sums(a) == Tensor({3}, {5, 7, 9}));
  CHECK(kernels::mean_rows(a) == Tensor({1, 3}, {2.5, 3.5, 4.5}));
  CHECK(kernels::sum_all(a).scalar_value() == 21.0);

  const Tensor row({3}, {10, 20, 30});
  CHECK(kernels::add_row(a, row) == Tensor({2, 3}, {11, 22, 33, 14, 25, 36}));

  const Tensor s({2, 1}, {2, -1});
  CHECK(kernels::row_scale(a, s) == Tensor({2, 3}, {2, 4, 6, -4, -5, -6}));
}

TEST_CASE("sigmoid and silu are stable at extreme inputs") {
  CHECK(kernels::sigmoid(0.0) == 0.5);
  CHECK(kernels::sigmoid(1000.0) == doctest::Approx(1.0));
  CHECK(kernels::sigmoid(-1000.0) == doctest::Approx(0.0));
  const Tensor x({1, 3}, {-1000.0, 0.0, 1000.0});
  const Tensor y = kernels::silu(x);
  CHECK(y.all_finite());
  CHECK(y.at(0, 0) == doctest::Approx(0.0));
  CHECK(y.at(0, 1) == 0.0);
  CHECK(y.at(0, 2) == doctest::Approx(1000.0));
}

TEST_CASE("pairwise squared distances match brute force") {
  Rng rng(14);
  const Tensor a = random_tensor({4, 3}, rng);
  const Tensor b = random_tensor({5, 3}, rng);
  const Tensor d = kernels::pairwise_sqdist(a, b);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double diff = a.at(i, c) - b.at(j, c);
        s += diff * diff;
      }
      CHECK(d.at(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  }
  // Distance of a set to itself has a zero diagonal.
  const Tensor self = kernels::pairwise_sqdist(a, a);
  for (std::size_t i = 0; i < 4; ++i) CHECK(self.at(i, i) == 0.0);
}

TEST_CASE("log softmax rows exponentiate and sum to one") {
  Rng rng(15);
  Tensor a = random_tensor({6, 9}, rng);
  a.at(0, 0) = 700.0;  // large magnitudes must not overflow
  a.at(1, 1) = -700.0;
  const Tensor y = kernels::log_softmax(a);
  REQUIRE(y.all_finite());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < y.cols(); ++c) s += std::exp(y.at(r, c));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gather and segment ops") {
  const Tensor a({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(kernels::gather_rows(a, {2, 0, 2}) ==
        Tensor({3, 2}, {5, 6, 1, 2, 5, 6}));
  CHECK_THROWS_AS(kernels::gather_rows(a, {3}), std::invalid_argument);

  const Tensor b({4, 2}, {1, 1, 2, 2, 3, 3, 4, 4});
  CHECK(kernels::segment_sum(b, {1, 0, 1, 1}, 2) ==
        Tensor({2, 2}, {2, 2, 8, 8}));
  CHECK_THROWS_AS(kernels::segment_sum(b, {0, 0, 0, 2}, 2),
                  std::invalid_argument);

  const Tensor c = kernels::concat_cols(a, kernels::scale(a, 10.0));
  CHECK(c == Tensor({3, 4}, {1, 2, 10, 20, 3, 4, 30, 40, 5, 6, 50, 60}));
  CHECK_THROWS_AS(kernels::concat_cols(a, b), std::invalid_argument);
}
