#include <doctest.h>

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "teg/params.hpp"
#include "teg/rng.hpp"
#include "teg/tape.hpp"
#include "teg/tensor.hpp"

using namespace teg;

namespace {

ParamStore make_params(
    const std::vector<std::pair<std::string, std::vector<std::size_t>>>& specs,
    std::uint64_t seed) {
  Rng rng(seed);
  ParamStore store;
  for (const auto& [name, shape] : specs) {
    store.create(name, shape, Init::kGlorotUniform, rng);
  }
  return store;
}

// FD noise at h=1e-5 sits far below this bound for smooth losses.
constexpr double kTolerance = 1e-6;

}  // namespace

TEST_CASE("linear loss gradient is exact") {
  // loss = sum(W x): d loss / d W = ones * x^T, checked against FD.
  auto store = make_params({{"w", {3, 4}}, {"x", {4, 2}}}, 1);
  auto build = [](Tape& t, const ParamStore& p) {
    return t.sum_all(t.matmul(use_param(t, p, "w"), use_param(t, p, "x")));
  };
  const auto result = grad_check(store, build);
  CHECK(result.coords_checked == 20);
  CHECK(result.max_rel_err < 1e-9);
}

TEST_CASE("quadratic loss matches closed-form gradient") {
  // loss = ||W x||^2 with x fixed: d loss / d W = 2 (W x) x^T.
  Rng rng(2);
  ParamStore store;
  store.create("w", {3, 3}, Init::kGlorotUniform, rng);
  Tensor x({3, 1});
  for (std::size_t i = 0; i < 3; ++i) x[i] = rng.normal();

  Tape tape;
  const auto w = use_param(tape, store, "w");
  const auto wx = tape.matmul(w, tape.constant(x));
  const auto loss = tape.sum_all(tape.square(wx));
  tape.backward(loss);

  const Tensor wx_val = kernels::matmul(store.get("w"), x);
  const Tensor expect =
      kernels::scale(kernels::matmul(wx_val, kernels::transpose(x)), 2.0);
  const Tensor got = tape.grad(w);
  for (std::size_t i = 0; i < expect.numel(); ++i) {
    CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("dense op chain passes finite-difference check") {
  auto store = make_params({{"w0", {5, 4}}, {"b0", {4}}, {"w1", {4, 3}}}, 3);
  auto build = [](Tape& t, const ParamStore& p) {
    Rng data_rng(77);
    Tensor x({6, 5});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = data_rng.normal();
    auto h = t.matmul(t.constant(x), use_param(t, p, "w0"));
    h = t.add_row(h, use_param(t, p, "b0"));
    h = t.silu(h);
    h = t.matmul(h, use_param(t, p, "w1"));
    auto lp = t.log_softmax(h);
    return t.nll(lp, {0, 2, 1, 1, 0, 2});
  };
  const auto result = grad_check(store, build);
  CHECK(result.max_rel_err < kTolerance);
}

TEST_CASE("distance and prototype ops pass finite-difference check") {
  auto store = make_params({{"support", {6, 3}}, {"query", {4, 3}}}, 4);
  auto build = [](Tape& t, const ParamStore& p) {
    const auto support = use_param(t, p, "support");
    const auto query = use_param(t, p, "query");
    // Mean prototypes per 2-row segment, then -squared-distance softmax.
    const auto protos =
        t.scale(t.segment_sum(support, {0, 0, 1, 1, 2, 2}, 3), 0.5);
    const auto logits = t.scale(t.pairwise_sqdist(query, protos), -1.0);
    return t.nll(t.log_softmax(logits), {0, 1, 2, 0});
  };
  const auto result = grad_check(store, build);
  CHECK(result.max_rel_err < kTolerance);
}

TEST_CASE("structure ops pass finite-difference check") {
  auto store = make_params({{"a", {5, 3}}, {"s", {4, 1}}, {"b", {4, 2}}}, 5);
  auto build = [](Tape& t, const ParamStore& p) {
    const auto a = use_param(t, p, "a");
    const auto gathered = t.gather_rows(a, {4, 0, 2, 2});
    const auto scaled = t.row_scale(gathered, use_param(t, p, "s"));
    const auto cat = t.concat_cols(scaled, use_param(t, p, "b"));
    const auto pooled = t.mean_rows(t.relu(cat));
    return t.sum_all(t.square(pooled));
  };
  const auto result = grad_check(store, build);
  CHECK(result.max_rel_err < kTolerance);
}

TEST_CASE("reduction ops pass finite-difference check") {
  auto store = make_params({{"a", {3, 4}}, {"b", {3, 4}}}, 6);
  auto build = [](Tape& t, const ParamStore& p) {
    const auto a = use_param(t, p, "a");
    const auto b = use_param(t, p, "b");
    const auto prod = t.hadamard(t.subtract(a, b), t.add(a, b));
    return t.sum_all(t.square(t.row_sums(prod)));
  };
  const auto result = grad_check(store, build);
  CHECK(result.max_rel_err < kTolerance);
}

TEST_CASE("spmm gradient flows through the dense operand") {
  CsrMatrix m;
  m.num_rows = 3;
  m.num_cols = 3;
  m.row_ptr = {0, 2, 3, 5};
  m.col_idx = {0, 2, 1, 0, 2};
  m.values = {0.5, 1.5, -1.0, 2.0, 0.25};

  auto store = make_params({{"x", {3, 4}}}, 7);
  auto build = [&m](Tape& t, const ParamStore& p) {
    return t.sum_all(t.square(t.spmm(&m, use_param(t, p, "x"))));
  };
  const auto result = grad_check(store, build);
  CHECK(result.max_rel_err < kTolerance);
}

TEST_CASE("dropout") {
  Tape tape;
  Tensor x = Tensor::full({20, 30}, 1.0);
  const auto in = tape.constant(x);

  SUBCASE("identity when not training or rate zero") {
    CHECK(tape.dropout(in, 0.5, false, nullptr) == in);
    Rng rng(8);
    CHECK(tape.dropout(in, 0.0, true, &rng) == in);
  }

  SUBCASE("training mask zeroes or rescales every entry") {
    Rng rng(9);
    const auto out = tape.dropout(in, 0.4, true, &rng);
    const Tensor& y = tape.value(out);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) {
      const bool zero = y[i] == 0.0;
      const bool scaled = std::abs(y[i] - 1.0 / 0.6) < 1e-12;
      CHECK((zero || scaled));
      kept += scaled;
    }
    // 600 Bernoulli(0.6) draws: expect about 360 kept.
    CHECK(kept > 280);
    CHECK(kept < 430);
  }

  SUBCASE("same seed gives the same mask") {
    Rng r1(10), r2(10);
    Tape t1, t2;
    const auto a1 = t1.dropout(t1.constant(x), 0.5, true, &r1);
    const auto a2 = t2.dropout(t2.constant(x), 0.5, true, &r2);
    CHECK(t1.value(a1) == t2.value(a2));
  }

  SUBCASE("rate outside [0,1) rejected") {
    Rng rng(11);
    CHECK_THROWS_AS(tape.dropout(in, 1.0, true, &rng), std::invalid_argument);
    CHECK_THROWS_AS(tape.dropout(in, -0.1, true, &rng), std::invalid_argument);
  }
}

TEST_CASE("dropout gradient matches its mask") {
  Rng rng(12);
  ParamStore store;
  store.create("x", {6, 5}, Init::kGlorotUniform, rng);

  Tape tape;
  Rng mask_rng(99);
  const auto x = use_param(tape, store, "x");
  const auto dropped = tape.dropout(x, 0.5, true, &mask_rng);
  tape.backward(tape.sum_all(dropped));

  const Tensor g = tape.grad(x);
  const Tensor& y = tape.value(dropped);
  const Tensor& xv = store.get("x");
  for (std::size_t i = 0; i < g.numel(); ++i) {
    if (y[i] == 0.0 && xv[i] != 0.0) {
      CHECK(g[i] == 0.0);
    } else {
      CHECK(g[i] == 2.0);
    }
  }
}

TEST_CASE("detached branches contribute zero gradient") {
  Rng rng(13);
  ParamStore store;
  store.create("used", {2, 2}, Init::kGlorotUniform, rng);
  store.create("unused", {2, 2}, Init::kGlorotUniform, rng);

  Tape tape;
  const auto used = use_param(tape, store, "used");
  const auto unused = use_param(tape, store, "unused");
  tape.square(unused);  // recorded but never feeds the loss
  tape.backward(tape.sum_all(used));

  const auto grads = collect_grads(tape, store);
  CHECK(grads.at("used") == Tensor::full({2, 2}, 1.0));
  CHECK(grads.at("unused") == Tensor::zeros({2, 2}));
}

TEST_CASE("backward validation") {
  Tape tape;
  const auto a = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(tape.backward(a), std::invalid_argument);  // not scalar

  Tape tape2;
  const auto s = tape2.constant(Tensor::scalar(3.0));
  tape2.backward(s);
  CHECK_THROWS_AS(tape2.backward(s), std::logic_error);  // second call

  Tape tape3;
  const auto v = tape3.constant(Tensor::scalar(1.0));
  CHECK_THROWS_AS(tape3.grad(v), std::logic_error);  // before backward
}

TEST_CASE("non-finite op outputs are rejected with the op name") {
  Tape tape;
  const auto big = tape.constant(Tensor::full({1, 2}, 1e308));
  try {
    tape.add(big, big);  // overflows to inf
    FAIL("expected std::runtime_error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
}

TEST_CASE("nll rejects bad labels") {
  Tape tape;
  const auto lp = tape.log_softmax(tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6})));
  CHECK_THROWS_AS(tape.nll(lp, {0}), std::invalid_argument);
  CHECK_THROWS_AS(tape.nll(lp, {0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(tape.nll(lp, {0, -1}), std::invalid_argument);
}

TEST_CASE("adam first step moves each weight by about lr") {
  // With zero moments, step 1 gives p -= lr * g / (|g| + eps).
  Rng rng(14);
  ParamStore store;
  store.create("w", {2, 2}, Init::kGlorotUniform, rng);
  const Tensor before = store.get("w");

  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  AdamState state = AdamState::create(store, cfg);

  std::map<std::string, Tensor> grads;
  grads.emplace("w", Tensor({2, 2}, {1.0, -2.0, 0.5, 3.0}));
  adam_step(store, grads, state);

  CHECK(state.step == 1);
  const Tensor& after = store.get("w");
  for (std::size_t i = 0; i < 4; ++i) {
    const double g = grads.at("w")[i];
    const double expect = before[i] - cfg.lr * g / (std::abs(g) + cfg.eps);
    CHECK(after[i] == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("adam converges on a quadratic bowl") {
  Rng rng(15);
  ParamStore store;
  store.create("w", {4}, Init::kGlorotUniform, rng);
  AdamConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  AdamState state = AdamState::create(store, cfg);

  for (int it = 0; it < 400; ++it) {
    std::map<std::string, Tensor> grads;
    grads.emplace("w", kernels::scale(store.get("w"), 2.0));  // d/dw ||w||^2
    adam_step(store, grads, state);
  }
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(store.get("w")[i]) < 1e-3);
  }
}

TEST_CASE("adam validates key sets") {
  Rng rng(16);
  ParamStore store;
  store.create("w", {2}, Init::kGlorotUniform, rng);
  AdamState state = AdamState::create(store, {});
  std::map<std::string, Tensor> grads;  // missing "w"
  CHECK_THROWS_AS(adam_step(store, grads, state), std::invalid_argument);
}

TEST_CASE("checkpoint round-trip is bit exact") {
  Rng rng(19);
  ParamStore store;
  store.create("layer.w", {7, 5}, Init::kGlorotUniform, rng);
  store.create("layer.b", {5}, Init::kZeros, rng);
  store.mutable_get("layer.b")[2] = 1.0 / 3.0;  // not exactly representable in text

  const std::string path = "/tmp/teg_ckpt_test.bin";

  SUBCASE("parameters only") {
    save_checkpoint(path, store);
    const Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.params == store);
    CHECK(!loaded.adam.has_value());
  }

  SUBCASE("with optimizer state") {
    AdamState state = AdamState::create(store, {});
    std::map<std::string, Tensor> grads;
    for (const auto& [name, t] : store.entries()) {
      Tensor g(t.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] = rng.normal();
      grads.emplace(name, std::move(g));
    }
    adam_step(store, grads, state);
    adam_step(store, grads, state);

    save_checkpoint(path, store, &state);
    const Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.params == store);
    REQUIRE(loaded.adam.has_value());
    CHECK(loaded.adam->step == 2);
    CHECK(loaded.adam->cfg.lr == state.cfg.lr);
    CHECK(loaded.adam->m == state.m);
    CHECK(loaded.adam->v == state.v);
  }

  SUBCASE("corrupt files are rejected") {
    CHECK_THROWS_AS(load_checkpoint("/tmp/teg_does_not_exist.bin"),
                    std::runtime_error);
    {
      std::ofstream os(path, std::ios::binary);
      os << "params=2\nonly.one 1 3\n";
    }
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
}

TEST_CASE("glorot init stays inside its limit and is seed-stable") {
  Rng r1(17), r2(17);
  ParamStore s1, s2;
  s1.create("w", {30, 20}, Init::kGlorotUniform, r1);
  s2.create("w", {30, 20}, Init::kGlorotUniform, r2);
  CHECK(s1.get("w") == s2.get("w"));

  const double limit = std::sqrt(6.0 / (30 + 20));
  double max_abs = 0.0;
  for (std::size_t i = 0; i < s1.get("w").numel(); ++i) {
    max_abs = std::max(max_abs, std::abs(s1.get("w")[i]));
  }
  CHECK(max_abs <= limit);
  CHECK(max_abs > 0.5 * limit);  // actually spreads over the range

  Rng r3(18);
  ParamStore s3;
  s3.create("b", {16}, Init::kZeros, r3);
  CHECK(s3.get("b") == Tensor::zeros({16}));
}
