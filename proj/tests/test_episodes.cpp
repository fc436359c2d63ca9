#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "teg/episodes.hpp"
#include "teg/graph.hpp"
#include "teg/params.hpp"
#include "teg/rng.hpp"

using namespace teg;

namespace {

LabelPool pool_of(const std::map<int, std::vector<int>>& p) {
  return LabelPool(std::map<int, std::vector<int>>(p));
}

LabelPool even_pool(int classes, int per_class) {
  std::map<int, std::vector<int>> p;
  int next = 0;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) p[c].push_back(next++);
  }
  return LabelPool(std::move(p));
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("sampled episodes have the declared layout") {
  const LabelPool pool = even_pool(8, 20);
  const MetaTask task = sample_task(pool, 5, 3, 4, 101);

  CHECK(task.n_way == 5);
  CHECK(task.classes.size() == 5);
  CHECK(task.support_nodes.size() == 15);
  CHECK(task.query_nodes.size() == 20);
  CHECK(task.num_nodes() == 35);

  // Distinct classes, distinct nodes, no support/query overlap.
  std::set<int> classes(task.classes.begin(), task.classes.end());
  CHECK(classes.size() == 5);
  std::set<int> nodes;
  for (int v : task.support_nodes) nodes.insert(v);
  for (int v : task.query_nodes) nodes.insert(v);
  CHECK(nodes.size() == 35);

  // Class-major layout: block c holds nodes of classes[c]. The pool above
  // assigns nodes so that node / 20 recovers the class.
  for (int c = 0; c < 5; ++c) {
    for (int i = 0; i < 3; ++i) {
      CHECK(task.support_nodes[static_cast<std::size_t>(c * 3 + i)] / 20 ==
            task.classes[static_cast<std::size_t>(c)]);
    }
    for (int i = 0; i < 4; ++i) {
      CHECK(task.query_nodes[static_cast<std::size_t>(c * 4 + i)] / 20 ==
            task.classes[static_cast<std::size_t>(c)]);
    }
  }

  const std::vector<int> sl = task.support_labels();
  CHECK(sl.size() == 15);
  CHECK(sl[0] == 0);
  CHECK(sl[14] == 4);
  CHECK(task.query_labels()[7] == 1);

  const std::vector<int> all = task.all_nodes();
  CHECK(all.size() == 35);
  CHECK(all[0] == task.support_nodes[0]);
  CHECK(all[15] == task.query_nodes[0]);
}

TEST_CASE("episode sampling is seed-deterministic") {
  const LabelPool pool = even_pool(10, 12);
  const MetaTask a = sample_task(pool, 4, 2, 3, 55);
  const MetaTask b = sample_task(pool, 4, 2, 3, 55);
  CHECK(a.classes == b.classes);
  CHECK(a.support_nodes == b.support_nodes);
  CHECK(a.query_nodes == b.query_nodes);

  const MetaTask c = sample_task(pool, 4, 2, 3, 56);
  CHECK((a.classes != c.classes || a.support_nodes != c.support_nodes));
}

TEST_CASE("sampling skips classes that cannot field an episode") {
  // Class 7 has only 2 nodes; a 1-shot 2-query episode needs 3.
  const LabelPool pool = pool_of({{3, {10, 11, 12, 13}},
                                  {7, {20, 21}},
                                  {9, {30, 31, 32}}});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const MetaTask task = sample_task(pool, 2, 1, 2, seed);
    for (int cls : task.classes) CHECK(cls != 7);
  }
  // With a 1-shot 1-query episode class 7 becomes eligible and shows up.
  bool seen7 = false;
  for (std::uint64_t seed = 0; seed < 50 && !seen7; ++seed) {
    const MetaTask task = sample_task(pool, 2, 1, 1, seed);
    seen7 = std::find(task.classes.begin(), task.classes.end(), 7) !=
            task.classes.end();
  }
  CHECK(seen7);
}

TEST_CASE("sampling rejects infeasible requests") {
  const LabelPool pool = even_pool(3, 4);
  CHECK_THROWS_AS(sample_task(pool, 4, 1, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_task(pool, 2, 3, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_task(pool, 0, 1, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_task(pool, 1, 0, 1, 1), std::invalid_argument);
  // 3-way 2-shot 2-query exactly exhausts every class: feasible.
  const MetaTask task = sample_task(pool, 3, 2, 2, 1);
  CHECK(task.num_nodes() == 12);
}

TEST_CASE("every eligible class appears across seeds") {
  const LabelPool pool = even_pool(6, 5);
  std::set<int> seen;
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    const MetaTask task = sample_task(pool, 2, 1, 1, seed);
    for (int cls : task.classes) seen.insert(cls);
  }
  CHECK(seen.size() == 6);
}

TEST_CASE("prototypes are class means") {
  const Tensor support({4, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  const Tensor protos = prototype_matrix(support, 2, 2);
  CHECK(protos == Tensor({2, 2}, {2, 3, 20, 30}));

  Tape tape;
  CHECK_THROWS_AS(
      prototype_rows(tape, tape.constant(support), 3, 2),
      std::invalid_argument);
}

TEST_CASE("equidistant queries get exactly uniform probabilities") {
  // Three prototypes at the corners of an equilateral triangle, query at
  // the centroid: probabilities are 1/3 each and the loss is M N ln N.
  const double h = std::sqrt(3.0) / 2.0;
  const Tensor support({3, 2}, {0.0, 0.0, 1.0, 0.0, 0.5, h});
  const Tensor centroid({1, 2}, {0.5, h / 3.0});

  const Tensor probs = class_probabilities(centroid, support);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(probs.at(0, c) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }

  Tape tape;
  const auto lp = proto_log_probs(tape, tape.constant(centroid),
                                  prototype_rows(tape, tape.constant(support), 3, 1));
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(tape.value(lp).at(0, c) ==
          doctest::Approx(-std::log(3.0)).epsilon(1e-12));
  }

  // Full uniform episode: all embeddings identical, N*M queries.
  const Tensor flat_support = Tensor::zeros({4, 3});
  const Tensor flat_query = Tensor::zeros({8, 3});
  Tape tape2;
  const auto loss2 = proto_nll(tape2, tape2.constant(flat_support),
                               tape2.constant(flat_query), 4, 1, 2);
  CHECK(tape2.value(loss2).scalar_value() ==
        doctest::Approx(8.0 * std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("probabilities follow the negative squared-distance softmax") {
  // Query sits on prototype 0; the rest are 20 squared units away, so
  // p_0 = 1 / (1 + (N-1) e^-20).
  const int n = 4;
  Tensor protos({n, 1});
  protos.at(0, 0) = 0.0;
  for (int c = 1; c < n; ++c) protos.at(static_cast<std::size_t>(c), 0) = std::sqrt(20.0);
  const Tensor query({1, 1}, {0.0});

  const Tensor probs = class_probabilities(query, protos);
  const double expect = 1.0 / (1.0 + 3.0 * std::exp(-20.0));
  CHECK(probs.at(0, 0) == doctest::Approx(expect).epsilon(1e-13));
  double sum = 0.0;
  for (int c = 0; c < n; ++c) sum += probs.at(0, static_cast<std::size_t>(c));
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("episode loss matches a term-by-term oracle") {
  Rng rng(102);
  const int n_way = 3, k_shot = 2, m_query = 2;
  const Tensor support = random_matrix(6, 4, rng);
  const Tensor queries = random_matrix(6, 4, rng);

  Tape tape;
  const auto loss = proto_nll(tape, tape.constant(support),
                              tape.constant(queries), n_way, k_shot, m_query);

  const Tensor protos = prototype_matrix(support, n_way, k_shot);
  const Tensor probs = class_probabilities(queries, protos);
  double expect = 0.0;
  for (int q = 0; q < 6; ++q) {
    const int label = q / m_query;
    expect -= std::log(probs.at(static_cast<std::size_t>(q),
                                static_cast<std::size_t>(label)));
  }
  CHECK(tape.value(loss).scalar_value() == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("episode loss gradients pass the finite-difference check") {
  Rng rng(103);
  ParamStore store;
  store.create("support", {6, 3}, Init::kGlorotUniform, rng);
  store.create("queries", {3, 3}, Init::kGlorotUniform, rng);
  auto build = [](Tape& t, const ParamStore& p) {
    return proto_nll(t, use_param(t, p, "support"), use_param(t, p, "queries"),
                     3, 2, 1);
  };
  CHECK(grad_check(store, build).max_rel_err < 1e-6);
}

TEST_CASE("predictions are isometry invariant") {
  Rng rng(104);
  const Tensor support = random_matrix(8, 3, rng);
  const Tensor queries = random_matrix(6, 3, rng);
  const Tensor protos = prototype_matrix(support, 4, 2);

  // Rotate by a permutation-sign matrix and translate: exact isometry.
  const Tensor q({3, 3}, {0, 1, 0, -1, 0, 0, 0, 0, 1});
  auto apply = [&](const Tensor& m) {
    Tensor out = kernels::matmul(m, q);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += 4.5;
    return out;
  };

  const Tensor p1 = class_probabilities(queries, protos);
  const Tensor p2 = class_probabilities(
      apply(queries), prototype_matrix(apply(support), 4, 2));
  for (std::size_t i = 0; i < p1.numel(); ++i) {
    CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-12));
  }
}

TEST_CASE("argmax prediction breaks ties toward the lowest class") {
  const Tensor probs({3, 3}, {0.2, 0.6, 0.2,   //
                              0.4, 0.4, 0.2,   // tie between 0 and 1
                              0.1, 0.2, 0.7});
  CHECK(predict_classes(probs) == std::vector<int>{1, 0, 2});

  // A query exactly between two prototypes lands on the lower index.
  const Tensor protos({2, 1}, {-1.0, 1.0});
  const Tensor query({1, 1}, {0.0});
  CHECK(predict_classes(class_probabilities(query, protos)) ==
        std::vector<int>{0});

  CHECK_THROWS_AS(predict_classes(Tensor({2})), std::invalid_argument);
}

TEST_CASE("accuracy counts exact matches") {
  CHECK(accuracy({0, 1, 2, 1}, {0, 1, 1, 1}) == doctest::Approx(0.75));
  CHECK_THROWS_AS(accuracy({0}, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(accuracy({}, {}), std::invalid_argument);
}
