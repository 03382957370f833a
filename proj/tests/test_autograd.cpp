#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "s2slab/gradcheck.hpp"
#include "s2slab/tensor.hpp"

using namespace s2slab;

namespace {

std::vector<double> rand_vec(size_t n, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

Tensor rand_param(const std::string& name, const Shape& shape, uint64_t seed) {
  return Tensor::param(name, shape, rand_vec(shape_numel(shape), seed));
}

// Weighted scalar so per-element gradient errors cannot cancel.
Tensor weighted(const Tensor& t, uint64_t seed) {
  Tensor w = Tensor::constant({t.numel()}, rand_vec(t.numel(), seed, 0.1, 1.0));
  return sum_all(mul(reshape(t, {t.numel()}), w));
}

void expect_gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                      double tol = 1e-6) {
  GradCheckReport rep = grad_check(f, params, 1e-5, tol);
  INFO(rep.render());
  CHECK(rep.pass);
}

}  // namespace

TEST_CASE("add value and broadcast variants") {
  Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::constant({2, 2}, {10, 20, 30, 40});
  CHECK(add(a, b).value() == std::vector<double>{11, 22, 33, 44});

  Tensor bias = Tensor::constant({2}, {100, 200});
  CHECK(add(a, bias).value() == std::vector<double>{101, 202, 103, 204});

  Tensor s = Tensor::scalar(5);
  CHECK(add(a, s).value() == std::vector<double>{6, 7, 8, 9});

  CHECK_THROWS_AS(add(a, Tensor::constant({3}, {1, 2, 3})), std::invalid_argument);
}

TEST_CASE("add gradients across broadcasts") {
  Tensor a = rand_param("a", {3, 4}, 1);
  Tensor b = rand_param("b", {3, 4}, 2);
  expect_gradcheck([&]() { return weighted(add(a, b), 9); }, {a, b});

  Tensor bias = rand_param("bias", {4}, 3);
  expect_gradcheck([&]() { return weighted(add(a, bias), 9); }, {a, bias});

  Tensor s = rand_param("s", {1}, 4);
  expect_gradcheck([&]() { return weighted(add(a, s), 9); }, {a, s});
}

TEST_CASE("mul, sub and scale") {
  Tensor a = rand_param("a", {2, 5}, 5);
  Tensor b = rand_param("b", {2, 5}, 6);
  expect_gradcheck([&]() { return weighted(mul(a, b), 9); }, {a, b});
  expect_gradcheck([&]() { return weighted(sub(a, b), 9); }, {a, b});
  expect_gradcheck([&]() { return weighted(scale(a, -2.5), 9); }, {a});
  CHECK(scale(Tensor::scalar(3), -2.0).item() == -6.0);
}

TEST_CASE("matmul values against hand computation") {
  Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::constant({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(a, b).value() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul gradients, flat and batched") {
  Tensor a = rand_param("a", {2, 3, 4}, 7);
  Tensor w = rand_param("w", {4, 5}, 8);
  expect_gradcheck([&]() { return weighted(matmul(a, w), 9); }, {a, w});

  Tensor x = rand_param("x", {2, 2, 3, 4}, 10);
  Tensor y = rand_param("y", {2, 2, 4, 2}, 11);
  expect_gradcheck([&]() { return weighted(matmul(x, y), 9); }, {x, y});

  CHECK_THROWS_AS(matmul(Tensor::constant({2, 3}, rand_vec(6, 1)),
                         Tensor::constant({4, 2}, rand_vec(8, 2))),
                  std::invalid_argument);
}

TEST_CASE("transpose moves axes and routes gradients") {
  Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor t = transpose(a, 0, 1);
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.value() == std::vector<double>{1, 4, 2, 5, 3, 6});

  Tensor x = rand_param("x", {2, 3, 4, 5}, 12);
  expect_gradcheck([&]() { return weighted(transpose(x, 1, 2), 9); }, {x});
}

TEST_CASE("reshape, concat and slice") {
  Tensor a = rand_param("a", {2, 6}, 13);
  expect_gradcheck([&]() { return weighted(reshape(a, {3, 4}), 9); }, {a});
  CHECK_THROWS_AS(reshape(a, {5, 5}), std::invalid_argument);

  Tensor p = rand_param("p", {2, 3}, 14);
  Tensor q = rand_param("q", {2, 2}, 15);
  Tensor c = concat({p, q}, 1);
  CHECK(c.shape() == Shape{2, 5});
  expect_gradcheck([&]() { return weighted(concat({p, q}, 1), 9); }, {p, q});

  Tensor s = slice(c, 1, 3, 2);
  CHECK(s.shape() == Shape{2, 2});
  CHECK(s.value() == q.value());
  expect_gradcheck([&]() { return weighted(slice(p, 1, 1, 2), 9); }, {p});
}

TEST_CASE("embedding looks up rows and scatters gradients") {
  Tensor table = rand_param("table", {6, 3}, 16);
  std::vector<int32_t> ids = {1, 4, 4, 0};
  Tensor e = embedding(table, ids, {2, 2});
  CHECK(e.shape() == Shape{2, 2, 3});
  for (size_t j = 0; j < 3; ++j) {
    CHECK(e.value()[j] == table.value()[1 * 3 + j]);
    CHECK(e.value()[1 * 3 + j] == table.value()[4 * 3 + j]);
  }
  expect_gradcheck([&]() { return weighted(embedding(table, ids, {2, 2}), 9); }, {table});
  CHECK_THROWS_AS(embedding(table, {7}, {1}), std::out_of_range);
}

TEST_CASE("softmax rows are distributions; uniform logits give 1/V") {
  Tensor a = Tensor::constant({2, 4}, {0, 0, 0, 0, 1, 1, 1, 1});
  Tensor s = softmax(a, 1);
  for (double v : s.value()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  Tensor x = rand_param("x", {3, 5}, 17);
  expect_gradcheck([&]() { return weighted(softmax(x, 1), 9); }, {x});
  expect_gradcheck([&]() { return weighted(softmax(x, 0), 9); }, {x});
}

TEST_CASE("log_softmax matches log of softmax and has stable gradients") {
  Tensor x = rand_param("x", {3, 6}, 18);
  Tensor ls = log_softmax(x, 1);
  Tensor s = softmax(x, 1);
  for (size_t i = 0; i < ls.numel(); ++i)
    CHECK(ls.value()[i] == doctest::Approx(std::log(s.value()[i])).epsilon(1e-10));
  expect_gradcheck([&]() { return weighted(log_softmax(x, 1), 9); }, {x});

  // huge logits stay finite thanks to max subtraction
  Tensor big = Tensor::constant({1, 3}, {1000, 1000, 1000});
  Tensor bls = log_softmax(big, 1);
  for (double v : bls.value())
    CHECK(v == doctest::Approx(-std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("relu and gelu") {
  Tensor a = Tensor::constant({4}, {-1, 0, 0.5, 2});
  CHECK(relu(a).value() == std::vector<double>{0, 0, 0.5, 2});

  Tensor g = gelu(Tensor::constant({1}, {0.0}));
  CHECK(g.item() == 0.0);

  Tensor x = rand_param("x", {2, 7}, 19);
  expect_gradcheck([&]() { return weighted(relu(x), 9); }, {x});
  expect_gradcheck([&]() { return weighted(gelu(x), 9); }, {x});
}

TEST_CASE("relu kink at exactly zero is excludable from grad check") {
  Tensor x = Tensor::param("x", {3}, {-1.0, 0.0, 1.0});
  std::map<std::string, std::vector<uint8_t>> exclude{{"x", {0, 1, 0}}};
  GradCheckReport rep =
      grad_check([&]() { return sum_all(relu(x)); }, {x}, 1e-5, 1e-6, &exclude);
  CHECK(rep.pass);
  CHECK(rep.entries[0].excluded == 1);
  CHECK(rep.entries[0].checked == 2);
}

TEST_CASE("layer_norm normalizes rows and differentiates through stats") {
  size_t d = 6;
  Tensor g1 = Tensor::param("g", {d}, std::vector<double>(d, 1.0));
  Tensor b0 = Tensor::param("b", {d}, std::vector<double>(d, 0.0));

  // constant row: xhat = 0, output = bias
  Tensor cst = Tensor::constant({1, d}, std::vector<double>(d, 3.7));
  Tensor ln = layer_norm(cst, g1, b0);
  for (double v : ln.value()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  Tensor x = rand_param("x", {3, d}, 20);
  Tensor g = rand_param("gain", {d}, 21);
  Tensor b = rand_param("bias", {d}, 22);
  expect_gradcheck([&]() { return weighted(layer_norm(x, g, b), 9); }, {x, g, b}, 1e-5);
}

TEST_CASE("reductions") {
  Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(sum(a, 0).value() == std::vector<double>{5, 7, 9});
  CHECK(sum(a, 1).value() == std::vector<double>{6, 15});
  CHECK(mean(a, 1).value() == std::vector<double>{2, 5});
  CHECK(sum_all(a).item() == 21);
  CHECK(mean_all(a).item() == doctest::Approx(3.5));

  Tensor x = rand_param("x", {2, 3, 4}, 23);
  expect_gradcheck([&]() { return weighted(sum(x, 1), 9); }, {x});
  expect_gradcheck([&]() { return weighted(mean(x, 2), 9); }, {x});
  expect_gradcheck([&]() { return sum_all(x); }, {x});
  expect_gradcheck([&]() { return mean_all(x); }, {x});
}

TEST_CASE("masked_fill blocks values and gradients where masked") {
  Tensor a = Tensor::param("a", {2, 2}, {1, 2, 3, 4});
  Tensor m = Tensor::constant({2, 2}, {0, 1, 0, 1});
  Tensor f = masked_fill(a, m, -1e9);
  CHECK(f.value() == std::vector<double>{1, -1e9, 3, -1e9});

  a.zero_grad();
  backward(sum_all(f));
  CHECK(a.grad() == std::vector<double>{1, 0, 1, 0});

  Tensor x = rand_param("x", {3, 3}, 24);
  Tensor mask = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  expect_gradcheck([&]() { return weighted(masked_fill(x, mask, 2.0), 9); }, {x});

  Tensor gm = rand_param("gm", {2, 2}, 25);
  CHECK_THROWS_AS(masked_fill(a, gm, 0.0), std::invalid_argument);
}

TEST_CASE("row_normalize produces unit rows") {
  Tensor x = rand_param("x", {4, 6}, 26);
  Tensor y = row_normalize(x);
  for (size_t r = 0; r < 4; ++r) {
    double ss = 0.0;
    for (size_t j = 0; j < 6; ++j) ss += y.value()[r * 6 + j] * y.value()[r * 6 + j];
    CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-9));
  }
  expect_gradcheck([&]() { return weighted(row_normalize(x), 9); }, {x});
}

TEST_CASE("cosine similarity of a vector with itself is 1, orthogonal is 0") {
  Tensor a = Tensor::constant({1, 3}, {1, 2, 3});
  CHECK(cosine_similarity(a, a).value()[0] == doctest::Approx(1.0).epsilon(1e-9));

  Tensor u = Tensor::constant({1, 2}, {1, 0});
  Tensor v = Tensor::constant({1, 2}, {0, 1});
  CHECK(cosine_similarity(u, v).value()[0] == doctest::Approx(0.0).epsilon(1e-12));

  Tensor x = rand_param("x", {5, 4}, 27);
  Tensor y = rand_param("y", {5, 4}, 28);
  expect_gradcheck([&]() { return weighted(cosine_similarity(x, y), 9); }, {x, y});
}

TEST_CASE("pick gathers along the last axis") {
  Tensor a = Tensor::constant({2, 3}, {10, 11, 12, 20, 21, 22});
  Tensor p = pick(a, {2, 0});
  CHECK(p.value() == std::vector<double>{12, 20});

  Tensor x = rand_param("x", {2, 2, 4}, 29);
  expect_gradcheck([&]() { return weighted(pick(x, {1, 3, 0, 2}), 9); }, {x});
  CHECK_THROWS_AS(pick(a, {3, 0}), std::out_of_range);
  CHECK_THROWS_AS(pick(a, {0}), std::invalid_argument);
}

TEST_CASE("select_time picks one row per batch") {
  Tensor h = Tensor::constant({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor s = select_time(h, {1, 0});
  CHECK(s.value() == std::vector<double>{3, 4, 5, 6});

  Tensor x = rand_param("x", {3, 4, 5}, 30);
  expect_gradcheck([&]() { return weighted(select_time(x, {2, 0, 3}), 9); }, {x});
}

TEST_CASE("masked_mean_rows equals a flat-loop average") {
  Tensor h = rand_param("h", {2, 3, 4}, 31);
  std::vector<uint8_t> inc = {1, 0, 1, 0, 1, 0};
  Tensor m = masked_mean_rows(h, inc);

  for (size_t b = 0; b < 2; ++b)
    for (size_t j = 0; j < 4; ++j) {
      double acc = 0.0;
      int cnt = 0;
      for (size_t t = 0; t < 3; ++t)
        if (inc[b * 3 + t]) {
          acc += h.value()[(b * 3 + t) * 4 + j];
          ++cnt;
        }
      CHECK(m.value()[b * 4 + j] == doctest::Approx(acc / cnt).epsilon(1e-12));
    }
  expect_gradcheck([&]() { return weighted(masked_mean_rows(h, inc), 9); }, {h});

  std::vector<uint8_t> empty_row = {0, 0, 0, 1, 1, 1};
  CHECK_THROWS_AS(masked_mean_rows(h, empty_row), std::runtime_error);
}

TEST_CASE("dropout is pass-through at rate 0 and rescales kept values") {
  Tensor x = rand_param("x", {100}, 32);
  Rng rng(5);
  Tensor same = dropout(x, 0.0, rng);
  CHECK(same.node() == x.node());

  Rng rng2(5);
  Tensor d = dropout(x, 0.5, rng2);
  int kept = 0;
  for (size_t i = 0; i < 100; ++i) {
    double v = d.value()[i];
    if (v != 0.0) {
      ++kept;
      CHECK(v == doctest::Approx(2.0 * x.value()[i]).epsilon(1e-12));
    }
  }
  CHECK(kept > 20);
  CHECK(kept < 80);
}

TEST_CASE("backward requires a scalar and accumulates across calls") {
  Tensor a = Tensor::param("a", {2}, {1, 2});
  CHECK_THROWS_AS(backward(add(a, a)), std::runtime_error);

  a.zero_grad();
  backward(sum_all(add(a, a)));
  CHECK(a.grad() == std::vector<double>{2, 2});
  backward(sum_all(add(a, a)));
  CHECK(a.grad() == std::vector<double>{4, 4});
}

TEST_CASE("leaves outside the graph keep zero grad") {
  Tensor a = Tensor::param("a", {2}, {1, 2});
  Tensor b = Tensor::param("b", {2}, {3, 4});
  a.zero_grad();
  b.zero_grad();
  backward(sum_all(mul(a, a)));
  CHECK(b.grad() == std::vector<double>{0, 0});
  CHECK(a.grad() == std::vector<double>{2, 4});
}

TEST_CASE("forward recomputation is bit-identical") {
  Tensor x = rand_param("x", {4, 4}, 33);
  auto f = [&]() {
    return sum_all(mul(softmax(matmul(x, x), 1), gelu(x)));
  };
  double v1 = f().item();
  double v2 = f().item();
  CHECK(v1 == v2);
}

TEST_CASE("a composite graph passes grad check end to end") {
  Tensor w1 = rand_param("w1", {4, 8}, 34);
  Tensor b1 = rand_param("b1", {8}, 35);
  Tensor w2 = rand_param("w2", {8, 3}, 36);
  Tensor g = rand_param("g", {8}, 37);
  Tensor b = rand_param("b", {8}, 38);
  Tensor x = Tensor::constant({5, 4}, rand_vec(20, 39));

  auto f = [&]() {
    Tensor h = add(matmul(x, w1), b1);
    h = layer_norm(h, g, b);
    h = gelu(h);
    Tensor logits = matmul(h, w2);
    Tensor lp = log_softmax(logits, 1);
    return scale(sum_all(pick(lp, {0, 1, 2, 0, 1})), -0.2);
  };
  expect_gradcheck(f, {w1, b1, w2, g, b}, 1e-5);
}
