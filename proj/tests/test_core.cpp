#include <cmath>
#include <numeric>

#include "doctest.h"
#include "vcl/autodiff.hpp"
#include "vcl/error.hpp"
#include "vcl/random.hpp"
#include "vcl/tensor.hpp"

using namespace vcl;

TEST_CASE("tensor construction and shape checks") {
  Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.at(1, 2) == 6);
  CHECK(m.row(1)[0] == 4);
  CHECK(m.shape_string() == "[2, 3]");
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK(Tensor::scalar(4).item() == 4);
  CHECK_THROWS(m.item());
  Tensor r = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(r == Tensor::matrix(2, 2, {1, 2, 3, 4}));
  CHECK_THROWS(Tensor::from_rows({{1, 2}, {3}}));
}

TEST_CASE("l2_normalize") {
  const auto v = l2_normalize(std::vector<double>{3, 4});
  CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(v[1] == doctest::Approx(0.8).epsilon(1e-15));
  const auto u = l2_normalize(std::vector<double>{0.6, 0.8});
  CHECK(std::abs(u[0] - 0.6) < 1e-15);
  CHECK(std::abs(l2_norm(l2_normalize(std::vector<double>{1e-3, -7, 2.5}))- 1.0) < 1e-12);
  CHECK_THROWS_AS(l2_normalize(std::vector<double>{0, 0}), DegenerateInputError);
}

TEST_CASE("prng determinism and splitting") {
  Prng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Prng c(7);
  c.normal();
  // split depends on the seed only, not on how far the parent advanced.
  CHECK(Prng(7).split(3).next_u64() == c.split(3).next_u64());
  CHECK(Prng(7).split(3).next_u64() != Prng(7).split(4).next_u64());

  // Reference xoshiro256** seeded by SplitMix64, written out independently.
  std::uint64_t sm = 7;
  auto next_sm = [&] {
    std::uint64_t z = (sm += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t s[4] = {next_sm(), next_sm(), next_sm(), next_sm()};
  auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
  Prng d(7);
  for (int i = 0; i < 10; ++i) {
    const std::uint64_t expected = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    CHECK(d.next_u64() == expected);
  }
}

TEST_CASE("prng ranges") {
  Prng p(11);
  for (int i = 0; i < 10000; ++i) {
    const double u = p.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const double v = p.uniform_open();
    CHECK((v > 0.0 && v <= 1.0));
    CHECK(p.below(5) < 5);
  }
  std::vector<int> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  p.shuffle(perm);
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("gaussian_sample moments") {
  Prng a(7), b(7);
  CHECK(gaussian_sample(a, {3, 4}) == gaussian_sample(b, {3, 4}));
  CHECK_THROWS(gaussian_sample(a, {}));
  Prng p(123);
  const Tensor t = gaussian_sample(p, {1000000});
  double m1 = 0, m2 = 0, m4 = 0;
  for (double x : t.data()) {
    m1 += x;
    m2 += x * x;
    m4 += x * x * x * x;
  }
  const double n = static_cast<double>(t.size());
  m1 /= n;
  const double var = m2 / n - m1 * m1;
  CHECK(std::abs(m1) < 0.01);
  CHECK((var > 0.99 && var < 1.01));
  CHECK((m4 / n > 2.9 && m4 / n < 3.1));
}

TEST_CASE("forward examples") {
  Graph g;
  Var a = g.constant(Tensor::vector({2}));
  Var b = g.constant(Tensor::vector({3}));
  CHECK((a * b).value()[0] == 6);
  Var x = g.constant(Tensor({4}, 1.0));
  CHECK(sum(x).value().item() == 4);
}

TEST_CASE("affine + tanh chain matches a scalar loop") {
  Prng p(5);
  const Tensor x = gaussian_sample(p, {3, 4});
  const Tensor w = gaussian_sample(p, {4, 5});
  const Tensor bias = gaussian_sample(p, {5});
  Graph g;
  Var y = tanh(add_bias(matmul(g.constant(x), g.constant(w)), g.constant(bias)));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = bias[j];
      for (std::size_t k = 0; k < 4; ++k) s += x.at(i, k) * w.at(k, j);
      CHECK(std::abs(y.value().at(i, j) - std::tanh(s)) < 1e-12);
    }
  }
}

TEST_CASE("forward_eval rebinding is pure") {
  Graph g;
  Var x = g.input("x");
  Var w = g.parameter(Tensor::matrix(2, 1, {1.5, -0.5}), "w");
  Var y = sum(square(matmul(x, w)));
  g.set_output("y", y);
  CHECK_FALSE(g.has_value(y));
  const auto out1 = g.forward_eval({{"x", Tensor::matrix(1, 2, {2, 4})}});
  CHECK(out1.at("y").item() == doctest::Approx(1.0));  // (3 - 2)^2
  const auto out2 = g.forward_eval({{"x", Tensor::matrix(1, 2, {2, 4})}});
  CHECK(out1.at("y") == out2.at("y"));
  CHECK_THROWS_AS(g.forward_eval({{"nope", Tensor::scalar(1)}}), ShapeError);
}

TEST_CASE("forward_eval reports the non-finite node") {
  Graph g;
  Var x = g.input("x");
  Var y = sum(log(x));
  g.set_output("y", y);
  try {
    g.forward_eval({{"x", Tensor::vector({-1.0, 1.0})}});
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("node") != std::string::npos);
  }
}

TEST_CASE("backward examples") {
  {
    Graph g;
    Var x = g.parameter(Tensor::scalar(3));
    Var y = square(x);
    g.backward(y);
    CHECK(x.grad().item() == doctest::Approx(6));
  }
  {
    Graph g;
    Var x = g.parameter(Tensor::matrix(1, 4, {0.3, -1.2, 2.0, 0.1}));
    Var y = sum(exp(masked_log_softmax(x, std::vector<std::uint8_t>(4, 1))));
    g.backward(y);
    for (double v : x.grad().data()) CHECK(std::abs(v) < 1e-12);
  }
  {
    Graph g;
    Var x = g.parameter(Tensor::vector({1, 2}));
    CHECK_THROWS(g.backward(x));  // not scalar
  }
  {
    Graph g;
    Var x = g.input("x");
    Var y = sum(x);
    CHECK_THROWS(g.backward(y));  // forward not run
  }
}

TEST_CASE("gradient accumulation through shared nodes") {
  Graph g;
  Var x = g.parameter(Tensor::vector({1.0, 2.0}));
  Var y = sum(x * x + x);
  g.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  CHECK(x.grad()[1] == doctest::Approx(5.0));
}

TEST_CASE("grad_check examples") {
  const double e1 = grad_check([](Graph&, Var x) {
    return add(sum(sin(slice_cols(x, 0, 1))), sum(square(slice_cols(x, 1, 2))));
  }, Tensor::matrix(1, 2, {0.0, 2.0}), 1e-5);
  CHECK(e1 < 1e-6);
  CHECK_THROWS_AS(grad_check([](Graph&, Var x) { return sum(log(x)); }, Tensor::vector({1e-7}), 1e-5),
                  NonFiniteError);
  CHECK_THROWS(grad_check([](Graph&, Var x) { return sum(x); }, Tensor::vector({1.0}), 0.0));
}

TEST_CASE("every primitive passes finite differences") {
  Prng p(99);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = gaussian_sample(p, {3, 4});
    Tensor w = gaussian_sample(p, {4, 2});
    const auto mask = std::vector<std::uint8_t>{1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1, 0};
    auto f = [&](Graph& g, Var x) {
      Var wc = g.constant(w);
      Var h = matmul(tanh(x), wc);
      Var r = relu(add_scalar(x, 0.1));
      Var c = clamp(x, -0.5, 0.5);
      Var n = row_l2_normalize(x);
      Var ls = masked_log_softmax(scale(x, 2.0), mask);
      Var cat = concat_cols({slice_cols(x, 0, 2), slice_rows(transpose(x), 0, 3)});
      Var rows = concat_rows({slice_rows(x, 1, 3), x});
      Tensor wt({3}, 0.0);
      wt[0] = 1;
      wt[2] = -2;
      return sum(square(h)) + mean(r) + sum(c * c) + sum(n * x) + weighted_sum(row_sum(ls), wt) +
             sum(exp(scale(cat, 0.1))) + sum(weighted_row_sum(rows, Tensor::matrix(5, 4, 0.3))) +
             sum(log(add_scalar(square(x), 1.0))) + sum(sub(sin(x), x));
    };
    CHECK(grad_check(f, a, 1e-5) < 1e-6);
  }
}

TEST_CASE("deterministic gradients across runs") {
  Prng p(1);
  const Tensor a = gaussian_sample(p, {5, 3});
  auto run = [&] {
    Graph g;
    Var x = g.parameter(a);
    Var y = sum(square(matmul(x, transpose(x))));
    g.backward(y);
    return x.grad();
  };
  CHECK(run() == run());
}
