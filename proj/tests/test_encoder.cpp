#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "vcl/encoder.hpp"
#include "vcl/error.hpp"

using namespace vcl;

namespace {

MlpEncoder random_encoder(std::vector<std::size_t> dims, std::uint64_t seed, std::vector<double> bounds = {},
                          Activation act = Activation::kTanh) {
  EncoderConfig cfg;
  cfg.layer_dims = std::move(dims);
  cfg.activation = act;
  cfg.init_seed = seed;
  cfg.spectral_bounds = std::move(bounds);
  Prng prng(seed);
  return init_encoder(cfg, prng);
}

// Closed-form largest singular value of a 2x2 matrix.
double exact_sigma_max(double a, double b, double c, double d) {
  const double s = a * a + b * b + c * c + d * d;
  const double det = a * d - b * c;
  return std::sqrt(0.5 * (s + std::sqrt(s * s - 4.0 * det * det)));
}

std::vector<double> head(const MlpEncoder& enc, const std::vector<double>& x) {
  Graph g;
  Var out = forward(bind(g, enc), g.constant(Tensor::matrix(1, x.size(), x)));
  const auto row = out.value().row(0);
  return {row.begin(), row.end()};
}

}  // namespace

TEST_CASE("zero weights give the prior's parameters") {
  MlpEncoder enc = random_encoder({3, 5, 4}, 1);
  for (Tensor* p : enc.parameters()) std::fill(p->data().begin(), p->data().end(), 0.0);
  const auto post = encode(enc, std::vector<double>{0.3, -2.0, 1.0});
  CHECK(post.mu == std::vector<double>{0, 0});
  CHECK(post.log_var == std::vector<double>{0, 0});
}

TEST_CASE("encode matches a scalar reference") {
  for (Activation act : {Activation::kTanh, Activation::kRelu}) {
    const MlpEncoder enc = random_encoder({3, 4, 6}, 2, {}, act);
    const std::vector<double> x{0.2, -0.1, 0.05};
    const auto& l0 = enc.layers()[0];
    const auto& l1 = enc.layers()[1];
    std::vector<double> h(4), out(6);
    for (std::size_t j = 0; j < 4; ++j) {
      double s = l0.bias[j];
      for (std::size_t i = 0; i < 3; ++i) s += x[i] * l0.weight.at(i, j);
      h[j] = act == Activation::kTanh ? std::tanh(s) : std::max(0.0, s);
    }
    for (std::size_t j = 0; j < 6; ++j) {
      double s = l1.bias[j];
      for (std::size_t i = 0; i < 4; ++i) s += h[i] * l1.weight.at(i, j);
      out[j] = s;
    }
    const auto post = encode(enc, x);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::abs(post.mu[j] - out[j]) < 1e-12);
      CHECK(std::abs(post.log_var[j] - out[j + 3]) < 1e-12);
    }
  }
  const MlpEncoder enc = random_encoder({3, 4, 6}, 2);
  CHECK_THROWS(encode(enc, std::vector<double>{1.0, 2.0}));
}

TEST_CASE("batch encode equals independent encodes") {
  const MlpEncoder enc = random_encoder({4, 8, 8, 6}, 3);
  Prng prng(30);
  const Tensor x = gaussian_sample(prng, {7, 4});
  const auto all = encode_all(enc, x);
  REQUIRE(all.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    const auto one = encode(enc, x.row(i));
    CHECK(one.mu == all[i].mu);
    CHECK(one.log_var == all[i].log_var);
  }
}

TEST_CASE("init_encoder") {
  CHECK(random_encoder({4, 6}, 9) == random_encoder({4, 6}, 9));
  CHECK_FALSE(random_encoder({4, 6}, 9) == random_encoder({4, 6}, 10));

  const MlpEncoder big = random_encoder({100, 100}, 11);
  const auto& w = big.layers()[0].weight.data();
  double m = 0.0, s = 0.0;
  for (double v : w) m += v;
  m /= static_cast<double>(w.size());
  for (double v : w) s += (v - m) * (v - m);
  const double sd = std::sqrt(s / static_cast<double>(w.size()));
  CHECK(std::abs(sd / std::sqrt(2.0 / 100.0) - 1.0) < 0.1);
  for (double b : big.layers()[0].bias.data()) CHECK(b == 0.0);

  Prng prng(1);
  EncoderConfig cfg;
  cfg.layer_dims = {4};
  CHECK_THROWS(init_encoder(cfg, prng));
  cfg.layer_dims = {4, 3};
  CHECK_THROWS(init_encoder(cfg, prng));
  cfg.layer_dims = {4, 0, 2};
  CHECK_THROWS(init_encoder(cfg, prng));
  cfg.layer_dims = {4, 2};
  cfg.spectral_bounds = {-1.0};
  CHECK_THROWS(init_encoder(cfg, prng));
  cfg.spectral_bounds = {1.0, 1.0};
  CHECK_THROWS(init_encoder(cfg, prng));
}

TEST_CASE("spectral_project examples") {
  MlpEncoder enc = random_encoder({2, 2}, 4, {1.0});
  enc.layers()[0].weight = Tensor::matrix(2, 2, {3, 0, 0, 1});
  spectral_project(enc);
  const Tensor& w = enc.layers()[0].weight;
  CHECK(std::abs(w.at(0, 0) - 1.0) < 1e-8);
  CHECK(std::abs(w.at(1, 1) - 1.0 / 3.0) < 1e-8);
  CHECK(w.at(0, 1) == 0.0);

  MlpEncoder inside = random_encoder({2, 2}, 4, {1.0});
  inside.layers()[0].weight = Tensor::matrix(2, 2, {0.5, 0.1, -0.2, 0.3});
  const Tensor before = inside.layers()[0].weight;
  const auto report = spectral_project(inside);
  CHECK(inside.layers()[0].weight == before);
  CHECK_FALSE(report[0].rescaled);

  MlpEncoder unbounded = random_encoder({2, 2}, 4);
  CHECK_THROWS(spectral_project(unbounded));
}

TEST_CASE("power iteration agrees with the exact 2x2 singular value") {
  Prng prng(31);
  int checked = 0;
  for (int t = 0; t < 200; ++t) {
    const double a = prng.normal(), b = prng.normal(), c = prng.normal(), d = prng.normal();
    const double exact = exact_sigma_max(a, b, c, d);
    const double det = std::abs(a * d - b * c);
    // Skip near-degenerate spectra where 30 iterations cannot separate the two values.
    if (det / (exact * exact) > 0.5) continue;
    const auto r = spectral_norm(Tensor::matrix(2, 2, {a, b, c, d}));
    CHECK(r.converged);
    CHECK(std::abs(r.value - exact) < 1e-8 * exact);
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("projection enforces the bound and the Lipschitz property") {
  Prng prng(32);
  for (int t = 0; t < 10; ++t) {
    MlpEncoder enc = random_encoder({6, 12, 12, 4}, 40 + t, {0.8, 1.2, 0.5},
                                    t % 2 ? Activation::kRelu : Activation::kTanh);
    for (Tensor* p : enc.parameters()) {
      for (auto& v : p->data()) v *= 3.0;
    }
    spectral_project(enc);
    for (std::size_t l = 0; l < 3; ++l) {
      const double rho = enc.config().spectral_bounds[l];
      CHECK(spectral_norm(enc.layers()[l].weight, 1000, 1e-12).value <= rho * (1.0 + 1e-6));
    }
    for (int s = 0; s < 20; ++s) {
      std::vector<double> x(6);
      for (auto& v : x) v = 2.0 * prng.normal();
      CHECK(l2_norm(head(enc, x)) <= l2_norm(x) * 0.8 * 1.2 * 0.5 * (1.0 + 1e-9));
    }
  }
}

TEST_CASE("encoder gradients agree with finite differences") {
  const MlpEncoder enc = random_encoder({3, 5, 4}, 5);
  Prng prng(33);
  const Tensor x = gaussian_sample(prng, {4, 3});
  for (std::size_t k = 0; k < 4; ++k) {
    const double err = grad_check(
        [&](Graph& g, Var p) {
          BoundEncoder b = bind(g, enc);
          b.params[k] = p;
          return sum(square(forward(b, g.constant(x))));
        },
        enc.layers()[k / 2].*(k % 2 ? &DenseLayer::bias : &DenseLayer::weight), 1e-5);
    CHECK(err < 1e-6);
  }
  CHECK(grad_check([&](Graph& g, Var in) { return sum(square(forward(bind(g, enc), in))); }, x, 1e-5) < 1e-6);
}

TEST_CASE("serialisation round trip is exact") {
  for (const MlpEncoder& enc : {random_encoder({3, 7, 4}, 6), random_encoder({5, 2}, 7, {0.9}, Activation::kRelu)}) {
    std::stringstream ss;
    write_encoder(ss, enc);
    const MlpEncoder back = read_encoder(ss);
    CHECK(back == enc);
    std::stringstream again;
    write_encoder(again, back);
    std::stringstream first;
    write_encoder(first, enc);
    CHECK(again.str() == first.str());
  }
  std::stringstream bad("vcl-encoder garbage");
  CHECK_THROWS(read_encoder(bad));
}
