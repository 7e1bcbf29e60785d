#include "vcl/projected_normal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vcl/error.hpp"

namespace vcl {

PosteriorParams make_posterior(std::vector<double> mu, std::vector<double> log_var) {
  if (mu.size() != log_var.size()) throw ShapeError("posterior: mu and log_var lengths differ");
  if (mu.empty()) throw ShapeError("posterior: empty parameter vectors");
  for (auto& v : log_var) v = std::clamp(v, kLogVarMin, kLogVarMax);
  return PosteriorParams{std::move(mu), std::move(log_var)};
}

PosteriorBatch split_posterior(Var head) {
  const std::size_t width = head.value().cols();
  if (width % 2 != 0) throw ShapeError("split_posterior: head width must be even");
  const std::size_t d = width / 2;
  return PosteriorBatch{slice_cols(head, 0, d), clamp(slice_cols(head, d, width), kLogVarMin, kLogVarMax)};
}

PosteriorParams posterior_row(const PosteriorBatch& batch, std::size_t row) {
  return PosteriorParams{batch.mu.value().row_vector(row), batch.log_var.value().row_vector(row)};
}

namespace {

std::vector<double> draw_u(const PosteriorParams& p, Prng& prng, std::vector<double>& eps) {
  const std::size_t d = p.dim();
  std::vector<double> u(d);
  for (std::size_t i = 0; i < d; ++i) {
    eps[i] = prng.normal();
    u[i] = p.mu[i] + std::exp(0.5 * p.log_var[i]) * eps[i];
  }
  return u;
}

}  // namespace

std::vector<std::vector<double>> sample_pn(const PosteriorParams& params, Prng& prng, std::size_t m) {
  if (m < 1) throw std::invalid_argument("sample_pn: m must be >= 1");
  std::vector<std::vector<double>> out;
  out.reserve(m);
  std::vector<double> eps(params.dim());
  for (std::size_t k = 0; k < m; ++k) {
    auto u = draw_u(params, prng, eps);
    if (!(l2_norm(u) > kDegenerateNorm)) u = draw_u(params, prng, eps);
    out.push_back(l2_normalize(u));
  }
  return out;
}

Var sample_pn(const PosteriorBatch& batch, Prng& prng, std::size_t m, bool zero_variance) {
  if (m < 1) throw std::invalid_argument("sample_pn: m must be >= 1");
  Graph& g = *batch.mu.graph;
  const Tensor mu = batch.mu.value();
  const Tensor lv = batch.log_var.value();
  const std::size_t n = mu.rows(), d = mu.cols();

  std::vector<Var> reps(m, batch.mu);
  Var mu_rep = m == 1 ? batch.mu : concat_rows(reps);
  if (zero_variance) return row_l2_normalize(mu_rep);

  Tensor eps = Tensor::matrix(m * n, d);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      auto row = eps.row(k * n + i);
      for (int attempt = 0; attempt < 2; ++attempt) {
        double norm2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          row[j] = prng.normal();
          const double u = mu.at(i, j) + std::exp(0.5 * lv.at(i, j)) * row[j];
          norm2 += u * u;
        }
        if (std::sqrt(norm2) > kDegenerateNorm) break;
        if (attempt == 1) {
          throw DegenerateInputError("sample_pn: degenerate draw for posterior " + std::to_string(i));
        }
      }
    }
  }
  std::vector<Var> lv_reps(m, batch.log_var);
  Var lv_rep = m == 1 ? batch.log_var : concat_rows(lv_reps);
  Var sigma = exp(scale(lv_rep, 0.5));
  Var u = mu_rep + sigma * g.constant(std::move(eps), "eps");
  return row_l2_normalize(u);
}

double kl_gaussian_to_std(const PosteriorParams& params) {
  double s = 0.0;
  for (std::size_t i = 0; i < params.dim(); ++i) {
    const double lv = std::clamp(params.log_var[i], kLogVarMin, kLogVarMax);
    s += std::exp(lv) + params.mu[i] * params.mu[i] - 1.0 - lv;
  }
  return 0.5 * s;
}

double kl_normalized(const PosteriorParams& params) {
  return kl_gaussian_to_std(params) / static_cast<double>(params.dim());
}

Var kl_normalized_rows(const PosteriorBatch& batch) {
  const double d = static_cast<double>(batch.dim());
  Var terms = exp(batch.log_var) + square(batch.mu) - batch.log_var;
  return scale(add_scalar(row_sum(terms), -d), 0.5 / d);
}

double log_det_cov(const PosteriorParams& params) {
  double s = 0.0;
  for (double lv : params.log_var) s += std::clamp(lv, kLogVarMin, kLogVarMax);
  return s;
}

double trace_cov(const PosteriorParams& params) {
  double s = 0.0;
  for (double lv : params.log_var) s += std::exp(std::clamp(lv, kLogVarMin, kLogVarMax));
  return s;
}

SphereKlEstimate mc_kl_pn_to_uniform(const PosteriorParams& params, Prng& prng, std::size_t n,
                                     std::size_t bins) {
  const std::size_t d = params.dim();
  if (d != 2 && d != 3) throw std::invalid_argument("mc_kl_pn_to_uniform: dimension must be 2 or 3");
  if (n < kMinKlSamples || bins < kMinKlBins) {
    throw std::invalid_argument("mc_kl_pn_to_uniform: need n >= 100000 and bins >= 32");
  }

  std::size_t bands = 1, sectors = bins;
  if (d == 3) {
    for (std::size_t b = 1; b * b <= bins; ++b) {
      if (bins % b == 0) bands = b;
    }
    sectors = bins / bands;
  }

  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::vector<std::size_t> counts(bins, 0);
  std::vector<double> eps(d);
  for (std::size_t s = 0; s < n; ++s) {
    auto u = draw_u(params, prng, eps);
    if (!(l2_norm(u) > kDegenerateNorm)) u = draw_u(params, prng, eps);
    const auto z = l2_normalize(u);
    const double phi = std::atan2(z[1], z[0]) + std::numbers::pi;  // [0, 2pi]
    auto sector = static_cast<std::size_t>(phi / two_pi * static_cast<double>(sectors));
    sector = std::min(sector, sectors - 1);
    std::size_t band = 0;
    if (d == 3) {
      band = static_cast<std::size_t>((z[2] + 1.0) * 0.5 * static_cast<double>(bands));
      band = std::min(band, bands - 1);
    }
    ++counts[band * sectors + sector];
  }

  const double nb = static_cast<double>(bins);
  const double nn = static_cast<double>(n);
  double kl = 0.0, second = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / nn;
    const double l = std::log(p * nb);
    kl += p * l;
    second += p * l * l;
  }
  SphereKlEstimate out;
  out.estimate = kl;
  out.standard_error = std::sqrt(std::max(0.0, second - kl * kl) / nn);
  out.bias_bound = (nb - 1.0) / (2.0 * nn);
  out.bins = bins;
  return out;
}

}  // namespace vcl
