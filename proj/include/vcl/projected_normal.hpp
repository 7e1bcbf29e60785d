#pragma once

// Projected-normal posterior PN(mu, diag(sigma^2)) on the unit sphere.
//
// The encoder head emits log-variances; every consumer clamps them to
// [kLogVarMin, kLogVarMax] before exponentiation.

#include <cstddef>
#include <vector>

#include "vcl/autodiff.hpp"
#include "vcl/random.hpp"

namespace vcl {

inline constexpr double kLogVarMin = -30.0;
inline constexpr double kLogVarMax = 30.0;

struct PosteriorParams {
  std::vector<double> mu;
  std::vector<double> log_var;  // clamped log sigma^2

  std::size_t dim() const { return mu.size(); }
};

// Validates lengths and clamps log_var.
PosteriorParams make_posterior(std::vector<double> mu, std::vector<double> log_var);

// Row-batched posterior living in a graph: both n x d, log_var already clamped.
struct PosteriorBatch {
  Var mu;
  Var log_var;

  std::size_t rows() const { return mu.value().rows(); }
  std::size_t dim() const { return mu.value().cols(); }
};

// Splits an n x 2d encoder output into (mu, clamp(log_var)).
PosteriorBatch split_posterior(Var head);
PosteriorParams posterior_row(const PosteriorBatch& batch, std::size_t row);

// m unit-norm samples l2_normalize(mu + sigma * eps). A draw whose
// pre-normalisation norm is degenerate is redrawn once, then rejected.
std::vector<std::vector<double>> sample_pn(const PosteriorParams& params, Prng& prng, std::size_t m);

// Reparameterised samples for a batch: an (m*n) x d matrix whose row k*n + i
// is the k-th sample of posterior i. With zero_variance the noise path is
// dropped entirely and every row equals l2_normalize(mu_i).
Var sample_pn(const PosteriorBatch& batch, Prng& prng, std::size_t m, bool zero_variance = false);

// 0.5 * sum_i (sigma_i^2 + mu_i^2 - 1 - log sigma_i^2)
double kl_gaussian_to_std(const PosteriorParams& params);
double kl_normalized(const PosteriorParams& params);
// Per-row kl_normalized as a length-n vector node.
Var kl_normalized_rows(const PosteriorBatch& batch);

double log_det_cov(const PosteriorParams& params);
double trace_cov(const PosteriorParams& params);

struct SphereKlEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;  // delta-method standard error of the plug-in
  double bias_bound = 0.0;      // (bins - 1) / (2n), first-order plug-in bias
  std::size_t bins = 0;
};

inline constexpr std::size_t kMinKlSamples = 100000;
inline constexpr std::size_t kMinKlBins = 32;

// Plug-in KL(PN(mu, K) || Unif(S^{d-1})) from a histogram over equal-area
// bins. d = 2: angular sectors. d = 3: bands of equal height in z (equal area
// by Archimedes) times azimuth sectors; bins must factor as bands * sectors
// with bands the largest divisor <= sqrt(bins).
SphereKlEstimate mc_kl_pn_to_uniform(const PosteriorParams& params, Prng& prng, std::size_t n,
                                     std::size_t bins);

}  // namespace vcl
