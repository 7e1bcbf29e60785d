#pragma once

// Representation diagnostics: covariance spectrum, mixed KSG mutual
// information, linear probe, uncertainty regression, KL gap, OOD dispersion.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vcl/data_io.hpp"
#include "vcl/encoder.hpp"
#include "vcl/projected_normal.hpp"
#include "vcl/tensor.hpp"
#include "vcl/train.hpp"

namespace vcl {

// ---- spectrum --------------------------------------------------------------

inline constexpr double kJacobiTolerance = 1e-12;
inline constexpr int kJacobiMaxSweeps = 100;

struct SpectrumReport {
  std::vector<double> eigenvalues;  // descending, negatives clamped to 0
  double effective_rank = 0.0;

  nlohmann::json to_json() const;
  std::string to_csv() const;  // header "index,eigenvalue"
};

// Population covariance (1/n) of the rows of z.
Tensor covariance_matrix(const Tensor& z);

// Cyclic Jacobi; stops when the off-diagonal Frobenius norm falls below
// tol * ||A||_F. Returns eigenvalues in descending order.
std::vector<double> jacobi_eigenvalues(const Tensor& symmetric, double tol = kJacobiTolerance,
                                       int max_sweeps = kJacobiMaxSweeps);

// exp of the Shannon entropy of the normalised spectrum; 0 for a zero spectrum.
double effective_rank(std::span<const double> eigenvalues);

SpectrumReport covariance_spectrum(const Tensor& embeddings);

// ---- mutual information ----------------------------------------------------

inline constexpr std::size_t kDefaultKsgNeighbors = 5;

double digamma_int(std::size_t n);

// Mixed KSG estimate of I(z; c) in nats. Label distance is 0 within a class and
// infinite across classes; z distances are Euclidean.
double mixed_ksg_mi(const Tensor& z, const std::vector<int>& labels, std::size_t k = kDefaultKsgNeighbors);

// ---- linear probe ----------------------------------------------------------

struct ProbeOptions {
  std::size_t epochs = 300;
  double lr = 0.5;
  bool standardize = true;  // z-score features with train statistics
};

struct ProbeReport {
  double top1 = 0.0;
  double top5 = 0.0;
  std::size_t top_k = 5;  // min(5, classes)
  std::vector<double> per_class;      // top-1 accuracy per class, NaN if absent from test
  std::vector<int> unseen_classes;    // in test, missing from train; always counted wrong
  double final_train_loss = 0.0;

  nlohmann::json to_json() const;
};

ProbeReport linear_probe(const Tensor& train_embs, const std::vector<int>& train_labels, const Tensor& test_embs,
                         const std::vector<int>& test_labels, const ProbeOptions& options = {});

// ---- regressions -----------------------------------------------------------

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r = 0.0;  // Pearson correlation; 0 when y is constant
};

// Ordinary least squares of y on x. Throws DegenerateInputError if x is constant.
LinearFit ols_fit(std::span<const double> x, std::span<const double> y);

double label_entropy(std::span<const double> p);

struct UncertaintyReport {
  std::vector<double> log_det;
  std::vector<double> trace;
  std::vector<double> entropy;
  LinearFit log_det_fit;  // log_det on entropy
  LinearFit trace_fit;    // trace on entropy
  // Keyed by the argmax class of each soft label.
  std::map<int, double> class_mean_log_det;
  std::map<int, double> class_mean_trace;

  nlohmann::json to_json() const;
};

UncertaintyReport uncertainty_regression(const std::vector<PosteriorParams>& params, const SoftLabelSet& soft_labels);

// ---- KL generalisation gap -------------------------------------------------

double mean_kl(const MlpEncoder& enc, const Tensor& x);

// mean KL on heldout minus mean KL on train. Identical splits give 0; splits
// sharing only some rows are rejected.
double kl_generalization_gap(const MlpEncoder& enc, const Tensor& train, const Tensor& heldout);

struct GapTrendOptions {
  std::vector<std::size_t> ns{64, 256, 1024, 4096};
  std::size_t seeds = 10;
  std::size_t heldout = 0;   // 0: 10 * max(ns)
  std::size_t steps = 200;   // optimizer steps per run, independent of N
  TrainConfig train;         // epochs is derived from steps
  MixtureSpec data;          // per_class is derived from the split sizes
  std::uint64_t seed = 0;
};

struct GapPoint {
  std::size_t n = 0;
  std::vector<double> gaps;  // one per seed
  double median_abs_gap = 0.0;
};

struct GapTrend {
  std::vector<GapPoint> points;
  double log_log_slope = 0.0;  // least squares of log median|gap| on log N
  bool non_increasing = false;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

GapTrend gap_trend(const GapTrendOptions& options);

// ---- OOD dispersion --------------------------------------------------------

struct DispersionStat {
  double in_mean = 0.0;
  double in_std = 0.0;
  double out_mean = 0.0;
  double out_std = 0.0;
  double std_ratio = 1.0;  // out_std / in_std; 0/0 counts as 1
};

struct OodReport {
  std::map<std::string, DispersionStat> stats;  // "mu_norm", "log_det", "trace"
  nlohmann::json to_json() const;
};

OodReport ood_dispersion_report(const std::vector<PosteriorParams>& in, const std::vector<PosteriorParams>& out);

double median(std::vector<double> v);

}  // namespace vcl
