#pragma once

// Contrastive objectives over unit-norm embeddings and posterior batches.
//
// Batch layout: a batch of 2N rows holds view 1 of samples 0..N-1 followed by
// view 2 of the same samples, so the positive of row r is (r + N) mod 2N.
// With m posterior samples the variational losses use 2mN rows: rows
// [0, mN) are view-1 samples (sample k of posterior i at row k*N + i), rows
// [mN, 2mN) the matching view-2 samples, and positives are again r <-> r + mN.

#include <cstddef>
#include <span>
#include <vector>

#include "vcl/autodiff.hpp"
#include "vcl/projected_normal.hpp"
#include "vcl/random.hpp"

namespace vcl {

inline constexpr double kUnitNormTolerance = 1e-8;

struct EmbeddingBatch {
  Tensor embeddings;  // 2N x d, unit rows
  std::size_t n_pairs = 0;
};

struct LabeledEmbeddingBatch {
  EmbeddingBatch batch;
  std::vector<int> labels;  // length 2N, labels[i] == labels[i + N]
};

struct LossValue {
  double value = 0.0;
  std::vector<double> per_anchor;  // contributing anchors only, in row order
  std::size_t skipped_anchors = 0;
};

// A loss node plus the values needed for logging.
struct LossNode {
  Var loss;
  LossValue stats;
};

struct VariationalLoss {
  Var total;
  LossValue stats;  // per_anchor includes each anchor's beta * KL share
  double contrastive = 0.0;
  double kl = 0.0;  // mean normalised KL over the posteriors that enter the loss
};

struct VclOptions {
  double tau = 0.5;
  double beta = 1.0;
  std::size_t m = 1;
  bool zero_variance = false;  // sigma == 0 exactly (deterministic limit)
};

double cosine_sim(std::span<const double> z1, std::span<const double> z2, double tau);

// Batch InfoNCE over all 2N anchors.
LossNode info_nce(Var z, std::size_t n_pairs, double tau);
// Anchors restricted to rows [0, N); candidates are still all other rows.
LossNode info_nce_one_sided(Var z, std::size_t n_pairs, double tau);
// SupCon over every row of z; labels has one entry per row. Anchors without
// a positive are skipped and counted.
LossNode sup_con(Var z, const std::vector<int>& labels, double tau);

LossValue info_nce(const EmbeddingBatch& batch, double tau);
LossValue sup_con(const LabeledEmbeddingBatch& batch, double tau);

// Symmetrised VCL objective: InfoNCE over the (2mN)-row sampled batch plus
// beta * mean normalised KL over all 2N posteriors.
VariationalLoss vcl_loss(const PosteriorBatch& v1, const PosteriorBatch& v2, Prng& prng,
                         const VclOptions& opt);
// One-directional form: view-1 anchors and view-1 KL only.
VariationalLoss vcl_loss_asym(const PosteriorBatch& v1, const PosteriorBatch& v2, Prng& prng,
                              const VclOptions& opt);
// Symmetrised SupCon on sampled embeddings plus the averaged normalised KL.
// labels has one entry per sample (length N).
VariationalLoss vsupcon_loss(const PosteriorBatch& v1, const PosteriorBatch& v2, const std::vector<int>& labels,
                             Prng& prng, const VclOptions& opt);

// InfoNCE over posterior parameters: each posterior is represented by the
// unit-normalised concatenation [mu; sigma] and compared by cosine / tau.
LossNode dist_nce(const PosteriorBatch& v1, const PosteriorBatch& v2, double tau);

// Value-level conveniences over per-sample parameter lists.
LossValue vcl_loss(const std::vector<PosteriorParams>& v1, const std::vector<PosteriorParams>& v2, Prng& prng,
                   const VclOptions& opt);
LossValue vcl_loss_asym(const std::vector<PosteriorParams>& v1, const std::vector<PosteriorParams>& v2,
                        Prng& prng, const VclOptions& opt);
LossValue vsupcon_loss(const std::vector<PosteriorParams>& v1, const std::vector<PosteriorParams>& v2,
                       const std::vector<int>& labels, Prng& prng, const VclOptions& opt);
LossValue dist_nce(const std::vector<PosteriorParams>& v1, const std::vector<PosteriorParams>& v2, double tau);

// Stacks per-sample parameters into graph constants/parameters.
PosteriorBatch posterior_batch(Graph& g, const std::vector<PosteriorParams>& params, bool trainable);

}  // namespace vcl
