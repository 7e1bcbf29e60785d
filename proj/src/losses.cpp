#include "vcl/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "vcl/error.hpp"

namespace vcl {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
}

void check_unit_rows(const Tensor& z) {
  if (z.rank() != 2) throw ShapeError("embeddings must be a matrix");
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (std::abs(l2_norm(z.row(r)) - 1.0) > kUnitNormTolerance) {
      throw std::invalid_argument("embedding row " + std::to_string(r) + " is not unit norm");
    }
  }
}

std::vector<std::uint8_t> off_diagonal_mask(std::size_t n) {
  std::vector<std::uint8_t> mask(n * n, 1);
  for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 0;
  return mask;
}

// Log-softmax over all other rows of the scaled similarity matrix.
Var log_probs(Var z, double tau) {
  const std::size_t rows = z.value().rows();
  Var logits = scale(matmul(z, transpose(z)), 1.0 / tau);
  return masked_log_softmax(logits, off_diagonal_mask(rows));
}

// loss = sum_r a_r * per_anchor_r, per_anchor_r = -sum_c w_rc * lp_rc.
LossNode reduce_anchors(Var lp, const Tensor& weights, const std::vector<std::uint8_t>& contributes) {
  const std::size_t rows = lp.value().rows();
  std::size_t count = 0;
  for (auto c : contributes) count += c;
  Var per = scale(weighted_row_sum(lp, weights), -1.0);
  Tensor avg({rows}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (contributes[r]) avg[r] = 1.0 / static_cast<double>(count);
  }
  LossNode out{weighted_sum(per, avg), {}};
  out.stats.value = out.loss.value().item();
  for (std::size_t r = 0; r < rows; ++r) {
    if (contributes[r]) out.stats.per_anchor.push_back(per.value()[r]);
  }
  out.stats.skipped_anchors = rows - count;
  return out;
}

LossNode info_nce_impl(Var z, std::size_t n_pairs, double tau, bool one_sided) {
  check_tau(tau);
  if (n_pairs < 2) throw std::invalid_argument("info_nce: need at least 2 pairs");
  const Tensor& zv = z.value();
  if (zv.rows() != 2 * n_pairs) throw ShapeError("info_nce: batch must have exactly 2N rows");
  check_unit_rows(zv);
  const std::size_t rows = 2 * n_pairs;
  Tensor w = Tensor::matrix(rows, rows);
  std::vector<std::uint8_t> contributes(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (one_sided && r >= n_pairs) continue;
    w.at(r, (r + n_pairs) % rows) = 1.0;
    contributes[r] = 1;
  }
  return reduce_anchors(log_probs(z, tau), w, contributes);
}

}  // namespace

double cosine_sim(std::span<const double> z1, std::span<const double> z2, double tau) {
  check_tau(tau);
  return dot(z1, z2) / tau;
}

LossNode info_nce(Var z, std::size_t n_pairs, double tau) { return info_nce_impl(z, n_pairs, tau, false); }

LossNode info_nce_one_sided(Var z, std::size_t n_pairs, double tau) {
  return info_nce_impl(z, n_pairs, tau, true);
}

LossNode sup_con(Var z, const std::vector<int>& labels, double tau) {
  check_tau(tau);
  const Tensor& zv = z.value();
  const std::size_t rows = zv.rows();
  if (rows < 2) throw std::invalid_argument("sup_con: batch size must be >= 2");
  if (labels.size() != rows) throw ShapeError("sup_con: one label per row required");
  check_unit_rows(zv);
  Tensor w = Tensor::matrix(rows, rows);
  std::vector<std::uint8_t> contributes(rows, 0);
  for (std::size_t a = 0; a < rows; ++a) {
    std::size_t positives = 0;
    for (std::size_t p = 0; p < rows; ++p) positives += (p != a && labels[p] == labels[a]);
    if (positives == 0) continue;
    contributes[a] = 1;
    for (std::size_t p = 0; p < rows; ++p) {
      if (p != a && labels[p] == labels[a]) w.at(a, p) = 1.0 / static_cast<double>(positives);
    }
  }
  bool any = false;
  for (auto c : contributes) any = any || c;
  if (!any) throw std::invalid_argument("sup_con: no anchor has a positive");
  return reduce_anchors(log_probs(z, tau), w, contributes);
}

LossValue info_nce(const EmbeddingBatch& batch, double tau) {
  Graph g;
  return info_nce(g.constant(batch.embeddings), batch.n_pairs, tau).stats;
}

LossValue sup_con(const LabeledEmbeddingBatch& batch, double tau) {
  const std::size_t n = batch.batch.n_pairs;
  if (batch.labels.size() == 2 * n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (batch.labels[i] != batch.labels[i + n]) {
        throw std::invalid_argument("sup_con: the two views of a sample must share a label");
      }
    }
  }
  Graph g;
  return sup_con(g.constant(batch.batch.embeddings), batch.labels, tau).stats;
}

namespace {

void check_views(const PosteriorBatch& v1, const PosteriorBatch& v2, const VclOptions& opt) {
  if (v1.rows() != v2.rows() || v1.dim() != v2.dim()) {
    throw ShapeError("variational loss: view-1 and view-2 posterior batches differ in shape");
  }
  if (opt.m < 1) throw std::invalid_argument("variational loss: m must be >= 1");
  if (opt.beta < 0.0) throw std::invalid_argument("variational loss: beta must be >= 0");
}

// Adds beta * KL shares to the contrastive node. kl_rows holds per-row KL of
// the posteriors entering the penalty; anchor_owner maps each contributing
// anchor to its row in kl_rows.
VariationalLoss combine(const LossNode& contrastive, Var kl_rows, const std::vector<std::size_t>& anchor_owner,
                        double beta) {
  VariationalLoss out;
  Var kl_mean = mean(kl_rows);
  out.total = beta == 0.0 ? contrastive.loss : add(contrastive.loss, scale(kl_mean, beta));
  out.contrastive = contrastive.stats.value;
  out.kl = kl_mean.value().item();
  out.stats = contrastive.stats;
  out.stats.value = out.total.value().item();
  for (std::size_t i = 0; i < out.stats.per_anchor.size(); ++i) {
    out.stats.per_anchor[i] += beta * kl_rows.value()[anchor_owner[i]];
  }
  return out;
}

Var sampled_batch(const PosteriorBatch& v1, const PosteriorBatch& v2, Prng& prng, const VclOptions& opt) {
  Var z1 = sample_pn(v1, prng, opt.m, opt.zero_variance);
  Var z2 = sample_pn(v2, prng, opt.m, opt.zero_variance);
  return concat_rows({z1, z2});
}

}  // namespace

VariationalLoss vcl_loss(const PosteriorBatch& v1, const PosteriorBatch& v2, Prng& prng, const VclOptions& opt) {
  check_views(v1, v2, opt);
  const std::size_t n = v1.rows(), m = opt.m;
  Var z = sampled_batch(v1, v2, prng, opt);
  LossNode nce = info_nce(z, m * n, opt.tau);
  Var kl = concat_rows({kl_normalized_rows(v1), kl_normalized_rows(v2)});
  std::vector<std::size_t> owner(2 * m * n);
  for (std::size_t r = 0; r < owner.size(); ++r) owner[r] = (r < m * n ? 0 : n) + r % n;
  return combine(nce, kl, owner, opt.beta);
}

VariationalLoss vcl_loss_asym(const PosteriorBatch& v1, const PosteriorBatch& v2, Prng& prng,
                              const VclOptions& opt) {
  check_views(v1, v2, opt);
  const std::size_t n = v1.rows(), m = opt.m;
  Var z = sampled_batch(v1, v2, prng, opt);
  LossNode nce = info_nce_one_sided(z, m * n, opt.tau);
  std::vector<std::size_t> owner(m * n);
  for (std::size_t r = 0; r < owner.size(); ++r) owner[r] = r % n;
  return combine(nce, kl_normalized_rows(v1), owner, opt.beta);
}

VariationalLoss vsupcon_loss(const PosteriorBatch& v1, const PosteriorBatch& v2, const std::vector<int>& labels,
                             Prng& prng, const VclOptions& opt) {
  check_views(v1, v2, opt);
  const std::size_t n = v1.rows(), m = opt.m;
  if (labels.size() != n) throw ShapeError("vsupcon_loss: one label per sample required");
  Var z = sampled_batch(v1, v2, prng, opt);
  std::vector<int> row_labels(2 * m * n);
  for (std::size_t r = 0; r < row_labels.size(); ++r) row_labels[r] = labels[r % n];
  LossNode sup = sup_con(z, row_labels, opt.tau);
  Var kl = concat_rows({kl_normalized_rows(v1), kl_normalized_rows(v2)});
  std::vector<std::size_t> owner;
  for (std::size_t r = 0; r < row_labels.size(); ++r) {
    // Every row has its other view as a positive, so no anchor is skipped.
    owner.push_back((r < m * n ? 0 : n) + r % n);
  }
  return combine(sup, kl, owner, opt.beta);
}

LossNode dist_nce(const PosteriorBatch& v1, const PosteriorBatch& v2, double tau) {
  if (v1.rows() != v2.rows() || v1.dim() != v2.dim()) throw ShapeError("dist_nce: view shapes differ");
  auto describe = [](const PosteriorBatch& b) {
    return row_l2_normalize(concat_cols({b.mu, exp(scale(b.log_var, 0.5))}));
  };
  return info_nce(concat_rows({describe(v1), describe(v2)}), v1.rows(), tau);
}

PosteriorBatch posterior_batch(Graph& g, const std::vector<PosteriorParams>& params, bool trainable) {
  if (params.empty()) throw std::invalid_argument("posterior_batch: empty parameter list");
  const std::size_t d = params.front().dim();
  Tensor mu = Tensor::matrix(params.size(), d), lv = Tensor::matrix(params.size(), d);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].dim() != d) throw ShapeError("posterior_batch: mixed dimensions");
    for (std::size_t j = 0; j < d; ++j) {
      mu.at(i, j) = params[i].mu[j];
      lv.at(i, j) = params[i].log_var[j];
    }
  }
  if (trainable) {
    return PosteriorBatch{g.parameter(std::move(mu), "mu"),
                          clamp(g.parameter(std::move(lv), "log_var"), kLogVarMin, kLogVarMax)};
  }
  return PosteriorBatch{g.constant(std::move(mu)), clamp(g.constant(std::move(lv)), kLogVarMin, kLogVarMax)};
}

LossValue vcl_loss(const std::vector<PosteriorParams>& v1, const std::vector<PosteriorParams>& v2, Prng& prng,
                   const VclOptions& opt) {
  Graph g;
  return vcl_loss(posterior_batch(g, v1, false), posterior_batch(g, v2, false), prng, opt).stats;
}

LossValue vcl_loss_asym(const std::vector<PosteriorParams>& v1, const std::vector<PosteriorParams>& v2,
                        Prng& prng, const VclOptions& opt) {
  Graph g;
  return vcl_loss_asym(posterior_batch(g, v1, false), posterior_batch(g, v2, false), prng, opt).stats;
}

LossValue vsupcon_loss(const std::vector<PosteriorParams>& v1, const std::vector<PosteriorParams>& v2,
                       const std::vector<int>& labels, Prng& prng, const VclOptions& opt) {
  Graph g;
  return vsupcon_loss(posterior_batch(g, v1, false), posterior_batch(g, v2, false), labels, prng, opt).stats;
}

LossValue dist_nce(const std::vector<PosteriorParams>& v1, const std::vector<PosteriorParams>& v2, double tau) {
  Graph g;
  return dist_nce(posterior_batch(g, v1, false), posterior_batch(g, v2, false), tau).stats;
}

}  // namespace vcl
