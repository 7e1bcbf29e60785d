#include "vcl/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "vcl/autodiff.hpp"
#include "vcl/error.hpp"

namespace vcl {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Spectrum

Tensor covariance_matrix(const Tensor& z) {
  if (z.rank() != 2) throw ShapeError("covariance: embeddings must be a matrix");
  const std::size_t n = z.rows(), d = z.cols();
  if (n < 2) throw std::invalid_argument("covariance: need at least 2 embeddings");
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += z.at(i, j);
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  Tensor c = Tensor::matrix(d, d);
  std::vector<double> row(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) row[j] = z.at(i, j) - mean[j];
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) c.at(a, b) += row[a] * row[b];
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      c.at(a, b) /= static_cast<double>(n);
      c.at(b, a) = c.at(a, b);
    }
  }
  return c;
}

std::vector<double> jacobi_eigenvalues(const Tensor& symmetric, double tol, int max_sweeps) {
  if (symmetric.rank() != 2 || symmetric.rows() != symmetric.cols()) {
    throw ShapeError("jacobi: expected a square matrix");
  }
  const std::size_t d = symmetric.rows();
  Tensor a = symmetric;
  const double total = l2_norm(a.data());
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = 0; q < d; ++q) {
        if (p != q) s += a.at(p, q) * a.at(p, q);
      }
    }
    return std::sqrt(s);
  };
  for (int sweep = 0; sweep < max_sweeps && total > 0.0 && off_norm() >= tol * total; ++sweep) {
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        a.at(p, q) = 0.0;
        a.at(q, p) = 0.0;
      }
    }
  }
  std::vector<double> eig(d);
  for (std::size_t i = 0; i < d; ++i) eig[i] = a.at(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

double effective_rank(std::span<const double> eigenvalues) {
  double total = 0.0;
  for (double e : eigenvalues) total += std::max(e, 0.0);
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double e : eigenvalues) {
    const double p = std::max(e, 0.0) / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::exp(h);
}

SpectrumReport covariance_spectrum(const Tensor& embeddings) {
  SpectrumReport rep;
  rep.eigenvalues = jacobi_eigenvalues(covariance_matrix(embeddings));
  for (auto& e : rep.eigenvalues) e = std::max(e, 0.0);
  rep.effective_rank = effective_rank(rep.eigenvalues);
  return rep;
}

nlohmann::json SpectrumReport::to_json() const {
  return {{"eigenvalues", eigenvalues}, {"effective_rank", effective_rank}};
}

std::string SpectrumReport::to_csv() const {
  std::ostringstream os;
  os << "index,eigenvalue\n";
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) os << i << ',' << fmt(eigenvalues[i]) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Mixed KSG

double digamma_int(std::size_t n) {
  if (n == 0) throw std::invalid_argument("digamma_int: n must be >= 1");
  constexpr double kEulerGamma = 0.57721566490153286061;
  double h = 0.0;
  for (std::size_t i = 1; i < n; ++i) h += 1.0 / static_cast<double>(i);
  return -kEulerGamma + h;
}

double mixed_ksg_mi(const Tensor& z, const std::vector<int>& labels, std::size_t k) {
  if (z.rank() != 2) throw ShapeError("mixed_ksg_mi: embeddings must be a matrix");
  const std::size_t n = z.rows();
  if (labels.size() != n) throw ShapeError("mixed_ksg_mi: one label per embedding required");
  if (k < 1 || k >= n) throw std::invalid_argument("mixed_ksg_mi: need 1 <= k < n");

  std::vector<double> psi(n + 1, 0.0);
  constexpr double kEulerGamma = 0.57721566490153286061;
  psi[1] = -kEulerGamma;
  for (std::size_t i = 2; i <= n; ++i) psi[i] = psi[i - 1] + 1.0 / static_cast<double>(i - 1);

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[labels[i]].push_back(i);

  const std::size_t d = z.cols();
  std::vector<double> dist(n);
  std::vector<double> within;
  const double log_n = std::log(static_cast<double>(n));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cls = members[labels[i]];
    const std::size_t nc = cls.size();
    if (nc - 1 < k) {
      // Too few same-label points for a k-th neighbour: the discrete fallback
      // counts the whole class jointly and every point marginally.
      total += psi[nc] + log_n - psi[n] - psi[nc];
      continue;
    }
    auto zi = z.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      auto zj = z.row(j);
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = zi[c] - zj[c];
        s += diff * diff;
      }
      dist[j] = std::sqrt(s);
    }
    within.clear();
    for (std::size_t j : cls) {
      if (j != i) within.push_back(dist[j]);
    }
    std::nth_element(within.begin(), within.begin() + static_cast<long>(k - 1), within.end());
    const double rho = within[k - 1];
    std::size_t kp = k, nx = 0, ny = nc;
    if (rho == 0.0) {
      kp = 0;
      for (std::size_t j : cls) kp += dist[j] == 0.0;
      for (std::size_t j = 0; j < n; ++j) nx += dist[j] == 0.0;
    } else {
      for (std::size_t j = 0; j < n; ++j) nx += dist[j] < rho;
    }
    total += psi[kp] + log_n - psi[nx] - psi[ny];
  }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Linear probe

ProbeReport linear_probe(const Tensor& train_embs, const std::vector<int>& train_labels, const Tensor& test_embs,
                         const std::vector<int>& test_labels, const ProbeOptions& options) {
  if (train_embs.rank() != 2 || test_embs.rank() != 2 || train_embs.cols() != test_embs.cols()) {
    throw ShapeError("linear_probe: train and test embeddings must be matrices of equal width");
  }
  if (train_labels.size() != train_embs.rows() || test_labels.size() != test_embs.rows()) {
    throw ShapeError("linear_probe: label counts do not match embeddings");
  }
  if (train_labels.empty() || test_labels.empty()) throw std::invalid_argument("linear_probe: empty split");
  int max_label = -1;
  for (int l : train_labels) max_label = std::max(max_label, l);
  for (int l : test_labels) max_label = std::max(max_label, l);
  for (int l : train_labels) {
    if (l < 0) throw std::invalid_argument("linear_probe: negative label");
  }
  for (int l : test_labels) {
    if (l < 0) throw std::invalid_argument("linear_probe: negative label");
  }
  const auto classes = static_cast<std::size_t>(max_label + 1);
  const std::size_t n = train_embs.rows(), d = train_embs.cols();

  std::vector<double> shift(d, 0.0), inv_scale(d, 1.0);
  if (options.standardize) {
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0.0, v = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += train_embs.at(i, j);
      m /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) v += (train_embs.at(i, j) - m) * (train_embs.at(i, j) - m);
      const double sd = std::sqrt(v / static_cast<double>(n));
      shift[j] = m;
      inv_scale[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
  }
  auto prepare = [&](const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < d; ++j) out.at(i, j) = (x.at(i, j) - shift[j]) * inv_scale[j];
    }
    return out;
  };
  const Tensor xtr = prepare(train_embs), xte = prepare(test_embs);

  Tensor targets = Tensor::matrix(n, classes);
  std::vector<bool> seen(classes, false);
  for (std::size_t i = 0; i < n; ++i) {
    targets.at(i, static_cast<std::size_t>(train_labels[i])) = -1.0 / static_cast<double>(n);
    seen[static_cast<std::size_t>(train_labels[i])] = true;
  }
  const std::vector<std::uint8_t> all(n * classes, 1);

  Tensor w = Tensor::matrix(d, classes), b({classes}, 0.0);
  ProbeReport rep;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    Graph g;
    Var wv = g.parameter(w, "W"), bv = g.parameter(b, "b");
    Var logits = add_bias(matmul(g.constant(xtr), wv), bv);
    Var loss = weighted_sum(masked_log_softmax(logits, all), targets);
    g.backward(loss);
    rep.final_train_loss = loss.value().item();
    const Tensor& gw = wv.grad();
    const Tensor& gb = bv.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= options.lr * gw[i];
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= options.lr * gb[i];
  }

  rep.top_k = std::min<std::size_t>(5, classes);
  std::vector<std::size_t> hits(classes, 0), totals(classes, 0);
  std::size_t top1 = 0, topk = 0;
  std::vector<std::size_t> order(classes);
  std::vector<double> scores(classes);
  for (std::size_t i = 0; i < xte.rows(); ++i) {
    const auto label = static_cast<std::size_t>(test_labels[i]);
    ++totals[label];
    if (!seen[label]) continue;
    for (std::size_t c = 0; c < classes; ++c) {
      double s = b[c];
      for (std::size_t j = 0; j < d; ++j) s += xte.at(i, j) * w.at(j, c);
      scores[c] = s;
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return scores[x] > scores[y]; });
    if (order[0] == label) {
      ++top1;
      ++hits[label];
    }
    for (std::size_t r = 0; r < rep.top_k; ++r) {
      if (order[r] == label) {
        ++topk;
        break;
      }
    }
  }
  const double nt = static_cast<double>(xte.rows());
  rep.top1 = static_cast<double>(top1) / nt;
  rep.top5 = static_cast<double>(topk) / nt;
  for (std::size_t c = 0; c < classes; ++c) {
    rep.per_class.push_back(totals[c] ? static_cast<double>(hits[c]) / static_cast<double>(totals[c])
                                      : std::numeric_limits<double>::quiet_NaN());
    if (totals[c] && !seen[c]) rep.unseen_classes.push_back(static_cast<int>(c));
  }
  return rep;
}

nlohmann::json ProbeReport::to_json() const {
  nlohmann::json pc = nlohmann::json::array();
  for (double a : per_class) pc.push_back(std::isnan(a) ? nlohmann::json(nullptr) : nlohmann::json(a));
  return {{"top1", top1},          {"top5", top5},
          {"top_k", top_k},        {"per_class", pc},
          {"unseen_classes", unseen_classes}, {"final_train_loss", final_train_loss}};
}

// ---------------------------------------------------------------------------
// Regressions

LinearFit ols_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("ols_fit: x and y differ in length");
  if (x.size() < 2) throw std::invalid_argument("ols_fit: need at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw DegenerateInputError("ols_fit: regressor has zero variance, slope undefined");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r = syy == 0.0 ? 0.0 : sxy / std::sqrt(sxx * syy);
  return f;
}

double label_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

UncertaintyReport uncertainty_regression(const std::vector<PosteriorParams>& params,
                                         const SoftLabelSet& soft_labels) {
  if (params.size() != soft_labels.rows.size()) {
    throw ShapeError("uncertainty_regression: " + std::to_string(params.size()) + " posteriors but " +
                     std::to_string(soft_labels.rows.size()) + " soft labels");
  }
  UncertaintyReport rep;
  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = soft_labels.rows[i];
    if (p.empty()) throw std::invalid_argument("uncertainty_regression: empty soft label row");
    double s = 0.0;
    for (double v : p) {
      if (v < 0.0) throw std::invalid_argument("uncertainty_regression: negative probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw std::invalid_argument("uncertainty_regression: soft label row " + std::to_string(i) +
                                  " does not sum to 1");
    }
    rep.log_det.push_back(log_det_cov(params[i]));
    rep.trace.push_back(trace_cov(params[i]));
    rep.entropy.push_back(label_entropy(p));
    const int cls = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    rep.class_mean_log_det[cls] += rep.log_det.back();
    rep.class_mean_trace[cls] += rep.trace.back();
    ++counts[cls];
  }
  for (auto& [c, v] : rep.class_mean_log_det) v /= static_cast<double>(counts[c]);
  for (auto& [c, v] : rep.class_mean_trace) v /= static_cast<double>(counts[c]);
  rep.log_det_fit = ols_fit(rep.entropy, rep.log_det);
  rep.trace_fit = ols_fit(rep.entropy, rep.trace);
  return rep;
}

nlohmann::json UncertaintyReport::to_json() const {
  auto fit_json = [](const LinearFit& f) {
    return nlohmann::json{{"slope", f.slope}, {"intercept", f.intercept}, {"r", f.r}};
  };
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& [c, v] : class_mean_log_det) {
    per_class.push_back({{"class", c}, {"mean_log_det", v}, {"mean_trace", class_mean_trace.at(c)}});
  }
  return {{"n", log_det.size()},
          {"log_det_vs_entropy", fit_json(log_det_fit)},
          {"trace_vs_entropy", fit_json(trace_fit)},
          {"per_class", per_class},
          {"log_det", log_det},
          {"trace", trace},
          {"entropy", entropy}};
}

// ---------------------------------------------------------------------------
// KL gap

double mean_kl(const MlpEncoder& enc, const Tensor& x) {
  if (x.rows() == 0) throw std::invalid_argument("mean_kl: empty split");
  double s = 0.0;
  for (const auto& p : encode_all(enc, x)) s += kl_normalized(p);
  return s / static_cast<double>(x.rows());
}

double kl_generalization_gap(const MlpEncoder& enc, const Tensor& train, const Tensor& heldout) {
  if (!(train == heldout)) {
    std::set<std::vector<double>> rows;
    for (std::size_t i = 0; i < train.rows(); ++i) rows.insert(train.row_vector(i));
    for (std::size_t i = 0; i < heldout.rows(); ++i) {
      if (rows.count(heldout.row_vector(i))) {
        throw std::invalid_argument("kl_generalization_gap: train and heldout splits overlap (heldout row " +
                                    std::to_string(i) + ")");
      }
    }
  }
  return mean_kl(enc, heldout) - mean_kl(enc, train);
}

GapTrend gap_trend(const GapTrendOptions& options) {
  if (options.ns.size() < 4) throw std::invalid_argument("gap_trend: need at least 4 values of N");
  if (!std::is_sorted(options.ns.begin(), options.ns.end())) {
    throw std::invalid_argument("gap_trend: Ns must be increasing");
  }
  if (options.seeds == 0 || options.steps == 0) throw std::invalid_argument("gap_trend: seeds and steps must be > 0");
  const std::size_t max_n = options.ns.back();
  const std::size_t heldout = options.heldout ? options.heldout : 10 * max_n;
  if (heldout < 10 * max_n) throw std::invalid_argument("gap_trend: heldout must be >= 10 * max(N)");
  for (auto n : options.ns) {
    if (n < options.train.batch_size) throw std::invalid_argument("gap_trend: every N must be >= batch_size");
  }

  GapTrend trend;
  for (auto n : options.ns) trend.points.push_back(GapPoint{n, {}, 0.0});
  const Prng root(options.seed);
  for (std::size_t s = 0; s < options.seeds; ++s) {
    MixtureSpec spec = options.data;
    const auto classes = static_cast<std::size_t>(spec.classes);
    spec.per_class = (max_n + heldout + classes - 1) / classes;
    spec.seed = root.split(2 * s).next_u64();
    const Dataset pool = gen_gaussian_mixture(spec);
    std::vector<std::size_t> held_idx(heldout);
    std::iota(held_idx.begin(), held_idx.end(), max_n);
    const Tensor held = pool.subset(held_idx).features;
    for (auto& pt : trend.points) {
      std::vector<std::size_t> idx(pt.n);
      std::iota(idx.begin(), idx.end(), 0);
      const Dataset train = pool.subset(idx);
      TrainConfig cfg = options.train;
      cfg.seed = root.split(2 * s + 1).next_u64();
      const std::size_t per_epoch = batches_per_epoch(cfg, pt.n);
      cfg.epochs = (options.steps + per_epoch - 1) / per_epoch;
      const FitResult fr = fit(cfg, train);
      pt.gaps.push_back(kl_generalization_gap(fr.encoder, train.features, held));
    }
  }
  std::vector<double> lx, ly;
  for (auto& pt : trend.points) {
    std::vector<double> a;
    for (double g : pt.gaps) a.push_back(std::abs(g));
    pt.median_abs_gap = median(a);
    lx.push_back(std::log(static_cast<double>(pt.n)));
    ly.push_back(std::log(std::max(pt.median_abs_gap, std::numeric_limits<double>::min())));
  }
  trend.log_log_slope = ols_fit(lx, ly).slope;
  trend.non_increasing = true;
  for (std::size_t i = 1; i < trend.points.size(); ++i) {
    if (trend.points[i].median_abs_gap > trend.points[i - 1].median_abs_gap) trend.non_increasing = false;
  }
  return trend;
}

nlohmann::json GapTrend::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) pts.push_back({{"n", p.n}, {"median_abs_gap", p.median_abs_gap}, {"gaps", p.gaps}});
  return {{"points", pts}, {"log_log_slope", log_log_slope}, {"non_increasing", non_increasing}};
}

std::string GapTrend::to_csv() const {
  std::ostringstream os;
  os << "n,median_abs_gap,seeds\n";
  for (const auto& p : points) os << p.n << ',' << fmt(p.median_abs_gap) << ',' << p.gaps.size() << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// OOD dispersion

OodReport ood_dispersion_report(const std::vector<PosteriorParams>& in, const std::vector<PosteriorParams>& out) {
  if (in.empty() || out.empty()) throw std::invalid_argument("ood_dispersion_report: both sets must be non-empty");
  auto moments = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, std::sqrt(s / static_cast<double>(v.size()))};
  };
  auto column = [](const std::vector<PosteriorParams>& set, int which) {
    std::vector<double> v;
    for (const auto& p : set) {
      v.push_back(which == 0 ? l2_norm(p.mu) : which == 1 ? log_det_cov(p) : trace_cov(p));
    }
    return v;
  };
  OodReport rep;
  const char* names[] = {"mu_norm", "log_det", "trace"};
  for (int w = 0; w < 3; ++w) {
    const auto [im, is] = moments(column(in, w));
    const auto [om, os] = moments(column(out, w));
    DispersionStat st{im, is, om, os, 1.0};
    if (is == 0.0) {
      st.std_ratio = os == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    } else {
      st.std_ratio = os / is;
    }
    rep.stats[names[w]] = st;
  }
  return rep;
}

nlohmann::json OodReport::to_json() const {
  nlohmann::json j;
  for (const auto& [name, s] : stats) {
    j[name] = {{"in_mean", s.in_mean},
               {"in_std", s.in_std},
               {"out_mean", s.out_mean},
               {"out_std", s.out_std},
               {"std_ratio", std::isinf(s.std_ratio) ? nlohmann::json("inf") : nlohmann::json(s.std_ratio)}};
  }
  return j;
}

}  // namespace vcl
