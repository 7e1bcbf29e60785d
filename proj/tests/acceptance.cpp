// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vcl/autodiff.hpp"
#include "vcl/cli.hpp"
#include "vcl/data_io.hpp"
#include "vcl/diagnostics.hpp"
#include "vcl/encoder.hpp"
#include "vcl/losses.hpp"
#include "vcl/prop1.hpp"
#include "vcl/projected_normal.hpp"
#include "vcl/random.hpp"
#include "vcl/train.hpp"

namespace fs = std::filesystem;
using namespace vcl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

Tensor random_matrix(Prng& prng, std::size_t r, std::size_t c, double lo, double hi) {
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.data()) v = lo + (hi - lo) * prng.uniform();
  return t;
}

// ---- 1 ---------------------------------------------------------------------

Outcome gradients() {
  constexpr int kConfigs = 100;
  constexpr double kTol = 1e-4;
  constexpr double kStep = 1e-5;
  Prng prng(101);
  std::map<std::string, double> worst;
  for (int c = 0; c < kConfigs; ++c) {
    const std::size_t n = 2 + prng.below(3), d = 2 + prng.below(4), m = 1 + prng.below(2);
    const double tau = 0.2 + 0.8 * prng.uniform();
    const double beta = 2.0 * prng.uniform();
    const std::uint64_t sample_seed = prng.next_u64();
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(prng.below(2));

    const Tensor emb = random_matrix(prng, 2 * n, d, -1.0, 1.0);
    Tensor post = random_matrix(prng, 2 * n, 2 * d, -1.5, 1.5);
    auto views = [n](Var x) {
      return std::pair{split_posterior(slice_rows(x, 0, n)), split_posterior(slice_rows(x, n, 2 * n))};
    };
    VclOptions opt{tau, beta, m, false};

    auto record = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };
    record("info_nce", grad_check([&](Graph&, Var x) { return info_nce(row_l2_normalize(x), n, tau).loss; }, emb, kStep));
    std::vector<int> row_labels(2 * n);
    for (std::size_t r = 0; r < 2 * n; ++r) row_labels[r] = labels[r % n];
    record("sup_con",
           grad_check([&](Graph&, Var x) { return sup_con(row_l2_normalize(x), row_labels, tau).loss; }, emb, kStep));
    record("vcl", grad_check(
                      [&](Graph&, Var x) {
                        auto [v1, v2] = views(x);
                        Prng s(sample_seed);
                        return vcl_loss(v1, v2, s, opt).total;
                      },
                      post, kStep));
    record("vsupcon", grad_check(
                          [&](Graph&, Var x) {
                            auto [v1, v2] = views(x);
                            Prng s(sample_seed);
                            return vsupcon_loss(v1, v2, labels, s, opt).total;
                          },
                          post, kStep));
    record("dist_nce", grad_check(
                           [&](Graph&, Var x) {
                             auto [v1, v2] = views(x);
                             return dist_nce(v1, v2, tau).loss;
                           },
                           post, kStep));
    record("kl", grad_check([&](Graph&, Var x) { return mean(kl_normalized_rows(split_posterior(x))); }, post, kStep));
  }
  Outcome o{true, ""};
  for (const auto& [name, e] : worst) {
    o.pass = o.pass && e < kTol;
    o.detail += name + "=" + num(e, 2) + " ";
  }
  return o;
}

// ---- 2 ---------------------------------------------------------------------

Outcome closed_form_kl() {
  constexpr std::size_t kSamples = 1000000;
  Prng prng(202);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 1 + prng.below(4);
    std::vector<double> mu(d), lv(d);
    for (std::size_t i = 0; i < d; ++i) {
      mu[i] = -1.0 + 2.0 * prng.uniform();
      lv[i] = -1.0 + 2.0 * prng.uniform();
    }
    const PosteriorParams p = make_posterior(mu, lv);
    double acc = 0.0;
    for (std::size_t s = 0; s < kSamples; ++s) {
      double log_ratio = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double sigma = std::exp(0.5 * lv[i]);
        const double e = prng.normal();
        const double x = mu[i] + sigma * e;
        // log N(x; mu, sigma^2) - log N(x; 0, 1)
        log_ratio += -0.5 * e * e - 0.5 * lv[i] + 0.5 * x * x;
      }
      acc += log_ratio;
    }
    worst = std::max(worst, std::abs(acc / kSamples - kl_gaussian_to_std(p)));
  }
  const double zero = kl_gaussian_to_std(make_posterior({0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}));
  return {worst < 0.01 && zero == 0.0, "max |closed - MC| = " + num(worst) + ", kl(0, I) = " + num(zero)};
}

// ---- 3 ---------------------------------------------------------------------

Outcome dpi_bound() {
  constexpr std::size_t kSamples = 400000, kBins = 64;
  Prng prng(303);
  double min_slack = 1e300;
  bool ok = true;
  for (int t = 0; t < 20; ++t) {
    const PosteriorParams p =
        make_posterior({-2.0 + 4.0 * prng.uniform(), -2.0 + 4.0 * prng.uniform()},
                       {-3.0 + 4.0 * prng.uniform(), -3.0 + 4.0 * prng.uniform()});
    Prng s = prng.split(static_cast<std::uint64_t>(t));
    const SphereKlEstimate e = mc_kl_pn_to_uniform(p, s, kSamples, kBins);
    const double slack = kl_gaussian_to_std(p) + 3.0 * (e.standard_error + e.bias_bound) - e.estimate;
    min_slack = std::min(min_slack, slack);
    ok = ok && slack >= 0.0;
  }
  return {ok, "min slack = " + num(min_slack)};
}

// ---- 4 ---------------------------------------------------------------------

Outcome proposition() {
  const DiscreteJoint joint = DiscreteJoint::benchmark();
  const ConvergenceTrace tr = convergence_check(joint, {4, 64, 1024}, 10000, 404);
  const auto& lo = tr.rows.front();
  const auto& hi = tr.rows.back();
  const bool ok = hi.gap < lo.gap && hi.gap <= 3.0 * hi.standard_error + 2.0 / 1024.0;
  return {ok, "gap(4) = " + num(lo.gap) + ", gap(1024) = " + num(hi.gap) + " (SE " + num(hi.standard_error) +
                  "), exact = " + num(lo.exact, 6)};
}

// ---- 5 ---------------------------------------------------------------------

Outcome reduction() {
  MixtureSpec spec;
  spec.per_class = 64;
  spec.seed = 505;
  const Dataset data = gen_gaussian_mixture(spec);
  TrainConfig base;
  base.epochs = 30;
  base.batch_size = 32;
  base.seed = 5;
  base.hidden_dims = {32};
  base.embed_dim = 8;
  base.augment.noise_std = 0.5;
  base.augment.dropout = 0.1;

  TrainConfig simclr = base;
  simclr.method = Method::kSimclr;
  TrainConfig vsim = base;
  vsim.method = Method::kVsimclr;
  vsim.beta = 0.0;
  vsim.zero_variance = true;
  vsim.freeze_logvar_head = true;

  const FitResult a = fit(simclr, data);
  const FitResult b = fit(vsim, data);
  double worst = 0.0;
  std::size_t steps = 0;
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    for (std::size_t s = 0; s < a.log[e].step_losses.size(); ++s, ++steps) {
      worst = std::max(worst, std::abs(a.log[e].step_losses[s] - b.log[e].step_losses[s]));
    }
  }
  return {worst <= 1e-8 && steps > 0, std::to_string(steps) + " steps, max |diff| = " + num(worst, 3)};
}

// ---- 6 ---------------------------------------------------------------------

double collapse_rank(Method method, std::uint64_t seed) {
  MixtureSpec spec;
  spec.per_class = 128;
  spec.seed = 600 + seed;
  const Dataset data = gen_gaussian_mixture(spec);
  TrainConfig cfg;
  cfg.method = method;
  cfg.seed = seed;
  cfg.epochs = 40;
  cfg.batch_size = 64;
  cfg.hidden_dims = {64};
  cfg.embed_dim = 16;
  cfg.augment.noise_std = 6.0;
  cfg.augment.dropout = 0.5;
  cfg.augment.rotation = true;
  cfg.augment.rotation_max_angle = 1.0;
  const FitResult fr = fit(cfg, data);
  const auto params = encode_all(fr.encoder, data.features);
  Tensor z = Tensor::matrix(params.size(), cfg.embed_dim);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto u = l2_normalize(params[i].mu);
    std::copy(u.begin(), u.end(), z.row(i).begin());
  }
  return covariance_spectrum(z).effective_rank;
}

Outcome collapse() {
  std::vector<double> ratios;
  std::string detail;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const double r_sim = collapse_rank(Method::kSimclr, s);
    const double r_var = collapse_rank(Method::kVsimclr, s);
    ratios.push_back(r_var / r_sim);
    detail += num(r_var, 3) + "/" + num(r_sim, 3) + " ";
  }
  const double med = median(ratios);
  return {med >= 1.2, "median ratio = " + num(med) + " (vsimclr/simclr: " + detail + ")"};
}

// ---- 7 ---------------------------------------------------------------------

double probe_top1(Method method) {
  MixtureSpec spec;
  spec.per_class = 512;
  spec.seed = 707;
  const Dataset train = gen_gaussian_mixture(spec);
  spec.per_class = 128;
  spec.noise_stream = 3;
  const Dataset test = gen_gaussian_mixture(spec);
  TrainConfig cfg;
  cfg.method = method;
  cfg.seed = 7;
  cfg.epochs = 100;
  cfg.batch_size = 64;
  cfg.augment.noise_std = 1.0;
  cfg.augment.dropout = 0.1;
  const FitResult fr = fit(cfg, train);
  auto embed = [&](const Dataset& d) {
    const auto p = encode_all(fr.encoder, d.features);
    Tensor z = Tensor::matrix(p.size(), cfg.embed_dim);
    for (std::size_t i = 0; i < p.size(); ++i) std::copy(p[i].mu.begin(), p[i].mu.end(), z.row(i).begin());
    return z;
  };
  return linear_probe(embed(train), train.labels, embed(test), test.labels).top1;
}

Outcome representation() {
  const double v = probe_top1(Method::kVsimclr);
  const double s = probe_top1(Method::kVsupcon);
  return {v >= 0.90 && s >= 0.95, "vsimclr top1 = " + num(v) + ", vsupcon top1 = " + num(s)};
}

// ---- 8 ---------------------------------------------------------------------

Outcome mi_sanity() {
  Prng prng(808);
  const std::size_t n_ind = 5000, d = 4;
  Tensor z = Tensor::matrix(n_ind, d);
  std::vector<int> labels(n_ind);
  for (std::size_t i = 0; i < n_ind; ++i) {
    for (auto& v : z.row(i)) v = prng.normal();
    labels[i] = static_cast<int>(prng.below(4));
  }
  const double ind = mixed_ksg_mi(z, labels, 5);

  const std::size_t n_det = 10000;
  Tensor c = Tensor::matrix(n_det, d);
  std::vector<int> cl(n_det);
  for (std::size_t i = 0; i < n_det; ++i) {
    cl[i] = static_cast<int>(prng.below(4));
    for (std::size_t j = 0; j < d; ++j) c.at(i, j) = (j == static_cast<std::size_t>(cl[i]) ? 1.0 : 0.0) + 1e-3 * prng.normal();
  }
  const double det = mixed_ksg_mi(c, cl, 5);
  const bool ok = std::abs(ind) < 0.05 && std::abs(det - std::log(4.0)) <= 0.05;
  return {ok, "independent = " + num(ind) + ", clusters = " + num(det) + " (ln 4 = " + num(std::log(4.0)) + ")"};
}

// ---- 9 ---------------------------------------------------------------------

Outcome gap_trend_check() {
  GapTrendOptions opt;
  opt.seed = 909;
  opt.train.augment.noise_std = 0.5;
  const GapTrend tr = gap_trend(opt);
  std::string detail;
  for (const auto& p : tr.points) detail += "N=" + std::to_string(p.n) + ":" + num(p.median_abs_gap, 3) + " ";
  return {tr.non_increasing, detail + "slope = " + num(tr.log_log_slope, 3)};
}

// ---- 10 --------------------------------------------------------------------

Outcome uncertainty() {
  Prng prng(1010);
  std::vector<double> x(50), y(50);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = 3.0 * prng.uniform();
    y[i] = -2.0 * x[i] + 1.0;
  }
  const LinearFit line = ols_fit(x, y);
  const double slope_err = std::abs(line.slope + 2.0);

  const std::size_t n = 500, classes = 10, d = 8;
  std::vector<PosteriorParams> params;
  SoftLabelSet soft;
  for (std::size_t i = 0; i < n; ++i) {
    // Peakedness varies per sample, so the entropy spans a wide range.
    const double temp = 0.05 + 3.0 * prng.uniform();
    std::vector<double> p(classes);
    double s = 0.0;
    for (auto& v : p) {
      v = std::exp(prng.normal() / temp);
      s += v;
    }
    for (auto& v : p) v /= s;
    const double h = label_entropy(p);
    const double target_log_det = -4.0 * h + 0.5 * prng.normal();
    params.push_back(make_posterior(std::vector<double>(d, 0.0), std::vector<double>(d, target_log_det / d)));
    soft.rows.push_back(std::move(p));
  }
  const UncertaintyReport rep = uncertainty_regression(params, soft);
  const bool ok = slope_err <= 1e-10 && rep.log_det_fit.slope < 0.0 && rep.log_det_fit.r < -0.5;
  return {ok, "line slope error = " + num(slope_err, 2) + ", synthetic slope = " + num(rep.log_det_fit.slope) +
                  ", r = " + num(rep.log_det_fit.r)};
}

// ---- 11 --------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "vcl_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string r = root.string() + "/";

  auto call = [](std::vector<std::string> args) {
    args.insert(args.begin(), "vcl");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0) throw std::runtime_error("cli failed: " + err.str());
    return out.str();
  };
  // Fixtures shared by both runs.
  call({"synth", "--seed", "11", "--per-class", "64", "--out", r + "train.csv"});
  call({"synth", "--seed", "11", "--per-class", "32", "--noise-stream", "3", "--out", r + "test.csv"});
  {
    std::ostringstream soft;
    soft << "p0,p1,p2,p3\n";
    Prng prng(1111);
    for (int i = 0; i < 256; ++i) {
      std::vector<double> p(4);
      double s = 0.0;
      for (auto& v : p) s += (v = prng.uniform() + 0.01);
      soft.precision(17);
      for (int j = 0; j < 4; ++j) soft << p[j] / s << (j < 3 ? "," : "\n");
    }
    std::ofstream(r + "soft.csv") << soft.str();
  }

  std::vector<std::pair<std::string, std::vector<std::string>>> commands = {
      {"synth", {"synth", "--seed", "5", "--per-class", "16"}},
      {"train", {"train", "--data", r + "train.csv", "--seed", "3", "--epochs", "3", "--checkpoint", "CKPT"}},
      {"probe", {"probe", "--data", r + "train.csv", "--test", r + "test.csv", "--checkpoint", r + "ref.ckpt"}},
      {"spectrum", {"spectrum", "--data", r + "train.csv", "--checkpoint", r + "ref.ckpt"}},
      {"mi", {"mi", "--data", r + "train.csv", "--checkpoint", r + "ref.ckpt"}},
      {"uncertainty",
       {"uncertainty", "--data", r + "train.csv", "--checkpoint", r + "ref.ckpt", "--soft-labels", r + "soft.csv"}},
      {"prop1", {"prop1", "--alphabet", "2", "--ns", "4,64,256", "--trials", "2000", "--seed", "1"}},
      {"gap", {"gap", "--ns", "64,96,128,160", "--seeds", "2", "--steps", "20", "--seed", "2"}},
      {"ood", {"ood", "--data", r + "train.csv", "--checkpoint", r + "ref.ckpt"}},
  };
  call({"train", "--data", r + "train.csv", "--seed", "9", "--epochs", "2", "--checkpoint", r + "ref.ckpt", "--out",
        r + "ref.jsonl"});

  std::vector<std::string> mismatched;
  for (auto& [name, args] : commands) {
    std::string outputs[2];
    for (int run = 0; run < 2; ++run) {
      auto a = args;
      const std::string ckpt = r + name + std::to_string(run) + ".ckpt";
      for (auto& s : a) {
        if (s == "CKPT") s = ckpt;
      }
      outputs[run] = call(a);
      if (fs::exists(ckpt)) outputs[run] += slurp(ckpt);
    }
    if (outputs[0] != outputs[1] || outputs[0].empty()) mismatched.push_back(name);
  }
  fs::remove_all(root);
  std::string detail = std::to_string(commands.size()) + " subcommands";
  if (!mismatched.empty()) {
    detail += ", differing:";
    for (const auto& m : mismatched) detail += " " + m;
  }
  return {mismatched.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    std::string name;
    std::function<Outcome()> fn;
    double budget_s;  // 0: no runtime bound
  };
  const std::vector<Criterion> criteria = {
      {"1 gradient correctness", gradients, 60},
      {"2 closed-form KL vs Monte Carlo", closed_form_kl, 60},
      {"3 data-processing bound in d=2", dpi_bound, 120},
      {"4 optimal-critic InfoNCE convergence", proposition, 120},
      {"5 reduction to SimCLR at beta=0, sigma=0", reduction, 120},
      {"6 collapse mitigation (effective rank)", collapse, 600},
      {"7 linear-probe accuracy on mixture", representation, 600},
      {"8 mixed KSG sanity", mi_sanity, 120},
      {"9 KL generalization trend", gap_trend_check, 1200},
      {"10 uncertainty regression", uncertainty, 0},
      {"11 CLI determinism", cli_determinism, 0},
  };
  std::string only = argc > 1 ? argv[1] : "";
  int failures = 0;
  for (const auto& [name, fn, budget] : criteria) {
    if (!only.empty() && name.rfind(only + " ", 0) != 0) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget > 0 && secs > budget) {
      o.pass = false;
      o.detail += ", over the " + num(budget) + "s budget";
    }
    std::printf("[%s] %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
