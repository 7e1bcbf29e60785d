#include "vcl/prop1.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "vcl/error.hpp"
#include "vcl/random.hpp"

namespace vcl {

namespace {

constexpr double kSumTolerance = 1e-12;

void check_distribution(const std::vector<double>& p, const std::string& what) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument(what + " has a negative or NaN entry");
    s += v;
  }
  if (std::abs(s - 1.0) > kSumTolerance) throw std::invalid_argument(what + " does not sum to 1");
}

std::size_t draw(const std::vector<double>& p, Prng& prng) {
  const double u = prng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  // Rounding left u above the final cumulative sum: take the last supported symbol.
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return i;
  }
  return p.size() - 1;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void DiscreteJoint::validate() const {
  if (q.empty()) throw std::invalid_argument("joint: empty alphabet");
  if (cond.size() != q.size()) throw ShapeError("joint: conditional needs one row per symbol");
  check_distribution(q, "joint: anchor distribution");
  for (std::size_t z = 0; z < cond.size(); ++z) {
    if (cond[z].size() != q.size()) throw ShapeError("joint: conditional row " + std::to_string(z) + " has wrong length");
    check_distribution(cond[z], "joint: conditional row " + std::to_string(z));
  }
}

std::vector<double> DiscreteJoint::marginal() const {
  std::vector<double> m(q.size(), 0.0);
  for (std::size_t z = 0; z < q.size(); ++z) {
    for (std::size_t w = 0; w < q.size(); ++w) m[w] += q[z] * cond[z][w];
  }
  return m;
}

DiscreteJoint DiscreteJoint::benchmark() { return {{0.5, 0.5}, {{0.9, 0.1}, {0.1, 0.9}}}; }

DiscreteJoint DiscreteJoint::independent(std::vector<double> q) {
  DiscreteJoint j{q, {}};
  j.cond.assign(q.size(), q);
  return j;
}

DiscreteJoint DiscreteJoint::deterministic(std::vector<double> q) {
  DiscreteJoint j{q, {}};
  j.cond.assign(q.size(), std::vector<double>(q.size(), 0.0));
  for (std::size_t z = 0; z < q.size(); ++z) j.cond[z][z] = 1.0;
  return j;
}

double exact_rhs(const DiscreteJoint& joint) {
  joint.validate();
  const auto marg = joint.marginal();
  double expected_log_cond = 0.0;
  for (std::size_t z = 0; z < joint.size(); ++z) {
    for (std::size_t w = 0; w < joint.size(); ++w) {
      const double p = joint.q[z] * joint.cond[z][w];
      if (p > 0.0) expected_log_cond += p * std::log(joint.cond[z][w]);
    }
  }
  double entropy = 0.0;
  for (double p : marg) {
    if (p > 0.0) entropy -= p * std::log(p);
  }
  // The marginal of the joint is the z' law itself, so the divergence term vanishes.
  return expected_log_cond + entropy;
}

double mutual_information(const DiscreteJoint& joint) {
  joint.validate();
  const std::size_t k = joint.size();
  std::vector<double> col(k, 0.0);
  for (std::size_t z = 0; z < k; ++z) {
    for (std::size_t w = 0; w < k; ++w) col[w] += joint.q[z] * joint.cond[z][w];
  }
  double mi = 0.0;
  for (std::size_t z = 0; z < k; ++z) {
    for (std::size_t w = 0; w < k; ++w) {
      const double pj = joint.q[z] * joint.cond[z][w];
      if (pj > 0.0) mi += pj * std::log(pj / (joint.q[z] * col[w]));
    }
  }
  return mi;
}

McEstimate mc_infonce_optimal_critic(const DiscreteJoint& joint, std::size_t n, std::size_t trials,
                                     std::uint64_t seed, const CriticOffset& offset) {
  joint.validate();
  if (n < 2) throw std::invalid_argument("mc_infonce: need N >= 2");
  if (trials < 100) throw std::invalid_argument("mc_infonce: need at least 100 trials");
  const std::size_t k = joint.size();
  const auto marg = joint.marginal();
  // psi[z][w] = log p(w|z) - log p(w); -inf where p(w|z) = 0.
  std::vector<std::vector<double>> psi(k, std::vector<double>(k));
  for (std::size_t z = 0; z < k; ++z) {
    for (std::size_t w = 0; w < k; ++w) {
      psi[z][w] = joint.cond[z][w] > 0.0 ? std::log(joint.cond[z][w]) - std::log(marg[w])
                                          : -std::numeric_limits<double>::infinity();
    }
  }
  const double log_n = std::log(static_cast<double>(n));
  const Prng root(seed);
  std::vector<std::size_t> counts(k);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Prng prng = root.split(t);
    const std::size_t z = draw(joint.q, prng);
    const std::size_t pos = draw(joint.cond[z], prng);
    std::fill(counts.begin(), counts.end(), 0);
    ++counts[pos];
    for (std::size_t j = 1; j < n; ++j) ++counts[draw(marg, prng)];
    const double alpha = offset ? offset(z) : 0.0;
    const double s_pos = psi[z][pos] + alpha;
    if (!std::isfinite(s_pos)) throw DegenerateInputError("mc_infonce: zero-probability positive pair drawn");
    // Candidates sharing a symbol share a score, so the sum runs over symbols.
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < k; ++w) {
      if (counts[w]) mx = std::max(mx, psi[z][w] + alpha);
    }
    double acc = 0.0;
    for (std::size_t w = 0; w < k; ++w) {
      if (counts[w]) acc += static_cast<double>(counts[w]) * std::exp(psi[z][w] + alpha - mx);
    }
    const double v = log_n + s_pos - (mx + std::log(acc));
    sum += v;
    sum_sq += v * v;
  }
  const double tn = static_cast<double>(trials);
  McEstimate est;
  est.estimate = sum / tn;
  const double var = std::max(0.0, (sum_sq - tn * est.estimate * est.estimate) / (tn - 1.0));
  est.standard_error = std::sqrt(var / tn);
  return est;
}

ConvergenceTrace convergence_check(const DiscreteJoint& joint, const std::vector<std::size_t>& ns,
                                   std::size_t trials, std::uint64_t seed) {
  if (ns.size() < 3) throw std::invalid_argument("convergence_check: need at least 3 values of N");
  for (std::size_t i = 1; i < ns.size(); ++i) {
    if (ns[i] <= ns[i - 1]) throw std::invalid_argument("convergence_check: Ns must be strictly increasing");
  }
  const double exact = exact_rhs(joint);
  const Prng root(seed);
  ConvergenceTrace trace;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const McEstimate e = mc_infonce_optimal_critic(joint, ns[i], trials, root.split(i).next_u64());
    ConvergenceRow row;
    row.n = ns[i];
    row.estimate = e.estimate;
    row.standard_error = e.standard_error;
    row.exact = exact;
    row.gap = std::abs(e.estimate - exact);
    // The optimal-critic estimate approaches its limit from below with an
    // O(1/N) deficit; 2/N bounds it for the alphabets used here, and 3 SE
    // covers the Monte Carlo error.
    row.tolerance = 3.0 * e.standard_error + 2.0 / static_cast<double>(ns[i]);
    trace.rows.push_back(row);
  }
  const auto& lo = trace.rows.front();
  const auto& hi = trace.rows.back();
  trace.gap_shrinks =
      hi.gap <= lo.gap + 3.0 * std::sqrt(lo.standard_error * lo.standard_error + hi.standard_error * hi.standard_error);
  return trace;
}

std::string ConvergenceTrace::to_csv() const {
  std::ostringstream os;
  os << "n,estimate,standard_error,exact_rhs,abs_gap,tolerance\n";
  for (const auto& r : rows) {
    os << r.n << ',' << fmt(r.estimate) << ',' << fmt(r.standard_error) << ',' << fmt(r.exact) << ','
       << fmt(r.gap) << ',' << fmt(r.tolerance) << '\n';
  }
  return os.str();
}

nlohmann::json ConvergenceTrace::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows) {
    rs.push_back({{"n", r.n},
                  {"estimate", r.estimate},
                  {"standard_error", r.standard_error},
                  {"exact_rhs", r.exact},
                  {"abs_gap", r.gap},
                  {"tolerance", r.tolerance}});
  }
  return {{"rows", rs}, {"gap_shrinks", gap_shrinks}};
}

}  // namespace vcl
