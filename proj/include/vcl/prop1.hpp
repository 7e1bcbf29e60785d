#pragma once

// InfoNCE with the optimal critic on small discrete alphabets, compared with
// the exactly enumerated limit.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

namespace vcl {

struct DiscreteJoint {
  std::vector<double> q;                  // anchor distribution over K symbols
  std::vector<std::vector<double>> cond;  // cond[z][z'] = p(z' | z)

  std::size_t size() const { return q.size(); }
  void validate() const;  // sums to 1 within 1e-12, entries >= 0
  std::vector<double> marginal() const;

  // K = 2, q = (0.5, 0.5), p(z'|z) = [[0.9, 0.1], [0.1, 0.9]]
  static DiscreteJoint benchmark();
  static DiscreteJoint independent(std::vector<double> q);
  static DiscreteJoint deterministic(std::vector<double> q);  // p(z'|z) = delta
};

// E[log p(z'|z)] + H(p(z')), i.e. E[log p(z'|z) / p(z')].
double exact_rhs(const DiscreteJoint& joint);

// Sum over p(z, z') log(p(z, z') / (q(z) p(z'))), enumerated directly.
double mutual_information(const DiscreteJoint& joint);

struct McEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
};

// Optional per-anchor shift added to every candidate score of that anchor.
using CriticOffset = std::function<double(std::size_t anchor)>;

// Mean over trials of log N + psi(z, z'_1) - logsumexp_j psi(z, z'_j) with the
// optimal critic psi = log p(z'|z) / p(z'). Trial t draws from
// Prng(seed).split(t), so results do not depend on evaluation order.
McEstimate mc_infonce_optimal_critic(const DiscreteJoint& joint, std::size_t n, std::size_t trials,
                                     std::uint64_t seed, const CriticOffset& offset = {});

struct ConvergenceRow {
  std::size_t n = 0;
  double estimate = 0.0;
  double standard_error = 0.0;
  double exact = 0.0;
  double gap = 0.0;        // |estimate - exact|
  double tolerance = 0.0;  // 3 * SE + 2 / N
};

struct ConvergenceTrace {
  std::vector<ConvergenceRow> rows;
  // gap(N_max) <= gap(N_min) + 3 * sqrt(SE_min^2 + SE_max^2)
  bool gap_shrinks = false;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

ConvergenceTrace convergence_check(const DiscreteJoint& joint, const std::vector<std::size_t>& ns,
                                   std::size_t trials, std::uint64_t seed);

}  // namespace vcl
