#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vcl/tensor.hpp"

namespace vcl {

// Seeded pseudo-random source.
//
// Generator: xoshiro256** with its 256-bit state filled from SplitMix64(seed).
// Normals: Box-Muller on (u1, u2) with u1 in (0, 1], both outputs used in
// order (cos branch first, then sin branch).
//
// split(k) derives an independent child stream from the *seed* and k only,
// never from the current state, so the order in which components draw from
// their own streams does not perturb each other.
class Prng {
 public:
  explicit Prng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  Prng split(std::uint64_t stream) const;

  std::uint64_t next_u64();
  double uniform();       // [0, 1)
  double uniform_open();  // (0, 1]
  double normal();
  std::size_t below(std::size_t n);  // uniform integer in [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

// i.i.d. standard normal entries, filled in row-major order.
Tensor gaussian_sample(Prng& prng, const std::vector<std::size_t>& shape);

}  // namespace vcl
