#include "vcl/random.hpp"

#include <cmath>
#include <numbers>

#include "vcl/error.hpp"

namespace vcl {

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Prng::Prng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t st = seed;
  for (auto& s : s_) s = splitmix64(st);
}

Prng Prng::split(std::uint64_t stream) const {
  std::uint64_t st = stream ^ 0xD1B54A32D192ED03ULL;
  std::uint64_t mix = splitmix64(st);
  std::uint64_t st2 = seed_ ^ mix;
  return Prng(splitmix64(st2));
}

std::uint64_t Prng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Prng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Prng::uniform_open() {
  return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
}

double Prng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform_open();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::size_t Prng::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Prng::below(0)");
  // Lemire-style rejection keeps the draw unbiased.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t x = next_u64();
    const unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
    if (static_cast<std::uint64_t>(m) >= threshold) {
      return static_cast<std::size_t>(m >> 64);
    }
  }
}

Tensor gaussian_sample(Prng& prng, const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw ShapeError("gaussian_sample: empty shape");
  Tensor t(shape);
  for (auto& v : t.data()) v = prng.normal();
  return t;
}

}  // namespace vcl
