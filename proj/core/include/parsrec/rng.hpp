// Seedable 64-bit PRNG (xoshiro256**) with splittable per-purpose streams.
// Every random draw in the project goes through this generator so that a
// (seed, config) pair pins down all outputs exactly.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace parsrec {

// Stream labels. Deriving a stream from (master seed, purpose, index) keeps
// independent consumers (data synthesis, dropout, candidate sampling, ...)
// from perturbing each other's draw sequences.
enum class StreamPurpose : std::uint64_t {
  kSynthUser = 1,
  kSynthPrices = 2,
  kSynthVine = 3,
  kInit = 4,
  kDropout = 5,
  kTraining = 6,
  kEvalCandidates = 7,
  kEvalFeed = 8,
  kMisc = 9,
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
inline std::uint64_t rotl(std::uint64_t v, int k) {
  return (v << k) | (v >> (64 - k));
}
}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : state_) w = detail::splitmix64(x);
  }

  // Independent stream derived from (master, purpose, index).
  static Rng stream(std::uint64_t master, StreamPurpose purpose,
                    std::uint64_t index = 0) {
    std::uint64_t x = master;
    std::uint64_t a = detail::splitmix64(x);
    x ^= static_cast<std::uint64_t>(purpose) * 0x9e3779b97f4a7c15ULL;
    std::uint64_t b = detail::splitmix64(x);
    x ^= (index + 1) * 0xd1342543de82ef95ULL;
    std::uint64_t c = detail::splitmix64(x);
    return Rng(a ^ detail::rotl(b, 17) ^ detail::rotl(c, 41));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection keeps it exactly uniform.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double lognormal(double mu, double sigma) {
    return std::exp(mu + sigma * normal());
  }

  double weibull(double shape, double scale) {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return scale * std::pow(-std::log(u), 1.0 / shape);
  }

  // Beta(a, 1): inverse CDF is u^(1/a).
  double beta_a1(double a) {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return std::pow(u, 1.0 / a);
  }

 private:
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace parsrec
