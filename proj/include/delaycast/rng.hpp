#ifndef DELAYCAST_RNG_HPP
#define DELAYCAST_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace delaycast {

// Seeded random stream. All sampling goes through explicit formulas on top of
// mt19937_64 so a given seed reproduces the same value sequence everywhere;
// std::*_distribution is avoided because its draw sequence is
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [lo, hi] via rejection-free modulo on a wide draw;
  // bias is < 2^-53 for the ranges used here.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const double u = uniform01();
    const auto span = static_cast<double>(hi - lo + 1);
    auto v = lo + static_cast<std::int64_t>(u * span);
    return v > hi ? hi : v;
  }

  // Standard normal via Box-Muller, one value per call (no cached pair).
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  double lognormal(double mu, double sigma) {
    return std::exp(normal(mu, sigma));
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Fisher-Yates; std::shuffle is not used for the same portability reason.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
  }

 private:
  std::mt19937_64 engine_;
};

// Cheap stream splitter so independent concerns (init, batching, data
// generation) get decorrelated seeds from one user-facing seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace delaycast

#endif  // DELAYCAST_RNG_HPP
