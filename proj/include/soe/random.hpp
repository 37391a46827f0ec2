#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>

#include "soe/linalg.hpp"

namespace soe {

/// Seeded generator with portable distributions. std::mt19937_64 is fully
/// specified by the standard; the std:: distributions are not, so uniform,
/// index and normal draws are implemented here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection on the 64-bit output.
  std::uint64_t index(std::uint64_t n) {
    require(n > 0, ErrorCode::InvalidInput, "Rng::index: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                (std::numeric_limits<std::uint64_t>::max() % n + 1) % n;
    std::uint64_t x = next();
    while (x > limit) x = next();
    return x % n;
  }

  /// Standard normal via Box–Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Vector normal_vector(std::size_t n, double sigma = 1.0) {
    Vector v(n);
    for (double& x : v) x = sigma * normal();
    return v;
  }

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double sigma = 1.0) {
    Matrix m(rows, cols);
    for (double& x : m.data()) x = sigma * normal();
    return m;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Mixes a base seed with a stream identifier (splitmix64 finaliser), so
/// derived streams do not depend on how many other streams exist.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// d×m matrix with orthonormal columns drawn uniformly (QR of a Gaussian).
inline Matrix random_orthonormal(Rng& rng, std::size_t d, std::size_t m) {
  require(m <= d, ErrorCode::InvalidInput, "random_orthonormal: m > d");
  Matrix q(d, 0);
  while (q.cols() < m) {
    q = orthonormal_basis(rng.normal_matrix(d, m));
  }
  return q;
}

}  // namespace soe
