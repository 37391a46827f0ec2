#pragma once

// Bias-manifold estimation from Monte-Carlo look-ahead samples. The d×d
// covariance is never formed: principal directions come from the N×N Gram
// matrix of the centred samples.

#include <algorithm>
#include <cmath>
#include <span>
#include <string_view>

#include "soe/error.hpp"
#include "soe/linalg.hpp"

namespace soe {

enum class AggregationMode { MeanPool, LastState };

inline std::string_view to_string(AggregationMode mode) {
  return mode == AggregationMode::MeanPool ? "mean-pool" : "last-state";
}

inline AggregationMode parse_aggregation(std::string_view s) {
  if (s == "mean-pool" || s == "mean") return AggregationMode::MeanPool;
  if (s == "last-state" || s == "last") return AggregationMode::LastState;
  fail(ErrorCode::InvalidInput, "unknown aggregation mode '" + std::string(s) + "'");
}

/// Collapses the per-token states of one look-ahead trajectory (T×d) to a single vector.
inline Vector aggregate_trajectory(const Matrix& states, AggregationMode mode = AggregationMode::MeanPool) {
  require(states.rows() >= 1 && states.cols() >= 1, ErrorCode::InvalidInput, "aggregate_trajectory: no states");
  if (mode == AggregationMode::LastState) return states.row_vector(states.rows() - 1);
  Vector mean(states.cols(), 0.0);
  for (std::size_t i = 0; i < states.rows(); ++i)
    for (std::size_t j = 0; j < states.cols(); ++j) mean[j] += states(i, j);
  for (double& m : mean) m /= static_cast<double>(states.rows());
  return mean;
}

struct MCSampleSet {
  Matrix samples;  // N×d, one aggregated look-ahead per row
  AggregationMode aggregation = AggregationMode::MeanPool;
  double source_temperature = 0.7;

  std::size_t count() const noexcept { return samples.rows(); }
  std::size_t dim() const noexcept { return samples.cols(); }
};

struct BiasManifold {
  Vector mean;               // μ̂
  Matrix basis;              // d×k, orthonormal columns
  Vector eigenvalues;        // covariance scale (÷ N−1), descending
  std::size_t sample_count = 0;
  double energy_fraction = 0.0;  // share of total variance captured by the k kept directions

  std::size_t dim() const noexcept { return mean.size(); }
  std::size_t rank() const noexcept { return basis.cols(); }
};

struct ManifoldOptions {
  double rho = 0.90;
  std::size_t k_max = 4;
};

inline BiasManifold estimate_manifold(const MCSampleSet& set, const ManifoldOptions& opts = {}) {
  const std::size_t n = set.count();
  const std::size_t d = set.dim();
  require(n >= 2, ErrorCode::InvalidInput, "estimate_manifold needs at least two samples");
  require(d >= 1, ErrorCode::InvalidInput, "estimate_manifold: zero dimension");
  require(opts.rho > 0.0 && opts.rho <= 1.0, ErrorCode::InvalidInput, "estimate_manifold: rho must be in (0, 1]");
  require(opts.k_max >= 1, ErrorCode::InvalidInput, "estimate_manifold: k_max must be >= 1");
  require(set.samples.all_finite(), ErrorCode::InvalidInput, "estimate_manifold: non-finite sample");

  BiasManifold m;
  m.sample_count = n;
  m.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m.mean[j] += set.samples(i, j);
  for (double& x : m.mean) x /= static_cast<double>(n);

  // Centred samples as columns: H is d×N.
  Matrix h(d, n);
  double sample_scale = 0.0;
  double spread = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sn = 0.0;
    double cn = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      h(j, i) = set.samples(i, j) - m.mean[j];
      sn += set.samples(i, j) * set.samples(i, j);
      cn += h(j, i) * h(j, i);
    }
    sample_scale = std::max(sample_scale, std::sqrt(sn));
    spread = std::max(spread, std::sqrt(cn));
  }
  require(spread > 1e-14 * sample_scale && spread > 0.0, ErrorCode::DegenerateSamples,
          "estimate_manifold: all samples are identical");

  const SymEig geig = sym_eig(gram(h));
  Components comps = recover_components(h, geig);

  double total = 0.0;
  for (double l : geig.eigenvalues) total += std::max(l, 0.0);
  const std::size_t cap = std::min(opts.k_max, comps.lambdas.size());
  std::size_t k = 0;
  double kept = 0.0;
  while (k < cap) {
    kept += comps.lambdas[k];
    ++k;
    if (kept >= opts.rho * total * (1.0 - 1e-12)) break;
  }

  m.basis = Matrix(d, k);
  for (std::size_t j = 0; j < k; ++j) m.basis.set_col(j, comps.basis.col(j));
  m.eigenvalues.resize(k);
  for (std::size_t j = 0; j < k; ++j) m.eigenvalues[j] = comps.lambdas[j] / static_cast<double>(n - 1);
  m.energy_fraction = kept / total;
  return m;
}

inline BiasManifold estimate_manifold(const MCSampleSet& set, double rho, std::size_t k_max) {
  return estimate_manifold(set, ManifoldOptions{rho, k_max});
}

struct EnergySplit {
  double parallel = 0.0;
  double perpendicular = 0.0;
};

/// Squared norms of the in-manifold and null-space parts of x − μ̂.
inline EnergySplit manifold_energy(const BiasManifold& manifold, std::span<const double> x) {
  require(x.size() == manifold.dim(), ErrorCode::InvalidInput, "manifold_energy: dimension mismatch");
  const Split s = project_split(manifold.basis, subtract(x, manifold.mean));
  return {dot(s.parallel, s.parallel), dot(s.perpendicular, s.perpendicular)};
}

}  // namespace soe
