#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "soe/collapse_sim.hpp"
#include "soe/random.hpp"
#include "soe/spectral_monitor.hpp"

using namespace soe;

namespace {

// Dense two-pass covariance followed by Eigen's solver.
Vector oracle_spectrum(const Matrix& w) {
  const auto k = static_cast<Eigen::Index>(w.rows());
  const auto d = static_cast<Eigen::Index>(w.cols());
  Eigen::MatrixXd x(k, d);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = w(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mu;
  const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(k - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  Vector out;
  for (Eigen::Index i = d; i-- > 0;) out.push_back(std::max(0.0, es.eigenvalues()(i)));
  return out;
}

double oracle_effrank(const Vector& spectrum) {
  double total = 0.0;
  for (double l : spectrum) total += l;
  double h = 0.0;
  for (double l : spectrum)
    if (l > 1e-12 * spectrum.front()) h -= (l / total) * std::log(l / total);
  return std::exp(h);
}

StateTrajectory gaussian_trajectory(std::uint64_t seed, std::size_t t, std::size_t d) {
  Rng rng(seed);
  StateTrajectory traj;
  traj.states = rng.normal_matrix(t, d);
  return traj;
}

}  // namespace

TEST(LocalCovariance, IdenticalVectorsGiveZero) {
  const std::vector<Vector> w(5, Vector{1.5, -2.0, 3.0});
  const Matrix c = local_covariance(w);
  for (double x : c.data()) EXPECT_EQ(x, 0.0);
}

TEST(LocalCovariance, TwoPointHandExample) {
  const std::vector<Vector> w{{1.0, 0.0}, {-1.0, 0.0}};
  EXPECT_EQ(local_covariance(w), (Matrix{{2.0, 0.0}, {0.0, 0.0}}));
}

TEST(LocalCovariance, Seed9MatchesNaiveDoubleLoop) {
  Rng rng(9);
  const Matrix w = rng.normal_matrix(64, 8);
  const Matrix c = local_covariance(w);
  Vector mu(8, 0.0);
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 8; ++j) mu[j] += w(i, j) / 64.0;
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = 0; b < 8; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < 64; ++i) s += (w(i, a) - mu[a]) * (w(i, b) - mu[b]);
      EXPECT_NEAR(c(a, b), s / 63.0, 1e-13);
    }
}

TEST(LocalCovariance, TooFewStates) {
  try {
    local_covariance(std::vector<Vector>{{1.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::WindowTooSmall);
  }
}

TEST(EffectiveRank, Examples) {
  EXPECT_NEAR(effective_rank(Vector{1, 1, 1, 1, 1}), 5.0, 1e-12);
  EXPECT_EQ(effective_rank(Vector{7, 0, 0}), 1.0);
  EXPECT_NEAR(effective_rank(Vector{0.5, 0.5, 0, 0}), 2.0, 1e-12);
}

TEST(EffectiveRank, Errors) {
  try {
    effective_rank(Vector{0, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateSpectrum);
  }
  EXPECT_THROW(effective_rank(Vector{1, -1}), Error);
  EXPECT_THROW(effective_rank(Vector{1, NAN}), Error);
}

TEST(EffectiveRank, ScaleInvariance) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Vector s(10);
    for (double& x : s) x = rng.uniform();
    const double base = effective_rank(s);
    for (double c : {1e-6, 0.3, 7.0, 1e8}) {
      Vector scaled = s;
      for (double& x : scaled) x *= c;
      EXPECT_NEAR(effective_rank(scaled), base, 1e-12 * base);
    }
  }
}

TEST(EffectiveRank, RotationInvariance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 300);
    const std::size_t d = 2 + rng.index(15);
    const Matrix h = rng.normal_matrix(40, d);
    const Matrix q = random_orthonormal(rng, d, d);
    const Matrix rotated = multiply(h, q.transposed());
    EXPECT_NEAR(window_effective_rank(h, 1e-12), window_effective_rank(rotated, 1e-12), 1e-8);
  }
}

TEST(EffectiveRank, BoundedByNumericalRank) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 800);
    const std::size_t r = 1 + rng.index(5);
    const Matrix h = multiply(rng.normal_matrix(30, r), rng.normal_matrix(r, 12));
    const Vector s = window_spectrum(h);
    const double er = window_effective_rank(h, 1e-12);
    EXPECT_GE(er, 1.0);
    EXPECT_LE(er, static_cast<double>(numerical_rank(s, 1e-12)) + 1e-8);
  }
}

TEST(WindowSpectrum, GramAndDenseRoutesAgreeWithOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 40);
    const std::size_t k = 2 + rng.index(20);
    const std::size_t d = 1 + rng.index(64);
    const Matrix w = rng.normal_matrix(k, d);
    const Vector oracle = oracle_spectrum(w);
    const Vector gram_route = window_spectrum(w, SpectrumRoute::Gram);
    const Vector dense_route = window_spectrum(w, SpectrumRoute::Dense);
    for (std::size_t i = 0; i < std::min(k, d); ++i) {
      EXPECT_NEAR(gram_route[i], oracle[i], 1e-9 * oracle[0]);
      EXPECT_NEAR(dense_route[i], oracle[i], 1e-9 * oracle[0]);
    }
    EXPECT_NEAR(window_effective_rank(w, 1e-12, SpectrumRoute::Gram),
                window_effective_rank(w, 1e-12, SpectrumRoute::Dense), 1e-6);
  }
}

TEST(EffrankSeries, GaussianTrajectoryIsFlatAndMatchesDenseOracle) {
  const StateTrajectory traj = gaussian_trajectory(1, 256, 16);
  const CollapseReport r = effrank_series(traj, 64, 8);
  ASSERT_EQ(r.series.size(), (256u - 64u) / 8u + 1u);
  double lo = 1e300, hi = 0.0;
  for (std::size_t i = 0; i < r.series.size(); ++i) {
    const auto& p = r.series[i];
    EXPECT_EQ(p.step, 64 + 8 * i);
    const Vector s = oracle_spectrum(slice_rows(traj.states, p.step - 64, 64));
    EXPECT_NEAR(p.value, oracle_effrank(s), 1e-6);
    lo = std::min(lo, p.value);
    hi = std::max(hi, p.value);
  }
  const double mid = 0.5 * (lo + hi);
  EXPECT_LE(hi, mid * 1.15);
  EXPECT_GE(lo, mid * 0.85);
}

TEST(EffrankSeries, WideStatesUseGramRoute) {
  const StateTrajectory traj = gaussian_trajectory(6, 80, 200);
  MonitorOptions dense;
  dense.window = 16;
  dense.stride = 16;
  dense.route = SpectrumRoute::Dense;
  MonitorOptions automatic = dense;
  automatic.route = SpectrumRoute::Auto;
  const auto a = effrank_series(traj, dense);
  const auto b = effrank_series(traj, automatic);
  for (std::size_t i = 0; i < a.series.size(); ++i) EXPECT_NEAR(a.series[i].value, b.series[i].value, 1e-6);
}

TEST(EffrankSeries, ConstantTrajectoryIsOne) {
  StateTrajectory traj;
  traj.states = Matrix(100, 5, 3.25);
  for (const auto& p : effrank_series(traj, 10, 5).series) EXPECT_EQ(p.value, 1.0);
}

TEST(EffrankSeries, Errors) {
  const StateTrajectory traj = gaussian_trajectory(1, 10, 3);
  try {
    effrank_series(traj, 64, 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TrajectoryTooShort);
  }
  try {
    effrank_series(traj, 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::WindowTooSmall);
  }
}

namespace {

// Collapsing run with a gradual ramp; per-step blocks of N=16 rows, so a
// window of 16 with stride 16 sees exactly one simulator step.
SimRun collapsing_run(std::uint64_t seed) {
  SimConfig cfg;
  cfg.steps = 64;
  cfg.beta = beta_ramp(1.0, 20.0, 64);
  cfg.seed = seed;
  return run_simulation(cfg);
}

}  // namespace

TEST(EffrankSeries, CollapsingSimulatorRunIsNonIncreasing) {
  const SimRun run = collapsing_run(42);
  const CollapseReport r = effrank_series(run.trajectory(), 16, 16);
  ASSERT_EQ(r.series.size(), 65u);
  for (std::size_t i = 1; i < r.series.size(); ++i) EXPECT_LE(r.series[i].value, r.series[i - 1].value + 0.05) << i;
  EXPECT_GE(r.series.front().value, 10.0);
  EXPECT_NEAR(r.series.back().value, 1.0, 1e-9);
}

TEST(DetectCollapse, ConstantSeriesNeverTriggers) {
  CollapseReport r;
  for (std::size_t i = 0; i < 10; ++i) r.series.push_back({i + 1, 50.0});
  EXPECT_FALSE(detect_collapse(r, 0.5, 3).has_value());
  EXPECT_EQ(r.baseline, 50.0);
}

TEST(DetectCollapse, HandSeries) {
  CollapseReport r;
  const Vector v{40, 40, 18, 18, 18};
  for (std::size_t i = 0; i < v.size(); ++i) r.series.push_back({64 + 8 * i, v[i]});
  const auto step = detect_collapse(r, 0.5, 2);
  ASSERT_TRUE(step.has_value());
  EXPECT_EQ(*step, 64u + 16u);
  EXPECT_EQ(r.detection_step, step);
}

TEST(DetectCollapse, Errors) {
  CollapseReport r;
  r.series.push_back({1, 1.0});
  try {
    detect_collapse(r, 0.5, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSeries);
  }
  EXPECT_THROW(detect_collapse(r, 1.5, 1), Error);
  EXPECT_THROW(detect_collapse(r, 0.5, 0), Error);
}

TEST(DetectCollapse, DetectionPrecedesRankOne) {
  for (std::uint64_t seed : {1u, 2u, 3u, 42u}) {
    const SimRun run = collapsing_run(seed);
    CollapseReport r = effrank_series(run.trajectory(), 16, 16);
    const auto step = detect_collapse(r, 0.5, 1);
    ASSERT_TRUE(step.has_value());
    std::optional<std::size_t> rank_one;
    for (const auto& p : r.series) {
      const Matrix w = slice_rows(run.trajectory().states, p.step - 16, 16);
      if (numerical_rank(window_spectrum(w), 1e-9) <= 1) {
        rank_one = p.step;
        break;
      }
    }
    ASSERT_TRUE(rank_one.has_value());
    EXPECT_LT(*step, *rank_one) << "seed " << seed;
  }
}

TEST(CollapseCandidate, CorpusFilter) {
  StateTrajectory t = gaussian_trajectory(1, 4, 2);
  EXPECT_FALSE(is_collapse_candidate(t));
  t.correct = false;
  t.token_count = 5000;
  EXPECT_TRUE(is_collapse_candidate(t));
  t.correct = true;
  EXPECT_FALSE(is_collapse_candidate(t));
  t.correct = false;
  t.token_count = 4000;
  EXPECT_FALSE(is_collapse_candidate(t));
}
