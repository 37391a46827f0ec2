#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "soe/collapse_sim.hpp"

using namespace soe;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  return e;
}

std::size_t oracle_rank(const Matrix& m, double rel_tol = 1e-9) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) r += s(i) > rel_tol * s(0);
  return r;
}

SimConfig ramp_config(std::uint64_t seed) {
  SimConfig cfg;
  cfg.dim = 32;
  cfg.slots = 16;
  cfg.steps = 64;
  cfg.beta = beta_ramp(0.0, 20.0, 64);
  cfg.seed = seed;
  return cfg;
}

Matrix axis_subspace(std::size_t d, std::size_t m) {
  Matrix s(d, m);
  for (std::size_t i = 0; i < m; ++i) s(i, i) = 1.0;
  return s;
}

}  // namespace

TEST(BetaRamp, Endpoints) {
  const Vector b = beta_ramp(0.0, 20.0, 5);
  EXPECT_EQ(b, (Vector{0.0, 5.0, 10.0, 15.0, 20.0}));
  EXPECT_EQ(beta_ramp(3.0, 9.0, 1), (Vector{3.0}));
}

TEST(Simulate, UniformAttentionCollapsesInOneStep) {
  SimConfig cfg;
  cfg.steps = 8;
  cfg.beta.assign(8, 0.0);
  cfg.seed = 4;
  const SimRun run = run_simulation(cfg);
  for (std::size_t t = 1; t < run.states.size(); ++t) {
    const Matrix& h = run.states[t];
    for (std::size_t i = 1; i < h.rows(); ++i)
      for (std::size_t j = 0; j < h.cols(); ++j) EXPECT_NEAR(h(i, j), h(0, j), 1e-14);
  }
  const CollapseReport r = effrank_series(run.trajectory(), cfg.slots, cfg.slots);
  for (std::size_t i = 1; i < r.series.size(); ++i) EXPECT_EQ(r.series[i].value, 1.0);
}

TEST(Simulate, RampRunHasNonIncreasingRankPerOracleSvd) {
  const SimRun run = run_simulation(ramp_config(42));
  std::size_t prev = oracle_rank(run.states.front());
  EXPECT_EQ(prev, 16u);
  for (std::size_t t = 1; t < run.states.size(); ++t) {
    const std::size_t r = oracle_rank(run.states[t]);
    EXPECT_LE(r, prev) << "step " << t;
    // Gram-based singular values only resolve ~1e-8 relative, so compare coarser.
    EXPECT_EQ(oracle_rank(run.states[t], 1e-6), numerical_rank(singular_values(run.states[t]), 1e-6)) << t;
    prev = r;
  }
}

TEST(Simulate, RankBoundedByAttentionAndStateRanks) {
  SimConfig cfg = ramp_config(9);
  cfg.beta = beta_ramp(1.0, 20.0, 64);
  const SimRun run = run_simulation(cfg);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const std::size_t next = oracle_rank(run.states[t + 1]);
    EXPECT_LE(next, std::min(oracle_rank(run.attention[t]), oracle_rank(run.states[t]))) << t;
  }
}

TEST(Simulate, SoftmaxRowsAreConvex) {
  const SimRun run = run_simulation(ramp_config(3));
  for (const Matrix& a : run.attention)
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) {
        EXPECT_GE(a(i, j), 0.0);
        s += a(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Simulate, LargeNoiseRestoresRank) {
  SimConfig cfg;
  cfg.steps = 32;
  cfg.beta.assign(32, 0.0);
  cfg.noise_sigma = 1.0;
  cfg.seed = 11;
  const SimRun run = run_simulation(cfg);
  const double er = window_effective_rank(run.states.back(), 1e-12);
  EXPECT_GE(er, 0.6 * static_cast<double>(cfg.slots - 1));
  EXPECT_LE(er, static_cast<double>(cfg.slots - 1) + 1e-9);
}

TEST(Simulate, NoiseInsideSubspaceKeepsEffRankAtMostM) {
  SimConfig cfg;
  cfg.subspace_dim = 3;
  cfg.steps = 32;
  cfg.beta.assign(32, 0.0);
  cfg.noise_sigma = 1.0;
  cfg.noise_in_subspace = true;
  cfg.seed = 12;
  const SimRun run = run_simulation(cfg);
  for (const Matrix& h : run.states) EXPECT_LE(window_effective_rank(h, 1e-12), 3.0 + 1e-9);
}

TEST(Simulate, SeededDeterminism) {
  SimConfig cfg = ramp_config(77);
  cfg.noise_sigma = 0.1;
  EXPECT_EQ(simulate(cfg), simulate(cfg));
  cfg.attention = AttentionKind::Linear;
  EXPECT_EQ(simulate(cfg), simulate(cfg));
  SimConfig other = cfg;
  other.seed = 78;
  EXPECT_NE(simulate(cfg), simulate(other));
}

TEST(Simulate, ConfigValidation) {
  SimConfig cfg;
  cfg.beta = Vector(3, 1.0);
  EXPECT_THROW(simulate(cfg), Error);  // schedule shorter than steps
  cfg = ramp_config(1);
  cfg.noise_sigma = -1.0;
  EXPECT_THROW(simulate(cfg), Error);
  cfg = ramp_config(1);
  cfg.subspace_dim = 33;
  EXPECT_THROW(simulate(cfg), Error);
  cfg = ramp_config(1);
  cfg.beta[0] = -1.0;
  EXPECT_THROW(simulate(cfg), Error);
}

TEST(SubspaceInvariance, IdentityValueMapStaysInAxisPlane) {
  SimConfig cfg = ramp_config(5);
  cfg.attention = AttentionKind::Linear;
  cfg.subspace = axis_subspace(32, 2);
  EXPECT_LE(check_subspace_invariance(cfg), 1e-10);
}

TEST(SubspaceInvariance, Seed19RandomValueMapMatchesQrOracle) {
  Rng rng(19);
  const Matrix q1 = random_orthonormal(rng, 32, 32);
  const Matrix q2 = random_orthonormal(rng, 32, 32);
  Matrix diag(32, 32);
  for (std::size_t i = 0; i < 32; ++i) diag(i, i) = rng.uniform(0.8, 1.2);
  SimConfig cfg = ramp_config(19);
  cfg.attention = AttentionKind::Linear;
  cfg.subspace_dim = 4;
  cfg.value_map = multiply(multiply(q1, diag), q2.transposed());
  cfg.steps = 24;
  EXPECT_LE(check_subspace_invariance(cfg), 1e-8);

  // Independent oracle: Householder QR of W_Vᵗ·S at each step.
  const SimRun run = run_simulation(cfg);
  Eigen::MatrixXd span = to_eigen(run.subspace);
  const Eigen::MatrixXd wv = to_eigen(run.value_map);
  double worst = 0.0;
  for (std::size_t t = 0; t < run.states.size(); ++t) {
    if (t > 0) span = wv * span;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(span);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(32, 4);
    span = q;
    const Eigen::MatrixXd h = to_eigen(run.states[t]).transpose();
    const Eigen::MatrixXd resid = h - q * (q.transpose() * h);
    for (Eigen::Index i = 0; i < h.cols(); ++i) worst = std::max(worst, resid.col(i).norm() / h.col(i).norm());
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(SubspaceInvariance, FullSpaceIsTrivial) {
  SimConfig cfg = ramp_config(6);
  cfg.attention = AttentionKind::Linear;
  cfg.subspace_dim = 32;
  EXPECT_LE(check_subspace_invariance(cfg), 1e-12);
}

TEST(SubspaceInvariance, RequiresNoiselessRun) {
  SimConfig cfg = ramp_config(6);
  cfg.noise_sigma = 0.1;
  EXPECT_THROW(check_subspace_invariance(cfg), Error);
}

TEST(Pointwise, DarkCoordinatesStayConstant) {
  SimConfig cfg = ramp_config(8);
  cfg.dim = 5;
  cfg.beta = beta_ramp(1.0, 20.0, 64);
  cfg.subspace = axis_subspace(5, 2);
  const SimRun run = run_simulation(cfg);
  EXPECT_EQ(constant_coordinates(run.states.front()), (std::vector<std::size_t>{2, 3, 4}));
  for (const Matrix& h : run.states) {
    const Matrix g = apply_pointwise(h, [](double x) { return std::tanh(x) + 0.5 * x * x; });
    const auto dark = constant_coordinates(g);
    const std::vector<std::size_t> expected{2, 3, 4};
    EXPECT_TRUE(std::includes(dark.begin(), dark.end(), expected.begin(), expected.end()));
    for (std::size_t j : expected) EXPECT_EQ(g(0, j), 0.0);
  }
}

TEST(InjectOrthogonal, NewAxisRaisesRank) {
  const Matrix states{{1, 0, 0, 0, 0}, {0, 1, 0, 0, 0}, {-1, -1, 0, 0, 0}, {2, 1, 0, 0, 0}};
  const InjectionEvent ev = inject_orthogonal(states, Vector{0, 0, 0, 0, 1});
  EXPECT_EQ(ev.rank_before, 2u);
  EXPECT_EQ(ev.rank_after, 3u);
  EXPECT_GT(ev.lambda_new, 0.0);
  EXPECT_GT(norm(ev.v_perp), 0.0);
}

TEST(InjectOrthogonal, InSpanVectorKeepsRank) {
  const Matrix states{{1, 0, 0, 0, 0}, {0, 1, 0, 0, 0}, {-1, -1, 0, 0, 0}, {2, 1, 0, 0, 0}};
  const InjectionEvent ev = inject_orthogonal(states, Vector{3, -2, 0, 0, 0});
  EXPECT_EQ(ev.rank_before, ev.rank_after);
  EXPECT_LE(norm(ev.v_perp), 1e-12);
}

TEST(InjectOrthogonal, Seed29MatchesDenseOracle) {
  Rng rng(29);
  const Matrix states = multiply(rng.normal_matrix(10, 3), rng.normal_matrix(3, 12));
  const Vector v = rng.normal_vector(12);
  const InjectionEvent ev = inject_orthogonal(states, v);
  auto oracle = [](const Matrix& rows) {
    Eigen::MatrixXd x = to_eigen(rows);
    const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.transpose() * c / static_cast<double>(x.rows() - 1));
    const Eigen::VectorXd l = es.eigenvalues();
    const double top = l(l.size() - 1);
    std::size_t r = 0;
    for (Eigen::Index i = 0; i < l.size(); ++i) r += l(i) > 1e-9 * top;
    return std::make_pair(r, l);
  };
  Matrix after(11, 12);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 12; ++j) after(i, j) = states(i, j);
  for (std::size_t j = 0; j < 12; ++j) after(10, j) = v[j];
  const auto [rb, lb] = oracle(states);
  const auto [ra, la] = oracle(after);
  EXPECT_EQ(ev.rank_before, rb);
  EXPECT_EQ(ev.rank_after, ra);
  EXPECT_EQ(ev.rank_after, ev.rank_before + 1);
  EXPECT_NEAR(ev.lambda_new, la(la.size() - static_cast<Eigen::Index>(ra)), 1e-9 * la(la.size() - 1));
}

TEST(InjectOrthogonal, NeverRaisesRankByMoreThanOne) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 6000);
    const std::size_t r = 1 + rng.index(4);
    const Matrix states = multiply(rng.normal_matrix(12, r), rng.normal_matrix(r, 16));
    const Vector v = rng.normal_vector(16);
    const InjectionEvent ev = inject_orthogonal(states, v);
    EXPECT_LE(ev.rank_after, ev.rank_before + 1);
    if (norm(ev.v_perp) > 1e-9 * norm(subtract(v, ev.v_par))) {
      EXPECT_EQ(ev.rank_after, ev.rank_before + 1);
    }
  }
}

TEST(MeanShift, PublishedConstants) {
  const MeanShift s = mean_shift(8192, Vector{0.0}, 8, Vector{1.0});
  EXPECT_NEAR(s.delta_approx[0], 8.0 / 8192.0, 1e-18);
  EXPECT_NEAR(s.delta_approx[0], 9.765625e-4, 1e-12);
  EXPECT_NEAR(s.delta_exact[0], 8.0 / 8200.0, 1e-18);
  EXPECT_NEAR(s.delta_exact[0], 9.7561e-4, 1e-8);
  EXPECT_NEAR(s.rel_gap, 8200.0 / 8192.0 - 1.0, 1e-15);
  EXPECT_LT(s.rel_gap, 1e-3);
}

TEST(MeanShift, NoShiftAtTheMean) {
  const MeanShift s = mean_shift(10, Vector{1.0, 2.0}, 3, Vector{1.0, 2.0});
  EXPECT_EQ(s.delta_exact, (Vector{0.0, 0.0}));
  EXPECT_EQ(s.delta_approx, (Vector{0.0, 0.0}));
  EXPECT_EQ(s.rel_gap, 0.0);
}

TEST(MeanShift, Seed37MatchesConcatenateAndAverage) {
  Rng rng(37);
  const std::size_t l_ctx = 50, l_inj = 7, d = 6;
  const Matrix ctx = rng.normal_matrix(l_ctx, d);
  const Vector h_s = rng.normal_vector(d);
  Vector mu(d, 0.0), full(d, 0.0);
  for (std::size_t i = 0; i < l_ctx; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += ctx(i, j) / l_ctx;
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < l_ctx; ++i) s += ctx(i, j);
    s += static_cast<double>(l_inj) * h_s[j];
    full[j] = s / static_cast<double>(l_ctx + l_inj);
  }
  const MeanShift m = mean_shift(l_ctx, mu, l_inj, h_s);
  for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(mu[j] + m.delta_exact[j], full[j], 1e-14);
  EXPECT_THROW(mean_shift(0, mu, 1, h_s), Error);
  EXPECT_THROW(mean_shift(1, mu, 1, Vector{1.0}), Error);
}

TEST(Ejection, AllInSpanCandidatesDoNotJump) {
  EjectionOptions opts;
  opts.mixture = CandidateMixture::AllInSpan;
  const auto trials = ejection_trials(opts, 20, 1);
  for (const auto& t : trials) {
    EXPECT_EQ(t.orthogonal.rank_jump, 0u);
    EXPECT_EQ(t.random.rank_jump, 0u);
  }
}

TEST(Ejection, OneOrthogonalCandidate) {
  EjectionOptions opts;
  opts.mixture = CandidateMixture::OneOrthogonal;
  const std::size_t n = 1000;
  const auto trials = ejection_trials(opts, n, 2);
  std::size_t random_hits = 0;
  for (const auto& t : trials) {
    EXPECT_EQ(t.orthogonal.rank_jump, 1u);
    EXPECT_GT(t.orthogonal.score, 0.999);
    random_hits += t.random.rank_jump == 1;
  }
  const double p = 1.0 / static_cast<double>(opts.candidates);
  const double sigma = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
  EXPECT_NEAR(static_cast<double>(random_hits), static_cast<double>(n) * p, 3.0 * sigma);
}

TEST(Ejection, DefaultMixtureOrthogonalBeatsRandom) {
  EjectionOptions opts;
  const auto trials = ejection_trials(opts, 200, 42);
  const SelectorStats orth = summarize(trials, Selector::Orthogonal);
  const SelectorStats rnd = summarize(trials, Selector::Random);
  EXPECT_GT(orth.perp_energy.mean, rnd.perp_energy.mean);
  EXPECT_GT(orth.effrank_jump.mean, rnd.effrank_jump.mean);
  EXPECT_EQ(orth.trials, 200u);
  const SelectorStats direct = ejection_experiment(opts, Selector::Orthogonal, 200, 42);
  EXPECT_EQ(direct.perp_energy.mean, orth.perp_energy.mean);
}

TEST(MeanStdHelper, SampleStatistics) {
  const MeanStd m = mean_std(Vector{1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.stddev, std::sqrt(5.0 / 3.0));
  EXPECT_EQ(mean_std(Vector{3.0}).stddev, 0.0);
}
