#pragma once

// Desk-scale dynamical system for studying rank collapse under attention-like
// averaging, plus the injection and mean-shift identities used to argue that
// an orthogonal probe expands rank without moving the context mean.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "soe/error.hpp"
#include "soe/linalg.hpp"
#include "soe/manifold.hpp"
#include "soe/probe.hpp"
#include "soe/random.hpp"
#include "soe/spectral_monitor.hpp"

namespace soe {

enum class AttentionKind { Softmax, Linear };

inline std::string_view to_string(AttentionKind kind) {
  return kind == AttentionKind::Softmax ? "softmax" : "linear";
}

inline AttentionKind parse_attention(std::string_view s) {
  if (s == "softmax") return AttentionKind::Softmax;
  if (s == "linear") return AttentionKind::Linear;
  fail(ErrorCode::InvalidInput, "unknown attention kind '" + std::string(s) + "'");
}

/// β_t for t = 0..steps−1, linear from `from` to `to` inclusive.
inline Vector beta_ramp(double from, double to, std::size_t steps) {
  Vector b(steps, from);
  if (steps > 1)
    for (std::size_t t = 0; t < steps; ++t)
      b[t] = from + (to - from) * static_cast<double>(t) / static_cast<double>(steps - 1);
  return b;
}

struct SimConfig {
  std::size_t dim = 32;
  std::size_t slots = 16;          // N context rows
  std::size_t subspace_dim = 32;   // m, used when `subspace` is empty
  Matrix subspace;                 // d×m orthonormal; drawn from the seed when empty
  Matrix value_map;                // d×d; identity when empty
  Vector beta;                     // logit scale per step, at least `steps` entries
  std::size_t steps = 64;
  double noise_sigma = 0.0;
  bool noise_in_subspace = false;  // draw noise as S·g instead of isotropic
  AttentionKind attention = AttentionKind::Softmax;
  std::uint64_t seed = 0;

  void validate() const {
    require(dim >= 1 && slots >= 1, ErrorCode::InvalidInput, "sim: dim and slots must be >= 1");
    require(steps >= 1, ErrorCode::InvalidInput, "sim: steps must be >= 1");
    require(beta.size() >= steps, ErrorCode::InvalidInput, "sim: beta schedule shorter than steps");
    require(std::all_of(beta.begin(), beta.end(), [](double b) { return std::isfinite(b) && b >= 0.0; }),
            ErrorCode::InvalidInput, "sim: beta must be finite and >= 0");
    require(std::isfinite(noise_sigma) && noise_sigma >= 0.0, ErrorCode::InvalidInput, "sim: noise_sigma must be >= 0");
    if (subspace.empty()) {
      require(subspace_dim >= 1 && subspace_dim <= dim, ErrorCode::InvalidInput, "sim: need 1 <= m <= d");
    } else {
      require(subspace.rows() == dim && subspace.cols() >= 1 && subspace.cols() <= dim, ErrorCode::InvalidInput,
              "sim: subspace basis must be d×m with m <= d");
    }
    if (!value_map.empty())
      require(value_map.rows() == dim && value_map.cols() == dim, ErrorCode::InvalidInput, "sim: value map must be d×d");
  }
};

struct SimRun {
  Matrix subspace;
  Matrix value_map;
  std::vector<Matrix> states;     // steps+1 blocks, each N×d; states[0] is the initial draw
  std::vector<Matrix> attention;  // steps blocks, each N×N row-stochastic

  /// All blocks stacked in step order: row t·N + i is slot i at step t.
  StateTrajectory trajectory() const {
    const std::size_t n = states.front().rows();
    const std::size_t d = states.front().cols();
    StateTrajectory traj;
    traj.states = Matrix(states.size() * n, d);
    for (std::size_t t = 0; t < states.size(); ++t)
      std::copy(states[t].data().begin(), states[t].data().end(), traj.states.row_ptr(t * n));
    return traj;
  }
};

namespace detail {

enum SimStream : std::uint64_t { kSubspaceStream = 0, kInitStream = 1, kNoiseStream = 2, kWeightStream = 3 };

inline Matrix softmax_attention(const Matrix& h, double beta) {
  const std::size_t n = h.rows();
  Matrix q = h;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = norm(q.row(i));
    if (r > 0.0)
      for (double& x : q.row(i)) x /= r;
  }
  Matrix a = row_gram(q);
  for (std::size_t i = 0; i < n; ++i) {
    double* ai = a.row_ptr(i);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      ai[j] *= beta;
      mx = std::max(mx, ai[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      ai[j] = std::exp(ai[j] - mx);
      sum += ai[j];
    }
    for (std::size_t j = 0; j < n; ++j) ai[j] /= sum;
  }
  return a;
}

inline Matrix random_convex_weights(Rng& rng, std::size_t n) {
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += a(i, j) = rng.uniform(0.05, 1.0);
    for (std::size_t j = 0; j < n; ++j) a(i, j) /= sum;
  }
  return a;
}

}  // namespace detail

/// H_{t+1} = A_t (H_t W_Vᵀ) + noise, with A_t = row-softmax(β_t Q Kᵀ) and
/// Q = K = row-normalised H_t (or one fixed random convex weight matrix in
/// linear mode). H_0 holds N Gaussian draws from span(S).
inline SimRun run_simulation(const SimConfig& cfg) {
  cfg.validate();
  SimRun run;
  Rng subspace_rng(derive_seed(cfg.seed, detail::kSubspaceStream));
  run.subspace = cfg.subspace.empty() ? random_orthonormal(subspace_rng, cfg.dim, cfg.subspace_dim) : cfg.subspace;
  run.value_map = cfg.value_map.empty() ? Matrix::identity(cfg.dim) : cfg.value_map;
  const Matrix value_map_t = run.value_map.transposed();
  const Matrix subspace_t = run.subspace.transposed();
  const std::size_t m = run.subspace.cols();

  Rng init_rng(derive_seed(cfg.seed, detail::kInitStream));
  run.states.push_back(multiply(init_rng.normal_matrix(cfg.slots, m), subspace_t));

  Rng noise_rng(derive_seed(cfg.seed, detail::kNoiseStream));
  Rng weight_rng(derive_seed(cfg.seed, detail::kWeightStream));
  const Matrix linear_weights =
      cfg.attention == AttentionKind::Linear ? detail::random_convex_weights(weight_rng, cfg.slots) : Matrix();

  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const Matrix& h = run.states.back();
    Matrix a = cfg.attention == AttentionKind::Softmax ? detail::softmax_attention(h, cfg.beta[t]) : linear_weights;
    Matrix next = multiply(a, multiply(h, value_map_t));
    if (cfg.noise_sigma > 0.0) {
      const Matrix noise = cfg.noise_in_subspace
                               ? multiply(noise_rng.normal_matrix(cfg.slots, m, cfg.noise_sigma), subspace_t)
                               : noise_rng.normal_matrix(cfg.slots, cfg.dim, cfg.noise_sigma);
      for (std::size_t i = 0; i < next.data().size(); ++i) next.data()[i] += noise.data()[i];
    }
    run.attention.push_back(std::move(a));
    run.states.push_back(std::move(next));
  }
  return run;
}

inline StateTrajectory simulate(const SimConfig& cfg) { return run_simulation(cfg).trajectory(); }

/// Runs the noiseless system and measures how far any output state strays from
/// the propagated input subspace: span(S), then span(W_V S), span(W_V² S), …
/// Returns max_i ‖(I − P_t) h_i‖ / ‖h_i‖ over all steps.
inline double check_subspace_invariance(const SimConfig& cfg) {
  require(cfg.noise_sigma == 0.0, ErrorCode::InvalidInput, "subspace invariance requires noise_sigma = 0");
  const SimRun run = run_simulation(cfg);
  Matrix basis = run.subspace;
  double worst = 0.0;
  for (std::size_t t = 0; t < run.states.size(); ++t) {
    if (t > 0) basis = orthonormal_basis(multiply(run.value_map, basis));
    const Matrix& h = run.states[t];
    for (std::size_t i = 0; i < h.rows(); ++i) {
      const double hn = norm(h.row(i));
      if (hn == 0.0) continue;
      worst = std::max(worst, norm(project_split(basis, h.row(i)).perpendicular) / hn);
    }
  }
  return worst;
}

/// Applies a coordinate-wise function to every entry.
inline Matrix apply_pointwise(const Matrix& h, const std::function<double(double)>& f) {
  Matrix out = h;
  for (double& x : out.data()) x = f(x);
  return out;
}

/// Columns whose entries are all equal within tol (zero-variance coordinates).
inline std::vector<std::size_t> constant_coordinates(const Matrix& h, double tol = 0.0) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < h.cols(); ++j) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < h.rows(); ++i) {
      lo = std::min(lo, h(i, j));
      hi = std::max(hi, h(i, j));
    }
    if (hi - lo <= tol) out.push_back(j);
  }
  return out;
}

struct InjectionEvent {
  std::size_t rank_before = 0;
  std::size_t rank_after = 0;
  double lambda_new = 0.0;  // smallest retained covariance eigenvalue after injection
  Vector v_par;             // part of v − μ inside the centred span of the old states
  Vector v_perp;
};

inline Vector append_spectrum(const Matrix& states, std::span<const double> v, Matrix* combined_out = nullptr) {
  Matrix combined(states.rows() + 1, states.cols());
  std::copy(states.data().begin(), states.data().end(), combined.data().begin());
  std::copy(v.begin(), v.end(), combined.row_ptr(states.rows()));
  Vector s = window_spectrum(combined);
  if (combined_out) *combined_out = std::move(combined);
  return s;
}

/// Appends v to the state rows and compares numerical ranks of the centred
/// covariance spectra. Ranks count eigenvalues above rel_tol·λ_max.
inline InjectionEvent inject_orthogonal(const Matrix& states, std::span<const double> v, double rel_tol = 1e-9) {
  require(states.rows() >= 2, ErrorCode::InvalidInput, "inject_orthogonal needs at least two states");
  require(v.size() == states.cols(), ErrorCode::InvalidInput, "inject_orthogonal: dimension mismatch");
  require(all_finite(v) && states.all_finite(), ErrorCode::InvalidInput, "inject_orthogonal: non-finite input");

  InjectionEvent ev;
  const Vector before = window_spectrum(states);
  const Vector after = append_spectrum(states, v);
  ev.rank_before = numerical_rank(before, rel_tol);
  ev.rank_after = numerical_rank(after, rel_tol);
  ev.lambda_new = ev.rank_after > 0 ? after[ev.rank_after - 1] : 0.0;

  const std::size_t n = states.rows();
  const std::size_t d = states.cols();
  Vector mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += states(i, j);
  for (double& x : mu) x /= static_cast<double>(n);
  const Vector centered_v = subtract(v, mu);

  if (ev.rank_before == 0) {
    ev.v_par.assign(d, 0.0);
    ev.v_perp = centered_v;
    return ev;
  }
  Matrix h(d, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) h(j, i) = states(i, j) - mu[j];
  const SymEig geig = sym_eig(gram(h));
  const Components comps = recover_components(h, geig, rel_tol * geig.eigenvalues.front());
  Split s = project_split(comps.basis, centered_v);
  ev.v_par = std::move(s.parallel);
  ev.v_perp = std::move(s.perpendicular);
  return ev;
}

struct MeanShift {
  Vector delta_exact;   // L_inj/(L_ctx+L_inj)·(h_s − μ)
  Vector delta_approx;  // L_inj/L_ctx·(h_s − μ)
  double rel_gap = 0.0; // ‖exact − approx‖ / ‖exact‖, 0 when exact is 0
};

inline MeanShift mean_shift(std::size_t l_ctx, std::span<const double> mu, std::size_t l_inj,
                            std::span<const double> h_s) {
  require(l_ctx >= 1 && l_inj >= 1, ErrorCode::InvalidInput, "mean_shift: lengths must be >= 1");
  require(mu.size() == h_s.size(), ErrorCode::InvalidInput, "mean_shift: dimension mismatch");
  const double exact_w = static_cast<double>(l_inj) / static_cast<double>(l_ctx + l_inj);
  const double approx_w = static_cast<double>(l_inj) / static_cast<double>(l_ctx);
  MeanShift out{Vector(mu.size()), Vector(mu.size())};
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double diff = h_s[i] - mu[i];
    out.delta_exact[i] = exact_w * diff;
    out.delta_approx[i] = approx_w * diff;
  }
  const double ne = norm(out.delta_exact);
  out.rel_gap = ne > 0.0 ? norm(subtract(out.delta_exact, out.delta_approx)) / ne : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Ejection experiment: orthogonal vs random probe choice on a collapsed run.

enum class CandidateMixture {
  Default,        // each candidate mixes in-span and null-space parts with a uniform fraction
  AllInSpan,      // every candidate lies inside the bias manifold
  OneOrthogonal,  // one candidate lies entirely in the null space, the rest in-span
};

struct EjectionOptions {
  SimConfig sim = [] {
    SimConfig c;
    c.dim = 32;
    c.slots = 16;
    c.subspace_dim = 3;
    c.steps = 24;
    c.beta = beta_ramp(1.0, 20.0, 24);
    c.noise_sigma = 0.05;
    c.noise_in_subspace = true;
    return c;
  }();
  std::size_t candidates = 8;
  CandidateMixture mixture = CandidateMixture::Default;
  ManifoldOptions manifold{};
  double epsilon = kDefaultEpsilon;
  double rank_tol = 1e-9;
  double zero_floor = 1e-12;
};

struct InjectionOutcome {
  std::size_t chosen = 0;
  double score = 0.0;
  double perp_energy = 0.0;   // null-space energy of the injected latent
  double effrank_jump = 0.0;  // EffRank(window + z) − EffRank(window)
  std::size_t rank_jump = 0;  // numerical rank difference
};

struct EjectionTrial {
  std::uint64_t seed = 0;
  InjectionOutcome orthogonal;
  InjectionOutcome random;
  ProbeSelection selection;  // orthogonal selection with every candidate's score
};

namespace detail {

inline Vector unit(Vector v) {
  const double n = norm(v);
  if (n > 0.0)
    for (double& x : v) x /= n;
  return v;
}

inline InjectionOutcome inject_outcome(const Matrix& window, const BiasManifold& manifold, const ProbeSelection& sel,
                                       const EjectionOptions& opts, double effrank_before) {
  InjectionOutcome out;
  out.chosen = sel.chosen_index;
  out.score = sel.chosen().score;
  const Vector& z = sel.chosen().latent;
  out.perp_energy = manifold_energy(manifold, z).perpendicular;
  Matrix combined;
  append_spectrum(window, z, &combined);
  out.effrank_jump = window_effective_rank(combined, opts.zero_floor) - effrank_before;
  const InjectionEvent ev = inject_orthogonal(window, z, opts.rank_tol);
  out.rank_jump = ev.rank_after - ev.rank_before;
  return out;
}

}  // namespace detail

/// Runs `trials` seeded episodes. Each one simulates to collapse, estimates the
/// manifold from the final N states, synthesises candidate latents, and records
/// what injecting the orthogonal and the random choice would do.
inline std::vector<EjectionTrial> ejection_trials(const EjectionOptions& opts, std::size_t trials, std::uint64_t seed) {
  require(trials >= 1, ErrorCode::InvalidInput, "ejection experiment needs at least one trial");
  require(opts.candidates >= 1, ErrorCode::InvalidInput, "ejection experiment needs at least one candidate");
  std::vector<EjectionTrial> out;
  out.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    EjectionTrial trial;
    trial.seed = derive_seed(seed, t);
    SimConfig cfg = opts.sim;
    cfg.seed = trial.seed;
    const SimRun run = run_simulation(cfg);
    const Matrix& window = run.states.back();

    const BiasManifold manifold = estimate_manifold(MCSampleSet{window}, opts.manifold);
    // Full centred span of the window; null-space directions are drawn outside it.
    Matrix h(window.cols(), window.rows());
    for (std::size_t i = 0; i < window.rows(); ++i)
      for (std::size_t j = 0; j < window.cols(); ++j) h(j, i) = window(i, j) - manifold.mean[j];
    const SymEig geig = sym_eig(gram(h));
    const Matrix span = recover_components(h, geig, opts.rank_tol * geig.eigenvalues.front()).basis;
    double variance = 0.0;
    for (double l : geig.eigenvalues) variance += std::max(l, 0.0);
    const double scale = std::sqrt(variance / static_cast<double>(window.rows() - 1));

    Rng rng(derive_seed(trial.seed, 0xC0FFEE));
    const std::size_t m = opts.candidates;
    std::vector<double> fractions(m, 0.0);
    if (opts.mixture == CandidateMixture::Default) {
      for (double& f : fractions) f = rng.uniform();
    } else if (opts.mixture == CandidateMixture::OneOrthogonal) {
      fractions[rng.index(m)] = 1.0;
    }
    std::vector<CandidateInput> cands(m);
    for (std::size_t j = 0; j < m; ++j) {
      const Vector in_dir = detail::unit(multiply(manifold.basis, rng.normal_vector(manifold.rank())));
      const Vector out_dir = detail::unit(project_split(span, rng.normal_vector(window.cols())).perpendicular);
      const double f = fractions[j];
      const double g = std::sqrt(std::max(0.0, 1.0 - f * f));
      Vector z = manifold.mean;
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += scale * (g * in_dir[i] + f * out_dir[i]);
      cands[j] = CandidateInput{{"cand" + std::to_string(j)}, std::move(z)};
    }

    const double effrank_before = window_effective_rank(window, opts.zero_floor);
    trial.selection = select_probe(cands, manifold, opts.epsilon);
    const ProbeSelection rnd = random_select(cands, manifold, derive_seed(trial.seed, 0xBADC0DE), opts.epsilon);
    trial.orthogonal = detail::inject_outcome(window, manifold, trial.selection, opts, effrank_before);
    trial.random = detail::inject_outcome(window, manifold, rnd, opts, effrank_before);
    out.push_back(std::move(trial));
  }
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
};

inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

struct SelectorStats {
  Selector selector = Selector::Orthogonal;
  std::size_t trials = 0;
  MeanStd perp_energy;
  MeanStd effrank_jump;
  MeanStd rank_jump;
  MeanStd score;
};

inline SelectorStats summarize(std::span<const EjectionTrial> trials, Selector selector) {
  std::vector<double> perp, jump, rank, score;
  for (const auto& t : trials) {
    const InjectionOutcome& o = selector == Selector::Orthogonal ? t.orthogonal : t.random;
    perp.push_back(o.perp_energy);
    jump.push_back(o.effrank_jump);
    rank.push_back(static_cast<double>(o.rank_jump));
    score.push_back(o.score);
  }
  return {selector, trials.size(), mean_std(perp), mean_std(jump), mean_std(rank), mean_std(score)};
}

inline SelectorStats ejection_experiment(const EjectionOptions& opts, Selector selector, std::size_t trials,
                                         std::uint64_t seed) {
  const auto runs = ejection_trials(opts, trials, seed);
  return summarize(runs, selector);
}

}  // namespace soe
