#pragma once

// Sliding-window effective rank of a hidden-state trajectory and a simple
// sustained-drop collapse detector.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "soe/error.hpp"
#include "soe/linalg.hpp"

namespace soe {

struct StateTrajectory {
  Matrix states;                         // T×d, one hidden state per row
  std::vector<std::string> token_texts;  // empty, or one entry per state
  std::optional<bool> correct;
  std::uint64_t token_count = 0;         // tokens in the underlying chain; 0 means "same as T"
  std::uint32_t layer_tag = 0;           // carried through, never interpreted

  std::size_t length() const noexcept { return states.rows(); }
  std::size_t dim() const noexcept { return states.cols(); }
  std::uint64_t tokens() const noexcept { return token_count ? token_count : states.rows(); }

  void validate() const {
    require(states.rows() >= 1 && states.cols() >= 1, ErrorCode::InvalidInput, "trajectory is empty");
    require(states.all_finite(), ErrorCode::InvalidInput, "trajectory has non-finite states");
    require(token_texts.empty() || token_texts.size() == states.rows(), ErrorCode::InvalidInput,
            "token_texts length does not match states");
  }

  friend bool operator==(const StateTrajectory&, const StateTrajectory&) = default;
};

struct EffRankPoint {
  std::size_t step;  // number of states up to and including the window end
  double value;
};

struct CollapseReport {
  std::size_t window = 0;
  std::size_t stride = 0;
  std::vector<EffRankPoint> series;
  std::optional<std::size_t> detection_step;
  double baseline = 0.0;
};

// Auto picks the Gram route whenever d exceeds the window length.
enum class SpectrumRoute { Auto, Dense, Gram };

struct MonitorOptions {
  std::size_t window = 64;
  std::size_t stride = 8;
  // Eigenvalues at or below zero_floor·max_i‖h_i‖² count as zero. Without it a
  // window that has collapsed to round-off reports the entropy of noise.
  double zero_floor = 1e-12;
  SpectrumRoute route = SpectrumRoute::Auto;
};

/// Σ = 1/(k−1) Σ_i (h_i−μ)ᵀ(h_i−μ) over the k rows of `window`.
inline Matrix local_covariance(const Matrix& window) {
  const std::size_t k = window.rows();
  require(k >= 2, ErrorCode::WindowTooSmall, "local_covariance needs at least two states");
  require(window.all_finite(), ErrorCode::InvalidInput, "local_covariance: non-finite state");
  const std::size_t d = window.cols();
  Vector mu(d, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += window(i, j);
  for (double& m : mu) m /= static_cast<double>(k);

  Matrix sigma(d, d);
  Vector c(d);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < d; ++j) c[j] = window(i, j) - mu[j];
    for (std::size_t a = 0; a < d; ++a) {
      if (c[a] == 0.0) continue;
      double* sa = sigma.row_ptr(a);
      for (std::size_t b = a; b < d; ++b) sa[b] += c[a] * c[b];
    }
  }
  const double scale = 1.0 / static_cast<double>(k - 1);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) sigma(b, a) = sigma(a, b) = sigma(a, b) * scale;
  return sigma;
}

inline Matrix local_covariance(std::span<const Vector> window) {
  require(window.size() >= 2, ErrorCode::WindowTooSmall, "local_covariance needs at least two states");
  return local_covariance(Matrix::from_rows(window));
}

/// exp of the Shannon entropy of the normalised spectrum (natural log, 0·ln0 = 0).
inline double effective_rank(std::span<const double> spectrum) {
  double total = 0.0;
  for (double l : spectrum) {
    require(std::isfinite(l) && l >= 0.0, ErrorCode::InvalidInput, "effective_rank: spectrum must be finite and >= 0");
    total += l;
  }
  require(total > 0.0, ErrorCode::DegenerateSpectrum, "effective_rank: all-zero spectrum");
  double entropy = 0.0;
  for (double l : spectrum) {
    if (l <= 0.0) continue;
    const double p = l / total;
    entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

/// Covariance spectrum (descending, clamped at zero) of the rows of `window`.
/// When d > k the k×k Gram matrix of the centred rows is decomposed instead of
/// the d×d covariance; both share the same nonzero eigenvalues.
inline Vector window_spectrum(const Matrix& window, SpectrumRoute route = SpectrumRoute::Auto) {
  const std::size_t k = window.rows();
  const std::size_t d = window.cols();
  require(k >= 2, ErrorCode::WindowTooSmall, "window_spectrum needs at least two states");
  Vector spectrum;
  const bool use_gram = route == SpectrumRoute::Gram || (route == SpectrumRoute::Auto && d > k);
  if (use_gram) {
    Matrix centered = window;
    for (std::size_t j = 0; j < d; ++j) {
      double mu = 0.0;
      for (std::size_t i = 0; i < k; ++i) mu += window(i, j);
      mu /= static_cast<double>(k);
      for (std::size_t i = 0; i < k; ++i) centered(i, j) -= mu;
    }
    Matrix g = row_gram(centered);
    for (double& x : g.data()) x /= static_cast<double>(k - 1);
    spectrum = sym_eig(g).eigenvalues;
  } else {
    spectrum = sym_eig(local_covariance(window)).eigenvalues;
  }
  for (double& l : spectrum) l = std::max(l, 0.0);
  return spectrum;
}

/// EffRank of one window with the collapsed-point convention (all-zero → 1).
inline double window_effective_rank(const Matrix& window, double zero_floor,
                                    SpectrumRoute route = SpectrumRoute::Auto) {
  Vector spectrum = window_spectrum(window, route);
  double scale = 0.0;
  for (std::size_t i = 0; i < window.rows(); ++i) scale = std::max(scale, dot(window.row(i), window.row(i)));
  const double floor = zero_floor * scale;
  for (double& l : spectrum)
    if (l <= floor) l = 0.0;
  if (spectrum.empty() || spectrum.front() <= 0.0) return 1.0;
  return effective_rank(spectrum);
}

inline Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(count, m.cols());
  std::copy(m.row_ptr(begin), m.row_ptr(begin) + count * m.cols(), out.data().begin());
  return out;
}

inline CollapseReport effrank_series(const StateTrajectory& traj, const MonitorOptions& opts = {}) {
  require(opts.window >= 2, ErrorCode::WindowTooSmall, "effrank_series: window must be >= 2");
  require(opts.stride >= 1, ErrorCode::InvalidInput, "effrank_series: stride must be >= 1");
  require(traj.length() >= opts.window, ErrorCode::TrajectoryTooShort,
          "trajectory has " + std::to_string(traj.length()) + " states, window needs " + std::to_string(opts.window));
  CollapseReport report;
  report.window = opts.window;
  report.stride = opts.stride;
  for (std::size_t end = opts.window; end <= traj.length(); end += opts.stride) {
    const Matrix w = slice_rows(traj.states, end - opts.window, opts.window);
    report.series.push_back({end, window_effective_rank(w, opts.zero_floor, opts.route)});
  }
  return report;
}

inline CollapseReport effrank_series(const StateTrajectory& traj, std::size_t window, std::size_t stride) {
  MonitorOptions opts;
  opts.window = window;
  opts.stride = stride;
  return effrank_series(traj, opts);
}

/// Earliest step whose value and the following sustain−1 values all sit below
/// theta·baseline, where baseline is the mean of the first `sustain` values.
/// Stores baseline and detection in the report.
inline std::optional<std::size_t> detect_collapse(CollapseReport& report, double theta, std::size_t sustain) {
  require(theta > 0.0 && theta < 1.0, ErrorCode::InvalidInput, "detect_collapse: theta must be in (0, 1)");
  require(sustain >= 1, ErrorCode::InvalidInput, "detect_collapse: sustain must be >= 1");
  require(report.series.size() >= sustain, ErrorCode::InsufficientSeries,
          "detect_collapse: series shorter than sustain window");
  double baseline = 0.0;
  for (std::size_t i = 0; i < sustain; ++i) baseline += report.series[i].value;
  baseline /= static_cast<double>(sustain);
  report.baseline = baseline;
  report.detection_step.reset();

  const double threshold = theta * baseline;
  std::size_t run = 0;
  for (std::size_t i = 0; i < report.series.size(); ++i) {
    run = report.series[i].value < threshold ? run + 1 : 0;
    if (run == sustain) {
      report.detection_step = report.series[i + 1 - sustain].step;
      break;
    }
  }
  return report.detection_step;
}

/// Corpus filter for collapse studies: incorrect chains longer than min_tokens.
inline bool is_collapse_candidate(const StateTrajectory& traj, std::uint64_t min_tokens = 4000) {
  return traj.correct.has_value() && !*traj.correct && traj.tokens() > min_tokens;
}

}  // namespace soe
