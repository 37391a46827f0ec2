#pragma once

// Evaluation metrics: Pass@k, distinct-solution curves, relative improvement
// tables, score histograms and a paired bootstrap for ordering claims.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "soe/error.hpp"
#include "soe/linalg.hpp"
#include "soe/random.hpp"

namespace soe {

/// Fraction of problems with at least one correct sample.
inline double pass_at_k(const std::vector<std::vector<bool>>& per_problem) {
  require(!per_problem.empty(), ErrorCode::InvalidInput, "pass_at_k: no problems");
  std::size_t solved = 0;
  for (const auto& samples : per_problem) {
    require(!samples.empty(), ErrorCode::InvalidInput, "pass_at_k: problem without samples");
    if (std::find(samples.begin(), samples.end(), true) != samples.end()) ++solved;
  }
  return static_cast<double>(solved) / static_cast<double>(per_problem.size());
}

struct SolutionRecord {
  Vector embedding;  // unit norm
  bool correct = false;
  std::uint64_t token_cost = 0;
  std::string method;
  std::size_t order = 0;
};

struct CurvePoint {
  std::uint64_t cumulative_tokens = 0;
  std::size_t distinct_correct = 0;
};

struct EfficiencyCurve {
  std::vector<CurvePoint> points;
  std::vector<std::size_t> accepted;  // record indices counted as new solutions

  std::size_t final_count() const { return points.empty() ? 0 : points.back().distinct_correct; }
};

/// Greedy online dedup in arrival order. A correct record is new iff its cosine
/// similarity to every previously accepted record is below tau. Every record
/// (correct or not) adds its token cost, one curve point per record.
inline EfficiencyCurve distinct_solutions(std::span<const SolutionRecord> records, double tau = 0.95) {
  require(tau > 0.0 && tau <= 1.0, ErrorCode::InvalidInput, "distinct_solutions: tau must be in (0, 1]");
  EfficiencyCurve curve;
  std::uint64_t tokens = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SolutionRecord& r = records[i];
    tokens += r.token_cost;
    if (r.correct) {
      require(std::abs(norm(r.embedding) - 1.0) <= 1e-6, ErrorCode::InvalidInput,
              "distinct_solutions: embedding " + std::to_string(i) + " is not unit norm");
      bool fresh = true;
      for (std::size_t a : curve.accepted) {
        require(records[a].embedding.size() == r.embedding.size(), ErrorCode::InvalidInput,
                "distinct_solutions: embedding dimension mismatch");
        if (dot(records[a].embedding, r.embedding) >= tau) {
          fresh = false;
          break;
        }
      }
      if (fresh) curve.accepted.push_back(i);
    }
    curve.points.push_back({tokens, curve.accepted.size()});
  }
  return curve;
}

struct RelativeImprovement {
  Vector per_item;      // (ours − base) / base
  double mean_rel = 0.0;
  double mean_base = 0.0;
  double mean_ours = 0.0;
  double ratio_of_means = 0.0;  // (mean_ours − mean_base) / mean_base, reported alongside mean_rel
};

inline RelativeImprovement relative_improvement(std::span<const double> baseline, std::span<const double> ours) {
  require(baseline.size() == ours.size() && !baseline.empty(), ErrorCode::InvalidInput,
          "relative_improvement: columns must be non-empty and equal length");
  RelativeImprovement r;
  for (std::size_t i = 0; i < baseline.size(); ++i) {
    require(baseline[i] != 0.0, ErrorCode::DivisionByZero, "relative_improvement: zero baseline");
    r.per_item.push_back((ours[i] - baseline[i]) / baseline[i]);
    r.mean_base += baseline[i];
    r.mean_ours += ours[i];
  }
  const double n = static_cast<double>(baseline.size());
  r.mean_base /= n;
  r.mean_ours /= n;
  for (double x : r.per_item) r.mean_rel += x;
  r.mean_rel /= n;
  r.ratio_of_means = (r.mean_ours - r.mean_base) / r.mean_base;
  return r;
}

/// Rounds half away from zero to `digits` decimals; used only for rendering.
inline double round_half_up(double x, int digits) {
  const double p = std::pow(10.0, digits);
  return std::round(x * p) / p;
}

inline constexpr std::size_t kScoreBins = 20;

struct TagSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
};

struct ScoreHistogram {
  std::array<std::size_t, kScoreBins> bins{};  // bin b covers [b/20, (b+1)/20); 1.0 lands in the last bin
  std::size_t total = 0;
  std::map<std::string, TagSummary> per_tag;
};

struct TaggedScore {
  std::string tag;
  double score = 0.0;
};

inline std::size_t score_bin(double score) {
  const double clamped = std::clamp(score, 0.0, 1.0);
  return std::min(kScoreBins - 1, static_cast<std::size_t>(clamped * static_cast<double>(kScoreBins)));
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline ScoreHistogram score_distribution(std::span<const TaggedScore> scores) {
  require(!scores.empty(), ErrorCode::InvalidInput, "score_distribution: no scores");
  ScoreHistogram h;
  std::map<std::string, std::vector<double>> grouped;
  for (const auto& s : scores) {
    require(std::isfinite(s.score), ErrorCode::InvalidInput, "score_distribution: non-finite score");
    ++h.bins[score_bin(s.score)];
    grouped[s.tag].push_back(s.score);
  }
  h.total = scores.size();
  for (auto& [tag, xs] : grouped) {
    TagSummary t;
    t.count = xs.size();
    for (double x : xs) t.mean += x;
    t.mean /= static_cast<double>(xs.size());
    t.median = median(xs);
    h.per_tag[tag] = t;
  }
  return h;
}

/// Fraction of paired bootstrap resamples in which mean(a) > mean(b).
inline double bootstrap_ordering(std::span<const double> a, std::span<const double> b, std::size_t resamples,
                                 std::uint64_t seed) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::InvalidInput, "bootstrap_ordering: paired samples required");
  require(resamples >= 1, ErrorCode::InvalidInput, "bootstrap_ordering: resamples must be >= 1");
  Rng rng(seed);
  std::size_t wins = 0;
  for (std::size_t r = 0; r < resamples; ++r) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::size_t j = rng.index(a.size());
      sa += a[j];
      sb += b[j];
    }
    if (sa > sb) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(resamples);
}

}  // namespace soe
