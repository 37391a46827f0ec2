#pragma once

// Three-stage orchestration: greedy trace → per-milestone manifold estimate and
// probe selection → resumed teacher sampling from the stitched contexts.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <type_traits>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "soe/backend.hpp"
#include "soe/config.hpp"
#include "soe/error.hpp"
#include "soe/manifold.hpp"
#include "soe/probe.hpp"
#include "soe/random.hpp"
#include "soe/spectral_monitor.hpp"

namespace soe {

enum class TruncationStrategy { StepMarkers, UniformFractions };

inline std::string_view to_string(TruncationStrategy s) {
  return s == TruncationStrategy::StepMarkers ? "step-markers" : "uniform-fractions";
}

inline TruncationStrategy parse_strategy(std::string_view s) {
  if (s == "step-markers") return TruncationStrategy::StepMarkers;
  if (s == "uniform-fractions") return TruncationStrategy::UniformFractions;
  fail(ErrorCode::InvalidInput, "unknown truncation strategy '" + std::string(s) + "'");
}

struct TruncationPlan {
  std::vector<std::size_t> points;  // token indices, strictly increasing, each < length
  TruncationStrategy strategy = TruncationStrategy::StepMarkers;
  std::size_t length = 0;
};

namespace detail {

inline bool is_decoration(char c) { return c == ' ' || c == '\t' || c == '#' || c == '*' || c == '_' || c == '>'; }

/// Character offsets just past each "Step <digits>" heading found at a line
/// start (markdown decoration allowed before it; ':' and closing '*'/'_' after).
inline std::vector<std::size_t> step_marker_ends(std::string_view text) {
  std::vector<std::size_t> ends;
  std::size_t line = 0;
  while (line < text.size()) {
    std::size_t p = line;
    while (p < text.size() && is_decoration(text[p])) ++p;
    if (text.substr(p, 4) == "Step") {
      std::size_t q = p + 4;
      const std::size_t ws = q;
      while (q < text.size() && (text[q] == ' ' || text[q] == '\t')) ++q;
      const std::size_t digits = q;
      while (q < text.size() && std::isdigit(static_cast<unsigned char>(text[q]))) ++q;
      if (q > digits && digits > ws) {
        if (q < text.size() && text[q] == ':') ++q;
        while (q < text.size() && (text[q] == '*' || text[q] == '_')) ++q;
        ends.push_back(q);
      }
    }
    const std::size_t nl = text.find('\n', line);
    if (nl == std::string_view::npos) break;
    line = nl + 1;
  }
  return ends;
}

}  // namespace detail

inline TruncationPlan uniform_truncation(std::size_t length, std::size_t n_points) {
  TruncationPlan plan{{}, TruncationStrategy::UniformFractions, length};
  for (std::size_t i = 1; i <= n_points; ++i) {
    const std::size_t p = i * length / (n_points + 1);
    if (p < length && (plan.points.empty() || p > plan.points.back())) plan.points.push_back(p);
  }
  if (plan.points.empty()) plan.points.push_back(0);
  return plan;
}

/// Truncation points after the first n_points step headings in the token text;
/// falls back to uniform fractions i/(n+1) of the length when there are fewer.
inline TruncationPlan find_truncation_points(std::span<const std::string> tokens, std::size_t n_points,
                                             TruncationStrategy strategy = TruncationStrategy::StepMarkers) {
  require(!tokens.empty(), ErrorCode::InvalidInput, "find_truncation_points: empty trajectory");
  require(n_points >= 1, ErrorCode::InvalidInput, "find_truncation_points: n_points must be >= 1");
  const std::size_t length = tokens.size();
  if (strategy == TruncationStrategy::UniformFractions) return uniform_truncation(length, n_points);

  std::string text;
  std::vector<std::size_t> starts;
  starts.reserve(length);
  for (const auto& t : tokens) {
    starts.push_back(text.size());
    text += t;
  }
  TruncationPlan plan{{}, TruncationStrategy::StepMarkers, length};
  for (std::size_t end : detail::step_marker_ends(text)) {
    const auto it = std::lower_bound(starts.begin(), starts.end(), end);
    if (it == starts.end()) break;
    const std::size_t p = static_cast<std::size_t>(it - starts.begin());
    if (plan.points.empty() || p > plan.points.back()) plan.points.push_back(p);
    if (plan.points.size() == n_points) return plan;
  }
  return uniform_truncation(length, n_points);
}

inline TruncationPlan find_truncation_points(const StateTrajectory& traj, std::size_t n_points,
                                             TruncationStrategy strategy = TruncationStrategy::StepMarkers) {
  require(traj.length() >= 1, ErrorCode::InvalidInput, "find_truncation_points: empty trajectory");
  if (traj.token_texts.empty()) return uniform_truncation(traj.length(), n_points);
  return find_truncation_points(traj.token_texts, n_points, strategy);
}

/// Even split of `budget` over `parts`, remainder to the earliest parts.
inline std::vector<std::size_t> split_budget(std::size_t budget, std::size_t parts) {
  require(parts >= 1, ErrorCode::InvalidInput, "split_budget: no parts");
  std::vector<std::size_t> out(parts, budget / parts);
  for (std::size_t i = 0; i < budget % parts; ++i) ++out[i];
  return out;
}

struct PipelineConfig {
  std::size_t mc_samples = 8;        // N teacher look-aheads per point
  std::size_t candidates = 8;        // M student probes per point
  std::size_t probe_len = 8;         // L tokens per probe
  std::size_t lookahead_tokens = 8;
  double teacher_temperature = 0.7;
  double student_temperature = 1.0;
  std::size_t budget = 16;           // resumed samples across all points
  std::size_t max_tokens = 8192;
  TruncationStrategy strategy = TruncationStrategy::StepMarkers;
  std::size_t n_points = 3;
  std::vector<std::size_t> points;  // explicit truncation offsets; overrides strategy when non-empty
  ManifoldOptions manifold{};
  AggregationMode aggregation = AggregationMode::MeanPool;
  double epsilon = kDefaultEpsilon;
  bool gate_incorrect = false;  // skip problems whose greedy trace is known correct
  bool gate_effrank = false;    // skip unless the greedy trace's EffRank series shows a collapse
  MonitorOptions monitor{};
  double theta = 0.5;
  std::size_t sustain = 3;
  std::uint64_t seed = 0;

  static PipelineConfig from_config(const Config& c) {
    PipelineConfig p;
    p.mc_samples = c.get_count("mc_samples", p.mc_samples);
    p.candidates = c.get_count("candidates", p.candidates);
    p.probe_len = c.get_count("probe_len", p.probe_len);
    p.lookahead_tokens = c.get_count("lookahead_tokens", p.lookahead_tokens);
    p.teacher_temperature = c.get_number("teacher_temperature", p.teacher_temperature);
    p.student_temperature = c.get_number("student_temperature", p.student_temperature);
    p.budget = c.get_count("budget", p.budget);
    p.max_tokens = c.get_count("max_tokens", p.max_tokens);
    p.strategy = parse_strategy(c.get_string("strategy", std::string(to_string(p.strategy))));
    p.n_points = c.get_count("n_points", p.n_points);
    if (auto pts = c.get_numbers("points"))
      for (double x : *pts) {
        require(x >= 0.0 && x == std::floor(x), ErrorCode::InvalidInput, "config key 'points' must hold counts");
        p.points.push_back(static_cast<std::size_t>(x));
      }
    p.manifold.rho = c.get_number("rho", p.manifold.rho);
    p.manifold.k_max = c.get_count("kmax", p.manifold.k_max);
    p.aggregation = parse_aggregation(c.get_string("aggregation", std::string(to_string(p.aggregation))));
    p.epsilon = c.get_number("epsilon", p.epsilon);
    p.gate_incorrect = c.get_bool("gate_incorrect", p.gate_incorrect);
    p.gate_effrank = c.get_bool("gate_effrank", p.gate_effrank);
    p.monitor.window = c.get_count("window", p.monitor.window);
    p.monitor.stride = c.get_count("stride", p.monitor.stride);
    p.theta = c.get_number("theta", p.theta);
    p.sustain = c.get_count("sustain", p.sustain);
    p.seed = c.get_count("seed", p.seed);
    p.validate();
    return p;
  }

  Config to_config() const {
    Config c;
    c.set("mc_samples", static_cast<double>(mc_samples));
    c.set("candidates", static_cast<double>(candidates));
    c.set("probe_len", static_cast<double>(probe_len));
    c.set("lookahead_tokens", static_cast<double>(lookahead_tokens));
    c.set("teacher_temperature", teacher_temperature);
    c.set("student_temperature", student_temperature);
    c.set("budget", static_cast<double>(budget));
    c.set("max_tokens", static_cast<double>(max_tokens));
    c.set("strategy", std::string(to_string(strategy)));
    c.set("n_points", static_cast<double>(n_points));
    if (!points.empty()) {
      std::vector<ConfigScalar> arr;
      for (std::size_t x : points) arr.emplace_back(static_cast<double>(x));
      c.set("points", arr);
    }
    c.set("rho", manifold.rho);
    c.set("kmax", static_cast<double>(manifold.k_max));
    c.set("aggregation", std::string(to_string(aggregation)));
    c.set("epsilon", epsilon);
    c.set("gate_incorrect", gate_incorrect);
    c.set("gate_effrank", gate_effrank);
    c.set("window", static_cast<double>(monitor.window));
    c.set("stride", static_cast<double>(monitor.stride));
    c.set("theta", theta);
    c.set("sustain", static_cast<double>(sustain));
    c.set("seed", static_cast<double>(seed));
    return c;
  }

  void validate() const {
    require(mc_samples >= 2, ErrorCode::InvalidInput, "pipeline: mc_samples must be >= 2");
    require(candidates >= 1, ErrorCode::InvalidInput, "pipeline: candidates must be >= 1");
    require(probe_len >= 1 && lookahead_tokens >= 1, ErrorCode::InvalidInput, "pipeline: token lengths must be >= 1");
    require(n_points >= 1, ErrorCode::InvalidInput, "pipeline: n_points must be >= 1");
    require(epsilon >= 0.0, ErrorCode::InvalidInput, "pipeline: epsilon must be >= 0");
    for (std::size_t i = 1; i < points.size(); ++i)
      require(points[i] > points[i - 1], ErrorCode::InvalidInput, "pipeline: points must be strictly increasing");
  }
};

enum class Role { Teacher, Student };

inline std::string_view to_string(Role r) { return r == Role::Teacher ? "teacher" : "student"; }

struct CallRecord {
  Role role = Role::Teacher;
  std::string op;                  // "generate" | "forward"
  std::optional<std::size_t> point;
  std::size_t n = 0;
  std::size_t tokens = 0;          // tokens generated by this call
  std::uint64_t seed = 0;
};

struct ResumedSample {
  std::size_t point = 0;        // index into the plan
  std::size_t token_index = 0;  // truncation offset in the greedy trace
  std::size_t probe_index = 0;  // candidate chosen at that point
  std::uint64_t backend_seed = 0;
  GeneratedSequence sequence;
};

struct PointResult {
  std::size_t token_index = 0;
  std::string truncated_context;
  std::optional<BiasManifold> manifold;
  std::optional<ProbeSelection> selection;
  std::size_t rejected_candidates = 0;  // probes shorter than L
  std::size_t budget = 0;
  std::vector<ResumedSample> resumed;
  std::optional<ErrorCode> error;
  std::string error_message;
};

struct SOERunResult {
  GeneratedSequence greedy;
  TruncationPlan plan;
  std::vector<PointResult> points;
  std::vector<CallRecord> calls;
  std::size_t total_tokens = 0;
  std::optional<std::string> skipped;  // why no intervention happened
  std::optional<CollapseReport> greedy_report;
};

/// Carries whatever finished before a backend failure.
class PipelineFailure : public Error {
 public:
  PipelineFailure(const std::string& what, SOERunResult partial)
      : Error(ErrorCode::BackendError, what), partial_(std::make_shared<SOERunResult>(std::move(partial))) {}
  const SOERunResult& partial() const noexcept { return *partial_; }

 private:
  std::shared_ptr<const SOERunResult> partial_;
};

struct ProblemInput {
  std::string context;
  std::optional<bool> greedy_correct;  // known grading of the greedy trace, if any
};

namespace detail {

enum PipelineStream : std::uint64_t { kLookahead = 1, kStudent = 2, kForward = 3, kResume = 4 };

// Seeds depend only on (base seed, truncation offset, stage), so a point's
// results do not change when other points are added or removed.
inline std::uint64_t point_seed(std::uint64_t base, std::size_t token_index, PipelineStream stage) {
  return derive_seed(derive_seed(base ^ 0x50E50E50E50E50E5ULL, token_index), stage);
}

inline std::uint64_t greedy_seed(std::uint64_t base) { return derive_seed(base, 0); }

class Ledger {
 public:
  explicit Ledger(SOERunResult& r) : r_(r) {}

  std::vector<GeneratedSequence> generate(GenerationBackend& b, Role role, std::optional<std::size_t> point,
                                          const GenerateRequest& req) {
    std::vector<GeneratedSequence> out = guarded([&] { return b.generate(req); });
    if (out.size() != req.n)
      fail(ErrorCode::BackendError, std::string(to_string(role)) + " returned " + std::to_string(out.size()) +
                                        " sequences, expected " + std::to_string(req.n));
    std::size_t tokens = 0;
    for (const auto& s : out) tokens += s.token_count();
    r_.calls.push_back({role, "generate", point, req.n, tokens, req.seed});
    r_.total_tokens += tokens;
    return out;
  }

  Vector forward(GenerationBackend& b, std::optional<std::size_t> point, const std::string& ctx, std::uint64_t seed) {
    Vector z = guarded([&] { return b.forward(ctx, seed); });
    r_.calls.push_back({Role::Teacher, "forward", point, 1, 0, seed});
    return z;
  }

 private:
  template <typename F>
  static std::invoke_result_t<F> guarded(F&& f) {
    try {
      return f();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::BackendError) throw;
      fail(ErrorCode::BackendError, e.what());
    } catch (const std::exception& e) {
      fail(ErrorCode::BackendError, e.what());
    }
  }

  SOERunResult& r_;
};

}  // namespace detail

/// Stages 2 and 3 for one truncation point.
inline void run_point(const std::string& truncated, std::size_t plan_index, const PipelineConfig& cfg,
                      GenerationBackend& teacher, GenerationBackend& student, detail::Ledger& ledger,
                      PointResult& pr) {
  using namespace detail;
  const std::size_t t = pr.token_index;

  GenerateRequest look{truncated, cfg.teacher_temperature, cfg.mc_samples, cfg.lookahead_tokens, true,
                       point_seed(cfg.seed, t, kLookahead)};
  const auto lookaheads = ledger.generate(teacher, Role::Teacher, plan_index, look);
  MCSampleSet set;
  set.aggregation = cfg.aggregation;
  set.source_temperature = cfg.teacher_temperature;
  std::vector<Vector> rows;
  for (const auto& s : lookaheads) {
    if (s.states.empty()) fail(ErrorCode::BackendError, "teacher look-ahead returned no states");
    rows.push_back(aggregate_trajectory(s.states, cfg.aggregation));
  }
  set.samples = Matrix::from_rows(rows);
  pr.manifold = estimate_manifold(set, cfg.manifold);

  GenerateRequest probe_req{truncated, cfg.student_temperature, cfg.candidates, cfg.probe_len, false,
                            point_seed(cfg.seed, t, kStudent)};
  const auto probes = ledger.generate(student, Role::Student, plan_index, probe_req);
  std::vector<CandidateInput> cands;
  for (const auto& p : probes) {
    if (p.tokens.size() < cfg.probe_len) {
      ++pr.rejected_candidates;
      continue;
    }
    std::vector<std::string> toks(p.tokens.begin(), p.tokens.begin() + static_cast<std::ptrdiff_t>(cfg.probe_len));
    const std::uint64_t fseed = derive_seed(point_seed(cfg.seed, t, kForward), cands.size());
    Vector z = ledger.forward(teacher, plan_index, truncated + join_tokens(toks), fseed);
    cands.push_back({std::move(toks), std::move(z)});
  }
  if (cands.empty()) {
    pr.error = ErrorCode::NoCandidates;
    pr.error_message = "no probe of length " + std::to_string(cfg.probe_len);
    return;
  }
  pr.selection = select_probe(cands, *pr.manifold, cfg.epsilon);

  if (pr.budget == 0) return;
  const std::string stitched = truncated + join_tokens(pr.selection->chosen().tokens);
  const std::uint64_t rseed = point_seed(cfg.seed, t, kResume);
  GenerateRequest resume{stitched, cfg.teacher_temperature, pr.budget, cfg.max_tokens, false, rseed};
  for (auto& s : ledger.generate(teacher, Role::Teacher, plan_index, resume))
    pr.resumed.push_back({plan_index, t, pr.selection->chosen_index, rseed, std::move(s)});
}

inline SOERunResult run_soe(const ProblemInput& problem, GenerationBackend& teacher, GenerationBackend& student,
                            const PipelineConfig& cfg) {
  cfg.validate();
  SOERunResult result;
  detail::Ledger ledger(result);
  auto failure = [&](const Error& e) { return PipelineFailure(e.what(), result); };

  try {
    GenerateRequest greedy{problem.context, 0.0, 1, cfg.max_tokens, cfg.gate_effrank, detail::greedy_seed(cfg.seed)};
    result.greedy = std::move(ledger.generate(teacher, Role::Teacher, std::nullopt, greedy).front());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BackendError) throw failure(e);
    throw;
  }
  if (result.greedy.tokens.empty()) {
    result.skipped = "greedy trace is empty";
    return result;
  }

  const std::optional<bool> correct = problem.greedy_correct ? problem.greedy_correct : result.greedy.correct;
  if (cfg.gate_incorrect && correct.value_or(false)) {
    result.skipped = "greedy trace is correct";
    return result;
  }
  if (cfg.gate_effrank) {
    if (result.greedy.states.rows() < cfg.monitor.window) {
      result.skipped = "greedy trace shorter than the monitor window";
      return result;
    }
    StateTrajectory traj;
    traj.states = result.greedy.states;
    CollapseReport report = effrank_series(traj, cfg.monitor);
    detect_collapse(report, cfg.theta, std::min(cfg.sustain, report.series.size()));
    const bool collapsed = report.detection_step.has_value();
    result.greedy_report = std::move(report);
    if (!collapsed) {
      result.skipped = "no collapse detected in the greedy trace";
      return result;
    }
  }

  if (cfg.points.empty()) {
    result.plan = find_truncation_points(result.greedy.tokens, cfg.n_points, cfg.strategy);
  } else {
    require(cfg.points.back() < result.greedy.tokens.size(), ErrorCode::InvalidInput,
            "pipeline: explicit truncation point beyond the greedy trace");
    result.plan = TruncationPlan{cfg.points, cfg.strategy, result.greedy.tokens.size()};
  }
  const auto budgets = split_budget(cfg.budget, result.plan.points.size());
  for (std::size_t i = 0; i < result.plan.points.size(); ++i) {
    PointResult pr;
    pr.token_index = result.plan.points[i];
    pr.budget = budgets[i];
    pr.truncated_context = problem.context + join_tokens(result.greedy.tokens, 0, pr.token_index);
    result.points.push_back(std::move(pr));
  }

  for (std::size_t i = 0; i < result.points.size(); ++i) {
    PointResult& pr = result.points[i];
    try {
      run_point(pr.truncated_context, i, cfg, teacher, student, ledger, pr);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::BackendError) {
        pr.error = e.code();
        pr.error_message = e.what();
        throw failure(e);
      }
      pr.error = e.code();
      pr.error_message = e.what();
    }
  }
  return result;
}

struct BaselineResult {
  std::vector<GeneratedSequence> samples;
  std::size_t total_tokens = 0;
  std::uint64_t seed = 0;
};

/// n independent teacher samples at temperature 0.7, no intervention.
inline BaselineResult run_baseline(const std::string& context, GenerationBackend& teacher, std::size_t n,
                                   std::uint64_t seed = 0, std::size_t max_tokens = 8192, double temperature = 0.7) {
  require(n >= 1, ErrorCode::InvalidInput, "run_baseline: n must be >= 1");
  SOERunResult scratch;
  detail::Ledger ledger(scratch);
  BaselineResult out;
  out.seed = derive_seed(seed, 0xBA5E);
  out.samples = ledger.generate(teacher, Role::Teacher, std::nullopt,
                                GenerateRequest{context, temperature, n, max_tokens, false, out.seed});
  out.total_tokens = scratch.total_tokens;
  return out;
}

}  // namespace soe
