#pragma once

// JSON report encoders. Keys are lowercase_snake; see docs/reports.md.

#include <sstream>
#include <string>

#include "json.hpp"
#include "soe/collapse_sim.hpp"
#include "soe/eval.hpp"
#include "soe/manifold.hpp"
#include "soe/pipeline.hpp"
#include "soe/probe.hpp"
#include "soe/spectral_monitor.hpp"

namespace soe {

using json = nlohmann::json;

inline json report_json(const CollapseReport& r) {
  json series = json::array();
  for (const auto& p : r.series) series.push_back({{"step", p.step}, {"effrank", p.value}});
  json j{{"window", r.window}, {"stride", r.stride}, {"baseline", r.baseline}, {"series", std::move(series)}};
  j["detection_step"] = r.detection_step ? json(*r.detection_step) : json(nullptr);
  return j;
}

inline json report_json(const BiasManifold& m) {
  json basis = json::array();
  for (std::size_t c = 0; c < m.rank(); ++c) basis.push_back(m.basis.col(c));
  return json{{"dim", m.dim()},
              {"rank", m.rank()},
              {"sample_count", m.sample_count},
              {"energy_fraction", m.energy_fraction},
              {"eigenvalues", m.eigenvalues},
              {"mean", m.mean},
              {"basis_columns", std::move(basis)}};
}

inline json report_json(const ProbeSelection& s) {
  json cands = json::array();
  for (std::size_t i = 0; i < s.candidates.size(); ++i) {
    const auto& c = s.candidates[i];
    cands.push_back({{"index", i},
                     {"tokens", c.tokens},
                     {"score", c.score},
                     {"residual_norm", c.residual_norm},
                     {"centered_norm", c.centered_norm}});
  }
  json j{{"selector", to_string(s.selector)},
         {"chosen_index", s.chosen_index},
         {"chosen_score", s.chosen().score},
         {"epsilon", s.epsilon},
         {"candidates", std::move(cands)}};
  j["seed"] = s.seed ? json(*s.seed) : json(nullptr);
  return j;
}

inline json report_json(const MeanStd& m) { return json{{"mean", m.mean}, {"stddev", m.stddev}}; }

inline json report_json(const SelectorStats& s) {
  return json{{"selector", to_string(s.selector)},   {"trials", s.trials},
              {"perp_energy", report_json(s.perp_energy)}, {"effrank_jump", report_json(s.effrank_jump)},
              {"rank_jump", report_json(s.rank_jump)},     {"score", report_json(s.score)}};
}

inline json report_json(const ScoreHistogram& h) {
  json tags = json::object();
  for (const auto& [tag, t] : h.per_tag) tags[tag] = {{"count", t.count}, {"mean", t.mean}, {"median", t.median}};
  return json{{"bin_count", kScoreBins}, {"bins", h.bins}, {"total", h.total}, {"per_tag", std::move(tags)}};
}

inline json report_json(const EfficiencyCurve& c) {
  json pts = json::array();
  for (const auto& p : c.points) pts.push_back({{"cumulative_tokens", p.cumulative_tokens}, {"distinct_correct", p.distinct_correct}});
  return json{{"final_count", c.final_count()}, {"accepted", c.accepted}, {"points", std::move(pts)}};
}

/// CSV with header `method,cumulative_tokens,distinct_correct`.
inline std::string curve_csv(const std::vector<std::pair<std::string, EfficiencyCurve>>& curves) {
  std::ostringstream out;
  out << "method,cumulative_tokens,distinct_correct\n";
  for (const auto& [method, c] : curves)
    for (const auto& p : c.points) out << method << ',' << p.cumulative_tokens << ',' << p.distinct_correct << '\n';
  return out.str();
}

inline json report_json(const RelativeImprovement& r) {
  return json{{"per_item", r.per_item},
              {"mean_rel", r.mean_rel},
              {"mean_base", r.mean_base},
              {"mean_ours", r.mean_ours},
              {"ratio_of_means", r.ratio_of_means}};
}

inline json report_json(const CallRecord& c) {
  json j{{"role", to_string(c.role)}, {"op", c.op}, {"n", c.n}, {"tokens", c.tokens}, {"seed", c.seed}};
  j["point"] = c.point ? json(*c.point) : json(nullptr);
  return j;
}

inline json report_json(const SOERunResult& r) {
  json points = json::array();
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const PointResult& p = r.points[i];
    json resumed = json::array();
    for (const auto& s : p.resumed) {
      json e{{"point", s.point},
             {"token_index", s.token_index},
             {"probe_index", s.probe_index},
             {"backend_seed", s.backend_seed},
             {"text", s.sequence.text},
             {"token_count", s.sequence.token_count()}};
      e["correct"] = s.sequence.correct ? json(*s.sequence.correct) : json(nullptr);
      resumed.push_back(std::move(e));
    }
    json pj{{"token_index", p.token_index},
            {"budget", p.budget},
            {"rejected_candidates", p.rejected_candidates},
            {"resumed", std::move(resumed)}};
    if (p.manifold) {
      pj["manifold"] = {{"rank", p.manifold->rank()},
                        {"sample_count", p.manifold->sample_count},
                        {"energy_fraction", p.manifold->energy_fraction},
                        {"eigenvalues", p.manifold->eigenvalues}};
    } else {
      pj["manifold"] = nullptr;
    }
    pj["selection"] = p.selection ? report_json(*p.selection) : json(nullptr);
    pj["error"] = p.error ? json(std::string(to_string(*p.error))) : json(nullptr);
    if (p.error) pj["error_message"] = p.error_message;
    points.push_back(std::move(pj));
  }
  json calls = json::array();
  for (const auto& c : r.calls) calls.push_back(report_json(c));
  json j{{"greedy", {{"text", r.greedy.text}, {"token_count", r.greedy.token_count()}}},
         {"plan", {{"strategy", to_string(r.plan.strategy)}, {"points", r.plan.points}, {"length", r.plan.length}}},
         {"points", std::move(points)},
         {"calls", std::move(calls)},
         {"total_tokens", r.total_tokens}};
  j["greedy"]["correct"] = r.greedy.correct ? json(*r.greedy.correct) : json(nullptr);
  j["skipped"] = r.skipped ? json(*r.skipped) : json(nullptr);
  j["greedy_report"] = r.greedy_report ? report_json(*r.greedy_report) : json(nullptr);
  return j;
}

}  // namespace soe
