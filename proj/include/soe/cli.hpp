#pragma once

// Command-line front end. cli_dispatch returns 0 on success, 2 on usage
// errors and 1 on runtime errors. Randomized commands take --seed; when it is
// absent the SOE_SEED environment variable is used, and if neither is set the
// command is rejected as a usage error.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "soe/collapse_sim.hpp"
#include "soe/config.hpp"
#include "soe/eval.hpp"
#include "soe/manifold.hpp"
#include "soe/pipeline.hpp"
#include "soe/probe.hpp"
#include "soe/report_json.hpp"
#include "soe/spectral_monitor.hpp"
#include "soe/trajectory_io.hpp"
#include "soe/transport.hpp"

namespace soe {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace cli {

namespace fs = std::filesystem;

inline std::string read_text(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

inline void write_text(const fs::path& path, const std::string& text) {
  detail::write_file(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

inline std::uint64_t parse_seed_text(const std::string& s, const char* source) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw UsageError(std::string(source) + " is not an unsigned integer: '" + s + "'");
  return v;
}

/// --seed wins, then a seed set in the config file, then SOE_SEED.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const Config* cfg = nullptr) {
  if (flag) return *flag;
  if (cfg && cfg->contains("seed")) return cfg->get_count("seed", 0);
  if (const char* env = std::getenv("SOE_SEED")) return parse_seed_text(env, "SOE_SEED");
  throw UsageError("this command is randomized: pass --seed or set SOE_SEED");
}

inline std::vector<json> read_jsonl(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      fail(ErrorCode::FormatError, path.string() + ":" + std::to_string(n) + ": invalid JSON");
    out.push_back(std::move(j));
  }
  return out;
}

inline void emit_json(const json& j, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << j.dump(2) << '\n';
  } else {
    write_text(path, j.dump(2) + "\n");
  }
}

inline std::string percent(double fraction) {
  std::ostringstream s;
  s << std::showpos << std::fixed << std::setprecision(1) << round_half_up(fraction * 100.0, 1) << '%';
  return s.str();
}

inline std::string fixed1(double x) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << round_half_up(x, 1);
  return s.str();
}

inline fs::path resolve_relative(const fs::path& base_file, const std::string& p) {
  fs::path q(p);
  return q.is_absolute() ? q : base_file.parent_path() / q;
}

/// Latent given inline as "latent", or as one row of a trajectory file
/// ("latent_file", optional "row", default the last row).
inline Vector latent_from_json(const json& j, const fs::path& source) {
  if (j.contains("latent")) return j.at("latent").get<Vector>();
  if (j.contains("latent_file")) {
    const StateTrajectory t = read_trajectory(resolve_relative(source, j.at("latent_file").get<std::string>()));
    const std::size_t row = j.value("row", t.length() - 1);
    require(row < t.length(), ErrorCode::InvalidInput, "latent row out of range");
    return t.states.row_vector(row);
  }
  fail(ErrorCode::FormatError, "candidate lacks 'latent' or 'latent_file'");
}

inline std::vector<CandidateInput> read_candidates(const fs::path& path) {
  std::vector<CandidateInput> out;
  for (const json& j : read_jsonl(path)) {
    try {
      CandidateInput c;
      if (j.contains("tokens")) {
        if (j["tokens"].is_string())
          c.tokens = {j["tokens"].get<std::string>()};
        else
          c.tokens = j["tokens"].get<std::vector<std::string>>();
      }
      c.latent = latent_from_json(j, path);
      out.push_back(std::move(c));
    } catch (const json::exception& e) {
      fail(ErrorCode::FormatError, path.string() + ": malformed candidate: " + e.what());
    }
  }
  return out;
}

/// Simulator settings from a config file. A `beta` array gives the schedule
/// directly; otherwise beta_from/beta_to define a linear ramp over `steps`.
inline SimConfig sim_config_from(const Config& c, SimConfig base = {}) {
  base.dim = c.get_count("dim", base.dim);
  base.slots = c.get_count("slots", base.slots);
  base.subspace_dim = c.get_count("subspace_dim", base.subspace_dim);
  const std::size_t old_steps = base.steps;
  base.steps = c.get_count("steps", base.steps);
  base.noise_sigma = c.get_number("noise_sigma", base.noise_sigma);
  base.noise_in_subspace = c.get_bool("noise_in_subspace", base.noise_in_subspace);
  base.attention = parse_attention(c.get_string("attention", std::string(to_string(base.attention))));
  if (auto b = c.get_numbers("beta")) {
    base.beta = *b;
  } else if (c.contains("beta_from") || c.contains("beta_to") || base.steps != old_steps || base.beta.empty()) {
    const double from = c.get_number("beta_from", base.beta.empty() ? 0.0 : base.beta.front());
    const double to = c.get_number("beta_to", base.beta.empty() ? 20.0 : base.beta.back());
    base.beta = beta_ramp(from, to, base.steps);
  }
  return base;
}

inline CandidateMixture parse_mixture(const std::string& s) {
  if (s == "default") return CandidateMixture::Default;
  if (s == "all-in-span") return CandidateMixture::AllInSpan;
  if (s == "one-orthogonal") return CandidateMixture::OneOrthogonal;
  fail(ErrorCode::InvalidInput, "unknown candidate mixture '" + s + "'");
}

inline EjectionOptions ejection_options_from(const Config& c) {
  EjectionOptions o;
  o.sim = sim_config_from(c, o.sim);
  o.candidates = c.get_count("candidates", o.candidates);
  o.mixture = parse_mixture(c.get_string("mixture", "default"));
  o.manifold.rho = c.get_number("rho", o.manifold.rho);
  o.manifold.k_max = c.get_count("kmax", o.manifold.k_max);
  o.epsilon = c.get_number("epsilon", o.epsilon);
  o.rank_tol = c.get_number("rank_tol", o.rank_tol);
  return o;
}

inline Config load_config(const std::string& path) { return path.empty() ? Config{} : parse_config(read_text(path)); }

// ---------------------------------------------------------------------------
// Subcommand bodies

struct MonitorArgs {
  std::string input;
  std::size_t window = 64;
  std::size_t stride = 8;
  double theta = 0.5;
  std::size_t sustain = 3;
  std::string route = "auto";
  std::string json_out;
};

inline SpectrumRoute parse_route(const std::string& s) {
  if (s == "auto") return SpectrumRoute::Auto;
  if (s == "dense") return SpectrumRoute::Dense;
  if (s == "gram") return SpectrumRoute::Gram;
  throw UsageError("--route must be auto, dense or gram");
}

inline int run_monitor(const MonitorArgs& a, std::ostream& out) {
  MonitorOptions opts;
  opts.window = a.window;
  opts.stride = a.stride;
  opts.route = parse_route(a.route);
  const StateTrajectory traj = read_trajectory(a.input);
  CollapseReport report = effrank_series(traj, opts);
  detect_collapse(report, a.theta, a.sustain);
  emit_json(report_json(report), a.json_out, out);
  if (!a.json_out.empty()) {
    out << "windows: " << report.series.size() << ", baseline: " << report.baseline << ", collapse: ";
    if (report.detection_step)
      out << "detected at step " << *report.detection_step << '\n';
    else
      out << "not detected\n";
  }
  return 0;
}

struct ManifoldArgs {
  std::vector<std::string> inputs;
  double rho = 0.9;
  std::size_t kmax = 4;
  std::string aggregation = "mean";
  bool rows = false;
  std::string out_path;
  std::string json_out;
};

/// One aggregated row per input file, or every row of every file with `rows`.
inline MCSampleSet load_samples(const std::vector<std::string>& inputs, AggregationMode mode, bool rows) {
  std::vector<Vector> vs;
  for (const auto& p : inputs) {
    const StateTrajectory t = read_trajectory(p);
    if (rows) {
      for (std::size_t i = 0; i < t.length(); ++i) vs.push_back(t.states.row_vector(i));
    } else {
      vs.push_back(aggregate_trajectory(t.states, mode));
    }
  }
  for (const auto& v : vs)
    require(v.size() == vs.front().size(), ErrorCode::InvalidInput, "samples have different dimensions");
  MCSampleSet set;
  set.samples = Matrix::from_rows(vs);
  set.aggregation = mode;
  return set;
}

inline int run_manifold(const ManifoldArgs& a, std::ostream& out) {
  const MCSampleSet set = load_samples(a.inputs, parse_aggregation(a.aggregation), a.rows);
  const BiasManifold m = estimate_manifold(set, ManifoldOptions{a.rho, a.kmax});
  if (!a.out_path.empty()) write_manifold(m, a.out_path);
  emit_json(report_json(m), a.json_out, out);
  return 0;
}

struct ProbeArgs {
  std::string manifold;
  std::string candidates;
  double epsilon = kDefaultEpsilon;
  bool random = false;
  std::optional<std::uint64_t> seed;
  std::string json_out;
};

inline int run_probe_select(const ProbeArgs& a, std::ostream& out) {
  const std::uint64_t seed = a.random ? resolve_seed(a.seed) : 0;
  const BiasManifold m = read_manifold(a.manifold);
  const auto cands = read_candidates(a.candidates);
  const ProbeSelection sel = a.random ? random_select(cands, m, seed, a.epsilon) : select_probe(cands, m, a.epsilon);
  emit_json(report_json(sel), a.json_out, out);
  return 0;
}

struct SimulateArgs {
  std::string config;
  std::string out_path;
  std::optional<std::uint64_t> seed;
  bool ejection = false;
  std::size_t trials = 200;
  std::string json_out;
};

inline int run_simulate(const SimulateArgs& a, std::ostream& out) {
  const Config c = load_config(a.config);
  const std::uint64_t seed = resolve_seed(a.seed, &c);
  if (a.ejection) {
    const EjectionOptions opts = ejection_options_from(c);
    const auto trials = ejection_trials(opts, a.trials, seed);
    json j{{"seed", seed},
           {"trials", a.trials},
           {"orthogonal", report_json(summarize(trials, Selector::Orthogonal))},
           {"random", report_json(summarize(trials, Selector::Random))}};
    emit_json(j, a.json_out, out);
    return 0;
  }
  if (a.out_path.empty()) throw UsageError("simulate needs --out (or --ejection)");
  SimConfig cfg = sim_config_from(c);
  cfg.seed = seed;
  const StateTrajectory traj = simulate(cfg);
  write_trajectory(traj, a.out_path);
  out << "wrote " << traj.length() << " x " << traj.dim() << " states to " << a.out_path << '\n';
  return 0;
}

struct PipelineArgs {
  std::string config;
  std::string teacher;
  std::string student;
  std::string context;
  std::string context_file;
  std::optional<std::uint64_t> seed;
  std::size_t baseline = 0;
  std::string json_out;
};

inline int run_pipeline_cmd(const PipelineArgs& a, std::ostream& out, std::ostream& err) {
  if (a.context.empty() == a.context_file.empty()) throw UsageError("pipeline needs exactly one of --context, --context-file");
  const Config c = load_config(a.config);
  PipelineConfig cfg = PipelineConfig::from_config(c);
  cfg.seed = resolve_seed(a.seed, &c);
  const std::string context = a.context_file.empty() ? a.context : read_text(a.context_file);

  auto teacher = connect_backend(a.teacher);
  auto student = connect_backend(a.student);
  json manifest{{"config", json::object()}, {"seed", cfg.seed}, {"teacher", a.teacher}, {"student", a.student}};
  const Config effective = cfg.to_config();
  auto scalar_json = [](const ConfigScalar& x) { return std::visit([](auto&& y) { return json(y); }, x); };
  for (const auto& [k, v] : effective.values())
    manifest["config"][k] = std::visit(
        [&](auto&& x) -> json {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, std::vector<ConfigScalar>>) {
            json arr = json::array();
            for (const auto& e : x) arr.push_back(scalar_json(e));
            return arr;
          } else {
            return json(x);
          }
        },
        v);
  int code = 0;
  try {
    manifest["result"] = report_json(run_soe(ProblemInput{context, std::nullopt}, *teacher, *student, cfg));
    manifest["error"] = nullptr;
  } catch (const PipelineFailure& e) {
    manifest["result"] = report_json(e.partial());
    manifest["error"] = e.what();
    err << "soe: " << e.what() << '\n';
    code = 1;
  }
  if (a.baseline > 0 && code == 0) {
    const BaselineResult b = run_baseline(context, *teacher, a.baseline, cfg.seed, cfg.max_tokens);
    json samples = json::array();
    for (const auto& s : b.samples) {
      json e{{"text", s.text}, {"token_count", s.token_count()}};
      e["correct"] = s.correct ? json(*s.correct) : json(nullptr);
      samples.push_back(std::move(e));
    }
    manifest["baseline"] = {{"seed", b.seed}, {"total_tokens", b.total_tokens}, {"samples", std::move(samples)}};
  }
  emit_json(manifest, a.json_out, out);
  return code;
}

inline int run_eval_pass(const std::string& input, const std::string& json_out, std::ostream& out) {
  std::vector<std::vector<bool>> problems;
  for (const json& j : read_jsonl(input)) {
    const json& arr = j.is_object() ? j.at("samples") : j;
    problems.push_back(arr.get<std::vector<bool>>());
  }
  const double p = pass_at_k(problems);
  std::size_t solved = 0;
  for (const auto& s : problems) solved += std::find(s.begin(), s.end(), true) != s.end();
  if (!json_out.empty()) write_text(json_out, json{{"pass_at_k", p}, {"solved", solved}, {"problems", problems.size()}}.dump(2) + "\n");
  out << "pass_at_k " << std::setprecision(17) << p << " (" << solved << "/" << problems.size() << ", "
      << fixed1(p * 100.0) << "%)\n";
  return 0;
}

inline std::vector<SolutionRecord> read_records(const fs::path& path) {
  std::vector<SolutionRecord> out;
  for (const json& j : read_jsonl(path)) {
    try {
      SolutionRecord r;
      r.correct = j.at("correct").get<bool>();
      r.token_cost = j.value("token_cost", std::uint64_t{0});
      r.method = j.value("method", std::string("default"));
      r.order = j.value("order", out.size());
      if (j.contains("embedding"))
        r.embedding = j.at("embedding").get<Vector>();
      else if (j.contains("embedding_file"))
        r.embedding = latent_from_json(json{{"latent_file", j["embedding_file"]}, {"row", j.value("row", 0)}}, path);
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      fail(ErrorCode::FormatError, path.string() + ": malformed record: " + e.what());
    }
  }
  return out;
}

/// Records grouped by method, each group in ascending `order` (stable).
inline std::vector<std::pair<std::string, EfficiencyCurve>> curves_by_method(std::vector<SolutionRecord> records,
                                                                             double tau) {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.order < b.order; });
  std::vector<std::string> methods;
  for (const auto& r : records)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  std::sort(methods.begin(), methods.end());
  std::vector<std::pair<std::string, EfficiencyCurve>> out;
  for (const auto& m : methods) {
    std::vector<SolutionRecord> group;
    for (const auto& r : records)
      if (r.method == m) group.push_back(r);
    out.emplace_back(m, distinct_solutions(group, tau));
  }
  return out;
}

inline int run_eval_curve(const std::string& input, double tau, const std::string& csv_out, const std::string& json_out,
                          std::ostream& out) {
  const auto curves = curves_by_method(read_records(input), tau);
  if (!csv_out.empty()) write_text(csv_out, curve_csv(curves));
  json j = json::object();
  for (const auto& [m, c] : curves) j[m] = report_json(c);
  json report{{"tau", tau}, {"curves", j}};
  if (json_out.empty()) {
    out << report.dump(2) << '\n';
  } else {
    write_text(json_out, report.dump(2) + "\n");
    for (const auto& [m, c] : curves)
      out << m << ": " << c.final_count() << " distinct correct, "
          << (c.points.empty() ? 0 : c.points.back().cumulative_tokens) << " tokens\n";
  }
  return 0;
}

struct Table1Row {
  std::string name;
  double baseline = 0.0;
  double ours = 0.0;
};

/// CSV with a header naming `baseline` and `ours` columns; the first column is the item name.
inline std::vector<Table1Row> read_table1(const fs::path& path) {
  std::istringstream in(read_text(path));
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.emplace_back(detail::trim(cell));
    return cells;
  };
  std::string line;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line))
    if (!detail::trim(line).empty()) header = split(line);
  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorCode::FormatError, "table CSV lacks a '" + name + "' column");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t cb = column("baseline");
  const std::size_t co = column("ours");
  std::vector<Table1Row> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() < header.size()) fail(ErrorCode::FormatError, "table CSV row has too few cells: " + line);
    auto num = [&](std::size_t i) {
      double v = 0.0;
      const std::string& s = cells[i];
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) fail(ErrorCode::FormatError, "not a number: '" + s + "'");
      return v;
    };
    rows.push_back({cells[0], num(cb), num(co)});
  }
  if (rows.empty()) fail(ErrorCode::FormatError, "table CSV has no data rows");
  return rows;
}

inline int run_eval_table1(const std::string& input, const std::string& json_out, std::ostream& out) {
  const auto rows = read_table1(input);
  std::vector<double> base, ours;
  for (const auto& r : rows) {
    base.push_back(r.baseline);
    ours.push_back(r.ours);
  }
  const RelativeImprovement ri = relative_improvement(base, ours);
  std::size_t width = 4;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  out << std::left << std::setw(static_cast<int>(width) + 2) << "item" << std::setw(10) << "baseline"
      << std::setw(10) << "ours" << "relative\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    out << std::setw(static_cast<int>(width) + 2) << rows[i].name << std::setw(10) << fixed1(rows[i].baseline)
        << std::setw(10) << fixed1(rows[i].ours) << percent(ri.per_item[i]) << '\n';
  out << std::setw(static_cast<int>(width) + 2) << "mean" << std::setw(10) << fixed1(ri.mean_base) << std::setw(10)
      << fixed1(ri.mean_ours) << '\n';
  out << "mean_rel " << percent(ri.mean_rel) << '\n';
  out << "ratio_of_means " << percent(ri.ratio_of_means) << '\n';
  if (!json_out.empty()) {
    json j = report_json(ri);
    json names = json::array();
    for (const auto& r : rows) names.push_back(r.name);
    j["items"] = std::move(names);
    write_text(json_out, j.dump(2) + "\n");
  }
  return 0;
}

/// Each line is {"tag"?, "score"} or a probe-selection report (its chosen score).
inline std::vector<TaggedScore> read_scores(const fs::path& path) {
  std::vector<TaggedScore> out;
  const std::string stem = path.stem().string();
  auto add = [&](const json& j) {
    const std::string tag = j.value("tag", stem);
    if (j.contains("score"))
      out.push_back({tag, j.at("score").get<double>()});
    else if (j.contains("chosen_score"))
      out.push_back({tag, j.at("chosen_score").get<double>()});
    else
      fail(ErrorCode::FormatError, path.string() + ": entry lacks 'score' or 'chosen_score'");
  };
  const std::string text = read_text(path);
  const json whole = json::parse(text, nullptr, false);
  try {
    if (!whole.is_discarded() && whole.is_object()) {
      add(whole);
    } else if (!whole.is_discarded() && whole.is_array()) {
      for (const auto& j : whole) add(j);
    } else {
      for (const auto& j : read_jsonl(path)) add(j);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  return out;
}

inline int run_eval_dist(const std::vector<std::string>& inputs, const std::string& json_out, std::ostream& out) {
  std::vector<TaggedScore> scores;
  for (const auto& p : inputs) {
    auto s = read_scores(p);
    scores.insert(scores.end(), s.begin(), s.end());
  }
  emit_json(report_json(score_distribution(scores)), json_out, out);
  return 0;
}

}  // namespace cli

/// Parses `args` (without the program name) and runs the subcommand.
inline int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spectral collapse monitoring, bias-manifold estimation and orthogonal probe selection.", "soe"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  cli::MonitorArgs mon;
  auto* monitor = app.add_subcommand("monitor", "Sliding-window EffRank series and collapse detection");
  monitor->add_option("trajectory", mon.input, "Trajectory file (.soet)")->required();
  monitor->add_option("--window", mon.window, "Window length k")->capture_default_str();
  monitor->add_option("--stride", mon.stride, "Window stride")->capture_default_str();
  monitor->add_option("--theta", mon.theta, "Collapse threshold as a fraction of the baseline")->capture_default_str();
  monitor->add_option("--sustain", mon.sustain, "Consecutive windows required")->capture_default_str();
  monitor->add_option("--route", mon.route, "Spectrum route: auto, dense or gram")->capture_default_str();
  monitor->add_option("--json", mon.json_out, "Write the report here instead of stdout");

  cli::ManifoldArgs man;
  auto* manifold = app.add_subcommand("manifold", "Estimate a bias manifold from Monte Carlo samples");
  manifold->add_option("samples", man.inputs, "Sample trajectories, one per look-ahead")->required();
  manifold->add_option("--rho", man.rho, "Energy threshold")->capture_default_str();
  manifold->add_option("--kmax", man.kmax, "Maximum rank")->capture_default_str();
  manifold->add_option("--aggregation", man.aggregation, "mean or last")->capture_default_str();
  manifold->add_flag("--rows", man.rows, "Treat every state row as a sample");
  manifold->add_option("--out", man.out_path, "Write the binary manifold (.soem)");
  manifold->add_option("--json", man.json_out, "Write the summary here instead of stdout");

  cli::ProbeArgs pr;
  auto* probe = app.add_subcommand("probe-select", "Score candidates against a manifold and pick one");
  probe->add_option("manifold", pr.manifold, "Manifold file (.soem)")->required();
  probe->add_option("candidates", pr.candidates, "Candidates, one JSON object per line")->required();
  probe->add_option("--epsilon", pr.epsilon, "Score denominator guard")->capture_default_str();
  probe->add_flag("--random", pr.random, "Uniform random choice (baseline)");
  probe->add_option("--seed", pr.seed, "Seed for --random");
  probe->add_option("--json", pr.json_out, "Write the report here instead of stdout");

  cli::SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Run the collapse simulator or the ejection experiment");
  simulate_cmd->add_option("--config", sim.config, "Simulator config file");
  simulate_cmd->add_option("--out", sim.out_path, "Output trajectory (.soet)");
  simulate_cmd->add_option("--seed", sim.seed, "Seed");
  simulate_cmd->add_flag("--ejection", sim.ejection, "Run the orthogonal-vs-random injection experiment");
  simulate_cmd->add_option("--trials", sim.trials, "Ejection trials")->capture_default_str();
  simulate_cmd->add_option("--json", sim.json_out, "Ejection summary path (stdout when absent)");

  cli::PipelineArgs pipe;
  auto* pipeline = app.add_subcommand("pipeline", "Run the three-stage procedure against external backends");
  pipeline->add_option("--config", pipe.config, "Pipeline config file");
  pipeline->add_option("--teacher", pipe.teacher, "Teacher backend: shell command or http:// URL")->required();
  pipeline->add_option("--student", pipe.student, "Student backend: shell command or http:// URL")->required();
  pipeline->add_option("--context", pipe.context, "Problem text");
  pipeline->add_option("--context-file", pipe.context_file, "File holding the problem text");
  pipeline->add_option("--seed", pipe.seed, "Seed");
  pipeline->add_option("--baseline", pipe.baseline, "Also draw this many plain teacher samples");
  pipeline->add_option("--json", pipe.json_out, "Run manifest path (stdout when absent)");

  auto* eval = app.add_subcommand("eval", "Evaluation metrics");
  eval->require_subcommand(1);
  std::string ev_in, ev_json, ev_csv;
  std::vector<std::string> ev_inputs;
  double tau = 0.95;
  auto* ev_pass = eval->add_subcommand("pass", "Pass@k from per-problem correctness lists");
  ev_pass->add_option("input", ev_in, "JSONL: one boolean array per problem")->required();
  ev_pass->add_option("--json", ev_json, "Also write a JSON report");
  auto* ev_curve = eval->add_subcommand("curve", "Distinct-solution efficiency curves");
  ev_curve->add_option("records", ev_in, "JSONL solution records")->required();
  ev_curve->add_option("--tau", tau, "Cosine-similarity threshold")->capture_default_str();
  ev_curve->add_option("--csv", ev_csv, "Write curve points as CSV");
  ev_curve->add_option("--json", ev_json, "Write the report here instead of stdout");
  auto* ev_table = eval->add_subcommand("table1", "Relative improvement table from a baseline/ours CSV");
  ev_table->add_option("input", ev_in, "CSV with baseline and ours columns")->required();
  ev_table->add_option("--json", ev_json, "Also write a JSON report");
  auto* ev_dist = eval->add_subcommand("dist", "Orthogonality score histogram");
  ev_dist->add_option("inputs", ev_inputs, "Score files (JSON, JSONL or selection reports)")->required();
  ev_dist->add_option("--json", ev_json, "Write the histogram here instead of stdout");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (args.empty()) {
      err << app.help();
    } else {
      err << "soe: " << e.what() << "\n";
      err << "Run with --help for usage.\n";
    }
    return 2;
  }

  try {
    if (monitor->parsed()) return cli::run_monitor(mon, out);
    if (manifold->parsed()) return cli::run_manifold(man, out);
    if (probe->parsed()) return cli::run_probe_select(pr, out);
    if (simulate_cmd->parsed()) return cli::run_simulate(sim, out);
    if (pipeline->parsed()) return cli::run_pipeline_cmd(pipe, out, err);
    if (ev_pass->parsed()) return cli::run_eval_pass(ev_in, ev_json, out);
    if (ev_curve->parsed()) return cli::run_eval_curve(ev_in, tau, ev_csv, ev_json, out);
    if (ev_table->parsed()) return cli::run_eval_table1(ev_in, ev_json, out);
    if (ev_dist->parsed()) return cli::run_eval_dist(ev_inputs, ev_json, out);
  } catch (const UsageError& e) {
    err << "soe: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "soe: " << to_string(e.code()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "soe: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace soe
