#pragma once

// Generation backend contract and its line-delimited JSON wire form.
//
// Request  (one JSON object per line):
//   {"op": "generate", "context": str, "temperature": num, "n": int,
//    "max_tokens": int, "want_states": bool, "seed": int}
//   {"op": "forward", "context": str, "seed": int}
// Response:
//   generate → {"sequences": [{"text": str, "tokens": [str, ...],
//                              "state_file": path?, "states": [[num]]?,
//                              "correct": bool?}, ...]}
//   forward  → {"latent": [num, ...]}
//   failure  → {"error": str}

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "soe/error.hpp"
#include "soe/linalg.hpp"
#include "soe/trajectory_io.hpp"

namespace soe {

struct GenerateRequest {
  std::string context;
  double temperature = 0.7;
  std::size_t n = 1;
  std::size_t max_tokens = 8192;
  bool want_states = false;
  std::uint64_t seed = 0;
};

struct GeneratedSequence {
  std::string text;
  std::vector<std::string> tokens;
  Matrix states;                // one row per token when requested; empty otherwise
  std::optional<bool> correct;  // set only by backends that can grade answers

  std::size_t token_count() const noexcept { return tokens.size(); }
};

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual std::vector<GeneratedSequence> generate(const GenerateRequest& request) = 0;
  /// Final-position latent of a forward pass over `context`.
  virtual Vector forward(const std::string& context, std::uint64_t seed) = 0;
};

inline std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin = 0,
                               std::size_t end = static_cast<std::size_t>(-1)) {
  std::string out;
  end = std::min(end, tokens.size());
  for (std::size_t i = begin; i < end; ++i) out += tokens[i];
  return out;
}

// ---------------------------------------------------------------------------
// Wire encoding

using json = nlohmann::json;

inline json to_json(const GenerateRequest& r) {
  return json{{"op", "generate"},        {"context", r.context},         {"temperature", r.temperature},
              {"n", r.n},                {"max_tokens", r.max_tokens},   {"want_states", r.want_states},
              {"seed", r.seed}};
}

inline json forward_request(const std::string& context, std::uint64_t seed) {
  return json{{"op", "forward"}, {"context", context}, {"seed", seed}};
}

inline GenerateRequest generate_request_from_json(const json& j) {
  GenerateRequest r;
  r.context = j.at("context").get<std::string>();
  r.temperature = j.value("temperature", 0.7);
  r.n = j.value("n", std::size_t{1});
  r.max_tokens = j.value("max_tokens", std::size_t{8192});
  r.want_states = j.value("want_states", false);
  r.seed = j.value("seed", std::uint64_t{0});
  return r;
}

inline json to_json(const GeneratedSequence& s) {
  json j{{"text", s.text}, {"tokens", s.tokens}};
  if (!s.states.empty()) {
    json rows = json::array();
    for (std::size_t i = 0; i < s.states.rows(); ++i) rows.push_back(s.states.row_vector(i));
    j["states"] = std::move(rows);
  }
  if (s.correct) j["correct"] = *s.correct;
  return j;
}

inline Matrix matrix_from_json_rows(const json& rows) {
  require(rows.is_array() && !rows.empty(), ErrorCode::BackendError, "states must be a non-empty array of rows");
  std::vector<Vector> vs;
  for (const auto& r : rows) vs.push_back(r.get<Vector>());
  return Matrix::from_rows(vs);
}

inline GeneratedSequence sequence_from_json(const json& j) {
  GeneratedSequence s;
  s.text = j.value("text", std::string());
  if (j.contains("tokens")) s.tokens = j.at("tokens").get<std::vector<std::string>>();
  if (j.contains("states")) {
    s.states = matrix_from_json_rows(j.at("states"));
  } else if (j.contains("state_file")) {
    s.states = read_trajectory(j.at("state_file").get<std::string>()).states;
  }
  if (j.contains("correct")) s.correct = j.at("correct").get<bool>();
  return s;
}

/// Sends one request line and returns one response line.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string exchange(const std::string& line) = 0;
};

/// GenerationBackend speaking the JSON protocol over any Transport.
class JsonLineBackend : public GenerationBackend {
 public:
  explicit JsonLineBackend(std::unique_ptr<Transport> transport) : transport_(std::move(transport)) {}

  std::vector<GeneratedSequence> generate(const GenerateRequest& request) override {
    const json resp = call(to_json(request));
    require(resp.contains("sequences") && resp["sequences"].is_array(), ErrorCode::BackendError,
            "generate response lacks 'sequences'");
    std::vector<GeneratedSequence> out;
    try {
      for (const auto& s : resp["sequences"]) out.push_back(sequence_from_json(s));
    } catch (const json::exception& e) {
      fail(ErrorCode::BackendError, std::string("malformed sequence: ") + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::BackendError, e.what());
    }
    return out;
  }

  Vector forward(const std::string& context, std::uint64_t seed) override {
    const json resp = call(forward_request(context, seed));
    require(resp.contains("latent") && resp["latent"].is_array(), ErrorCode::BackendError,
            "forward response lacks 'latent'");
    try {
      return resp["latent"].get<Vector>();
    } catch (const json::exception& e) {
      fail(ErrorCode::BackendError, std::string("malformed latent: ") + e.what());
    }
  }

 private:
  json call(const json& request) {
    std::string line;
    try {
      line = transport_->exchange(request.dump());
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      fail(ErrorCode::BackendError, e.what());
    }
    json resp = json::parse(line, nullptr, false);
    if (resp.is_discarded() || !resp.is_object()) fail(ErrorCode::BackendError, "backend replied with invalid JSON");
    if (resp.contains("error")) fail(ErrorCode::BackendError, "backend error: " + resp["error"].dump());
    return resp;
  }

  std::unique_ptr<Transport> transport_;
};

/// Server-side helper: decodes one request line, dispatches it to `backend`
/// and encodes the reply. Malformed requests produce {"error": ...}.
inline std::string serve_line(GenerationBackend& backend, const std::string& line) {
  const json req = json::parse(line, nullptr, false);
  if (req.is_discarded() || !req.is_object()) return json{{"error", "malformed request"}}.dump();
  try {
    const std::string op = req.value("op", std::string());
    if (op == "generate") {
      json seqs = json::array();
      for (const auto& s : backend.generate(generate_request_from_json(req))) seqs.push_back(to_json(s));
      return json{{"sequences", std::move(seqs)}}.dump();
    }
    if (op == "forward")
      return json{{"latent", backend.forward(req.at("context").get<std::string>(), req.value("seed", std::uint64_t{0}))}}
          .dump();
    return json{{"error", "unknown op '" + op + "'"}}.dump();
  } catch (const std::exception& e) {
    return json{{"error", e.what()}}.dump();
  }
}

}  // namespace soe
