#pragma once

// Orthogonal probe selection: score each candidate latent by the fraction of
// its (centred) norm that lies outside the bias manifold, then take the argmax.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "soe/error.hpp"
#include "soe/linalg.hpp"
#include "soe/manifold.hpp"
#include "soe/random.hpp"

namespace soe {

struct CandidateInput {
  std::vector<std::string> tokens;
  Vector latent;
};

struct ProbeCandidate {
  std::vector<std::string> tokens;
  Vector latent;
  double residual_norm = 0.0;  // ‖(I − UUᵀ)(z − μ̂)‖
  double centered_norm = 0.0;  // ‖z − μ̂‖
  double score = 0.0;
};

enum class Selector { Orthogonal, Random };

inline std::string_view to_string(Selector s) { return s == Selector::Orthogonal ? "orthogonal" : "random"; }

struct ProbeSelection {
  std::size_t chosen_index = 0;
  std::vector<ProbeCandidate> candidates;
  double epsilon = 1e-8;
  Selector selector = Selector::Orthogonal;
  std::optional<std::uint64_t> seed;

  const ProbeCandidate& chosen() const { return candidates.at(chosen_index); }
};

inline constexpr double kDefaultEpsilon = 1e-8;

/// ‖r‖ / (‖z − μ̂‖ + ε). With ε = 0 a latent sitting exactly on μ̂ scores 0.
inline ProbeCandidate score_candidate(const CandidateInput& input, const BiasManifold& manifold, double epsilon) {
  require(epsilon >= 0.0, ErrorCode::InvalidInput, "epsilon must be >= 0");
  require(input.latent.size() == manifold.dim(), ErrorCode::InvalidInput,
          "candidate latent has dimension " + std::to_string(input.latent.size()) + ", manifold has " +
              std::to_string(manifold.dim()));
  require(all_finite(input.latent), ErrorCode::InvalidInput, "candidate latent is not finite");
  ProbeCandidate c{input.tokens, input.latent};
  const Vector centered = subtract(input.latent, manifold.mean);
  c.centered_norm = norm(centered);
  c.residual_norm = norm(project_split(manifold.basis, centered).perpendicular);
  const double denom = c.centered_norm + epsilon;
  c.score = denom > 0.0 ? c.residual_norm / denom : 0.0;
  return c;
}

inline double orthogonality_score(std::span<const double> z, const BiasManifold& manifold,
                                  double epsilon = kDefaultEpsilon) {
  return score_candidate(CandidateInput{{}, Vector(z.begin(), z.end())}, manifold, epsilon).score;
}

inline std::vector<ProbeCandidate> score_all(std::span<const CandidateInput> inputs, const BiasManifold& manifold,
                                             double epsilon) {
  require(!inputs.empty(), ErrorCode::NoCandidates, "no probe candidates");
  std::vector<ProbeCandidate> scored;
  scored.reserve(inputs.size());
  for (const auto& in : inputs) scored.push_back(score_candidate(in, manifold, epsilon));
  return scored;
}

/// Argmax of the orthogonality score; ties go to the lowest index.
inline ProbeSelection select_probe(std::span<const CandidateInput> inputs, const BiasManifold& manifold,
                                   double epsilon = kDefaultEpsilon) {
  ProbeSelection sel;
  sel.epsilon = epsilon;
  sel.candidates = score_all(inputs, manifold, epsilon);
  for (std::size_t i = 1; i < sel.candidates.size(); ++i)
    if (sel.candidates[i].score > sel.candidates[sel.chosen_index].score) sel.chosen_index = i;
  return sel;
}

/// Ablation baseline: uniform pick from Rng(seed).index(M). Scores are still filled in.
inline ProbeSelection random_select(std::span<const CandidateInput> inputs, const BiasManifold& manifold,
                                    std::uint64_t seed, double epsilon = kDefaultEpsilon) {
  ProbeSelection sel;
  sel.epsilon = epsilon;
  sel.selector = Selector::Random;
  sel.seed = seed;
  sel.candidates = score_all(inputs, manifold, epsilon);
  Rng rng(seed);
  sel.chosen_index = static_cast<std::size_t>(rng.index(sel.candidates.size()));
  return sel;
}

}  // namespace soe
