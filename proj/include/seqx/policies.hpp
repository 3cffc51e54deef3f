#pragma once

// Explanation-selection policies mu(s_t) -> a_t with an immediate-reward
// objective (gamma = 0): mental-model policies target the possibility with
// the lowest local simulatability; random baselines draw uniformly over the
// same explanation subset.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "seqx/error.hpp"
#include "seqx/explainers.hpp"
#include "seqx/mental_model.hpp"
#include "seqx/rng.hpp"

namespace seqx {

enum class PolicyKind { RandomSaliency, RandomPrototype, RandomCombined, MMSaliency, MMPrototype, MMCombined };

inline constexpr std::array<PolicyKind, 6> kPolicyKinds = {
    PolicyKind::RandomSaliency, PolicyKind::RandomPrototype, PolicyKind::RandomCombined,
    PolicyKind::MMSaliency,     PolicyKind::MMPrototype,     PolicyKind::MMCombined};

constexpr std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::RandomSaliency: return "random_saliency";
    case PolicyKind::RandomPrototype: return "random_prototype";
    case PolicyKind::RandomCombined: return "random_combined";
    case PolicyKind::MMSaliency: return "mm_saliency";
    case PolicyKind::MMPrototype: return "mm_prototype";
    case PolicyKind::MMCombined: return "mm_combined";
  }
  return "?";
}

inline PolicyKind policy_from_string(std::string_view s) {
  for (auto k : kPolicyKinds) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::UnknownPolicy, "unknown policy '" + std::string(s) + "'");
}

constexpr bool is_mental_model_policy(PolicyKind k) {
  return k == PolicyKind::MMSaliency || k == PolicyKind::MMPrototype || k == PolicyKind::MMCombined;
}

// The random baseline choosing over the same explanations as `k`.
constexpr PolicyKind paired_baseline(PolicyKind k) {
  switch (k) {
    case PolicyKind::MMSaliency: return PolicyKind::RandomSaliency;
    case PolicyKind::MMPrototype: return PolicyKind::RandomPrototype;
    case PolicyKind::MMCombined: return PolicyKind::RandomCombined;
    default: return k;
  }
}

struct PolicyConfig {
  double gamma = 0.0;
  double neutral_satisfaction = 3.0;  // cold-start mean for an explainer never shown
  std::uint64_t seed = 0;
};

inline Possibility argmin_possibility(const MentalModelState& state, Rng& rng) {
  if (!state.local_sim) throw Error(ErrorCode::UnpopulatedState, "no local simulatability observed yet");
  const auto& locals = *state.local_sim;
  int best = locals.local[0];
  for (int v : locals.local) best = std::min(best, v);
  std::vector<Possibility> tied;
  for (auto p : kPossibilities) {
    if (locals[p] == best) tied.push_back(p);
  }
  return tied.size() == 1 ? tied.front() : tied[rng.index(tied.size())];
}

inline double mean_satisfaction(const MentalModelState& state, ExplainerKind kind, const PolicyConfig& config) {
  const auto& h = state.history(kind);
  if (h.empty()) return config.neutral_satisfaction;
  double s = 0;
  for (double v : h) s += v;
  return s / static_cast<double>(h.size());
}

// Only (state, catalog, config, rng) are read, so the choice cannot depend
// on any future state.
inline const Explanation& select(PolicyKind policy, const MentalModelState& state,
                                 const ExplanationCatalog& catalog, const PolicyConfig& config, Rng& rng) {
  catalog.require_complete();
  if (config.gamma != 0.0) {
    throw Error(ErrorCode::InvalidArgument, "only immediate-reward policies (gamma = 0) are implemented");
  }
  switch (policy) {
    case PolicyKind::RandomSaliency:
      return catalog.find(ExplainerKind::Saliency, kPossibilities[rng.index(4)]);
    case PolicyKind::RandomPrototype:
      return catalog.find(ExplainerKind::Prototype, kPossibilities[rng.index(4)]);
    case PolicyKind::RandomCombined:
      return catalog.by_id(static_cast<int>(rng.index(8)));
    case PolicyKind::MMSaliency:
      return catalog.find(ExplainerKind::Saliency, argmin_possibility(state, rng));
    case PolicyKind::MMPrototype:
      return catalog.find(ExplainerKind::Prototype, argmin_possibility(state, rng));
    case PolicyKind::MMCombined: {
      const auto target = argmin_possibility(state, rng);
      const double sal = mean_satisfaction(state, ExplainerKind::Saliency, config);
      const double proto = mean_satisfaction(state, ExplainerKind::Prototype, config);
      ExplainerKind kind;
      if (sal != proto) {
        kind = sal > proto ? ExplainerKind::Saliency : ExplainerKind::Prototype;
      } else {
        kind = rng.bernoulli(0.5) ? ExplainerKind::Saliency : ExplainerKind::Prototype;
      }
      return catalog.find(kind, target);
    }
  }
  throw Error(ErrorCode::UnknownPolicy, "unhandled policy");
}

}  // namespace seqx
