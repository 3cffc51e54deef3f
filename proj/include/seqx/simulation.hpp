#pragma once

// Drives complete sessions with a simulated explainee, going through the
// same session transitions a human participant would.

#include <cstdint>
#include <string>
#include <vector>

#include "seqx/experiment.hpp"
#include "seqx/policies.hpp"
#include "seqx/session.hpp"
#include "seqx/simulee.hpp"

namespace seqx {

inline SessionRecord run_simulated_session(const std::string& session_id, PolicyKind policy, std::uint64_t session_seed,
                                           const Experiment& exp, const SimuleeConfig& simulee,
                                           const PolicyConfig& policy_config = {}) {
  Rng rng(mix_seed(simulee.seed ^ session_seed, 0x51));
  auto belief = SimuleeState::initial(simulee);
  auto rec = start_session(session_id, policy, session_seed, exp.cats, exp.catalog, exp.task, exp.dataset);
  rec = submit_baseline(rec, exp.task, respond_simulatability(belief, exp.task, rng));
  while (rec.phase.kind == PhaseKind::AwaitingIteration) {
    const auto& shown = current_explanation(rec, exp.catalog, policy_config);
    belief = absorb(belief, simulee, shown);
    const auto sat = respond_satisfaction(simulee, shown.kind, rng);
    const auto guesses = respond_simulatability(belief, exp.task, rng);
    rec = submit_iteration(rec, exp.task, sat, guesses);
  }
  return rec;
}

// `sessions_per_arm` sessions for each policy; session seeds derive from
// (seed, arm, index) so arms never share a random stream.
inline std::vector<SessionRecord> run_arms(const std::vector<PolicyKind>& arms, std::size_t sessions_per_arm,
                                           std::uint64_t seed, const Experiment& exp, const SimuleeConfig& simulee,
                                           const PolicyConfig& policy_config = {}) {
  std::vector<SessionRecord> out;
  for (auto policy : arms) {
    for (std::size_t i = 0; i < sessions_per_arm; ++i) {
      const auto session_seed = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(policy)), i);
      out.push_back(run_simulated_session(std::string(to_string(policy)) + "-" + std::to_string(i), policy,
                                          session_seed, exp, simulee, policy_config));
    }
  }
  return out;
}

}  // namespace seqx
