#pragma once

// A synthetic explainee for desk-scale policy evaluation. Each
// classification possibility carries a belief b_c, the probability of
// correctly simulating the model on that possibility's instances. Shown
// explanations raise beliefs with saturating gains; every step decays them
// toward chance (0.5).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "seqx/error.hpp"
#include "seqx/explainers.hpp"
#include "seqx/mental_model.hpp"
#include "seqx/rng.hpp"

namespace seqx {

struct SimuleeConfig {
  std::array<double, 4> initial_belief{0.5, 0.5, 0.5, 0.5};  // by Possibility
  std::array<double, 2> gain_target{0.35, 0.35};             // by ExplainerKind
  std::array<double, 2> gain_spillover{0.05, 0.05};          // by ExplainerKind
  double decay = 0.05;
  std::array<double, 2> preference{3.3, 3.8};  // mean satisfaction by ExplainerKind
  double noise_sd = 0.7;
  std::uint64_t seed = 0;

  void validate() const {
    auto unit = [](double v, const char* what) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must lie in [0,1]");
    };
    for (double v : initial_belief) unit(v, "initial_belief");
    for (double v : gain_target) unit(v, "gain_target");
    for (double v : gain_spillover) unit(v, "gain_spillover");
    unit(decay, "decay");
    if (!(noise_sd >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise_sd must be non-negative");
    for (double v : preference) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "preference must be finite");
    }
  }

  bool operator==(const SimuleeConfig&) const = default;
};

struct SimuleeState {
  std::array<double, 4> belief{0.5, 0.5, 0.5, 0.5};

  static SimuleeState initial(const SimuleeConfig& config) { return {config.initial_belief}; }

  bool operator==(const SimuleeState&) const = default;
};

inline SimuleeState absorb(const SimuleeState& state, const SimuleeConfig& config, ExplainerKind kind,
                           Possibility shown) {
  SimuleeState next = state;
  const auto k = static_cast<std::size_t>(kind);
  for (auto p : kPossibilities) {
    double& b = next.belief[static_cast<std::size_t>(p)];
    const double gain = p == shown ? config.gain_target[k] : config.gain_spillover[k];
    b += gain * (1.0 - b);
    b = 0.5 + (1.0 - config.decay) * (b - 0.5);
    b = std::clamp(b, 0.0, 1.0);
  }
  return next;
}

inline SimuleeState absorb(const SimuleeState& state, const SimuleeConfig& config, const Explanation& shown) {
  return absorb(state, config, shown.kind, shown.possibility);
}

// Per image of possibility c: the model's prediction with probability b_c,
// otherwise the flipped label. The hidden predictions come from the task.
inline SimulatabilityResponse respond_simulatability(const SimuleeState& state, const SimulatabilityTask& task,
                                                     Rng& rng) {
  SimulatabilityResponse r;
  for (const auto& it : task.items) {
    const bool right = rng.bernoulli(state.belief[static_cast<std::size_t>(it.possibility)]);
    r.guesses[it.image_id] = right ? it.hidden_prediction : 1 - it.hidden_prediction;
  }
  return r;
}

inline SatisfactionResponse respond_satisfaction(const SimuleeConfig& config, ExplainerKind shown, Rng& rng) {
  SatisfactionResponse r;
  const double pref = config.preference[static_cast<std::size_t>(shown)];
  for (auto& item : r.items) {
    const double draw = config.noise_sd > 0 ? rng.normal(pref, config.noise_sd) : pref;
    item = static_cast<int>(std::clamp(std::round(draw), double(kLikertMin), double(kLikertMax)));
  }
  return r;
}

// JSON config; keys are optional and default to the values above.
//   {"initial_belief": 0.5 | {"TP":..,"TN":..,"FP":..,"FN":..},
//    "gain_target": 0.35 | {"saliency":..,"prototype":..},
//    "gain_spillover": 0.05 | {...}, "decay": 0.05,
//    "preference": {"saliency": 3.3, "prototype": 3.8},
//    "noise_sd": 0.7, "seed": 0}
inline SimuleeConfig simulee_config_from_json(const nlohmann::json& j) {
  SimuleeConfig c;
  auto by_kind = [&j](const char* key, std::array<double, 2>& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (v.is_number()) {
      out.fill(v.get<double>());
    } else {
      for (auto k : kExplainerKinds) {
        if (v.contains(std::string(to_string(k)))) out[static_cast<std::size_t>(k)] = v.at(std::string(to_string(k))).get<double>();
      }
    }
  };
  if (j.contains("initial_belief")) {
    const auto& v = j.at("initial_belief");
    if (v.is_number()) {
      c.initial_belief.fill(v.get<double>());
    } else {
      for (auto p : kPossibilities) {
        if (v.contains(std::string(to_string(p)))) c.initial_belief[static_cast<std::size_t>(p)] = v.at(std::string(to_string(p))).get<double>();
      }
    }
  }
  by_kind("gain_target", c.gain_target);
  by_kind("gain_spillover", c.gain_spillover);
  by_kind("preference", c.preference);
  c.decay = j.value("decay", c.decay);
  c.noise_sd = j.value("noise_sd", c.noise_sd);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

inline SimuleeConfig load_simulee_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return simulee_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + ex.what());
  }
}

}  // namespace seqx
