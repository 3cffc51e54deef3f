#pragma once

// The explainee's observable mental model: local simulatability per
// classification possibility plus per-explainer satisfaction history, and
// the two task sets that measure it.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqx/blackbox.hpp"
#include "seqx/error.hpp"
#include "seqx/explainers.hpp"
#include "seqx/rng.hpp"

namespace seqx {

inline constexpr std::size_t kTaskImagesPerPossibility = 3;
inline constexpr std::size_t kTaskImages = 4 * kTaskImagesPerPossibility;
inline constexpr std::size_t kSatisfactionItems = 8;
inline constexpr int kLikertMin = 1;
inline constexpr int kLikertMax = 5;

struct LocalScores {
  std::array<int, 4> local{};  // indexed by Possibility, each in [0, 3]

  int operator[](Possibility p) const { return local[static_cast<std::size_t>(p)]; }
  int resultant() const { return local[0] + local[1] + local[2] + local[3]; }

  bool operator==(const LocalScores&) const = default;
};

struct MentalModelState {
  std::optional<LocalScores> local_sim;                    // set once the baseline is scored
  std::array<std::vector<double>, 2> satisfaction_history;  // indexed by ExplainerKind
  int iteration_index = -1;                                // 0 after the baseline update

  const std::vector<double>& history(ExplainerKind k) const {
    return satisfaction_history[static_cast<std::size_t>(k)];
  }

  bool operator==(const MentalModelState&) const = default;
};

struct TaskItem {
  std::uint32_t image_id = 0;
  Possibility possibility = Possibility::TP;
  int hidden_prediction = 0;  // server-side only

  bool operator==(const TaskItem&) const = default;
};

// Twelve images in presentation order, three per possibility. The same task
// is used for every participant and iteration of an experiment.
struct SimulatabilityTask {
  std::vector<TaskItem> items;

  std::vector<std::uint32_t> image_ids() const {
    std::vector<std::uint32_t> ids;
    for (const auto& it : items) ids.push_back(it.image_id);
    return ids;
  }

  bool operator==(const SimulatabilityTask&) const = default;
};

struct SimulatabilityResponse {
  std::map<std::uint32_t, int> guesses;  // image id -> guessed model label

  bool operator==(const SimulatabilityResponse&) const = default;
};

struct SatisfactionResponse {
  std::array<int, kSatisfactionItems> items{};

  bool operator==(const SatisfactionResponse&) const = default;
};

// Draws three images per possibility from instances that no catalog
// explanation displays, then shuffles the twelve.
inline SimulatabilityTask build_simulatability_task(const CategorizedTestSet& cats,
                                                    const ExplanationCatalog& catalog, std::uint64_t seed) {
  const auto shown = catalog.display_ids();
  Rng rng(seed);
  SimulatabilityTask task;
  for (auto p : kPossibilities) {
    std::vector<const CategorizedEntry*> eligible;
    for (const auto& e : cats[p]) {
      if (!std::binary_search(shown.begin(), shown.end(), e.id)) eligible.push_back(&e);
    }
    if (eligible.size() < kTaskImagesPerPossibility) {
      throw Error(ErrorCode::InsufficientInstances,
                  std::string(to_string(p)) + " has " + std::to_string(eligible.size()) +
                      " instances outside the catalog, need " + std::to_string(kTaskImagesPerPossibility));
    }
    for (const auto* e : rng.sample(std::move(eligible), kTaskImagesPerPossibility)) {
      task.items.push_back({e->id, p, e->prediction.predicted_label});
    }
  }
  rng.shuffle(std::span(task.items));
  return task;
}

inline LocalScores score_simulatability(const SimulatabilityTask& task, const SimulatabilityResponse& response) {
  for (const auto& [id, guess] : response.guesses) {
    const bool known = std::any_of(task.items.begin(), task.items.end(),
                                   [id = id](const TaskItem& it) { return it.image_id == id; });
    if (!known) throw Error(ErrorCode::UnknownImageId, "guess for image " + std::to_string(id) + " not in the task");
    if (guess != 0 && guess != 1) {
      throw Error(ErrorCode::InvalidArgument, "guess for image " + std::to_string(id) + " must be 0 or 1");
    }
  }
  LocalScores scores;
  for (const auto& it : task.items) {
    auto g = response.guesses.find(it.image_id);
    if (g == response.guesses.end()) {
      throw Error(ErrorCode::MissingGuess, "no guess for image " + std::to_string(it.image_id));
    }
    scores.local[static_cast<std::size_t>(it.possibility)] += g->second == it.hidden_prediction;
  }
  return scores;
}

inline double score_satisfaction(const SatisfactionResponse& response) {
  double sum = 0;
  for (int item : response.items) {
    if (item < kLikertMin || item > kLikertMax) {
      throw Error(ErrorCode::OutOfRangeItem, "satisfaction item " + std::to_string(item) + " outside [1,5]");
    }
    sum += item;
  }
  return sum / static_cast<double>(kSatisfactionItems);
}

// s_t -> s_{t+1}. The baseline passes neither an explanation nor a score.
inline MentalModelState update_state(const MentalModelState& state, std::optional<ExplainerKind> shown,
                                     std::optional<double> satisfaction, const LocalScores& locals) {
  if (satisfaction && !shown) {
    throw Error(ErrorCode::SatWithoutExplanation, "satisfaction given without an explanation");
  }
  if (shown && !satisfaction) {
    throw Error(ErrorCode::InvalidArgument, "an explanation was shown but no satisfaction score given");
  }
  MentalModelState next = state;
  next.local_sim = locals;
  if (shown) next.satisfaction_history[static_cast<std::size_t>(*shown)].push_back(*satisfaction);
  ++next.iteration_index;
  return next;
}

inline MentalModelState update_state(const MentalModelState& state, const Explanation* shown,
                                     std::optional<double> satisfaction, const LocalScores& locals) {
  return update_state(state, shown ? std::optional(shown->kind) : std::nullopt, satisfaction, locals);
}

// JSON

inline void to_json(nlohmann::json& j, const LocalScores& s) {
  j = {{"TP", s.local[0]}, {"TN", s.local[1]}, {"FP", s.local[2]}, {"FN", s.local[3]}, {"resultant", s.resultant()}};
}

inline void from_json(const nlohmann::json& j, LocalScores& s) {
  for (auto p : kPossibilities) {
    const int v = j.at(std::string(to_string(p))).get<int>();
    if (v < 0 || v > static_cast<int>(kTaskImagesPerPossibility)) {
      throw Error(ErrorCode::InvalidArgument, "local score out of range");
    }
    s.local[static_cast<std::size_t>(p)] = v;
  }
}

inline void to_json(nlohmann::json& j, const MentalModelState& s) {
  j = {{"iteration_index", s.iteration_index},
       {"local_sim", s.local_sim ? nlohmann::json(*s.local_sim) : nlohmann::json(nullptr)},
       {"satisfaction_history",
        {{"saliency", s.satisfaction_history[0]}, {"prototype", s.satisfaction_history[1]}}}};
}

// Full task including hidden predictions; for server-side storage only.
inline nlohmann::json task_to_json(const SimulatabilityTask& t) {
  auto items = nlohmann::json::array();
  for (const auto& it : t.items) {
    items.push_back({{"image_id", it.image_id},
                     {"possibility", to_string(it.possibility)},
                     {"hidden_prediction", it.hidden_prediction}});
  }
  return {{"format", "seqx-task"}, {"version", 1}, {"items", items}};
}

inline SimulatabilityTask task_from_json(const nlohmann::json& j) {
  SimulatabilityTask t;
  for (const auto& it : j.at("items")) {
    t.items.push_back({it.at("image_id").get<std::uint32_t>(),
                       possibility_from_string(it.at("possibility").get<std::string>()),
                       it.at("hidden_prediction").get<int>()});
  }
  return t;
}

}  // namespace seqx
