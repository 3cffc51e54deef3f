#pragma once

// Small synthetic experiment for tests that need a catalog and task but not a
// trained model: random images, stub predictions spread over the four cells,
// an untrained network for the saliency maps.

#include <filesystem>
#include <string>

#include <unistd.h>

#include "seqx/experiment.hpp"
#include "seqx/rng.hpp"

namespace seqx::testing {

inline LabeledDataset random_dataset(std::size_t per_class, std::uint64_t seed, std::uint32_t first_id = 0) {
  Rng rng(seed);
  std::vector<ImageInstance> v;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    ImageInstance inst;
    inst.id = first_id + static_cast<std::uint32_t>(i);
    inst.true_label = static_cast<int>(i % 2);
    for (auto& p : inst.pixels) p = static_cast<float>(rng.uniform01());
    v.push_back(inst);
  }
  return LabeledDataset(std::move(v));
}

// Alternates correct and incorrect predictions per label so each cell gets a
// quarter of the instances; logits vary so the rankings are strict.
inline std::vector<Prediction> stub_predictions(const LabeledDataset& d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int label = d.instances()[i].true_label;
    const bool correct = (i / 2) % 2 == 0;
    const int predicted = correct ? label : 1 - label;
    const double mag = 0.1 + 4.0 * rng.uniform01();
    out.push_back(Prediction::from_logit(predicted == 1 ? mag : -mag));
  }
  return out;
}

inline Experiment synthetic_experiment(std::size_t per_class = 24, std::uint64_t seed = 5) {
  Experiment e;
  e.dataset = "synthetic";
  e.data.pool = random_dataset(per_class, seed);
  e.data.test = e.data.pool;
  e.params = NetworkParams::initialized(seed);
  e.cats = categorize_predictions(e.data.pool, stub_predictions(e.data.pool, seed));
  e.catalog = build_catalog(e.params, e.cats, e.data.pool);
  e.task = build_simulatability_task(e.cats, e.catalog, seed);
  return e;
}

// Guesses matching the hidden predictions, flipped where `wrong(item)` holds.
template <typename Pred>
SimulatabilityResponse guesses_where(const SimulatabilityTask& task, Pred wrong) {
  SimulatabilityResponse r;
  for (const auto& it : task.items) r.guesses[it.image_id] = wrong(it) ? 1 - it.hidden_prediction : it.hidden_prediction;
  return r;
}

inline SimulatabilityResponse all_correct(const SimulatabilityTask& task) {
  return guesses_where(task, [](const TaskItem&) { return false; });
}

// Local scores exactly `locals` (per possibility, 0..3).
inline SimulatabilityResponse guesses_for(const SimulatabilityTask& task, std::array<int, 4> locals) {
  std::array<int, 4> seen{};
  return guesses_where(task, [&](const TaskItem& it) {
    const auto c = static_cast<std::size_t>(it.possibility);
    return seen[c]++ >= locals[c];
  });
}

inline SatisfactionResponse uniform_sat(int v) {
  SatisfactionResponse s;
  s.items.fill(v);
  return s;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("seqx-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace seqx::testing
