#pragma once

// End-to-end experiment assembly: corpus discovery, the train / explanation
// pool / balanced test split, model, categorization, catalog and task.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "seqx/blackbox.hpp"
#include "seqx/dataset.hpp"
#include "seqx/error.hpp"
#include "seqx/explainers.hpp"
#include "seqx/mental_model.hpp"

namespace seqx {

// Kuzushiji-49 indices of the two hiragana: a and me.
inline constexpr int kK49ClassA = 0;
inline constexpr int kK49ClassMe = 33;
// Fallback digit pair.
inline constexpr int kMnistClassA = 3;
inline constexpr int kMnistClassB = 5;

struct Corpus {
  std::string name;  // "k49" or "mnist-fallback"
  bool fallback = false;
  int class_a = 0;
  int class_b = 0;
  LabeledDataset raw;
};

namespace detail {

inline std::optional<std::filesystem::path> find_file(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* suffix : {"", ".gz"}) {
    const auto p = dir / (stem + suffix);
    if (std::filesystem::exists(p)) return p;
  }
  return std::nullopt;
}


}  // namespace detail

// Looks for, in order: k49-{images,labels} (converted Kuzushiji-49), then
// MNIST-style {images,labels}, train-* and t10k-* pairs (all present pairs
// are concatenated, ids in file order).
inline Corpus load_corpus(const std::filesystem::path& dir) {
  using detail::find_file;
  if (auto img = find_file(dir, "k49-images-idx3-ubyte")) {
    auto lab = find_file(dir, "k49-labels-idx1-ubyte");
    if (!lab) throw Error(ErrorCode::IoFailure, "k49 images found without labels in " + dir.string());
    return {"k49", false, kK49ClassA, kK49ClassMe, load_idx(*img, *lab)};
  }
  std::vector<ImageInstance> all;
  for (const char* prefix : {"", "train-", "t10k-"}) {
    auto img = find_file(dir, std::string(prefix) + "images-idx3-ubyte");
    auto lab = find_file(dir, std::string(prefix) + "labels-idx1-ubyte");
    if (!img || !lab) continue;
    auto part = load_idx(*img, *lab, static_cast<std::uint32_t>(all.size()));
    all.insert(all.end(), part.instances().begin(), part.instances().end());
  }
  if (all.empty()) throw Error(ErrorCode::IoFailure, "no IDX image/label files found in " + dir.string());
  return {"mnist-fallback", true, kMnistClassA, kMnistClassB, LabeledDataset(std::move(all))};
}

struct SplitConfig {
  std::size_t pool_per_class = 2500;  // held-out explanation/task pool
  std::size_t train_per_class = 1000;
  std::size_t test_per_class = 200;   // balanced accuracy set, drawn from the pool
  std::uint64_t seed = 17;
};

struct ExperimentData {
  LabeledDataset pool;   // never trained on; categorized for catalog and task
  LabeledDataset train;
  LabeledDataset test;   // balanced subset of pool
};

inline ExperimentData split_experiment(const LabeledDataset& binary, const SplitConfig& c) {
  auto first = balanced_split(binary, c.pool_per_class, mix_seed(c.seed, 1));
  ExperimentData d;
  d.pool = std::move(first.test);
  // The train subset is the "test" side of a second balanced draw.
  d.train = balanced_split(first.train, c.train_per_class, mix_seed(c.seed, 2)).test;
  d.test = balanced_split(d.pool, c.test_per_class, mix_seed(c.seed, 3)).test;
  return d;
}

struct Experiment {
  std::string dataset;
  ExperimentData data;
  NetworkParams params;
  CategorizedTestSet cats;
  ExplanationCatalog catalog;
  SimulatabilityTask task;
};

struct ExperimentConfig {
  SplitConfig split;
  CatalogConfig catalog;
  std::uint64_t task_seed = 29;
};

inline Experiment assemble_experiment(const Corpus& corpus, const NetworkParams& params, const ExperimentConfig& config,
                                      const std::optional<ExplanationCatalog>& catalog = std::nullopt) {
  Experiment e;
  e.dataset = corpus.name;
  e.data = split_experiment(select_binary(corpus.raw, corpus.class_a, corpus.class_b), config.split);
  e.params = params;
  e.cats = categorize(params, e.data.pool);
  e.catalog = catalog ? *catalog : build_catalog(params, e.cats, e.data.pool, config.catalog);
  e.task = build_simulatability_task(e.cats, e.catalog, config.task_seed);
  return e;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + ex.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + path.string());
}

}  // namespace seqx
