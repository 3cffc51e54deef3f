#pragma once

// The explanation catalog: deep Taylor decomposition saliency maps and
// ProtoDash prototype sets, one of each per classification possibility.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "seqx/blackbox.hpp"
#include "seqx/dataset.hpp"
#include "seqx/error.hpp"

namespace seqx {

inline constexpr std::size_t kExplanationSize = 3;
inline constexpr double kRelevanceEpsilon = 1e-9;

// ---------------------------------------------------------------------------
// Deep Taylor decomposition

struct SaliencyMap {
  std::vector<double> relevance = std::vector<double>(kImagePixels, 0.0);  // row-major 28x28
  double root_relevance = 0.0;
  bool zero_root = false;  // logit was exactly 0; map is all zero

  double total() const {
    double s = 0;
    for (double r : relevance) s += r;
    return s;
  }

  bool operator==(const SaliencyMap&) const = default;
};

namespace detail {

// z+ rule: R_i = sum_j x_i^+ w_ij^+ / (sum_i' x_i'^+ w_i'j^+ + eps) * R_j
// over a 3x3 same-padding convolution. Padded positions carry no relevance.
// With `input_bounds` the z^B rule for inputs constrained to [0, 1] is used
// instead: z_ij = x_i w_ij - 0 * w_ij^+ - 1 * w_ij^-.
template <typename T>
std::vector<double> conv_relevance(const LayerRecord<T>& layer, const ConvBlockParams<T>& block,
                                   const std::vector<double>& out_relevance, bool input_bounds) {
  const std::size_t side = layer.in_side;
  const std::size_t plane = side * side;
  const std::size_t cin = block.in_channels;
  std::vector<double> in_relevance(cin * plane, 0.0);
  std::vector<double> contrib(cin * 9);
  std::vector<std::size_t> target(cin * 9);

  for (std::size_t co = 0; co < block.out_channels; ++co) {
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double rj = out_relevance[co * plane + y * side + x];
        if (rj == 0.0) continue;
        std::size_t used = 0;
        double denom = 0.0;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t k = 0; k < 9; ++k) {
            const long iy = static_cast<long>(y) + static_cast<long>(k / 3) - 1;
            const long ix = static_cast<long>(x) + static_cast<long>(k % 3) - 1;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(side) || ix >= static_cast<long>(side)) continue;
            const std::size_t idx = ci * plane + static_cast<std::size_t>(iy) * side + static_cast<std::size_t>(ix);
            const double w = block.weight[(co * cin + ci) * 9 + k];
            const double xi = layer.input[idx];
            double z;
            if (input_bounds) {
              z = xi * w - std::min(w, 0.0);
            } else {
              z = std::max(xi, 0.0) * std::max(w, 0.0);
            }
            if (z <= 0.0) continue;
            contrib[used] = z;
            target[used] = idx;
            ++used;
            denom += z;
          }
        }
        if (denom <= 0.0) continue;
        const double scale = rj / (denom + kRelevanceEpsilon);
        for (std::size_t u = 0; u < used; ++u) in_relevance[target[u]] += contrib[u] * scale;
      }
    }
  }
  return in_relevance;
}

// z+ rule for a single-output linear layer; `sign` -1 explains the negative
// decision by negating the weights.
template <typename T>
std::vector<double> linear_relevance(const std::vector<T>& input, const std::vector<T>& weight, double sign,
                                     double root) {
  std::vector<double> relevance(input.size(), 0.0);
  double denom = 0.0;
  for (std::size_t i = 0; i < input.size(); ++i) {
    relevance[i] = std::max<double>(input[i], 0.0) * std::max(sign * static_cast<double>(weight[i]), 0.0);
    denom += relevance[i];
  }
  const double scale = denom > 0.0 ? root / (denom + kRelevanceEpsilon) : 0.0;
  for (auto& r : relevance) r *= scale;
  return relevance;
}

template <typename T>
std::vector<double> pool_relevance(const LayerRecord<T>& layer, const std::vector<double>& out_relevance) {
  std::vector<double> in_relevance(layer.input.size(), 0.0);
  for (std::size_t i = 0; i < out_relevance.size(); ++i) in_relevance[layer.argmax[i]] += out_relevance[i];
  return in_relevance;
}

}  // namespace detail

// Propagates |logit| from the head back to the pixels. A negative logit is
// explained as evidence for label 0 by negating the head weights.
template <typename T>
SaliencyMap deep_taylor(const BasicNetworkParams<T>& params, const BasicActivationTrace<T>& trace) {
  if (trace.layers.size() != 7) {
    throw Error(ErrorCode::InvalidArgument, "activation trace must hold 7 layer records");
  }
  SaliencyMap map;
  const double logit = static_cast<double>(trace.logit);
  if (logit == 0.0) {
    map.zero_root = true;
    return map;
  }
  const double sign = logit > 0.0 ? 1.0 : -1.0;
  map.root_relevance = sign * logit;

  auto relevance = detail::linear_relevance(trace.layers[6].input, params.head_weight, sign, map.root_relevance);
  // pool2 -> (bn2 pass-through) -> conv2 -> pool1 -> (bn1 pass-through) -> conv1
  relevance = detail::pool_relevance(trace.layers[5], relevance);
  relevance = detail::conv_relevance(trace.layers[3], params.block2, relevance, false);
  relevance = detail::pool_relevance(trace.layers[2], relevance);
  relevance = detail::conv_relevance(trace.layers[0], params.block1, relevance, true);
  map.relevance = std::move(relevance);
  return map;
}

// ---------------------------------------------------------------------------
// ProtoDash

struct ProtoDashConfig {
  std::size_t max_steps = 500;
  double tolerance = 1e-8;
};

struct ProtoDashResult {
  std::vector<std::size_t> selected;     // candidate indices, in selection order
  std::vector<double> weights;           // aligned with `selected`
  std::vector<double> objective_trace;   // g(w) after each greedy step
  double sigma = 1.0;
  bool degenerate_kernel = false;

  double objective() const { return objective_trace.empty() ? 0.0 : objective_trace.back(); }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// g(w) = w'mu - 1/2 w'Kw
inline double protodash_objective(std::span<const double> w, std::span<const double> mu,
                                  const std::vector<std::vector<double>>& gram) {
  double lin = 0, quad = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    lin += w[i] * mu[i];
    for (std::size_t j = 0; j < w.size(); ++j) quad += w[i] * gram[i][j] * w[j];
  }
  return lin - 0.5 * quad;
}

// Projected gradient ascent on g over w >= 0 with step 1/L, L the largest
// absolute row sum of the Gram matrix (an upper bound on its top eigenvalue).
inline std::vector<double> fit_prototype_weights(const std::vector<std::vector<double>>& gram,
                                                 std::span<const double> mu, std::vector<double> w,
                                                 const ProtoDashConfig& config = {}) {
  const std::size_t n = mu.size();
  double lipschitz = 0;
  for (const auto& row : gram) {
    double s = 0;
    for (double v : row) s += std::abs(v);
    lipschitz = std::max(lipschitz, s);
  }
  if (lipschitz <= 0) lipschitz = 1;
  std::vector<double> next(n);
  for (std::size_t step = 0; step < config.max_steps; ++step) {
    double change = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double grad = mu[i];
      for (std::size_t j = 0; j < n; ++j) grad -= gram[i][j] * w[j];
      next[i] = std::max(0.0, w[i] + grad / lipschitz);
      change += (next[i] - w[i]) * (next[i] - w[i]);
    }
    w.swap(next);
    if (std::sqrt(change) < config.tolerance) break;
  }
  return w;
}

// Median pairwise distance; nullopt when there are no pairs.
inline std::optional<double> median_pairwise_distance(const std::vector<std::vector<double>>& sq_dist) {
  std::vector<double> d;
  for (std::size_t i = 0; i < sq_dist.size(); ++i) {
    for (std::size_t j = i + 1; j < sq_dist.size(); ++j) d.push_back(sq_dist[i][j]);
  }
  if (d.empty()) return std::nullopt;
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + mid, d.end());
  double median = std::sqrt(d[mid]);
  if (d.size() % 2 == 0) {
    const double lower = *std::max_element(d.begin(), d.begin() + mid);
    median = 0.5 * (median + std::sqrt(lower));
  }
  return median;
}

// Greedy ProtoDash over feature vectors. `bandwidth` of nullopt selects the
// median heuristic over candidate pairs; a zero median (identical
// candidates) falls back to sigma = 1 and sets degenerate_kernel.
inline ProtoDashResult protodash(const std::vector<std::vector<double>>& targets,
                                 const std::vector<std::vector<double>>& candidates, std::size_t m,
                                 std::optional<double> bandwidth, const ProtoDashConfig& config = {}) {
  if (targets.empty() || candidates.empty()) {
    throw Error(ErrorCode::InvalidArgument, "protodash needs non-empty targets and candidates");
  }
  if (m > candidates.size()) {
    throw Error(ErrorCode::InsufficientInstances, "protodash asked for " + std::to_string(m) +
                                                      " prototypes from " +
                                                      std::to_string(candidates.size()) + " candidates");
  }
  if (bandwidth && !(*bandwidth > 0)) {
    throw Error(ErrorCode::InvalidArgument, "kernel bandwidth must be positive");
  }
  const std::size_t n = candidates.size();
  ProtoDashResult result;

  std::vector<std::vector<double>> cand_sq(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      cand_sq[i][j] = cand_sq[j][i] = squared_distance(candidates[i], candidates[j]);
    }
  }
  if (bandwidth) {
    result.sigma = *bandwidth;
  } else {
    const auto median = median_pairwise_distance(cand_sq);
    if (median && *median > 0) {
      result.sigma = *median;
    } else {
      result.sigma = 1.0;
      result.degenerate_kernel = true;
    }
  }
  const double inv_two_sigma_sq = 1.0 / (2.0 * result.sigma * result.sigma);
  for (auto& row : cand_sq) {
    for (auto& v : row) v = std::exp(-v * inv_two_sigma_sq);
  }
  const auto& gram = cand_sq;

  std::vector<double> mu(n, 0.0);
  if (targets == candidates) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (double v : gram[i]) s += v;
      mu[i] = s / static_cast<double>(n);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (const auto& t : targets) s += std::exp(-squared_distance(candidates[i], t) * inv_two_sigma_sq);
      mu[i] = s / static_cast<double>(targets.size());
    }
  }

  std::vector<bool> chosen(n, false);
  std::vector<double> w;
  for (std::size_t step = 0; step < m; ++step) {
    std::size_t best = n;
    double best_grad = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen[i]) continue;
      double grad = mu[i];
      for (std::size_t s = 0; s < result.selected.size(); ++s) grad -= gram[i][result.selected[s]] * w[s];
      if (grad > best_grad) {
        best_grad = grad;
        best = i;
      }
    }
    chosen[best] = true;
    result.selected.push_back(best);
    w.push_back(0.0);

    const std::size_t k = result.selected.size();
    std::vector<std::vector<double>> sub(k, std::vector<double>(k));
    std::vector<double> sub_mu(k);
    for (std::size_t a = 0; a < k; ++a) {
      sub_mu[a] = mu[result.selected[a]];
      for (std::size_t b = 0; b < k; ++b) sub[a][b] = gram[result.selected[a]][result.selected[b]];
    }
    w = fit_prototype_weights(sub, sub_mu, std::move(w), config);
    result.objective_trace.push_back(protodash_objective(w, sub_mu, sub));
  }
  result.weights = w;
  return result;
}

struct PrototypeMember {
  std::uint32_t id = 0;
  double weight = 0.0;

  bool operator==(const PrototypeMember&) const = default;
};

struct PrototypeSet {
  std::vector<PrototypeMember> members;
  double kernel_bandwidth = 1.0;
  bool degenerate_kernel = false;

  bool operator==(const PrototypeSet&) const = default;
};

inline std::vector<double> pixel_vector(const ImageInstance& inst) {
  return {inst.pixels.begin(), inst.pixels.end()};
}

// ProtoDash over dataset instances addressed by id.
inline PrototypeSet protodash(std::span<const std::uint32_t> target_ids,
                              std::span<const std::uint32_t> candidate_ids, const LabeledDataset& dataset,
                              std::size_t m, std::optional<double> bandwidth,
                              const ProtoDashConfig& config = {}) {
  std::vector<std::vector<double>> targets, candidates;
  for (auto id : target_ids) targets.push_back(pixel_vector(dataset.at(id)));
  for (auto id : candidate_ids) candidates.push_back(pixel_vector(dataset.at(id)));
  const auto r = protodash(targets, candidates, m, bandwidth, config);
  PrototypeSet out;
  out.kernel_bandwidth = r.sigma;
  out.degenerate_kernel = r.degenerate_kernel;
  for (std::size_t i = 0; i < r.selected.size(); ++i) {
    out.members.push_back({candidate_ids[r.selected[i]], r.weights[i]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Catalog

enum class ExplainerKind { Saliency = 0, Prototype = 1 };

inline constexpr std::array<ExplainerKind, 2> kExplainerKinds = {ExplainerKind::Saliency,
                                                                 ExplainerKind::Prototype};

constexpr std::string_view to_string(ExplainerKind k) {
  return k == ExplainerKind::Saliency ? "saliency" : "prototype";
}

inline ExplainerKind explainer_kind_from_string(std::string_view s) {
  for (auto k : kExplainerKinds) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown explainer kind '" + std::string(s) + "'");
}

struct Explanation {
  int id = 0;
  ExplainerKind kind = ExplainerKind::Saliency;
  Possibility possibility = Possibility::TP;
  std::array<std::uint32_t, kExplanationSize> instance_ids{};
  std::vector<SaliencyMap> saliency;        // Saliency: one per instance
  std::optional<PrototypeSet> prototypes;  // Prototype: over instance_ids

  std::string key() const {
    std::string k(to_string(kind));
    k += '_';
    for (char c : to_string(possibility)) k += static_cast<char>(c - 'A' + 'a');
    return k;
  }

  bool operator==(const Explanation&) const = default;
};

// Position of (kind, possibility) in catalog order: saliency TP,TN,FP,FN
// then prototype TP,TN,FP,FN.
constexpr int catalog_index(ExplainerKind kind, Possibility p) {
  return static_cast<int>(kind) * 4 + static_cast<int>(p);
}

struct ExplanationCatalog {
  std::vector<Explanation> explanations;

  bool complete() const {
    if (explanations.size() != 8) return false;
    for (std::size_t i = 0; i < 8; ++i) {
      const auto& e = explanations[i];
      if (e.id != static_cast<int>(i) || catalog_index(e.kind, e.possibility) != e.id) return false;
    }
    return true;
  }

  void require_complete() const {
    if (!complete()) throw Error(ErrorCode::IncompleteCatalog, "catalog must hold all 8 explanations");
  }

  const Explanation& find(ExplainerKind kind, Possibility p) const {
    require_complete();
    return explanations[static_cast<std::size_t>(catalog_index(kind, p))];
  }

  const Explanation& by_id(int id) const {
    require_complete();
    if (id < 0 || id >= 8) throw Error(ErrorCode::InvalidArgument, "no explanation with id " + std::to_string(id));
    return explanations[static_cast<std::size_t>(id)];
  }

  // Ids of every instance displayed by any explanation.
  std::vector<std::uint32_t> display_ids() const {
    std::vector<std::uint32_t> ids;
    for (const auto& e : explanations) ids.insert(ids.end(), e.instance_ids.begin(), e.instance_ids.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }

  bool operator==(const ExplanationCatalog&) const = default;
};

// First k entries of the ranked list for `p`; categorize() already orders each
// list with ties by ascending id.
inline std::vector<std::uint32_t> select_representatives(const CategorizedTestSet& cats, Possibility p,
                                                         std::size_t k = kExplanationSize) {
  const auto& list = cats[p];
  if (list.size() < k) {
    throw Error(ErrorCode::InsufficientInstances,
                std::string(to_string(p)) + " has " + std::to_string(list.size()) +
                    " instances, need " + std::to_string(k));
  }
  std::vector<std::uint32_t> ids;
  for (std::size_t i = 0; i < k; ++i) ids.push_back(list[i].id);
  return ids;
}

enum class PrototypeSelection {
  ProtoDash,  // ProtoDash picks the displayed instances
  Ranked,     // top-ranked instances, ProtoDash weights fitted over them
};

struct CatalogConfig {
  PrototypeSelection prototype_selection = PrototypeSelection::ProtoDash;
  std::optional<double> bandwidth;  // nullopt: median heuristic
  ProtoDashConfig protodash;
};

template <typename T>
ExplanationCatalog build_catalog(const BasicNetworkParams<T>& params, const CategorizedTestSet& cats,
                                 const LabeledDataset& dataset, const CatalogConfig& config = {}) {
  ExplanationCatalog catalog;
  catalog.explanations.resize(8);
  for (auto p : kPossibilities) {
    const auto reps = select_representatives(cats, p);
    auto& sal = catalog.explanations[static_cast<std::size_t>(catalog_index(ExplainerKind::Saliency, p))];
    sal.id = catalog_index(ExplainerKind::Saliency, p);
    sal.kind = ExplainerKind::Saliency;
    sal.possibility = p;
    for (std::size_t i = 0; i < kExplanationSize; ++i) {
      sal.instance_ids[i] = reps[i];
      sal.saliency.push_back(deep_taylor(params, forward_trace(params, dataset.at(reps[i]))));
    }
  }
  for (auto p : kPossibilities) {
    std::vector<std::uint32_t> pool;
    for (const auto& e : cats[p]) pool.push_back(e.id);
    if (pool.size() < kExplanationSize) {
      throw Error(ErrorCode::InsufficientInstances, std::string(to_string(p)) + " has too few instances");
    }
    auto& proto = catalog.explanations[static_cast<std::size_t>(catalog_index(ExplainerKind::Prototype, p))];
    proto.id = catalog_index(ExplainerKind::Prototype, p);
    proto.kind = ExplainerKind::Prototype;
    proto.possibility = p;
    if (config.prototype_selection == PrototypeSelection::ProtoDash) {
      proto.prototypes = protodash(pool, pool, dataset, kExplanationSize, config.bandwidth, config.protodash);
    } else {
      const auto reps = select_representatives(cats, p);
      proto.prototypes = protodash(pool, reps, dataset, kExplanationSize, config.bandwidth, config.protodash);
      // Keep the ranked display order.
      auto& members = proto.prototypes->members;
      std::stable_sort(members.begin(), members.end(), [&reps](const auto& a, const auto& b) {
        return std::find(reps.begin(), reps.end(), a.id) < std::find(reps.begin(), reps.end(), b.id);
      });
    }
    for (std::size_t i = 0; i < kExplanationSize; ++i) proto.instance_ids[i] = proto.prototypes->members[i].id;
  }
  return catalog;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const SaliencyMap& m) {
  j = {{"root_relevance", m.root_relevance}, {"zero_root", m.zero_root}, {"relevance", m.relevance}};
}

inline void from_json(const nlohmann::json& j, SaliencyMap& m) {
  j.at("root_relevance").get_to(m.root_relevance);
  j.at("zero_root").get_to(m.zero_root);
  j.at("relevance").get_to(m.relevance);
  if (m.relevance.size() != kImagePixels) throw Error(ErrorCode::InvalidArgument, "saliency grid must hold 784 values");
}

inline void to_json(nlohmann::json& j, const PrototypeSet& s) {
  j = {{"kernel_bandwidth", s.kernel_bandwidth}, {"degenerate_kernel", s.degenerate_kernel},
       {"members", nlohmann::json::array()}};
  for (const auto& m : s.members) j["members"].push_back({{"id", m.id}, {"weight", m.weight}});
}

inline void from_json(const nlohmann::json& j, PrototypeSet& s) {
  j.at("kernel_bandwidth").get_to(s.kernel_bandwidth);
  j.at("degenerate_kernel").get_to(s.degenerate_kernel);
  s.members.clear();
  for (const auto& m : j.at("members")) s.members.push_back({m.at("id").get<std::uint32_t>(), m.at("weight").get<double>()});
}

inline void to_json(nlohmann::json& j, const Explanation& e) {
  j = {{"id", e.id},
       {"key", e.key()},
       {"kind", to_string(e.kind)},
       {"possibility", to_string(e.possibility)},
       {"instance_ids", e.instance_ids}};
  if (e.kind == ExplainerKind::Saliency) j["saliency"] = e.saliency;
  if (e.prototypes) j["prototypes"] = *e.prototypes;
}

inline void from_json(const nlohmann::json& j, Explanation& e) {
  j.at("id").get_to(e.id);
  e.kind = explainer_kind_from_string(j.at("kind").get<std::string>());
  e.possibility = possibility_from_string(j.at("possibility").get<std::string>());
  j.at("instance_ids").get_to(e.instance_ids);
  e.saliency.clear();
  if (j.contains("saliency")) j.at("saliency").get_to(e.saliency);
  e.prototypes.reset();
  if (j.contains("prototypes")) e.prototypes = j.at("prototypes").get<PrototypeSet>();
}

inline nlohmann::json catalog_to_json(const ExplanationCatalog& c) {
  return {{"format", "seqx-catalog"}, {"version", 1}, {"explanations", c.explanations}};
}

inline ExplanationCatalog catalog_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "seqx-catalog") throw Error(ErrorCode::InvalidArgument, "not a catalog document");
  ExplanationCatalog c;
  j.at("explanations").get_to(c.explanations);
  c.require_complete();
  return c;
}

}  // namespace seqx
