#pragma once

// Trajectory summaries over completed sessions: per policy arm and iteration,
// the mean reward relative to each participant's baseline, its standard
// error, and Cohen's d against the arm's baseline-iteration scores.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "seqx/error.hpp"
#include "seqx/policies.hpp"
#include "seqx/session.hpp"

namespace seqx {

inline constexpr double kMediumEffect = 0.5;

inline double mean_of(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Unbiased sample variance; requires v.size() >= 2.
inline double sample_variance(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// (mean_a - mean_b) / pooled SD with the two-sample pooled variance.
inline double cohens_d(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw Error(ErrorCode::TooFewSamples, "cohens_d needs at least 2 samples per group");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double pooled = std::sqrt(((na - 1) * sample_variance(a) + (nb - 1) * sample_variance(b)) / (na + nb - 2));
  if (pooled == 0.0) throw Error(ErrorCode::ZeroPooledSD, "both samples are constant");
  return (mean_of(a) - mean_of(b)) / pooled;
}

constexpr bool is_medium_large(double d) { return d > kMediumEffect; }

struct WelchResult {
  double t = 0;
  double dof = 0;
  double p_greater = 1;  // one-sided p for mean(a) > mean(b)
};

inline WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw Error(ErrorCode::TooFewSamples, "t-test needs at least 2 samples per group");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double va = sample_variance(a) / na;
  const double vb = sample_variance(b) / nb;
  if (va + vb == 0.0) throw Error(ErrorCode::ZeroPooledSD, "both samples are constant");
  WelchResult r;
  r.t = (mean_of(a) - mean_of(b)) / std::sqrt(va + vb);
  r.dof = (va + vb) * (va + vb) / (va * va / (na - 1) + vb * vb / (nb - 1));
  r.p_greater = boost::math::cdf(boost::math::complement(boost::math::students_t(r.dof), r.t));
  return r;
}

struct IterationSummary {
  int t = 0;  // 0 = baseline
  std::size_t n = 0;
  double mean = 0;  // mean reward relative to baseline
  double se = 0;
  std::optional<double> cohens_d;  // vs. baseline iteration; empty when undefined

  bool operator==(const IterationSummary&) const = default;
};

struct ArmSummary {
  PolicyKind policy{};
  std::vector<IterationSummary> iterations;  // t = 0..5

  bool operator==(const ArmSummary&) const = default;
};

struct TrajectorySummary {
  std::vector<ArmSummary> arms;  // in PolicyKind order, only arms with sessions

  const ArmSummary* arm(PolicyKind p) const {
    for (const auto& a : arms) {
      if (a.policy == p) return &a;
    }
    return nullptr;
  }

  bool operator==(const TrajectorySummary&) const = default;
};

// Per-arm reward columns: rewards[t][session], t = 0 holds baseline resultants.
inline std::vector<std::vector<double>> reward_columns(std::span<const SessionRecord* const> sessions) {
  std::vector<std::vector<double>> cols(kExperimentalIterations + 1);
  for (const auto* s : sessions) {
    cols[0].push_back(s->baseline.locals->resultant());
    for (const auto& it : s->iterations) cols[static_cast<std::size_t>(it.t)].push_back(it.reward);
  }
  return cols;
}

inline TrajectorySummary summarize(std::span<const SessionRecord> logs) {
  if (logs.empty()) throw Error(ErrorCode::EmptyArm, "no sessions to summarize");
  for (const auto& s : logs) {
    if (s.phase.kind != PhaseKind::Complete) {
      throw Error(ErrorCode::IncompleteSession, "session " + s.session_id + " is " + s.phase.name());
    }
  }
  TrajectorySummary out;
  for (auto policy : kPolicyKinds) {
    std::vector<const SessionRecord*> arm;
    for (const auto& s : logs) {
      if (s.policy == policy) arm.push_back(&s);
    }
    if (arm.empty()) continue;
    const auto rewards = reward_columns(arm);
    ArmSummary summary{policy, {}};
    for (int t = 0; t <= kExperimentalIterations; ++t) {
      const auto& col = rewards[static_cast<std::size_t>(t)];
      std::vector<double> rel(col.size());
      for (std::size_t i = 0; i < col.size(); ++i) rel[i] = col[i] - rewards[0][i];
      IterationSummary row;
      row.t = t;
      row.n = rel.size();
      row.mean = mean_of(rel);
      row.se = rel.size() >= 2 ? std::sqrt(sample_variance(rel) / static_cast<double>(rel.size())) : 0.0;
      if (t == 0) {
        row.cohens_d = 0.0;
      } else {
        try {
          row.cohens_d = cohens_d(col, rewards[0]);
        } catch (const Error&) {
          row.cohens_d.reset();
        }
      }
      summary.iterations.push_back(row);
    }
    out.arms.push_back(std::move(summary));
  }
  return out;
}

namespace detail {

inline std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace detail

inline std::string summary_to_csv(const TrajectorySummary& s) {
  std::string out = "arm,t,n,mean,se,d\n";
  for (const auto& arm : s.arms) {
    for (const auto& row : arm.iterations) {
      out += std::string(to_string(arm.policy)) + ',' + std::to_string(row.t) + ',' + std::to_string(row.n) + ',' +
             detail::shortest(row.mean) + ',' + detail::shortest(row.se) + ',' +
             (row.cohens_d ? detail::shortest(*row.cohens_d) : std::string()) + '\n';
    }
  }
  return out;
}

inline void export_csv(const TrajectorySummary& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  const auto text = summary_to_csv(s);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + path.string());
}

inline nlohmann::json summary_to_json(const TrajectorySummary& s) {
  auto arms = nlohmann::json::array();
  for (const auto& arm : s.arms) {
    auto rows = nlohmann::json::array();
    for (const auto& row : arm.iterations) {
      rows.push_back({{"t", row.t},
                      {"n", row.n},
                      {"mean", row.mean},
                      {"se", row.se},
                      {"d", row.cohens_d ? nlohmann::json(*row.cohens_d) : nlohmann::json(nullptr)}});
    }
    arms.push_back({{"arm", to_string(arm.policy)}, {"iterations", rows}});
  }
  return {{"arms", arms}};
}

}  // namespace seqx
