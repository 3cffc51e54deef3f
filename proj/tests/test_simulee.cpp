#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "seqx/simulee.hpp"

using namespace seqx;

namespace {

SimuleeConfig no_decay(double target, double spill) {
  SimuleeConfig c;
  c.gain_target = {target, target};
  c.gain_spillover = {spill, spill};
  c.decay = 0;
  return c;
}

const SimulatabilityTask& task() {
  static const auto t = seqx::testing::synthetic_experiment().task;
  return t;
}

}  // namespace

TEST(Absorb, Arithmetic) {
  const auto cfg = no_decay(0.4, 0.1);
  const auto s = absorb(SimuleeState::initial(cfg), cfg, ExplainerKind::Saliency, Possibility::FP);
  EXPECT_NEAR(s.belief[2], 0.7, 1e-12);
  EXPECT_NEAR(s.belief[0], 0.55, 1e-12);
}

TEST(Absorb, IdentityWithoutGains) {
  const auto cfg = no_decay(0, 0);
  SimuleeState s{{0.1, 0.4, 0.9, 0.6}};
  const auto n = absorb(s, cfg, ExplainerKind::Prototype, Possibility::TN);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(n.belief[c], s.belief[c], 1e-15);
}

TEST(Absorb, SaturatesAtOne) {
  const auto cfg = no_decay(0.7, 0.3);
  SimuleeState s{{1, 1, 1, 1}};
  EXPECT_EQ(absorb(s, cfg, ExplainerKind::Prototype, Possibility::TN), s);
}

TEST(Absorb, DecayPullsTowardHalf) {
  SimuleeConfig cfg = no_decay(0, 0);
  cfg.decay = 0.5;
  const auto s = absorb(SimuleeState{{1.0, 0.0, 0.5, 0.7}}, cfg, ExplainerKind::Saliency, Possibility::TP);
  EXPECT_NEAR(s.belief[0], 0.75, 1e-12);
  EXPECT_NEAR(s.belief[1], 0.25, 1e-12);
  EXPECT_NEAR(s.belief[2], 0.5, 1e-12);
  EXPECT_NEAR(s.belief[3], 0.6, 1e-12);
}

TEST(Absorb, BeliefsStayInUnitInterval) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    SimuleeConfig cfg;
    for (auto* arr : {&cfg.gain_target, &cfg.gain_spillover}) {
      for (auto& v : *arr) v = rng.uniform01();
    }
    cfg.decay = rng.uniform01();
    SimuleeState s{{rng.uniform01(), rng.uniform01(), rng.uniform01(), rng.uniform01()}};
    for (int t = 0; t < 10; ++t) {
      s = absorb(s, cfg, static_cast<ExplainerKind>(rng.index(2)), kPossibilities[rng.index(4)]);
      for (double b : s.belief) {
        EXPECT_GE(b, 0.0);
        EXPECT_LE(b, 1.0);
      }
    }
  }
}

TEST(Absorb, TargetingTheWeakestHelpsMostWithoutDecay) {
  const auto cfg = no_decay(0.35, 0.05);
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    SimuleeState s{{rng.uniform01(), rng.uniform01(), rng.uniform01(), rng.uniform01()}};
    const auto weakest = static_cast<std::size_t>(std::min_element(s.belief.begin(), s.belief.end()) - s.belief.begin());
    auto min_after = [&](Possibility p) {
      const auto n = absorb(s, cfg, ExplainerKind::Prototype, p).belief;
      return *std::min_element(n.begin(), n.end());
    };
    const double best = min_after(kPossibilities[weakest]);
    for (auto p : kPossibilities) EXPECT_GE(best, min_after(p) - 1e-15);
  }
}

TEST(Absorb, MatchesIndependentRecurrence) {
  const SimuleeConfig cfg;
  const std::vector<int> seq = {2, 2, 0, 3, 1};
  auto s = SimuleeState::initial(cfg);
  for (int p : seq) s = absorb(s, cfg, ExplainerKind::Prototype, kPossibilities[static_cast<std::size_t>(p)]);
  double sum = 0;
  for (double b : s.belief) sum += 3 * b;
  EXPECT_NEAR(sum, oracle::expected_resultant(cfg, ExplainerKind::Prototype, seq), 1e-12);
}

TEST(RespondSimulatability, CertainBeliefs) {
  Rng rng(1);
  const auto sure = respond_simulatability(SimuleeState{{1, 1, 1, 1}}, task(), rng);
  EXPECT_EQ(score_simulatability(task(), sure).resultant(), 12);
  const auto never = respond_simulatability(SimuleeState{{0, 0, 0, 0}}, task(), rng);
  EXPECT_EQ(score_simulatability(task(), never).resultant(), 0);
}

TEST(RespondSimulatability, HalfBeliefMeanIsSix) {
  Rng rng(2024);
  const int n = 10000;
  double total = 0;
  for (int i = 0; i < n; ++i) total += score_simulatability(task(), respond_simulatability(SimuleeState{}, task(), rng)).resultant();
  EXPECT_NEAR(total / n, 6.0, 0.1);
}

TEST(RespondSimulatability, PerPossibilityFrequency) {
  Rng rng(5);
  const SimuleeState s{{0.9, 0.2, 0.5, 0.7}};
  std::array<double, 4> sum{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto l = score_simulatability(task(), respond_simulatability(s, task(), rng));
    for (std::size_t c = 0; c < 4; ++c) sum[c] += l.local[c];
  }
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(sum[c] / n, 3 * s.belief[c], 0.05);
}

TEST(RespondSatisfaction, NoiselessAndClamped) {
  SimuleeConfig cfg;
  cfg.noise_sd = 0;
  cfg.preference = {4, 9};
  Rng rng(1);
  EXPECT_EQ(score_satisfaction(respond_satisfaction(cfg, ExplainerKind::Saliency, rng)), 4.0);
  EXPECT_EQ(respond_satisfaction(cfg, ExplainerKind::Prototype, rng).items, seqx::testing::uniform_sat(5).items);
}

TEST(RespondSatisfaction, MeanMatchesPreference) {
  SimuleeConfig cfg;
  cfg.noise_sd = 0.5;
  cfg.preference = {3, 3};
  Rng rng(9);
  const int n = 10000;
  double total = 0;
  for (int i = 0; i < n; ++i) total += score_satisfaction(respond_satisfaction(cfg, ExplainerKind::Saliency, rng));
  EXPECT_NEAR(total / n, 3.0, 0.05);
}

TEST(SimuleeConfig, JsonSchema) {
  const auto cfg = simulee_config_from_json(nlohmann::json::parse(R"({
    "initial_belief": {"TP": 0.6, "TN": 0.5, "FP": 0.4, "FN": 0.3},
    "gain_target": 0.3, "gain_spillover": {"saliency": 0.01, "prototype": 0.02},
    "decay": 0.1, "preference": {"saliency": 2.5, "prototype": 4.5}, "noise_sd": 0.2, "seed": 12})"));
  EXPECT_EQ(cfg.initial_belief, (std::array<double, 4>{0.6, 0.5, 0.4, 0.3}));
  EXPECT_EQ(cfg.gain_target, (std::array<double, 2>{0.3, 0.3}));
  EXPECT_EQ(cfg.gain_spillover, (std::array<double, 2>{0.01, 0.02}));
  EXPECT_EQ(cfg.decay, 0.1);
  EXPECT_EQ(cfg.preference, (std::array<double, 2>{2.5, 4.5}));
  EXPECT_EQ(cfg.noise_sd, 0.2);
  EXPECT_EQ(cfg.seed, 12u);
  EXPECT_EQ(simulee_config_from_json(nlohmann::json::object()), SimuleeConfig{});
  EXPECT_THROW(simulee_config_from_json(nlohmann::json::parse(R"({"decay": 1.5})")), Error);
  EXPECT_THROW(simulee_config_from_json(nlohmann::json::parse(R"({"gain_target": -0.1})")), Error);
}
