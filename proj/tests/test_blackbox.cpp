#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "seqx/blackbox.hpp"
#include "seqx/experiment.hpp"

using namespace seqx;
using seqx::testing::TempDir;

namespace {

// Params with non-trivial batch-norm statistics, so inference exercises them.
BasicNetworkParams<double> busy_params(std::uint64_t seed) {
  auto p = BasicNetworkParams<double>::initialized(seed);
  Rng rng(seed + 100);
  for (auto* bn : {&p.block1.bn, &p.block2.bn}) {
    for (auto& v : bn->gamma) v = rng.uniform(0.5, 1.5);
    for (auto& v : bn->beta) v = rng.uniform(-0.2, 0.2);
    for (auto& v : bn->running_mean) v = rng.uniform(0.0, 0.3);
    for (auto& v : bn->running_var) v = rng.uniform(0.2, 2.0);
  }
  return p;
}

LabeledDataset toy_set(std::size_t per_class, std::uint64_t seed) {
  // Label 1 images are brighter in the top half: learnable in a few epochs.
  Rng rng(seed);
  std::vector<ImageInstance> v;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    ImageInstance inst;
    inst.id = static_cast<std::uint32_t>(i);
    inst.true_label = static_cast<int>(i % 2);
    for (std::size_t p = 0; p < kImagePixels; ++p) {
      const bool top = p < kImagePixels / 2;
      const double base = top == (inst.true_label == 1) ? 0.6 : 0.2;
      inst.pixels[p] = static_cast<float>(std::clamp(base + rng.uniform(-0.2, 0.2), 0.0, 1.0));
    }
    v.push_back(inst);
  }
  return LabeledDataset(std::move(v));
}

}  // namespace

TEST(Prediction, LabelFollowsLogitSign) {
  EXPECT_EQ(Prediction::from_logit(0.0).predicted_label, 0);
  EXPECT_EQ(Prediction::from_logit(0.0).probability, 0.5);
  EXPECT_EQ(Prediction::from_logit(1e-12).predicted_label, 1);
  EXPECT_EQ(Prediction::from_logit(-3).predicted_label, 0);
}

TEST(Possibility, TruthTable) {
  EXPECT_EQ(classify(1, 1), Possibility::TP);
  EXPECT_EQ(classify(0, 0), Possibility::TN);
  EXPECT_EQ(classify(0, 1), Possibility::FP);
  EXPECT_EQ(classify(1, 0), Possibility::FN);
  for (auto p : kPossibilities) EXPECT_EQ(possibility_from_string(to_string(p)), p);
  EXPECT_THROW(possibility_from_string("XX"), Error);
}

TEST(Predict, ZeroWeightsGiveHalf) {
  const auto p = NetworkParams::zeros();
  const auto d = seqx::testing::random_dataset(1, 1);
  const auto pred = predict(p, d.instances()[0]);
  EXPECT_EQ(pred.logit, 0.0);
  EXPECT_EQ(pred.probability, 0.5);
  EXPECT_EQ(pred.predicted_label, 0);
}

TEST(Predict, MatchesReferenceForward) {
  const auto p = busy_params(4);
  const auto d = seqx::testing::random_dataset(3, 9);
  for (const auto& inst : d.instances()) {
    EXPECT_NEAR(predict(p, inst).logit, oracle::reference_logit(p, inst.pixels), 1e-10);
  }
}

TEST(Predict, FloatModelCloseToDoubleReference) {
  const auto pd = busy_params(6);
  const auto pf = pd.cast<float>();
  const auto d = seqx::testing::random_dataset(2, 3);
  for (const auto& inst : d.instances()) {
    EXPECT_NEAR(predict(pf, inst).logit, oracle::reference_logit(pf.cast<double>(), inst.pixels), 1e-4);
  }
}

TEST(Predict, Deterministic) {
  const auto p = NetworkParams::initialized(2);
  const auto d = seqx::testing::random_dataset(1, 1);
  EXPECT_EQ(predict(p, d.instances()[0]), predict(p, d.instances()[0]));
}

TEST(Predict, NonFiniteActivation) {
  auto p = NetworkParams::initialized(2);
  p.head_bias[0] = std::numeric_limits<float>::quiet_NaN();
  const auto d = seqx::testing::random_dataset(1, 1);
  try {
    predict(p, d.instances()[0]);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteActivation);
  }
}

TEST(ForwardTrace, StructureAndConsistency) {
  const auto p = busy_params(8).cast<float>();
  const auto d = seqx::testing::random_dataset(2, 5);
  for (const auto& inst : d.instances()) {
    const auto tr = forward_trace(p, inst);
    ASSERT_EQ(tr.layers.size(), 7u);
    const LayerKind expected[] = {LayerKind::ConvRelu, LayerKind::BatchNorm, LayerKind::MaxPool, LayerKind::ConvRelu,
                                  LayerKind::BatchNorm, LayerKind::MaxPool, LayerKind::Linear};
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(tr.layers[i].kind, expected[i]);
    EXPECT_EQ(tr.logit, static_cast<float>(predict(p, inst).logit));
    for (std::size_t li : {2u, 5u}) {
      const auto& pool = tr.layers[li];
      const std::size_t side = pool.in_side, half = side / 2;
      ASSERT_EQ(pool.argmax.size(), pool.out_channels * half * half);
      for (std::size_t o = 0; o < pool.argmax.size(); ++o) {
        const std::size_t c = o / (half * half), y = (o / half) % half, x = o % half;
        const std::size_t a = pool.argmax[o];
        EXPECT_EQ(a / (side * side), c);
        EXPECT_EQ((a / side) % side / 2, y);
        EXPECT_EQ(a % side / 2, x);
        EXPECT_EQ(pool.output[o], pool.input[a]);
      }
    }
  }
}

TEST(Gradient, ReferenceLossMatchesLibraryLoss) {
  const auto d = seqx::testing::random_dataset(2, 12);
  const ImageInstance* batch[] = {&d.instances()[0], &d.instances()[1], &d.instances()[3]};
  const auto p = busy_params(3);
  BasicNetworkParams<double> g;
  EXPECT_NEAR(loss_and_gradient<double>(p, batch, g), oracle::reference_training_loss(p, batch), 1e-12);
}

TEST(Gradient, SampledCoordinatesMatchFiniteDifferences) {
  const auto corpus = load_corpus(SEQX_DATA_DIR);
  const auto d = select_binary(corpus.raw, corpus.class_a, corpus.class_b);
  const ImageInstance* batch[] = {&d.instances()[0], &d.instances()[3]};
  const auto checks = oracle::gradient_check(busy_params(3), batch, 1e-4, 24, 7);
  ASSERT_EQ(checks.size(), 10u);
  for (const auto& c : checks) {
    EXPECT_GT(c.checked, 0u) << c.name;
    EXPECT_LE(c.relative_error, 1e-3) << c.name;
  }
}

TEST(Train, Errors) {
  try {
    train(LabeledDataset{}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyTrainSet);
  }
  auto d = toy_set(4, 1);
  std::vector<ImageInstance> ones;
  for (const auto& i : d.instances()) {
    if (i.true_label == 1) ones.push_back(i);
  }
  try {
    train(LabeledDataset(ones), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingleClassTrainSet);
  }
}

TEST(Train, DivergedLoss) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = std::numeric_limits<double>::infinity();
  try {
    train(toy_set(8, 2), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::DivergedLoss || e.code() == ErrorCode::NonFiniteActivation);
  }
}

TEST(Train, LossDecreasesOnToySet) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 4;
  const auto result = train(toy_set(32, 3), cfg);
  ASSERT_EQ(result.epoch_losses.size(), 3u);
  for (double l : result.epoch_losses) EXPECT_TRUE(std::isfinite(l));
  EXPECT_LT(result.epoch_losses[1], result.epoch_losses[0]);
  EXPECT_LT(result.epoch_losses[2], result.epoch_losses[1]);
  EXPECT_TRUE(params_valid(result.params));
}

TEST(Train, DeterministicGivenSeed) {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.seed = 9;
  const auto d = toy_set(8, 1);
  EXPECT_EQ(train(d, cfg).params, train(d, cfg).params);
  auto other = cfg;
  other.seed = 10;
  EXPECT_NE(train(d, cfg).params, train(d, other).params);
}

TEST(Train, RunningStatsUpdated) {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  const auto r = train(toy_set(16, 5), cfg);
  EXPECT_NE(r.params.block1.bn.running_mean, std::vector<float>(kConv1Filters, 0.0f));
  for (float v : r.params.block2.bn.running_var) EXPECT_GT(v, 0.0f);
}

TEST(Categorize, OnePerCell) {
  const auto d = seqx::testing::random_dataset(2, 1);  // labels 0,1,0,1
  const std::vector<Prediction> preds = {Prediction::from_logit(-2), Prediction::from_logit(3),
                                         Prediction::from_logit(1), Prediction::from_logit(-1)};
  const auto cats = categorize_predictions(d, preds);
  for (auto p : kPossibilities) EXPECT_EQ(cats[p].size(), 1u) << to_string(p);
  EXPECT_EQ(cats[Possibility::TN][0].id, 0u);
  EXPECT_EQ(cats[Possibility::TP][0].id, 1u);
  EXPECT_EQ(cats[Possibility::FP][0].id, 2u);
  EXPECT_EQ(cats[Possibility::FN][0].id, 3u);
}

TEST(Categorize, RankingAndTies) {
  // All label 0, all predicted 1 (false positives) with errors .9 .8 .7 .2 and a tie.
  std::vector<ImageInstance> v(5);
  for (std::uint32_t i = 0; i < 5; ++i) v[i].id = 10 - i;
  const LabeledDataset d(v);
  auto logit_for = [](double prob) { return std::log(prob / (1 - prob)); };
  const std::vector<Prediction> preds = {Prediction::from_logit(logit_for(0.7)), Prediction::from_logit(logit_for(0.9)),
                                         Prediction::from_logit(logit_for(0.2 + 0.5)), Prediction::from_logit(logit_for(0.8)),
                                         Prediction::from_logit(logit_for(0.6))};
  const auto cats = categorize_predictions(d, preds);
  ASSERT_EQ(cats[Possibility::FP].size(), 5u);
  std::vector<std::uint32_t> order;
  for (const auto& e : cats[Possibility::FP]) order.push_back(e.id);
  // 0.9 -> id 9, 0.8 -> id 7, 0.7 tie between ids 10 and 8 -> ascending, 0.6 -> id 6
  EXPECT_EQ(order, (std::vector<std::uint32_t>{9, 7, 8, 10, 6}));
}

TEST(Categorize, PartitionOfTestSet) {
  const auto d = seqx::testing::random_dataset(20, 4);
  const auto cats = categorize(NetworkParams::initialized(1), d);
  EXPECT_EQ(cats.total(), d.size());
  std::set<std::uint32_t> ids;
  for (const auto& l : cats.lists) {
    for (const auto& e : l) EXPECT_TRUE(ids.insert(e.id).second);
  }
  EXPECT_EQ(ids.size(), d.size());
}

TEST(Categorize, PerfectClassifierHasNoErrors) {
  const auto d = seqx::testing::random_dataset(6, 4);
  std::vector<Prediction> preds;
  for (const auto& i : d.instances()) preds.push_back(Prediction::from_logit(i.true_label ? 2.0 : -2.0));
  const auto cats = categorize_predictions(d, preds);
  EXPECT_TRUE(cats[Possibility::FP].empty());
  EXPECT_TRUE(cats[Possibility::FN].empty());
}

TEST(Checkpoint, RoundTrip) {
  TempDir dir;
  const auto p = busy_params(2).cast<float>();
  save_checkpoint(p, dir / "m.bin");
  EXPECT_EQ(load_checkpoint(dir / "m.bin"), p);
  // magic + version + 5 descriptors + count + 14 sizes + all floats
  std::size_t floats = 0;
  for (const auto& [n, t] : all_tensors(p)) floats += t->size();
  EXPECT_EQ(std::filesystem::file_size(dir / "m.bin"), 8 + 4 * (1 + 5 + 1 + 14) + 4 * floats);
}

TEST(Checkpoint, Rejects) {
  TempDir dir;
  save_checkpoint(NetworkParams::initialized(1), dir / "m.bin");
  auto bytes = std::vector<char>(std::filesystem::file_size(dir / "m.bin"));
  std::ifstream(dir / "m.bin", std::ios::binary).read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  auto expect_bad = [&](std::vector<char> b) {
    std::ofstream(dir / "x.bin", std::ios::binary | std::ios::trunc).write(b.data(), static_cast<std::streamsize>(b.size()));
    try {
      load_checkpoint(dir / "x.bin");
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::BadCheckpoint);
    }
  };
  auto b = bytes;
  b[0] = 'X';
  expect_bad(b);
  b = bytes;
  b[12] = 27;  // input side
  expect_bad(b);
  b = bytes;
  b.resize(b.size() - 3);
  expect_bad(b);
  b = bytes;
  b.push_back(0);
  expect_bad(b);
}
