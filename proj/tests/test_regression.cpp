#include <gtest/gtest.h>

#include "test_helpers.hpp"

using namespace moe_lens;
using namespace test_helpers;

TEST(Pearson, KnownValues) {
  const std::vector<double> x{1, 2, 3};
  EXPECT_NEAR(pearson(x, std::vector<double>{1, 3, 2}), 0.5, 1e-12);
  EXPECT_NEAR(pearson(x, std::vector<double>{7, 5, 3}), -1.0, 1e-12);
  EXPECT_NEAR(pearson(x, x), 1.0, 1e-12);
}

TEST(Pearson, DegenerateInputRejected) {
  try {
    pearson(std::vector<double>{1, 2, 3}, std::vector<double>{4, 4, 4});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate regression"), std::string::npos);
  }
  EXPECT_THROW(pearson(std::vector<double>{1}, std::vector<double>{2}), Error);
  EXPECT_THROW(pearson(std::vector<double>{1, 2}, std::vector<double>{2}), Error);
}

TEST(Pearson, AffineInvariance) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> coef(0.1, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = oracle::random_vec(rng, 10), y = oracle::random_vec(rng, 10);
    const double r = pearson(x, y);
    const double a = coef(rng), b = coef(rng) - 2.5;
    std::vector<double> ys, yn;
    for (double v : y) {
      ys.push_back(a * v + b);
      yn.push_back(-a * v + b);
    }
    EXPECT_NEAR(pearson(x, ys), r, 1e-12);
    EXPECT_NEAR(pearson(x, yn), -r, 1e-12);
  }
}

TEST(GateRegression, GateWiredToActMeanGivesOne) {
  const auto ck = wire_gate_to_act_mean(
      synth_scratch(spec(ModelConfig::uniform(2, 6, 2, 16, 32, 8), SynthMode::scratch, 12)));
  std::vector<RegressionReport> reps;
  for (std::size_t l = 0; l < 2; ++l) {
    reps.push_back(gate_expert_regression(ck, l, WeightKind::act));
    EXPECT_NEAR(reps.back().r, 1.0, 1e-5);
    EXPECT_NEAR(reps.back().r2, reps.back().r * reps.back().r, 1e-15);
    EXPECT_EQ(reps.back().pairs.size(), 15u);
  }
  EXPECT_NEAR(aggregate_r2(reps), 1.0, 1e-5);
}

TEST(GateRegression, PairsMatchSimilarityMatrices) {
  const auto ck = synth_scratch(spec(ModelConfig::uniform(1, 4, 2, 8, 16, 8), SynthMode::scratch, 13));
  const auto rep = gate_expert_regression(ck, 0, WeightKind::up);
  const auto g = gate_embedding_sim(ck, 0);
  const auto n = neuron_average_sim(ck, 0, WeightKind::up);
  ASSERT_EQ(rep.pairs.size(), 6u);
  std::size_t k = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j, ++k) {
      EXPECT_EQ(rep.pairs[k].first, g(i, j));
      EXPECT_EQ(rep.pairs[k].second, n(i, j));
    }
}

TEST(GateRegression, TooFewExpertsRejected) {
  const auto ck = synth_scratch(spec(ModelConfig::uniform(1, 2, 1, 4, 8, 4), SynthMode::scratch, 1));
  EXPECT_THROW(gate_expert_regression(ck, 0, WeightKind::up), Error);
}

TEST(AggregateR2, Mean) {
  RegressionReport a, b;
  a.r2 = 0.4;
  EXPECT_NEAR(aggregate_r2(std::vector<RegressionReport>{a}), 0.4, 1e-15);
  a.r2 = 0.2;
  b.r2 = 0.6;
  EXPECT_NEAR(aggregate_r2(std::vector<RegressionReport>{a, b}), 0.4, 1e-15);
  EXPECT_THROW(aggregate_r2(std::vector<RegressionReport>{}), Error);
}
