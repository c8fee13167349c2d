#include <gtest/gtest.h>

#include "test_helpers.hpp"

using namespace moe_lens;
using namespace test_helpers;

namespace {

Expert with_up(const Matrix& up) {
  const Matrix eye = Matrix::from_rows({{1, 0}, {0, 1}});
  return Expert{up, eye, eye};
}

const Matrix kGate2 = Matrix::from_rows({{1, 0}, {0, 1}});

}  // namespace

TEST(Cosine, KnownValues) {
  const Vector x{1, 0}, y{0, 1}, z{2, 0}, w{1, 1};
  EXPECT_NEAR(cosine_sim(x, y), 0.0, 1e-15);
  EXPECT_NEAR(cosine_sim(x, z), 1.0, 1e-15);
  EXPECT_NEAR(cosine_sim(x, w), 0.707107, 1e-6);
  const Vector zero{0, 0};
  try {
    cosine_sim(x, zero);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("undefined similarity"), std::string::npos);
  }
}

TEST(Angular, KnownValues) {
  const Vector x{1, 0}, y{0, 1}, w{1, 1}, n{-1, 0};
  EXPECT_NEAR(angular_sim(x, x), 1.0, 1e-12);
  EXPECT_NEAR(angular_sim(x, y), 0.5, 1e-12);
  EXPECT_NEAR(angular_sim(x, w), 0.75, 1e-12);
  EXPECT_NEAR(angular_sim(x, n), 0.0, 1e-12);
  EXPECT_NEAR(angular_from_cosine(1.0000000001), 1.0, 1e-12);
}

TEST(MatrixLevel, UpcycledWithoutNoiseIsOne) {
  const auto r = synth_upcycled(spec(ModelConfig::uniform(1, 4, 2, 16, 32, 8), SynthMode::upcycled, 9, 0.0));
  for (auto w : {WeightKind::up, WeightKind::act, WeightKind::down}) {
    const auto s = matrix_level_sim(r.model, 0, w, &*r.reference);
    ASSERT_EQ(s.size(), 5u);
    EXPECT_EQ(s.labels.back(), "F");
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(s(i, j), 1.0, 1e-12);
    EXPECT_NEAR(*s.s_ee, 1.0, 1e-12);
    EXPECT_NEAR(*s.s_ef, 1.0, 1e-12);
  }
}

TEST(MatrixLevel, ScratchIsNearZero) {
  const auto ck = synth_scratch(spec(ModelConfig::uniform(1, 8, 2, 64, 128, 8), SynthMode::scratch, 2));
  const auto s = matrix_level_sim(ck, 0, WeightKind::act);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      if (i != j) {
        EXPECT_LE(std::abs(s(i, j)), 0.15);
      }
  EXPECT_LE(std::abs(*s.s_ee), 0.05);
  EXPECT_FALSE(s.s_ef);
}

TEST(MatrixLevel, MatchesOracleAndIsScaleInvariant) {
  std::mt19937_64 rng(3);
  std::vector<Expert> ex;
  for (int i = 0; i < 3; ++i) ex.push_back(random_expert(rng, 4, 6));
  ex.push_back(ex[0]);
  for (double& v : ex[3].w_down.data()) v *= 2.0;
  const auto ck = single_layer(ex, to_matrix(oracle::random_mat(rng, 4, 4)));
  const auto s = matrix_level_sim(ck, 0, WeightKind::down);
  EXPECT_NEAR(s(0, 3), 1.0, 1e-6);
  // The checkpoint stores f32, so compare against rounded values.
  auto flat = [&](std::size_t n) {
    const auto v = ck.get_tensor(expert_prefix(0, n) + ".w_down").values();
    return oracle::Vec(v.begin(), v.end());
  };
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(s(i, j), oracle::cosine(flat(i), flat(j)), 1e-12);
}

TEST(MatrixLevel, DenseLayerNeedsReference) {
  std::mt19937_64 rng(4);
  const Expert e = random_expert(rng, 3, 5);
  const auto dense = dense_reference(e);
  EXPECT_THROW(matrix_level_sim(dense, 0, WeightKind::up), Error);
  const auto s = matrix_level_sim(dense, 0, WeightKind::up, &dense);
  EXPECT_EQ(s.labels, (std::vector<std::string>{"FFN", "F"}));
  EXPECT_NEAR(s(0, 1), 1.0, 1e-12);
}

TEST(MatrixLevel, DifferentWidthReferenceRejected) {
  std::mt19937_64 rng(5);
  const auto ck = single_layer({random_expert(rng, 3, 5), random_expert(rng, 3, 5)}, to_matrix(oracle::random_mat(rng, 2, 3)));
  const auto ref = dense_reference(random_expert(rng, 3, 7));
  EXPECT_THROW(matrix_level_sim(ck, 0, WeightKind::up, &ref), Error);
  EXPECT_NO_THROW(neuron_average_sim(ck, 0, WeightKind::up, &ref));
}

TEST(NeuronAverage, RowSwapIsInvisible) {
  // Neuron averaging ignores neuron order while flattened cosine does not.
  const Expert e1 = with_up(Matrix::from_rows({{1, 0}, {0, 1}}));
  const Expert e2 = with_up(Matrix::from_rows({{0, 1}, {1, 0}}));
  const Expert f = with_up(Matrix::from_rows({{1, 0}, {-0.5, 0}}));
  const auto ck = single_layer({e1, e2}, kGate2);
  const auto ref = dense_reference(f);

  const auto flat = matrix_level_sim(ck, 0, WeightKind::up, &ref);
  EXPECT_NEAR(flat(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(flat(0, 2), 1.0 / std::sqrt(2.0 * 1.25), 1e-7);

  const auto avg = neuron_average_sim(ck, 0, WeightKind::up, &ref);
  EXPECT_NEAR(avg(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(avg(0, 2), 0.707107, 1e-6);
}

TEST(NeuronAverage, MatchesOracle) {
  std::mt19937_64 rng(6);
  std::vector<Expert> ex;
  for (int i = 0; i < 5; ++i) ex.push_back(random_expert(rng, 4, 7));
  const auto ck = single_layer(ex, to_matrix(oracle::random_mat(rng, 5, 4)));
  for (auto w : {WeightKind::up, WeightKind::act, WeightKind::down}) {
    std::vector<oracle::Vec> means;
    for (std::size_t n = 0; n < 5; ++n) {
      const auto m = to_rows(ck.matrix(expert_prefix(0, n) + "." + (w == WeightKind::up ? "w_up" : w == WeightKind::act ? "w_act" : "w_down")));
      if (w == WeightKind::down) {
        oracle::Vec mean(m.size(), 0.0);
        for (std::size_t r = 0; r < m.size(); ++r)
          for (double v : m[r]) mean[r] += v / static_cast<double>(m[r].size());
        means.push_back(mean);
      } else {
        means.push_back(oracle::row_mean(m));
      }
    }
    const auto s = neuron_average_sim(ck, 0, w);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(s(i, j), oracle::cosine(means[i], means[j]), 1e-12);
  }
}

TEST(GateEmbedding, KnownCases) {
  std::mt19937_64 rng(7);
  const Expert e = random_expert(rng, 2, 3);
  EXPECT_NEAR(gate_embedding_sim(single_layer({e, e}, kGate2), 0)(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(gate_embedding_sim(single_layer({e, e}, Matrix::from_rows({{1, 2}, {1, 2}})), 0)(0, 1), 1.0, 1e-12);

  const auto g = oracle::random_mat(rng, 4, 2);
  const auto s = gate_embedding_sim(single_layer({e, e, e, e}, to_matrix(g)), 0);
  const auto gf = to_rows(single_layer({e, e, e, e}, to_matrix(g)).matrix(gate_name(0)));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(s(i, j), oracle::cosine(gf[i], gf[j]), 1e-12);

  EXPECT_THROW(gate_embedding_sim(dense_reference(e), 0), Error);
}

TEST(SimilarityMatrix, MaskedZeroVectors) {
  std::vector<Entity> ents{{"a", EntityKind::expert, {1, 0}}, {"b", EntityKind::expert, {0, 0}},
                           {"c", EntityKind::expert, {1, 1}}};
  EXPECT_THROW(similarity_matrix(ents, Metric::cosine), Error);
  const auto s = similarity_matrix(ents, Metric::angular, /*mask_zero=*/true);
  EXPECT_TRUE(is_masked(s(0, 1)));
  EXPECT_TRUE(is_masked(s(1, 1)));
  EXPECT_NEAR(s(0, 2), 0.75, 1e-12);
  EXPECT_NEAR(*s.s_ee, 0.75, 1e-12);
}
