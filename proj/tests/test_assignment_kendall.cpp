#include <gtest/gtest.h>

#include "test_helpers.hpp"

using namespace moe_lens;
using namespace test_helpers;

using Perm = std::vector<std::size_t>;

TEST(Assignment, DominantDiagonalGivesIdentity) {
  Matrix s(5, 5, 0.1);
  for (std::size_t i = 0; i < 5; ++i) s(i, i) = 1.0;
  EXPECT_EQ(solve_assignment(s), (Perm{0, 1, 2, 3, 4}));
}

TEST(Assignment, ConstantMatrixGivesIdentity) {
  EXPECT_EQ(solve_assignment(Matrix(4, 4, 0.3)), (Perm{0, 1, 2, 3}));
}

TEST(Assignment, TwoByTwo) {
  const Matrix s = Matrix::from_rows({{0.9, 0.1}, {0.2, 0.8}});
  const auto p = solve_assignment(s);
  EXPECT_EQ(p, (Perm{0, 1}));
  EXPECT_NEAR(assignment_total(s, p), 1.7, 1e-12);
}

TEST(Assignment, MatchesBruteForce) {
  std::mt19937_64 rng(21);
  for (std::size_t n = 2; n <= 6; ++n)
    for (int trial = 0; trial < 100; ++trial) {
      const auto m = oracle::random_mat(rng, n, n);
      const double best = oracle::brute_force_assignment(m);
      const auto p = solve_assignment(to_matrix(m));
      ASSERT_EQ(p.size(), n);
      Perm sorted = p;
      std::ranges::sort(sorted);
      for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(sorted[i], i);
      EXPECT_NEAR(assignment_total(to_matrix(m), p), best, 1e-9) << "n=" << n << " trial=" << trial;
    }
}

TEST(Assignment, MinimizeMode) {
  const Matrix s = Matrix::from_rows({{0.9, 0.1}, {0.2, 0.8}});
  EXPECT_EQ(solve_assignment(s, /*maximize=*/false), (Perm{1, 0}));
}

TEST(Assignment, RejectsBadInput) {
  EXPECT_THROW(solve_assignment(Matrix(2, 3, 0.0)), Error);
  Matrix s(2, 2, 0.0);
  s(0, 1) = std::nan("");
  EXPECT_THROW(solve_assignment(s), Error);
}

TEST(Kendall, KnownValues) {
  const Perm id{0, 1, 2, 3}, rev{3, 2, 1, 0};
  EXPECT_DOUBLE_EQ(kendall_tau(id, id), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau(id, rev), -1.0);
  EXPECT_NEAR(kendall_tau(Perm{0, 1, 2}, Perm{0, 2, 1}), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(kendall_tau_vs_identity(Perm{0, 2, 1}), 1.0 / 3.0, 1e-15);
}

TEST(Kendall, SymmetricAndMatchesPairCount) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 9;
    const auto a = oracle::random_perm(rng, n), b = oracle::random_perm(rng, n);
    const double t = kendall_tau(a, b);
    EXPECT_DOUBLE_EQ(t, kendall_tau(b, a));
    EXPECT_NEAR(t, oracle::kendall_pairs(a, b), 1e-12);
    EXPECT_GE(t, -1.0);
    EXPECT_LE(t, 1.0);
  }
}

TEST(Kendall, RejectsBadInput) {
  EXPECT_THROW(kendall_tau(Perm{0}, Perm{0}), Error);
  EXPECT_THROW(kendall_tau(Perm{0, 1}, Perm{0, 1, 2}), Error);
  EXPECT_THROW(kendall_tau(Perm{0, 0}, Perm{0, 1}), Error);
}

TEST(Reorder, RecoversPermutedClone) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const Expert base = random_expert(rng, 6, 12);
    const auto p = oracle::random_perm(rng, 12);
    const Expert clone = synth_permuted_clone(base, p);
    for (auto w : {WeightKind::up, WeightKind::act, WeightKind::down}) {
      const auto r = reorder_neurons(clone, base, w);
      // clone position p[i] holds base neuron i
      for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(r.permutation[p[i]], i);
      EXPECT_NEAR(r.sim_after, 1.0, 1e-6);
      const auto back = reorder_neurons(base, clone, w);
      EXPECT_EQ(back.permutation, p);
      EXPECT_NEAR(back.tau, oracle::kendall_pairs(p, Perm{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}), 1e-12);
    }
  }
}

TEST(Reorder, SelfPairIsIdentity) {
  std::mt19937_64 rng(24);
  const Expert e = random_expert(rng, 5, 8);
  const auto r = reorder_neurons(e, e, WeightKind::act);
  EXPECT_DOUBLE_EQ(r.tau, 1.0);
  EXPECT_NEAR(r.sim_before, 1.0, 1e-12);
  EXPECT_NEAR(r.sim_after, 1.0, 1e-12);
}

TEST(Reorder, NeverLowersSimilarityOnRandomPairs) {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 100; ++trial) {
    const Expert a = random_expert(rng, 16, 32), b = random_expert(rng, 16, 32);
    const auto r = reorder_neurons(a, b, WeightKind::down);
    EXPECT_GE(r.sim_after, r.sim_before - 1e-9);
  }
}

TEST(Reorder, KeepsIdentityOnNearCopies) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 100; ++trial) {
    const Expert a = random_expert(rng, 16, 6);
    Expert b = a;
    for (auto* m : {&b.w_up, &b.w_act, &b.w_down})
      for (double& v : m->data()) v += std::normal_distribution<double>(0.0, 0.1)(rng);
    const auto r = reorder_neurons(a, b, WeightKind::up);
    EXPECT_GE(r.sim_after, r.sim_before - 1e-9);
    EXPECT_EQ(r.permutation, (Perm{0, 1, 2, 3, 4, 5}));
  }
}

TEST(Reorder, LayerCoversAllPairs) {
  const auto ck = synth_permuted_model(spec(ModelConfig::uniform(1, 4, 1, 6, 10, 3), SynthMode::permuted_clone, 5));
  const auto reps = reorder_layer(ck, 0, WeightKind::act);
  ASSERT_EQ(reps.size(), 6u);
  for (const auto& r : reps) {
    EXPECT_LT(r.expert_a, r.expert_b);
    EXPECT_NEAR(r.sim_after, 1.0, 1e-6);
  }
  const double t = mean_tau(reps);
  EXPECT_GE(t, -1.0);
  EXPECT_LE(t, 1.0);
}
