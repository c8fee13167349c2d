#include <gtest/gtest.h>

#include "test_helpers.hpp"

using namespace moe_lens;
using namespace test_helpers;

namespace {

TokenTrace hand_trace(std::vector<Vector> outputs, std::vector<std::size_t> selected, Vector logits = {}) {
  LayerTrace lt;
  lt.expert_outputs = std::move(outputs);
  lt.selected = std::move(selected);
  lt.gate_logits = logits.empty() ? Vector(lt.expert_outputs.size(), 0.0) : logits;
  lt.gate_scores = Vector(lt.expert_outputs.size(), 0.0);
  TokenTrace t;
  t.per_layer.push_back(lt);
  return t;
}

std::vector<std::size_t> token_range(std::size_t n, std::size_t vocab) {
  std::vector<std::size_t> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back((i * 7 + 3) % vocab);
  return t;
}

}  // namespace

TEST(OutputSim, MasksZeroOutputsAndMarksSelected) {
  const auto t = hand_trace({{1, 0}, {0, 0}, {1, 1}}, {2});
  const auto s = output_sim_per_token(t, 0);
  EXPECT_EQ(s.labels, (std::vector<std::string>{"E0", "E1", "E2*"}));
  EXPECT_TRUE(is_masked(s(0, 1)));
  EXPECT_TRUE(is_masked(s(1, 2)));
  EXPECT_NEAR(s(0, 2), 0.707107, 1e-6);
  EXPECT_EQ(s.metric, Metric::cosine);
}

TEST(OutputSim, SharedAndReferenceLabels) {
  auto t = hand_trace({{1, 0}, {0, 1}}, {0});
  t.per_layer[0].shared_outputs = {{1, 1}};
  t.per_layer[0].reference_output = Vector{2, 0};
  const auto s = output_sim_per_token(t, 0);
  EXPECT_EQ(s.labels, (std::vector<std::string>{"E0*", "E1", "S0", "F"}));
  EXPECT_NEAR(*s.s_ef, 0.5, 1e-12);  // mean of cos(E0,F)=1 and cos(E1,F)=0
}

TEST(AvgOutputSim, SingleTokenIsAngularOfThatToken) {
  const std::vector<TokenTrace> ts{hand_trace({{1, 0}, {0, 1}, {1, 1}}, {0})};
  const auto s = avg_output_sim(ts, 0);
  EXPECT_EQ(s.metric, Metric::angular);
  EXPECT_NEAR(s(0, 1), 0.5, 1e-12);
  EXPECT_NEAR(s(0, 2), 0.75, 1e-12);
  EXPECT_EQ(s.labels[0], "E0");
}

TEST(AvgOutputSim, AveragesOverDefinedTokens) {
  const std::vector<TokenTrace> ts{hand_trace({{1, 0}, {1, 0}}, {0}), hand_trace({{1, 0}, {-1, 0}}, {0}),
                                   hand_trace({{1, 0}, {0, 0}}, {0})};
  const auto s = avg_output_sim(ts, 0);
  EXPECT_NEAR(s(0, 1), 0.5, 1e-12);  // (1 + 0) / 2; third token masked
}

TEST(AvgOutputSim, IdenticalTokensAndPermutationInvariance) {
  const auto ck = synth_scratch(spec(ModelConfig::uniform(2, 4, 2, 8, 16, 16), SynthMode::scratch, 51));
  const auto tokens = token_range(12, 16);
  const auto traces = trace_all_experts(ck, tokens);
  const auto one = avg_output_sim(std::span(traces).first(1), 1);
  const std::vector<TokenTrace> repeated(5, traces[0]);
  const auto rep = avg_output_sim(repeated, 1);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(rep(i, j), one(i, j), 1e-12);

  auto shuffled = traces;
  std::mt19937_64 rng(1);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto a = avg_output_sim(traces, 1), b = avg_output_sim(shuffled, 1);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(a(i, j), b(i, j), 1e-12);
      EXPECT_GE(a(i, j), 0.0);
      EXPECT_LE(a(i, j), 1.0);
    }
}

TEST(AvgOutputSim, UpcycledOutputsMoreAlikeThanScratch) {
  const ModelConfig c = ModelConfig::uniform(1, 8, 2, 32, 64, 64);
  const auto tokens = token_range(100, 64);
  const auto up = synth_upcycled(spec(c, SynthMode::upcycled, 52, 0.3)).model;
  const auto sc = synth_scratch(spec(c, SynthMode::scratch, 52));
  const double s_up = *avg_output_sim(trace_all_experts(up, tokens), 0).s_ee;
  const double s_sc = *avg_output_sim(trace_all_experts(sc, tokens), 0).s_ee;
  EXPECT_GE(s_up, s_sc + 0.2);
}

TEST(ExpertNorms, PythagoreanTriple) {
  const auto t = hand_trace({{3, 4}, {0, 0}}, {0});
  EXPECT_EQ(expert_norms(t, 0), (Vector{5.0, 0.0}));
}

TEST(RankCount, TwoExpertEnumeration) {
  // Larger norm on expert 0, larger logit on expert 1.
  const std::vector<TokenTrace> ts{hand_trace({{2, 0}, {1, 0}}, {1}, {0.0, 1.0})};
  const std::vector<std::size_t> layers{0};
  const auto m = rank_count_matrix(ts, layers, GatingOrder::topk_then_softmax);
  EXPECT_EQ(m.counts[0][1], 1u);
  EXPECT_EQ(m.counts[1][0], 1u);
  EXPECT_EQ(m.counts[0][0], 0u);
  EXPECT_EQ(m.events, 1u);
  EXPECT_FALSE(m.is_diagonal());
}

TEST(RankCount, NormRoutedModelIsDiagonal) {
  for (auto order : {GatingOrder::topk_then_softmax, GatingOrder::softmax_then_topk}) {
    auto s = spec(ModelConfig::uniform(3, 6, 2, 16, 32, 32), SynthMode::scratch, 53);
    s.config.gating_order = order;
    const auto ck = synth_norm_routed(s);
    const auto traces = trace_all_experts(ck, token_range(40, 32));
    const std::vector<std::size_t> layers{0, 1, 2};
    const auto m = rank_count_matrix(traces, layers, order);
    EXPECT_TRUE(m.is_diagonal());
    EXPECT_EQ(m.events, 120u);
    for (std::size_t i = 0; i < m.n; ++i) {
      std::uint64_t row = 0, col = 0;
      for (std::size_t j = 0; j < m.n; ++j) {
        row += m.counts[i][j];
        col += m.counts[j][i];
      }
      EXPECT_EQ(row, m.events);
      EXPECT_EQ(col, m.events);
    }
  }
}

TEST(RankCount, MixedExpertCountsRejected) {
  ModelConfig c = ModelConfig::uniform(2, 4, 2, 8, 16, 8);
  c.experts_per_layer[1] = 6;
  const auto ck = synth_scratch(spec(c, SynthMode::scratch, 54));
  const auto traces = trace_all_experts(ck, token_range(3, 8));
  const std::vector<std::size_t> both{0, 1}, second{1};
  EXPECT_THROW(rank_count_matrix(traces, both, GatingOrder::topk_then_softmax), Error);
  EXPECT_EQ(rank_count_matrix(traces, second, GatingOrder::topk_then_softmax).n, 6u);
}

TEST(ActivationRatio, KnownValueAndMonotone) {
  const std::vector<Vector> v{{0.0005, 0.5, -0.2, 0.0001}};
  EXPECT_DOUBLE_EQ(activation_ratio(v, 0.001), 0.5);
  EXPECT_DOUBLE_EQ(activation_ratio(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(activation_ratio(v, 1.0), 0.0);
  EXPECT_THROW(activation_ratio(v, -1.0), Error);

  const auto ck = synth_scratch(spec(ModelConfig::uniform(2, 4, 2, 8, 16, 8), SynthMode::scratch, 55));
  const auto traces = trace_all_experts(ck, token_range(5, 8));
  double prev = 1.1;
  for (double th : {0.0, 1e-5, 1e-4, 1e-3, 1e-2}) {
    const auto r = activation_ratio(traces, th);
    EXPECT_LE(r.overall, prev);
    prev = r.overall;
    ASSERT_EQ(r.per_layer_expert.size(), 2u);
    EXPECT_EQ(r.per_layer_expert[0].size(), 4u);
  }
}

TEST(ActivationRatio, ZeroIntermediates) {
  auto t = hand_trace({{1, 0}}, {0});
  t.per_layer[0].intermediates = {Vector(8, 0.0)};
  const std::vector<TokenTrace> ts{t};
  EXPECT_DOUBLE_EQ(activation_ratio(ts).overall, 0.0);
}

TEST(RoutingPattern, EntryPerTokenAndLayer) {
  const auto ck = synth_scratch(spec(ModelConfig::uniform(3, 8, 2, 8, 16, 10), SynthMode::scratch, 56));
  const auto traces = trace_all_experts(ck, token_range(5, 10));
  const auto log = routing_pattern(traces);
  ASSERT_EQ(log.size(), 15u);
  for (const auto& e : log) {
    EXPECT_EQ(e.selected.size(), 2u);
    EXPECT_NEAR(e.scores[0] + e.scores[1], 1.0, 1e-12);
    EXPECT_GE(e.scores[0], e.scores[1]);
  }
  EXPECT_EQ(log[3].token_index, 1u);
  EXPECT_EQ(log[3].layer, 0u);
}

TEST(IntermediateHeatmap, AbsoluteValuesPerExpert) {
  auto t = hand_trace({{1, 0}, {0, 1}}, {0});
  t.per_layer[0].intermediates = {{-1, 2, 0}, {0.5, -0.25, 3}};
  const Matrix m = intermediate_heatmap(t, 0);
  EXPECT_EQ(m, Matrix::from_rows({{1, 2, 0}, {0.5, 0.25, 3}}));
  EXPECT_THROW(intermediate_heatmap(t, 1), Error);
}
