#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "moe_lens/moe_core.hpp"
#include "moe_lens/similarity.hpp"

namespace moe_lens {

namespace detail {

inline const LayerTrace& layer_of(const TokenTrace& t, std::size_t layer) {
  if (layer >= t.per_layer.size()) throw Error("layer " + std::to_string(layer) + " out of range");
  return t.per_layer[layer];
}

/// Routed outputs (E<n>, "*" when selected), shared outputs (S<m>) and the
/// reference output (F) of one traced layer.
inline std::vector<Entity> output_entities(const LayerTrace& lt, bool mark_selected) {
  std::vector<Entity> out;
  for (std::size_t n = 0; n < lt.expert_outputs.size(); ++n) {
    std::string label = lt.dense ? "FFN" : "E" + std::to_string(n);
    if (mark_selected && !lt.dense && std::ranges::find(lt.selected, n) != lt.selected.end()) label += "*";
    out.push_back({label, EntityKind::expert, lt.expert_outputs[n]});
  }
  for (std::size_t m = 0; m < lt.shared_outputs.size(); ++m)
    out.push_back({"S" + std::to_string(m), EntityKind::shared, lt.shared_outputs[m]});
  if (lt.reference_output) out.push_back({"F", EntityKind::reference, *lt.reference_output});
  return out;
}

/// 0-based ascending ranks; ties go to the lower index.
inline std::vector<std::size_t> ascending_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<std::size_t> rank(v.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

}  // namespace detail

/// Cosine over all expert outputs of one token at one layer. Pairs touching
/// a zero output are masked (NaN).
inline SimilarityMatrix output_sim_per_token(const TokenTrace& trace, std::size_t layer) {
  return similarity_matrix(detail::output_entities(detail::layer_of(trace, layer), true), Metric::cosine,
                           /*mask_zero=*/true);
}

/// Element-wise mean of per-token angular similarity matrices, accumulated
/// in token order. A cell is averaged over the tokens where it is defined.
inline SimilarityMatrix avg_output_sim(std::span<const TokenTrace> traces, std::size_t layer) {
  if (traces.empty()) throw Error("avg_output_sim: empty corpus");
  SimilarityMatrix acc;
  Matrix sum, count;
  for (const auto& t : traces) {
    const SimilarityMatrix s = similarity_matrix(detail::output_entities(detail::layer_of(t, layer), false),
                                                 Metric::angular, /*mask_zero=*/true);
    if (sum.empty()) {
      acc.labels = s.labels;
      acc.kinds = s.kinds;
      sum = Matrix(s.size(), s.size(), 0.0);
      count = Matrix(s.size(), s.size(), 0.0);
    } else if (s.size() != sum.rows()) {
      throw Error("avg_output_sim: traces disagree on expert count");
    }
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = 0; j < s.size(); ++j)
        if (!is_masked(s(i, j))) {
          sum(i, j) += s(i, j);
          count(i, j) += 1.0;
        }
  }
  acc.metric = Metric::angular;
  acc.values = Matrix(sum.rows(), sum.cols(), kMasked);
  for (std::size_t i = 0; i < sum.rows(); ++i)
    for (std::size_t j = 0; j < sum.cols(); ++j)
      if (count(i, j) > 0.0) acc.values(i, j) = sum(i, j) / count(i, j);
  acc.summarize();
  return acc;
}

inline Vector expert_norms(const TokenTrace& trace, std::size_t layer) {
  const auto& lt = detail::layer_of(trace, layer);
  Vector out;
  for (const auto& y : lt.expert_outputs) out.push_back(l2_norm(y));
  return out;
}

/// counts[i][j]: events where the expert with norm rank i had score rank j
/// (0-based here; rank 0 is the smallest value).
struct RankCountMatrix {
  std::size_t n = 0;
  std::vector<std::vector<std::uint64_t>> counts;
  std::uint64_t events = 0;

  bool is_diagonal() const {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j && counts[i][j] != 0) return false;
    return true;
  }
};

/// Ranks experts by output norm and by gate score normalized over all N
/// experts (k = N), for every (token, layer) event.
inline RankCountMatrix rank_count_matrix(std::span<const TokenTrace> traces, std::span<const std::size_t> layers,
                                         GatingOrder order) {
  RankCountMatrix m;
  for (const auto& t : traces) {
    for (std::size_t layer : layers) {
      const auto& lt = detail::layer_of(t, layer);
      if (lt.dense) throw Error("rank counts need MoE layers; layer " + std::to_string(layer) + " is dense");
      const std::size_t n = lt.expert_outputs.size();
      if (m.n == 0) {
        m.n = n;
        m.counts.assign(n, std::vector<std::uint64_t>(n, 0));
      } else if (n != m.n) {
        throw Error("selected layers have different expert counts");
      }
      const Vector scores = gate_from_logits(lt.gate_logits, n, order).scores;
      const auto norm_rank = detail::ascending_ranks(expert_norms(t, layer));
      const auto score_rank = detail::ascending_ranks(scores);
      for (std::size_t e = 0; e < n; ++e) ++m.counts[norm_rank[e]][score_rank[e]];
      ++m.events;
    }
  }
  return m;
}

struct ActivationRatio {
  std::vector<Vector> per_layer_expert;  // [layer][expert] fraction above threshold
  double overall = 0.0;
};

/// Fraction of intermediate-state entries with |value| > threshold.
inline ActivationRatio activation_ratio(std::span<const TokenTrace> traces, double threshold = 0.001) {
  if (!(threshold >= 0.0)) throw Error("activation ratio threshold must be nonnegative");
  std::vector<std::vector<std::uint64_t>> above, total;
  std::uint64_t all_above = 0, all_total = 0;
  for (const auto& t : traces) {
    if (above.size() < t.per_layer.size()) {
      above.resize(t.per_layer.size());
      total.resize(t.per_layer.size());
    }
    for (std::size_t l = 0; l < t.per_layer.size(); ++l) {
      const auto& inter = t.per_layer[l].intermediates;
      if (above[l].size() < inter.size()) {
        above[l].resize(inter.size(), 0);
        total[l].resize(inter.size(), 0);
      }
      for (std::size_t e = 0; e < inter.size(); ++e) {
        const auto c = static_cast<std::uint64_t>(
            std::ranges::count_if(inter[e], [&](double v) { return std::abs(v) > threshold; }));
        above[l][e] += c;
        total[l][e] += inter[e].size();
        all_above += c;
        all_total += inter[e].size();
      }
    }
  }
  ActivationRatio r;
  for (std::size_t l = 0; l < above.size(); ++l) {
    Vector row;
    for (std::size_t e = 0; e < above[l].size(); ++e)
      row.push_back(total[l][e] ? static_cast<double>(above[l][e]) / static_cast<double>(total[l][e]) : 0.0);
    r.per_layer_expert.push_back(std::move(row));
  }
  r.overall = all_total ? static_cast<double>(all_above) / static_cast<double>(all_total) : 0.0;
  return r;
}

/// Same computation on raw intermediate vectors.
inline double activation_ratio(std::span<const Vector> intermediates, double threshold = 0.001) {
  if (!(threshold >= 0.0)) throw Error("activation ratio threshold must be nonnegative");
  std::uint64_t above = 0, total = 0;
  for (const auto& v : intermediates) {
    above += static_cast<std::uint64_t>(std::ranges::count_if(v, [&](double x) { return std::abs(x) > threshold; }));
    total += v.size();
  }
  return total ? static_cast<double>(above) / static_cast<double>(total) : 0.0;
}

struct RoutingEntry {
  std::size_t token_index = 0;
  std::size_t token_id = 0;
  std::size_t layer = 0;
  std::vector<std::size_t> selected;
  Vector scores;  // aligned with selected
};

using RoutingLog = std::vector<RoutingEntry>;

/// Selected experts and their post-normalization scores per token and MoE layer.
inline RoutingLog routing_pattern(std::span<const TokenTrace> traces) {
  RoutingLog log;
  for (std::size_t t = 0; t < traces.size(); ++t) {
    for (std::size_t l = 0; l < traces[t].per_layer.size(); ++l) {
      const auto& lt = traces[t].per_layer[l];
      if (lt.dense) continue;
      RoutingEntry e{t, traces[t].token_id, l, lt.selected, {}};
      for (std::size_t n : lt.selected) e.scores.push_back(lt.gate_scores[n]);
      log.push_back(std::move(e));
    }
  }
  return log;
}

/// |sigma(W_act h)| per routed expert, [N, d_mid].
inline Matrix intermediate_heatmap(const TokenTrace& trace, std::size_t layer) {
  const auto& lt = detail::layer_of(trace, layer);
  Matrix m = Matrix::from_row_vectors(lt.intermediates);
  for (double& v : m.data()) v = std::abs(v);
  return m;
}

}  // namespace moe_lens
