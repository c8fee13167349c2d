#pragma once

#include <numeric>
#include <vector>

#include "moe_lens/assignment.hpp"
#include "moe_lens/kendall.hpp"
#include "moe_lens/moe_core.hpp"
#include "moe_lens/similarity.hpp"

namespace moe_lens {

struct ReorderReport {
  std::size_t layer = 0;
  std::size_t expert_a = 0;
  std::size_t expert_b = 0;
  WeightKind which = WeightKind::up;
  std::vector<std::size_t> permutation;  // permutation[i] = neuron of b placed at a's position i
  double sim_before = 0.0;
  double sim_after = 0.0;
  double tau = 1.0;
  double assignment_score = 0.0;  // summed neuron-pair cosine of the chosen assignment
};

/// d_mid x d_mid cosine between neuron i of a and neuron j of b. A zero-norm
/// neuron scores 0 against every partner.
inline Matrix neuron_pair_similarity(const Expert& a, const Expert& b, WeightKind which) {
  const Matrix na = neuron_vectors(a, which);
  const Matrix nb = neuron_vectors(b, which);
  Matrix s(na.rows(), nb.rows(), 0.0);
  std::vector<double> norm_b(nb.rows());
  for (std::size_t j = 0; j < nb.rows(); ++j) norm_b[j] = l2_norm(nb.row(j));
  for (std::size_t i = 0; i < na.rows(); ++i) {
    const double norm_a = l2_norm(na.row(i));
    if (norm_a == 0.0) continue;
    for (std::size_t j = 0; j < nb.rows(); ++j)
      if (norm_b[j] != 0.0) s(i, j) = dot(na.row(i), nb.row(j)) / (norm_a * norm_b[j]);
  }
  return s;
}

/// Copy of `which` matrix of e with neurons placed in the given order.
inline Matrix apply_neuron_order(const Expert& e, WeightKind which, std::span<const std::size_t> order) {
  const Matrix& w = weight_of(e, which);
  Matrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (which == WeightKind::down)
      for (std::size_t r = 0; r < w.rows(); ++r) out(r, i) = w(r, order[i]);
    else
      for (std::size_t c = 0; c < w.cols(); ++c) out(i, c) = w(order[i], c);
  }
  return out;
}

/// Finds the neuron assignment of b onto a maximizing the summed neuron-pair
/// cosine, then reports flattened-matrix cosine before and after applying it.
inline ReorderReport reorder_neurons(const Expert& a, const Expert& b, WeightKind which) {
  if (a.d_mid() != b.d_mid() || a.d_hid() != b.d_hid())
    throw Error("reorder needs experts of equal d_mid and d_hid");
  const Matrix pair_sim = neuron_pair_similarity(a, b, which);
  ReorderReport r;
  r.which = which;
  r.permutation = solve_assignment(pair_sim, /*maximize=*/true);
  r.assignment_score = assignment_total(pair_sim, r.permutation);
  const Vector& flat_a = weight_of(a, which).flat();
  r.sim_before = cosine_sim(flat_a, weight_of(b, which).flat());
  r.sim_after = cosine_sim(flat_a, apply_neuron_order(b, which, r.permutation).flat());
  r.tau = r.permutation.size() >= 2 ? kendall_tau_vs_identity(r.permutation) : 1.0;
  return r;
}

/// Reports for every expert pair (a < b) of a MoE layer.
inline std::vector<ReorderReport> reorder_layer(const Checkpoint& ckpt, std::size_t layer, WeightKind which) {
  const LayerWeights w = load_layer(ckpt, layer);
  if (w.dense) throw Error("layer " + std::to_string(layer) + " is dense");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < w.experts.size(); ++a)
    for (std::size_t b = a + 1; b < w.experts.size(); ++b) pairs.emplace_back(a, b);
  std::vector<ReorderReport> out(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t p) {
    auto [a, b] = pairs[p];
    out[p] = reorder_neurons(w.experts[a], w.experts[b], which);
    out[p].layer = layer;
    out[p].expert_a = a;
    out[p].expert_b = b;
  });
  return out;
}

inline double mean_tau(std::span<const ReorderReport> reports) {
  if (reports.empty()) throw Error("no reorder reports to average");
  double s = 0.0;
  for (const auto& r : reports) s += r.tau;
  return s / static_cast<double>(reports.size());
}

}  // namespace moe_lens
