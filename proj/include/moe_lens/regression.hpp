#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "moe_lens/similarity.hpp"

namespace moe_lens {

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("pearson: length mismatch");
  if (x.size() < 2) throw Error("degenerate regression: fewer than 2 pairs");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("degenerate regression: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct RegressionReport {
  std::size_t layer = 0;
  WeightKind which = WeightKind::act;
  std::vector<std::pair<double, double>> pairs;  // (gate sim, expert sim) for i < j
  double r = 0.0;
  double r2 = 0.0;
};

inline std::vector<double> upper_triangle(const SimilarityMatrix& s) {
  std::vector<double> out;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = i + 1; j < s.size(); ++j) out.push_back(s(i, j));
  return out;
}

/// Pearson R between gate-embedding similarity (X) and neuron-averaged
/// expert similarity (Y) over the N(N-1)/2 expert pairs of one layer.
inline RegressionReport gate_expert_regression(const Checkpoint& ckpt, std::size_t layer, WeightKind which) {
  const auto& cfg = ckpt.config();
  if (layer >= cfg.num_layers) throw Error("layer " + std::to_string(layer) + " out of range");
  if (cfg.is_dense(layer)) throw Error("layer " + std::to_string(layer) + " is dense and has no gate");
  if (cfg.experts_per_layer[layer] < 3) throw Error("gate regression needs at least 3 experts");
  const auto x = upper_triangle(gate_embedding_sim(ckpt, layer));
  const auto y = upper_triangle(neuron_average_sim(ckpt, layer, which));
  RegressionReport rep;
  rep.layer = layer;
  rep.which = which;
  for (std::size_t i = 0; i < x.size(); ++i) rep.pairs.emplace_back(x[i], y[i]);
  rep.r = pearson(x, y);
  rep.r2 = rep.r * rep.r;
  return rep;
}

/// Mean R^2 across layers.
inline double aggregate_r2(std::span<const RegressionReport> reports) {
  if (reports.empty()) throw Error("aggregate_r2: no reports");
  double s = 0.0;
  for (const auto& r : reports) s += r.r2;
  return s / static_cast<double>(reports.size());
}

}  // namespace moe_lens
