#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "moe_lens/error.hpp"
#include "moe_lens/linalg.hpp"
#include "moe_lens/moe_core.hpp"
#include "moe_lens/tensor_store.hpp"

namespace moe_lens {

enum class Metric { cosine, angular };
enum class WeightKind { up, act, down };
enum class EntityKind { expert, shared, reference };

inline std::string to_string(Metric m) { return m == Metric::cosine ? "cosine" : "angular"; }
inline std::string to_string(WeightKind w) {
  switch (w) {
    case WeightKind::up: return "up";
    case WeightKind::act: return "act";
    case WeightKind::down: return "down";
  }
  return "?";
}
inline WeightKind parse_weight_kind(const std::string& s) {
  if (s == "up") return WeightKind::up;
  if (s == "act") return WeightKind::act;
  if (s == "down") return WeightKind::down;
  throw Error("unknown matrix '" + s + "' (expected up|act|down)");
}

inline const Matrix& weight_of(const Expert& e, WeightKind w) {
  switch (w) {
    case WeightKind::up: return e.w_up;
    case WeightKind::act: return e.w_act;
    case WeightKind::down: return e.w_down;
  }
  throw Error("bad weight kind");
}

inline constexpr double kMasked = std::numeric_limits<double>::quiet_NaN();
inline bool is_masked(double v) { return std::isnan(v); }

inline double cosine_sim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error("dimension mismatch in cosine similarity");
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (nu == 0.0 || nv == 0.0) throw Error("undefined similarity: zero vector");
  return dot(u, v) / (nu * nv);
}

/// 1 - arccos(cos)/pi, with the cosine clamped to [-1, 1] first.
inline double angular_from_cosine(double cos) {
  return 1.0 - std::acos(std::clamp(cos, -1.0, 1.0)) / std::numbers::pi;
}

inline double angular_sim(std::span<const double> u, std::span<const double> v) {
  return angular_from_cosine(cosine_sim(u, v));
}

/// Labeled square similarity matrix. Undefined cells hold NaN.
struct SimilarityMatrix {
  std::vector<std::string> labels;
  std::vector<EntityKind> kinds;
  Matrix values;
  Metric metric = Metric::cosine;
  std::optional<double> s_ee;  // mean off-diagonal expert-expert value
  std::optional<double> s_ef;  // mean expert-vs-reference value

  std::size_t size() const { return labels.size(); }
  double operator()(std::size_t i, std::size_t j) const { return values(i, j); }

  void summarize() {
    double ee = 0.0, ef = 0.0;
    std::size_t nee = 0, nef = 0;
    for (std::size_t i = 0; i < size(); ++i) {
      if (kinds[i] != EntityKind::expert) continue;
      for (std::size_t j = 0; j < size(); ++j) {
        const double v = values(i, j);
        if (i == j || is_masked(v)) continue;
        if (kinds[j] == EntityKind::expert) {
          ee += v;
          ++nee;
        } else if (kinds[j] == EntityKind::reference) {
          ef += v;
          ++nef;
        }
      }
    }
    s_ee = nee ? std::optional(ee / static_cast<double>(nee)) : std::nullopt;
    s_ef = nef ? std::optional(ef / static_cast<double>(nef)) : std::nullopt;
  }
};

struct Entity {
  std::string label;
  EntityKind kind = EntityKind::expert;
  Vector vec;
};

/// Pairwise similarity over entities. With mask_zero, pairs touching a zero
/// vector become NaN; otherwise a zero vector is an error.
inline SimilarityMatrix similarity_matrix(const std::vector<Entity>& entities, Metric metric,
                                          bool mask_zero = false) {
  const std::size_t n = entities.size();
  for (const auto& e : entities)
    if (e.vec.size() != entities.front().vec.size())
      throw Error("entities have different lengths ('" + entities.front().label + "' vs '" +
                  e.label + "')");
  SimilarityMatrix s;
  s.metric = metric;
  s.values = Matrix(n, n, kMasked);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.labels.push_back(entities[i].label);
    s.kinds.push_back(entities[i].kind);
    norms[i] = l2_norm(entities[i].vec);
    if (norms[i] == 0.0 && !mask_zero)
      throw Error("undefined similarity: '" + entities[i].label + "' is a zero vector");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (norms[i] == 0.0) continue;
    s.values(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (norms[j] == 0.0) continue;
      const double c = dot(entities[i].vec, entities[j].vec) / (norms[i] * norms[j]);
      const double v = metric == Metric::cosine ? std::clamp(c, -1.0, 1.0) : angular_from_cosine(c);
      s.values(i, j) = s.values(j, i) = v;
    }
  }
  s.summarize();
  return s;
}

/// Neurons of an expert as rows: W_up/W_act rows, or W_down columns.
inline Matrix neuron_vectors(const Expert& e, WeightKind which) {
  return which == WeightKind::down ? e.w_down.transposed() : weight_of(e, which);
}

inline Vector neuron_mean(const Expert& e, WeightKind which) {
  const Matrix nv = neuron_vectors(e, which);
  Vector mean(nv.cols(), 0.0);
  for (std::size_t r = 0; r < nv.rows(); ++r)
    for (std::size_t c = 0; c < nv.cols(); ++c) mean[c] += nv(r, c);
  for (double& m : mean) m /= static_cast<double>(nv.rows());
  return mean;
}

namespace detail {

/// Routed experts of a MoE layer, plus the reference FFN labeled "F" if given.
inline std::vector<std::pair<Entity, Expert>> layer_entities(const Checkpoint& ckpt, std::size_t layer,
                                                             const Checkpoint* reference) {
  const auto& cfg = ckpt.config();
  if (layer >= cfg.num_layers) throw Error("layer " + std::to_string(layer) + " out of range");
  std::vector<std::pair<Entity, Expert>> out;
  if (cfg.is_dense(layer)) {
    if (reference == nullptr)
      throw Error("layer " + std::to_string(layer) + " is dense; pass a reference to compare against");
    out.push_back({Entity{"FFN", EntityKind::expert, {}}, Expert::load(ckpt, ffn_prefix(layer))});
  } else {
    for (std::size_t n = 0; n < cfg.experts_per_layer[layer]; ++n)
      out.push_back({Entity{"E" + std::to_string(n), EntityKind::expert, {}},
                     Expert::load(ckpt, expert_prefix(layer, n))});
  }
  if (reference != nullptr) {
    const auto& rc = reference->config();
    if (layer >= rc.num_layers || !rc.is_dense(layer))
      throw Error("reference has no dense FFN at layer " + std::to_string(layer));
    out.push_back({Entity{"F", EntityKind::reference, {}}, Expert::load(*reference, ffn_prefix(layer))});
  }
  return out;
}

}  // namespace detail

/// Cosine similarity of row-major flattened weight matrices across experts.
inline SimilarityMatrix matrix_level_sim(const Checkpoint& ckpt, std::size_t layer, WeightKind which,
                                         const Checkpoint* reference = nullptr) {
  auto items = detail::layer_entities(ckpt, layer, reference);
  std::vector<Entity> entities;
  for (auto& [ent, expert] : items) {
    if (expert.d_mid() != items.front().second.d_mid())
      throw Error("cannot compare flattened matrices with different d_mid");
    ent.vec = weight_of(expert, which).flat();
    entities.push_back(std::move(ent));
  }
  return similarity_matrix(entities, Metric::cosine);
}

/// Cosine similarity of neuron-averaged vectors (row means for up/act,
/// column means for down).
inline SimilarityMatrix neuron_average_sim(const Checkpoint& ckpt, std::size_t layer, WeightKind which,
                                           const Checkpoint* reference = nullptr) {
  auto items = detail::layer_entities(ckpt, layer, reference);
  std::vector<Entity> entities;
  for (auto& [ent, expert] : items) {
    ent.vec = neuron_mean(expert, which);
    entities.push_back(std::move(ent));
  }
  return similarity_matrix(entities, Metric::cosine);
}

inline SimilarityMatrix gate_embedding_sim(const Checkpoint& ckpt, std::size_t layer) {
  const auto& cfg = ckpt.config();
  if (layer >= cfg.num_layers) throw Error("layer " + std::to_string(layer) + " out of range");
  if (cfg.is_dense(layer)) throw Error("layer " + std::to_string(layer) + " is dense and has no gate");
  const Matrix g = ckpt.matrix(gate_name(layer));
  std::vector<Entity> entities;
  for (std::size_t n = 0; n < g.rows(); ++n) {
    const auto r = g.row(n);
    entities.push_back({"E" + std::to_string(n), EntityKind::expert, Vector(r.begin(), r.end())});
  }
  return similarity_matrix(entities, Metric::cosine);
}

}  // namespace moe_lens
