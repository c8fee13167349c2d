#pragma once

// Synthetic checkpoints with controlled initialization.
//
// Every tensor is drawn from its own named stream (see rng.hpp), so a
// SynthSpec maps to exactly one checkpoint byte string.

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "moe_lens/config.hpp"
#include "moe_lens/error.hpp"
#include "moe_lens/moe_core.hpp"
#include "moe_lens/rng.hpp"
#include "moe_lens/tensor_store.hpp"

namespace moe_lens {

enum class SynthMode { scratch, upcycled, permuted_clone };

inline SynthMode parse_synth_mode(const std::string& s) {
  if (s == "scratch") return SynthMode::scratch;
  if (s == "upcycled") return SynthMode::upcycled;
  if (s == "permuted_clone" || s == "permuted-clone") return SynthMode::permuted_clone;
  throw Error("unknown synth mode '" + s + "'");
}

struct SynthSpec {
  ModelConfig config;
  SynthMode mode = SynthMode::scratch;
  std::uint64_t seed = 0;
  double init_std = 0.02;
  double upcycle_noise_std = 0.0;  // relative to init_std; upcycled mode only

  void validate() const {
    config.validate();
    if (!(init_std > 0.0)) throw Error("init_std must be positive");
    if (!(upcycle_noise_std >= 0.0)) throw Error("upcycle noise must be nonnegative");
  }
};

struct SynthResult {
  Checkpoint model;
  std::optional<Checkpoint> reference;  // dense FFN the experts were copied from
};

inline Matrix gaussian_matrix(std::uint64_t seed, const std::string& stream, std::size_t rows,
                              std::size_t cols, double stddev) {
  auto rng = Xoshiro256::stream(seed, stream);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal(0.0, stddev);
  return m;
}

inline Expert gaussian_expert(std::uint64_t seed, const std::string& prefix, std::size_t d_hid,
                              std::size_t d_mid, double stddev) {
  return Expert{gaussian_matrix(seed, prefix + ".w_up", d_mid, d_hid, stddev),
                gaussian_matrix(seed, prefix + ".w_act", d_mid, d_hid, stddev),
                gaussian_matrix(seed, prefix + ".w_down", d_hid, d_mid, stddev)};
}

inline std::vector<std::size_t> random_permutation(std::uint64_t seed, const std::string& stream,
                                                   std::size_t n) {
  auto rng = Xoshiro256::stream(seed, stream);
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

inline bool is_permutation_of_range(std::span<const std::size_t> p) {
  std::vector<bool> seen(p.size(), false);
  for (std::size_t v : p) {
    if (v >= p.size() || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

/// Moves neuron i of `base` to position perm[i].
inline Expert synth_permuted_clone(const Expert& base, std::span<const std::size_t> perm) {
  if (perm.size() != base.d_mid() || !is_permutation_of_range(perm))
    throw Error("invalid permutation: expected a bijection on [0, d_mid)");
  Expert out = base;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t c = 0; c < base.d_hid(); ++c) {
      out.w_up(perm[i], c) = base.w_up(i, c);
      out.w_act(perm[i], c) = base.w_act(i, c);
      out.w_down(c, perm[i]) = base.w_down(c, i);
    }
  }
  return out;
}

namespace detail {

inline void store_gate_and_embedding(const SynthSpec& spec, TensorMap& t) {
  const auto& c = spec.config;
  t["embed.weight"] =
      Tensor::from_matrix(gaussian_matrix(spec.seed, "embed.weight", c.vocab, c.d_hid, spec.init_std));
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    if (c.is_dense(i)) continue;
    t[gate_name(i)] = Tensor::from_matrix(
        gaussian_matrix(spec.seed, gate_name(i), c.experts_per_layer[i], c.d_hid, spec.init_std));
    for (std::size_t m = 0; m < c.shared_per_layer[i]; ++m)
      gaussian_expert(spec.seed, shared_prefix(i, m), c.d_hid, c.d_mid, spec.init_std)
          .store(t, shared_prefix(i, m));
  }
}

inline Matrix perturbed(const Matrix& base, std::uint64_t seed, const std::string& stream, double stddev) {
  if (stddev == 0.0) return base;
  Matrix out = base;
  auto rng = Xoshiro256::stream(seed, stream + ".noise");
  for (double& v : out.data()) v += rng.normal(0.0, stddev);
  return out;
}

}  // namespace detail

/// All weights i.i.d. normal(0, init_std^2).
inline Checkpoint synth_scratch(const SynthSpec& spec) {
  spec.validate();
  const auto& c = spec.config;
  TensorMap t;
  detail::store_gate_and_embedding(spec, t);
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    if (c.is_dense(i)) {
      gaussian_expert(spec.seed, ffn_prefix(i), c.d_hid, c.d_mid, spec.init_std).store(t, ffn_prefix(i));
      continue;
    }
    for (std::size_t n = 0; n < c.experts_per_layer[i]; ++n)
      gaussian_expert(spec.seed, expert_prefix(i, n), c.d_hid, c.d_mid, spec.init_std)
          .store(t, expert_prefix(i, n));
  }
  return build_checkpoint(c, t);
}

/// Dense config with the same dimensions: one FFN per layer, no gates.
inline ModelConfig dense_reference_config(const ModelConfig& c) {
  ModelConfig d = c;
  d.experts_per_layer.assign(c.num_layers, 1);
  d.shared_per_layer.assign(c.num_layers, 0);
  d.top_k = 1;
  return d;
}

/// Each layer samples one base FFN; every routed expert is the base plus
/// independent normal(0, (noise * init_std)^2) noise. The base FFNs are
/// returned as a dense reference checkpoint.
inline SynthResult synth_upcycled(const SynthSpec& spec) {
  spec.validate();
  const auto& c = spec.config;
  const double noise = spec.upcycle_noise_std * spec.init_std;
  TensorMap t;
  TensorMap ref;
  detail::store_gate_and_embedding(spec, t);
  ref["embed.weight"] = t["embed.weight"];
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    const Expert base =
        gaussian_expert(spec.seed, layer_prefix(i) + ".base", c.d_hid, c.d_mid, spec.init_std);
    base.store(ref, ffn_prefix(i));
    if (c.is_dense(i)) {
      base.store(t, ffn_prefix(i));
      continue;
    }
    for (std::size_t n = 0; n < c.experts_per_layer[i]; ++n) {
      const std::string p = expert_prefix(i, n);
      Expert e{detail::perturbed(base.w_up, spec.seed, p + ".w_up", noise),
               detail::perturbed(base.w_act, spec.seed, p + ".w_act", noise),
               detail::perturbed(base.w_down, spec.seed, p + ".w_down", noise)};
      e.store(t, p);
    }
  }
  return {build_checkpoint(c, t), build_checkpoint(dense_reference_config(c), ref)};
}

/// Scratch model in which every routed expert n > 0 of a layer is a
/// neuron-permuted copy of expert 0.
inline Checkpoint synth_permuted_model(const SynthSpec& spec) {
  spec.validate();
  const auto& c = spec.config;
  TensorMap t;
  detail::store_gate_and_embedding(spec, t);
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    if (c.is_dense(i)) {
      gaussian_expert(spec.seed, ffn_prefix(i), c.d_hid, c.d_mid, spec.init_std).store(t, ffn_prefix(i));
      continue;
    }
    const Expert base = gaussian_expert(spec.seed, expert_prefix(i, 0), c.d_hid, c.d_mid, spec.init_std);
    base.store(t, expert_prefix(i, 0));
    for (std::size_t n = 1; n < c.experts_per_layer[i]; ++n) {
      const auto perm = random_permutation(spec.seed, expert_prefix(i, n) + ".perm", c.d_mid);
      synth_permuted_clone(base, perm).store(t, expert_prefix(i, n));
    }
  }
  return build_checkpoint(c, t);
}

inline SynthResult synthesize(const SynthSpec& spec) {
  switch (spec.mode) {
    case SynthMode::scratch:
      return {synth_scratch(spec), std::nullopt};
    case SynthMode::upcycled:
      return synth_upcycled(spec);
    case SynthMode::permuted_clone:
      return {synth_permuted_model(spec), std::nullopt};
  }
  throw Error("unknown synth mode");
}

// ---------------------------------------------------------------------------
// Constructed models for analysis oracles

/// Replaces each MoE gate row n with the row mean of expert n's W_act.
inline Checkpoint wire_gate_to_act_mean(const Checkpoint& ckpt) {
  const auto& c = ckpt.config();
  TensorMap t = ckpt.to_tensor_map();
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    if (c.is_dense(i)) continue;
    Matrix gate(c.experts_per_layer[i], c.d_hid);
    for (std::size_t n = 0; n < c.experts_per_layer[i]; ++n) {
      const Matrix act = ckpt.matrix(expert_prefix(i, n) + ".w_act");
      for (std::size_t r = 0; r < act.rows(); ++r)
        for (std::size_t col = 0; col < act.cols(); ++col) gate(n, col) += act(r, col);
      for (std::size_t col = 0; col < act.cols(); ++col) gate(n, col) /= static_cast<double>(act.rows());
    }
    t[gate_name(i)] = Tensor::from_matrix(gate);
  }
  return build_checkpoint(c, t);
}

/// Model whose gate logits are a positive multiple of each expert's output
/// norm. Hidden channel 0 is pinned: the embedding sets it to 1 and every
/// W_down has a zero row 0, so it survives all residual updates and stays
/// positive after RMS normalization. Expert n is a shared base expert with
/// W_down scaled by c_n, and gate row n is c_n * e_0, so
/// logit_n = c_n * h[0] and norm_n = c_n * |E_base(h)|.
inline Checkpoint synth_norm_routed(const SynthSpec& spec) {
  spec.validate();
  const auto& c = spec.config;
  if (c.d_hid < 2) throw Error("norm-routed model needs d_hid >= 2");
  TensorMap t;
  Matrix embed = gaussian_matrix(spec.seed, "embed.weight", c.vocab, c.d_hid, spec.init_std);
  for (std::size_t v = 0; v < c.vocab; ++v) embed(v, 0) = 1.0;
  t["embed.weight"] = Tensor::from_matrix(embed);

  auto pin = [](Expert e) {
    for (std::size_t col = 0; col < e.w_down.cols(); ++col) e.w_down(0, col) = 0.0;
    return e;
  };
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    if (c.is_dense(i)) {
      pin(gaussian_expert(spec.seed, ffn_prefix(i), c.d_hid, c.d_mid, spec.init_std)).store(t, ffn_prefix(i));
      continue;
    }
    const std::size_t n_exp = c.experts_per_layer[i];
    const Expert base = pin(gaussian_expert(spec.seed, layer_prefix(i) + ".base", c.d_hid, c.d_mid, spec.init_std));
    const auto order = random_permutation(spec.seed, layer_prefix(i) + ".scale_order", n_exp);
    Matrix gate(n_exp, c.d_hid);
    for (std::size_t n = 0; n < n_exp; ++n) {
      const double scale = 1.0 + 0.5 * static_cast<double>(order[n]);
      Expert e = base;
      for (double& v : e.w_down.data()) v *= scale;
      e.store(t, expert_prefix(i, n));
      gate(n, 0) = scale;
    }
    t[gate_name(i)] = Tensor::from_matrix(gate);
    for (std::size_t m = 0; m < c.shared_per_layer[i]; ++m)
      pin(gaussian_expert(spec.seed, shared_prefix(i, m), c.d_hid, c.d_mid, spec.init_std))
          .store(t, shared_prefix(i, m));
  }
  return build_checkpoint(c, t);
}

}  // namespace moe_lens
