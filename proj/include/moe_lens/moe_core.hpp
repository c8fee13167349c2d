#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "moe_lens/config.hpp"
#include "moe_lens/error.hpp"
#include "moe_lens/linalg.hpp"
#include "moe_lens/tensor_store.hpp"

namespace moe_lens {

// ---------------------------------------------------------------------------
// Parameters

/// Gated feed-forward expert. Neuron i is (w_up row i, w_act row i, w_down column i).
struct Expert {
  Matrix w_up;    // [d_mid, d_hid]
  Matrix w_act;   // [d_mid, d_hid]
  Matrix w_down;  // [d_hid, d_mid]

  std::size_t d_hid() const { return w_up.cols(); }
  std::size_t d_mid() const { return w_up.rows(); }

  static Expert load(const Checkpoint& ckpt, const std::string& prefix) {
    return Expert{ckpt.matrix(prefix + ".w_up"), ckpt.matrix(prefix + ".w_act"),
                  ckpt.matrix(prefix + ".w_down")};
  }

  void store(TensorMap& out, const std::string& prefix) const {
    out[prefix + ".w_up"] = Tensor::from_matrix(w_up);
    out[prefix + ".w_act"] = Tensor::from_matrix(w_act);
    out[prefix + ".w_down"] = Tensor::from_matrix(w_down);
  }

  friend bool operator==(const Expert&, const Expert&) = default;
};

struct GateParams {
  Matrix w_g;  // [N, d_hid]
};

struct LayerWeights {
  bool dense = false;
  GateParams gate;              // empty for dense layers
  std::vector<Expert> experts;  // routed experts; the FFN for dense layers
  std::vector<Expert> shared;
};

inline std::string layer_prefix(std::size_t layer) { return "layers." + std::to_string(layer); }
inline std::string expert_prefix(std::size_t layer, std::size_t n) {
  return layer_prefix(layer) + ".experts." + std::to_string(n);
}
inline std::string shared_prefix(std::size_t layer, std::size_t m) {
  return layer_prefix(layer) + ".shared." + std::to_string(m);
}
inline std::string ffn_prefix(std::size_t layer) { return layer_prefix(layer) + ".ffn"; }
inline std::string gate_name(std::size_t layer) { return layer_prefix(layer) + ".gate.weight"; }

inline LayerWeights load_layer(const Checkpoint& ckpt, std::size_t layer) {
  const auto& cfg = ckpt.config();
  if (layer >= cfg.num_layers) throw Error("layer " + std::to_string(layer) + " out of range");
  LayerWeights w;
  w.dense = cfg.is_dense(layer);
  if (w.dense) {
    w.experts.push_back(Expert::load(ckpt, ffn_prefix(layer)));
    return w;
  }
  w.gate.w_g = ckpt.matrix(gate_name(layer));
  for (std::size_t n = 0; n < cfg.experts_per_layer[layer]; ++n)
    w.experts.push_back(Expert::load(ckpt, expert_prefix(layer, n)));
  for (std::size_t m = 0; m < cfg.shared_per_layer[layer]; ++m)
    w.shared.push_back(Expert::load(ckpt, shared_prefix(layer, m)));
  return w;
}

/// Checkpoint widened into double-precision parameter structs.
struct Model {
  ModelConfig config;
  Matrix embedding;  // [vocab, d_hid]
  std::vector<LayerWeights> layers;

  static Model from_checkpoint(const Checkpoint& ckpt) {
    Model m{ckpt.config(), ckpt.matrix("embed.weight"), {}};
    for (std::size_t i = 0; i < m.config.num_layers; ++i) m.layers.push_back(load_layer(ckpt, i));
    return m;
  }
};

// ---------------------------------------------------------------------------
// Forward pieces

inline double activation_fn(Activation kind, double x) {
  switch (kind) {
    case Activation::silu:
      return x / (1.0 + std::exp(-x));
    case Activation::gelu:
      return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  return 0.0;
}

struct ExpertOutput {
  Vector y;      // d_hid
  Vector inter;  // sigma(W_act x), d_mid
};

inline ExpertOutput expert_forward(const Expert& e, std::span<const double> x, Activation kind) {
  if (e.w_act.rows() != e.w_up.rows() || e.w_act.cols() != e.w_up.cols() ||
      e.w_down.rows() != e.w_up.cols() || e.w_down.cols() != e.w_up.rows())
    throw Error("dimension mismatch: inconsistent expert matrices");
  ExpertOutput out;
  out.inter = e.w_act.matvec(x);
  for (double& v : out.inter) v = activation_fn(kind, v);
  Vector hidden = e.w_up.matvec(x);
  for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] *= out.inter[i];
  out.y = e.w_down.matvec(hidden);
  return out;
}

struct GateResult {
  Vector logits;
  Vector scores;                      // 0 for unselected experts
  std::vector<std::size_t> selected;  // descending score, ties to the lower index
};

namespace detail {

inline Vector softmax(std::span<const double> v) {
  Vector out(v.size());
  if (v.empty()) return out;
  const double mx = *std::ranges::max_element(v);
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) sum += (out[i] = std::exp(v[i] - mx));
  for (double& o : out) o /= sum;
  return out;
}

inline std::vector<std::size_t> top_k_indices(std::span<const double> v, std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::ranges::stable_sort(idx, [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  idx.resize(k);
  return idx;
}

}  // namespace detail

/// Normalizes logits into gate scores and selects k experts under the given order.
inline GateResult gate_from_logits(Vector logits, std::size_t k, GatingOrder order) {
  const std::size_t n = logits.size();
  if (k == 0 || k > n)
    throw Error("top_k " + std::to_string(k) + " exceeds expert count " + std::to_string(n));
  GateResult g;
  g.scores.assign(n, 0.0);
  if (order == GatingOrder::topk_then_softmax) {
    g.selected = detail::top_k_indices(logits, k);
    Vector chosen(k);
    for (std::size_t i = 0; i < k; ++i) chosen[i] = logits[g.selected[i]];
    const Vector p = detail::softmax(chosen);
    for (std::size_t i = 0; i < k; ++i) g.scores[g.selected[i]] = p[i];
  } else {
    const Vector p = detail::softmax(logits);
    g.selected = detail::top_k_indices(p, k);
    for (std::size_t idx : g.selected) g.scores[idx] = p[idx];
  }
  g.logits = std::move(logits);
  return g;
}

inline GateResult gate_forward(const GateParams& g, std::span<const double> x, std::size_t k,
                               GatingOrder order) {
  return gate_from_logits(g.w_g.matvec(x), k, order);
}

/// RMS normalization without a learned scale.
inline Vector rms_norm(std::span<const double> x, double eps = 1e-6) {
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(std::max<std::size_t>(x.size(), 1));
  const double inv = 1.0 / std::sqrt(ms + eps);
  Vector out(x.begin(), x.end());
  for (double& v : out) v *= inv;
  return out;
}

/// One layer's contribution: gate decision plus the outputs that were combined.
struct LayerStep {
  Vector h;  // post-norm input seen by gate and experts
  Vector z_out;
  GateResult gate;
  std::vector<std::optional<ExpertOutput>> routed;  // engaged only for selected experts
  std::vector<ExpertOutput> shared;
};

struct ForwardOptions {
  /// Route every token to all experts of each MoE layer (top-k = N).
  bool all_experts = false;
};

inline LayerStep moe_layer_forward(const LayerWeights& w, std::span<const double> x,
                                   const ModelConfig& cfg, const ForwardOptions& opts = {}) {
  if (x.size() != cfg.d_hid) throw Error("dimension mismatch: input is not d_hid");
  LayerStep step;
  step.h = cfg.use_prenorm ? rms_norm(x) : Vector(x.begin(), x.end());
  step.z_out.assign(x.begin(), x.end());
  step.routed.resize(w.experts.size());

  if (w.dense) {
    step.gate.logits = {0.0};
    step.gate.scores = {1.0};
    step.gate.selected = {0};
  } else {
    const std::size_t k = opts.all_experts ? w.experts.size() : cfg.top_k;
    step.gate = gate_forward(w.gate, step.h, k, cfg.gating_order);
  }
  for (std::size_t n : step.gate.selected) {
    step.routed[n] = expert_forward(w.experts[n], step.h, cfg.activation);
    axpy(step.gate.scores[n], step.routed[n]->y, step.z_out);
  }
  for (const auto& s : w.shared) {
    step.shared.push_back(expert_forward(s, step.h, cfg.activation));
    axpy(1.0, step.shared.back().y, step.z_out);
  }
  return step;
}

// ---------------------------------------------------------------------------
// Whole model

struct ForwardRecord {
  Vector embedding;                 // z_0
  std::vector<Vector> layer_inputs;   // z_0 .. z_{L-1}
  std::vector<Vector> layer_outputs;  // z_1 .. z_L
  std::vector<GateResult> gates;
};

inline ForwardRecord forward_token(const Model& model, std::size_t token,
                                   const ForwardOptions& opts = {}) {
  if (token >= model.config.vocab)
    throw Error("token id " + std::to_string(token) + " out of range (vocab " +
                std::to_string(model.config.vocab) + ")");
  ForwardRecord rec;
  const auto row = model.embedding.row(token);
  rec.embedding.assign(row.begin(), row.end());
  Vector z = rec.embedding;
  for (const auto& layer : model.layers) {
    rec.layer_inputs.push_back(z);
    LayerStep step = moe_layer_forward(layer, z, model.config, opts);
    z = std::move(step.z_out);
    rec.layer_outputs.push_back(z);
    rec.gates.push_back(std::move(step.gate));
  }
  return rec;
}

/// Worker count for per-token parallelism; MOE_LENS_THREADS caps it.
inline std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MOE_LENS_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
    } catch (const std::exception&) {
      throw Error(std::string("MOE_LENS_THREADS is not an integer: ") + env);
    }
  }
  return n;
}

/// Runs fn(i) for i in [0, count). Each index writes only its own slot, so
/// results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < count; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void check_tokens(const ModelConfig& cfg, std::span<const std::size_t> tokens) {
  for (std::size_t t : tokens)
    if (t >= cfg.vocab)
      throw Error("token id " + std::to_string(t) + " out of range (vocab " +
                  std::to_string(cfg.vocab) + ")");
}

inline std::vector<ForwardRecord> model_forward(const Model& model, std::span<const std::size_t> tokens,
                                                const ForwardOptions& opts = {}) {
  check_tokens(model.config, tokens);
  std::vector<ForwardRecord> out(tokens.size());
  parallel_for(tokens.size(), [&](std::size_t i) { out[i] = forward_token(model, tokens[i], opts); });
  return out;
}

inline std::vector<ForwardRecord> model_forward(const Checkpoint& ckpt, std::span<const std::size_t> tokens,
                                                const ForwardOptions& opts = {}) {
  return model_forward(Model::from_checkpoint(ckpt), tokens, opts);
}

// ---------------------------------------------------------------------------
// Two-stage tracing

struct LayerTrace {
  bool dense = false;
  Vector z_in;
  Vector z_out;
  Vector h;
  std::vector<Vector> expert_outputs;  // all N routed experts
  std::vector<Vector> intermediates;   // sigma(W_act h) per routed expert
  std::vector<Vector> shared_outputs;
  std::optional<Vector> reference_output;  // dense reference FFN on the same h
  Vector gate_logits;
  Vector gate_scores;  // native gating; 0 for unselected
  std::vector<std::size_t> selected;
};

struct TokenTrace {
  std::size_t token_id = 0;
  std::vector<LayerTrace> per_layer;
};

/// Stage one runs the model natively and records every z_i. Stage two feeds
/// each layer its recorded input independently and evaluates all experts.
inline TokenTrace trace_token(const Model& model, std::size_t token, const Model* reference = nullptr,
                              const ForwardOptions& opts = {}) {
  const ForwardRecord stage1 = forward_token(model, token, opts);
  TokenTrace tt;
  tt.token_id = token;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerWeights& w = model.layers[i];
    LayerTrace lt;
    lt.dense = w.dense;
    lt.z_in = stage1.layer_inputs[i];
    lt.z_out = stage1.layer_outputs[i];
    lt.h = model.config.use_prenorm ? rms_norm(lt.z_in) : lt.z_in;
    for (const auto& e : w.experts) {
      ExpertOutput o = expert_forward(e, lt.h, model.config.activation);
      lt.expert_outputs.push_back(std::move(o.y));
      lt.intermediates.push_back(std::move(o.inter));
    }
    for (const auto& s : w.shared)
      lt.shared_outputs.push_back(expert_forward(s, lt.h, model.config.activation).y);
    if (reference != nullptr) {
      if (i >= reference->layers.size() || !reference->layers[i].dense)
        throw Error("reference checkpoint has no dense FFN at layer " + std::to_string(i));
      lt.reference_output = expert_forward(reference->layers[i].experts[0], lt.h,
                                           reference->config.activation).y;
    }
    lt.gate_logits = stage1.gates[i].logits;
    lt.gate_scores = stage1.gates[i].scores;
    lt.selected = stage1.gates[i].selected;
    tt.per_layer.push_back(std::move(lt));
  }
  return tt;
}

inline std::vector<TokenTrace> trace_all_experts(const Model& model, std::span<const std::size_t> tokens,
                                                 const Model* reference = nullptr,
                                                 const ForwardOptions& opts = {}) {
  check_tokens(model.config, tokens);
  if (reference != nullptr && reference->config.d_hid != model.config.d_hid)
    throw Error("reference checkpoint has a different d_hid");
  std::vector<TokenTrace> out(tokens.size());
  parallel_for(tokens.size(),
               [&](std::size_t i) { out[i] = trace_token(model, tokens[i], reference, opts); });
  return out;
}

inline std::vector<TokenTrace> trace_all_experts(const Checkpoint& ckpt, std::span<const std::size_t> tokens) {
  return trace_all_experts(Model::from_checkpoint(ckpt), tokens);
}

/// z_in + sum over selected of score * output + shared outputs.
inline Vector recombine(const LayerTrace& lt) {
  Vector z = lt.z_in;
  for (std::size_t n : lt.selected) axpy(lt.gate_scores[n], lt.expert_outputs[n], z);
  for (const auto& s : lt.shared_outputs) axpy(1.0, s, z);
  return z;
}

// ---------------------------------------------------------------------------
// Corpora

using Corpus = std::vector<std::vector<std::size_t>>;

/// One sequence per line, whitespace-separated decimal token ids. Blank lines are skipped.
inline Corpus parse_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<std::size_t> seq;
    std::string tok;
    while (ss >> tok) {
      if (!std::ranges::all_of(tok, [](char c) { return c >= '0' && c <= '9'; }))
        throw Error("corpus line " + std::to_string(lineno) + ": invalid token '" + tok + "'");
      try {
        seq.push_back(std::stoull(tok));
      } catch (const std::out_of_range&) {
        throw Error("corpus line " + std::to_string(lineno) + ": token id too large");
      }
    }
    if (!seq.empty()) corpus.push_back(std::move(seq));
  }
  return corpus;
}

inline Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus '" + path.string() + "'");
  return parse_corpus(in);
}

inline std::vector<std::size_t> flatten(const Corpus& corpus) {
  std::vector<std::size_t> out;
  for (const auto& seq : corpus) out.insert(out.end(), seq.begin(), seq.end());
  return out;
}

}  // namespace moe_lens
