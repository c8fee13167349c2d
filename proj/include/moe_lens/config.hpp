#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "moe_lens/error.hpp"

namespace moe_lens {

enum class Activation { silu, gelu };
enum class GatingOrder { topk_then_softmax, softmax_then_topk };

inline std::string to_string(Activation a) { return a == Activation::silu ? "silu" : "gelu"; }
inline std::string to_string(GatingOrder g) {
  return g == GatingOrder::topk_then_softmax ? "topk_then_softmax" : "softmax_then_topk";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "silu") return Activation::silu;
  if (s == "gelu") return Activation::gelu;
  throw Error("unknown activation '" + s + "'");
}

inline GatingOrder parse_gating_order(const std::string& s) {
  if (s == "topk_then_softmax") return GatingOrder::topk_then_softmax;
  if (s == "softmax_then_topk") return GatingOrder::softmax_then_topk;
  throw Error("unknown gating order '" + s + "'");
}

using Shape = std::vector<std::size_t>;

/// Architecture hyperparameters. A layer with exactly one expert is a dense
/// FFN layer: it has no gate and no shared experts.
struct ModelConfig {
  std::size_t num_layers = 0;
  std::vector<std::size_t> experts_per_layer;
  std::vector<std::size_t> shared_per_layer;
  std::size_t top_k = 1;
  std::size_t d_hid = 1;
  std::size_t d_mid = 1;
  std::size_t vocab = 1;
  Activation activation = Activation::silu;
  GatingOrder gating_order = GatingOrder::topk_then_softmax;
  bool use_prenorm = true;

  bool is_dense(std::size_t layer) const { return experts_per_layer.at(layer) == 1; }

  /// Uniform MoE config: every layer has `experts` routed experts.
  static ModelConfig uniform(std::size_t layers, std::size_t experts, std::size_t top_k,
                             std::size_t d_hid, std::size_t d_mid, std::size_t vocab,
                             std::size_t shared = 0) {
    ModelConfig c;
    c.num_layers = layers;
    c.experts_per_layer.assign(layers, experts);
    c.shared_per_layer.assign(layers, shared);
    c.top_k = top_k;
    c.d_hid = d_hid;
    c.d_mid = d_mid;
    c.vocab = vocab;
    return c;
  }

  void validate() const {
    if (d_hid == 0 || d_mid == 0 || vocab == 0 || top_k == 0)
      throw Error("config: d_hid, d_mid, vocab and top_k must be positive");
    if (experts_per_layer.size() != num_layers || shared_per_layer.size() != num_layers)
      throw Error("config: per-layer lists must have num_layers entries");
    for (std::size_t i = 0; i < num_layers; ++i) {
      if (experts_per_layer[i] == 0) throw Error("config: layer with zero experts");
      if (is_dense(i)) {
        if (shared_per_layer[i] != 0) throw Error("config: dense layer with shared experts");
      } else if (top_k > experts_per_layer[i]) {
        throw Error("config: top_k exceeds expert count of layer " + std::to_string(i));
      }
    }
  }

  /// Every tensor name the container must hold, with its exact shape.
  std::vector<std::pair<std::string, Shape>> required_tensors() const {
    std::vector<std::pair<std::string, Shape>> out;
    out.emplace_back("embed.weight", Shape{vocab, d_hid});
    auto ffn = [&](const std::string& prefix) {
      out.emplace_back(prefix + ".w_up", Shape{d_mid, d_hid});
      out.emplace_back(prefix + ".w_act", Shape{d_mid, d_hid});
      out.emplace_back(prefix + ".w_down", Shape{d_hid, d_mid});
    };
    for (std::size_t i = 0; i < num_layers; ++i) {
      const std::string layer = "layers." + std::to_string(i);
      if (is_dense(i)) {
        ffn(layer + ".ffn");
        continue;
      }
      out.emplace_back(layer + ".gate.weight", Shape{experts_per_layer[i], d_hid});
      for (std::size_t n = 0; n < experts_per_layer[i]; ++n)
        ffn(layer + ".experts." + std::to_string(n));
      for (std::size_t m = 0; m < shared_per_layer[i]; ++m)
        ffn(layer + ".shared." + std::to_string(m));
    }
    return out;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"num_layers", c.num_layers},
                        {"experts_per_layer", c.experts_per_layer},
                        {"num_shared", c.shared_per_layer},
                        {"top_k", c.top_k},
                        {"d_hid", c.d_hid},
                        {"d_mid", c.d_mid},
                        {"vocab", c.vocab},
                        {"activation", to_string(c.activation)},
                        {"gating_order", to_string(c.gating_order)},
                        {"use_prenorm", c.use_prenorm}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.experts_per_layer = j.at("experts_per_layer").get<std::vector<std::size_t>>();
    c.shared_per_layer = j.at("num_shared").get<std::vector<std::size_t>>();
    c.top_k = j.at("top_k").get<std::size_t>();
    c.d_hid = j.at("d_hid").get<std::size_t>();
    c.d_mid = j.at("d_mid").get<std::size_t>();
    c.vocab = j.at("vocab").get<std::size_t>();
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.gating_order = parse_gating_order(j.at("gating_order").get<std::string>());
    c.use_prenorm = j.at("use_prenorm").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace moe_lens
