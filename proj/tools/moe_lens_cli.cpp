// moe-lens: command-line front end for checkpoint synthesis and MoE analyses.
//
// Every subcommand writes its artifacts under --out. Exit codes: 0 success,
// 1 validation or I/O failure, 2 unknown subcommand or unexpected arguments.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moe_lens/moe_lens.hpp"

namespace fs = std::filesystem;
using namespace moe_lens;

namespace {

struct Options {
  std::string model;
  std::string out = ".";
  std::string layer = "all";
  std::vector<std::string> which;
  std::string corpus;
  std::string ref;
  double eps = 50.0;
  std::size_t min_pts = 2;
  std::size_t dims = 2;
  double threshold = 0.001;
  std::optional<std::uint64_t> seed;
  std::string k_override;
  std::size_t cell_px = 16;
  bool no_standardize = false;
  std::size_t max_tokens = 0;

  // synth
  std::string mode = "scratch";
  double init_std = 0.02;
  double noise = 0.0;
  std::size_t layers = 2;
  std::vector<std::size_t> experts{8};
  std::size_t shared = 0;
  std::size_t top_k = 2;
  std::size_t d_hid = 64;
  std::size_t d_mid = 128;
  std::size_t vocab = 256;
  std::string activation = "silu";
  std::string gating_order = "topk_then_softmax";
  bool no_prenorm = false;
  std::string construct = "none";
  std::size_t corpus_tokens = 0;
  std::size_t corpus_lines = 1;
};

/// Loaded inputs shared by analysis subcommands.
class Session {
 public:
  Session(const Options& o, std::string command) : opts_(o) {
    prov_.command = std::move(command);
    if (!o.model.empty()) {
      const auto bytes = read_file_bytes(o.model);
      model_ = parse_checkpoint(bytes);
      prov_.checkpoint_digest = digest_hex(bytes);
    }
    if (!o.ref.empty()) ref_ = read_checkpoint(o.ref);
    fs::create_directories(o.out);
  }

  const Checkpoint& model() const {
    if (!model_) throw Error("--model is required");
    return *model_;
  }
  const Checkpoint* ref() const { return ref_ ? &*ref_ : nullptr; }
  const Provenance& prov() const { return prov_; }
  fs::path out(const std::string& name) const { return fs::path(opts_.out) / name; }

  std::vector<std::size_t> layers(bool moe_only) const {
    const auto& cfg = model().config();
    std::vector<std::size_t> out;
    if (opts_.layer == "all") {
      for (std::size_t i = 0; i < cfg.num_layers; ++i)
        if (!moe_only || !cfg.is_dense(i)) out.push_back(i);
      if (out.empty()) throw Error("model has no matching layers");
      return out;
    }
    std::stringstream ss(opts_.layer);
    std::string part;
    while (std::getline(ss, part, ',')) {
      std::size_t pos = 0;
      std::size_t v = 0;
      try {
        v = std::stoull(part, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != part.size()) throw Error("--layer expects an index, a comma list or 'all'");
      if (v >= cfg.num_layers) throw Error("layer " + part + " out of range");
      out.push_back(v);
    }
    return out;
  }

  std::vector<WeightKind> whiches() const {
    if (opts_.which.empty()) return {WeightKind::up, WeightKind::act, WeightKind::down};
    std::vector<WeightKind> out;
    for (const auto& w : opts_.which) out.push_back(parse_weight_kind(w));
    return out;
  }

  const std::vector<TokenTrace>& traces() {
    if (!traces_) {
      if (opts_.corpus.empty()) throw Error("--corpus is required");
      auto tokens = flatten(read_corpus(opts_.corpus));
      if (tokens.empty()) throw Error("corpus is empty");
      if (opts_.max_tokens > 0 && tokens.size() > opts_.max_tokens) tokens.resize(opts_.max_tokens);
      ForwardOptions fo;
      if (!opts_.k_override.empty()) {
        if (opts_.k_override != "all") throw Error("--k-override only accepts 'all'");
        fo.all_experts = true;
      }
      const Model m = Model::from_checkpoint(model());
      std::optional<Model> r;
      if (ref_) r = Model::from_checkpoint(*ref_);
      traces_ = trace_all_experts(m, tokens, r ? &*r : nullptr, fo);
    }
    return *traces_;
  }

  void csv(const CsvTable& t, const std::string& name) const {
    emit_csv(t, out(name), &prov_);
    written_.push_back(name);
  }
  void sim(const SimilarityMatrix& s, const std::string& stem) const {
    csv(to_table(s), stem + ".csv");
    heatmap(s.values, natural_range(s.metric), stem + ".ppm");
  }
  void heatmap(const Matrix& m, ValueRange range, const std::string& name) const {
    emit_heatmap(m, out(name), range, opts_.cell_px, &prov_);
    written_.push_back(name);
  }
  void text(const std::string& body, const std::string& name) const {
    std::string full;
    for (const auto& l : prov_.lines()) full += "# " + l + "\n";
    write_text_atomic(out(name), full + body);
    written_.push_back(name);
  }

  const std::vector<std::string>& written() const { return written_; }

 private:
  const Options& opts_;
  Provenance prov_;
  std::optional<Checkpoint> model_;
  std::optional<Checkpoint> ref_;
  std::optional<std::vector<TokenTrace>> traces_;
  mutable std::vector<std::string> written_;
};

std::string summary_line(const SimilarityMatrix& s) {
  auto fmt = [](std::optional<double> v) { return v ? format_value(*v) : std::string("n/a"); };
  return "S_ee=" + fmt(s.s_ee) + " S_ef=" + fmt(s.s_ef);
}

std::string stem(const std::string& base, std::size_t layer, std::optional<WeightKind> which = {}) {
  std::string s = base + "_L" + std::to_string(layer);
  if (which) s += "_" + to_string(*which);
  return s;
}

// ---------------------------------------------------------------------------

void cmd_synth(const Options& o, const std::string& command) {
  if (!o.seed) throw Error("--seed is required for synth");
  SynthSpec spec;
  spec.mode = parse_synth_mode(o.mode);
  spec.seed = *o.seed;
  spec.init_std = o.init_std;
  spec.upcycle_noise_std = o.noise;
  auto& c = spec.config;
  c.num_layers = o.layers;
  if (o.experts.size() == 1) c.experts_per_layer.assign(o.layers, o.experts[0]);
  else c.experts_per_layer = o.experts;
  c.shared_per_layer.clear();
  for (std::size_t i = 0; i < c.experts_per_layer.size(); ++i)
    c.shared_per_layer.push_back(c.experts_per_layer[i] == 1 ? 0 : o.shared);
  c.top_k = o.top_k;
  c.d_hid = o.d_hid;
  c.d_mid = o.d_mid;
  c.vocab = o.vocab;
  c.activation = parse_activation(o.activation);
  c.gating_order = parse_gating_order(o.gating_order);
  c.use_prenorm = !o.no_prenorm;

  SynthResult res{Checkpoint{}, std::nullopt};
  if (o.construct == "none") {
    res = synthesize(spec);
  } else if (o.construct == "gate-act-mean") {
    res = synthesize(spec);
    res.model = wire_gate_to_act_mean(res.model);
  } else if (o.construct == "norm-routed") {
    res.model = synth_norm_routed(spec);
  } else {
    throw Error("unknown --construct '" + o.construct + "'");
  }

  fs::create_directories(o.out);
  const fs::path model_path = fs::path(o.out) / "model.moel";
  write_checkpoint(res.model, model_path);
  std::string manifest = "model.moel " + checkpoint_digest(res.model) + "\n";
  if (res.reference) {
    write_checkpoint(*res.reference, fs::path(o.out) / "reference.moel");
    manifest += "reference.moel " + checkpoint_digest(*res.reference) + "\n";
  }
  if (o.corpus_tokens > 0) {
    auto rng = Xoshiro256::stream(spec.seed, "corpus");
    std::string corpus;
    const std::size_t lines = std::max<std::size_t>(o.corpus_lines, 1);
    for (std::size_t i = 0; i < o.corpus_tokens; ++i) {
      corpus += std::to_string(rng.below(c.vocab));
      const bool line_end = (i + 1) % ((o.corpus_tokens + lines - 1) / lines) == 0 || i + 1 == o.corpus_tokens;
      corpus += line_end ? "\n" : " ";
    }
    write_text_atomic(fs::path(o.out) / "corpus.txt", corpus);
    manifest += "corpus.txt " + digest_hex(std::as_bytes(std::span(corpus.data(), corpus.size()))) + "\n";
  }
  Provenance prov{command, "", spec.seed};
  std::string full;
  for (const auto& l : prov.lines()) full += "# " + l + "\n";
  write_text_atomic(fs::path(o.out) / "synth_manifest.txt", full + manifest);
  std::cout << manifest;
}

void cmd_matrix_sim(Session& s, bool averaged) {
  for (std::size_t layer : s.layers(/*moe_only=*/s.ref() == nullptr)) {
    for (WeightKind w : s.whiches()) {
      const auto m = averaged ? neuron_average_sim(s.model(), layer, w, s.ref())
                              : matrix_level_sim(s.model(), layer, w, s.ref());
      const auto name = stem(averaged ? "neuron_avg_sim" : "matrix_sim", layer, w);
      s.sim(m, name);
      std::cout << name << ": " << summary_line(m) << "\n";
    }
  }
}

void cmd_reorder(Session& s) {
  CsvTable summary{{"layer", "which", "pairs", "mean_sim_before", "mean_sim_after", "mean_tau"}, {}};
  std::vector<ReorderReport> all;
  for (std::size_t layer : s.layers(true)) {
    for (WeightKind w : s.whiches()) {
      const auto reports = reorder_layer(s.model(), layer, w);
      CsvTable t{{"expert_a", "expert_b", "sim_before", "sim_after", "tau", "assignment_score", "permutation"}, {}};
      double before = 0.0, after = 0.0;
      for (const auto& r : reports) {
        std::string perm;
        for (std::size_t i = 0; i < r.permutation.size(); ++i) perm += (i ? " " : "") + std::to_string(r.permutation[i]);
        t.rows.push_back({std::uint64_t{r.expert_a}, std::uint64_t{r.expert_b}, r.sim_before, r.sim_after, r.tau,
                          r.assignment_score, perm});
        before += r.sim_before;
        after += r.sim_after;
      }
      const double n = static_cast<double>(reports.size());
      s.csv(t, stem("reorder", layer, w) + ".csv");
      summary.rows.push_back({std::uint64_t{layer}, to_string(w), std::uint64_t{reports.size()}, before / n, after / n,
                              mean_tau(reports)});
      all.insert(all.end(), reports.begin(), reports.end());
    }
  }
  summary.rows.push_back({std::string("all"), std::string("all"), std::uint64_t{all.size()}, kMasked, kMasked,
                          mean_tau(all)});
  s.csv(summary, "reorder_summary.csv");
  std::cout << "mean tau over " << all.size() << " pairs: " << format_value(mean_tau(all)) << "\n";
}

void cmd_gate_sim(Session& s) {
  for (std::size_t layer : s.layers(true)) {
    const auto m = gate_embedding_sim(s.model(), layer);
    s.sim(m, stem("gate_sim", layer));
    std::cout << stem("gate_sim", layer) << ": " << summary_line(m) << "\n";
  }
}

void cmd_gate_corr(Session& s) {
  for (WeightKind w : s.whiches()) {
    CsvTable t{{"layer", "R", "R2"}, {}};
    std::vector<RegressionReport> reports;
    for (std::size_t layer : s.layers(true)) {
      auto rep = gate_expert_regression(s.model(), layer, w);
      t.rows.push_back({std::uint64_t{layer}, rep.r, rep.r2});
      CsvTable pairs{{"x_gate_sim", "y_expert_sim"}, {}};
      for (auto [x, y] : rep.pairs) pairs.rows.push_back({x, y});
      s.csv(pairs, stem("gate_corr_pairs", layer, w) + ".csv");
      reports.push_back(std::move(rep));
    }
    const double avg = aggregate_r2(reports);
    t.rows.push_back({std::string("R2_avg"), kMasked, avg});
    s.csv(t, "gate_corr_" + to_string(w) + ".csv");
    std::cout << "gate_corr " << to_string(w) << ": R2_avg=" << format_value(avg) << "\n";
  }
}

void cmd_pca(Session& s, const Options& o) {
  for (WeightKind w : s.whiches()) {
    std::vector<std::string> labels;
    std::vector<Vector> vectors;
    for (std::size_t layer : s.layers(true)) {
      const auto lw = load_layer(s.model(), layer);
      for (std::size_t n = 0; n < lw.experts.size(); ++n) {
        labels.push_back("L" + std::to_string(layer) + "E" + std::to_string(n));
        vectors.push_back(weight_of(lw.experts[n], w).flat());
      }
    }
    const auto p = project_with_outliers(labels, vectors, o.dims, !o.no_standardize, o.eps, o.min_pts);
    CsvTable pts{{"label", "pc1", "pc2"}, {}};
    if (o.dims == 3) pts.header.push_back("pc3");
    for (std::size_t i = 0; i < p.points.size(); ++i) {
      std::vector<Cell> row{p.labels[i]};
      for (double c : p.points[i]) row.emplace_back(c);
      pts.rows.push_back(std::move(row));
    }
    CsvTable var{{"component", "explained_variance"}, {}};
    for (std::size_t c = 0; c < p.explained_variance.size(); ++c)
      var.rows.push_back({"pc" + std::to_string(c + 1), p.explained_variance[c]});
    CsvTable out{{"outlier"}, {}};
    for (const auto& l : p.outliers) out.rows.push_back({l});
    const std::string base = "pca_" + to_string(w);
    s.csv(pts, base + ".csv");
    s.csv(var, base + "_variance.csv");
    s.csv(out, base + "_outliers.csv");
    std::cout << base << ": " << p.points.size() << " points, " << p.outliers.size() << " outliers\n";
  }
}

nlohmann::json trace_json(const std::vector<TokenTrace>& traces) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t t = 0; t < traces.size(); ++t) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& lt : traces[t].per_layer) {
      nlohmann::json j{{"dense", lt.dense},     {"z_in", lt.z_in},
                       {"z_out", lt.z_out},     {"expert_outputs", lt.expert_outputs},
                       {"intermediates", lt.intermediates}, {"shared_outputs", lt.shared_outputs},
                       {"gate_logits", lt.gate_logits},     {"gate_scores", lt.gate_scores},
                       {"selected", lt.selected}};
      if (lt.reference_output) j["reference_output"] = *lt.reference_output;
      layers.push_back(std::move(j));
    }
    arr.push_back({{"token_index", t}, {"token_id", traces[t].token_id}, {"layers", std::move(layers)}});
  }
  return arr;
}

void cmd_trace(Session& s) {
  const auto& traces = s.traces();
  s.text(trace_json(traces).dump() + "\n", "trace.json");
  CsvTable t{{"token_index", "token_id", "layer", "selected", "z_out_norm", "max_recombination_error"}, {}};
  for (std::size_t i = 0; i < traces.size(); ++i)
    for (std::size_t l = 0; l < traces[i].per_layer.size(); ++l) {
      const auto& lt = traces[i].per_layer[l];
      std::string sel;
      for (std::size_t k = 0; k < lt.selected.size(); ++k) sel += (k ? " " : "") + std::to_string(lt.selected[k]);
      const Vector z = recombine(lt);
      double err = 0.0;
      for (std::size_t d = 0; d < z.size(); ++d) err = std::max(err, std::abs(z[d] - lt.z_out[d]));
      t.rows.push_back({std::uint64_t{i}, std::uint64_t{traces[i].token_id}, std::uint64_t{l}, sel, l2_norm(lt.z_out), err});
    }
  s.csv(t, "trace_summary.csv");
  std::cout << "traced " << traces.size() << " tokens\n";
}

void cmd_out_sim(Session& s) {
  const auto& traces = s.traces();
  for (std::size_t t = 0; t < traces.size(); ++t)
    for (std::size_t layer : s.layers(false)) {
      const auto m = output_sim_per_token(traces[t], layer);
      s.sim(m, "out_sim_T" + std::to_string(t) + "_L" + std::to_string(layer));
    }
  std::cout << "wrote per-token output similarity for " << traces.size() << " tokens\n";
}

void cmd_avg_out_sim(Session& s) {
  for (std::size_t layer : s.layers(false)) {
    const auto m = avg_output_sim(s.traces(), layer);
    s.sim(m, stem("avg_out_sim", layer));
    std::cout << stem("avg_out_sim", layer) << ": " << summary_line(m) << "\n";
  }
}

void cmd_norm_rank(Session& s) {
  const auto layers = s.layers(true);
  const auto rc = rank_count_matrix(s.traces(), layers, s.model().config().gating_order);
  std::vector<std::string> labels;
  for (std::size_t i = 1; i <= rc.n; ++i) labels.push_back(std::to_string(i));
  CsvTable t{{"norm_rank\\score_rank"}, {}};
  t.header.insert(t.header.end(), labels.begin(), labels.end());
  Matrix frac(rc.n, rc.n);
  for (std::size_t i = 0; i < rc.n; ++i) {
    std::vector<Cell> row{labels[i]};
    for (std::size_t j = 0; j < rc.n; ++j) {
      row.emplace_back(rc.counts[i][j]);
      frac(i, j) = static_cast<double>(rc.counts[i][j]) / static_cast<double>(rc.events);
    }
    t.rows.push_back(std::move(row));
  }
  s.csv(t, "norm_rank.csv");
  s.heatmap(frac, {0.0, 1.0}, "norm_rank.ppm");
  std::cout << "rank counts over " << rc.events << " events" << (rc.is_diagonal() ? " (diagonal)" : "") << "\n";
}

void cmd_act_ratio(Session& s, const Options& o) {
  const auto& traces = s.traces();
  const auto r = activation_ratio(traces, o.threshold);
  CsvTable t{{"layer", "expert", "fraction"}, {}};
  for (std::size_t l = 0; l < r.per_layer_expert.size(); ++l)
    for (std::size_t e = 0; e < r.per_layer_expert[l].size(); ++e)
      t.rows.push_back({std::uint64_t{l}, std::uint64_t{e}, r.per_layer_expert[l][e]});
  t.rows.push_back({std::string("all"), std::string("all"), r.overall});
  s.csv(t, "act_ratio.csv");
  for (std::size_t layer : s.layers(false)) {
    const Matrix hm = intermediate_heatmap(traces.front(), layer);
    double hi = 0.0;
    for (double v : hm.data()) hi = std::max(hi, v);
    s.heatmap(hm, {0.0, hi > 0.0 ? hi : 1.0}, "intermediate_T0_L" + std::to_string(layer) + ".ppm");
  }
  std::cout << "activation ratio (|v| > " << format_value(o.threshold) << "): " << format_value(r.overall) << "\n";
}

void cmd_route_log(Session& s) {
  const auto log = routing_pattern(s.traces());
  CsvTable t{{"token_index", "token_id", "layer", "rank", "expert", "score"}, {}};
  for (const auto& e : log)
    for (std::size_t k = 0; k < e.selected.size(); ++k)
      t.rows.push_back({std::uint64_t{e.token_index}, std::uint64_t{e.token_id}, std::uint64_t{e.layer},
                        std::uint64_t{k + 1}, std::uint64_t{e.selected[k]}, e.scores[k]});
  s.csv(t, "route_log.csv");
  std::cout << "routing entries: " << log.size() << "\n";
}

void cmd_report(Session& s, const Options& o) {
  cmd_matrix_sim(s, false);
  cmd_matrix_sim(s, true);
  cmd_gate_sim(s);
  const auto& cfg = s.model().config();
  bool regress = true;
  for (std::size_t l : s.layers(true)) regress = regress && cfg.experts_per_layer[l] >= 3;
  if (regress) cmd_gate_corr(s);
  cmd_reorder(s);
  std::size_t samples = 0;
  for (std::size_t l : s.layers(true)) samples += cfg.experts_per_layer[l];
  if (samples > o.dims) cmd_pca(s, o);
  if (!o.corpus.empty()) {
    cmd_trace(s);
    cmd_avg_out_sim(s);
    cmd_norm_rank(s);
    cmd_act_ratio(s, o);
    cmd_route_log(s);
  }
  std::string index;
  for (const auto& w : s.written()) index += w + "\n";
  s.text(index, "report_index.txt");
}

std::string join_argv(int argc, char** argv) {
  std::string out = "moe-lens";
  for (int i = 1; i < argc; ++i) out += std::string(" ") + argv[i];
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moe-lens: Mixture-of-Experts checkpoint introspection"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool needs_model) {
    auto* m = sub->add_option("--model", o.model, "MOEL checkpoint");
    if (needs_model) m->required();
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--layer", o.layer, "layer index, comma list or 'all'")->capture_default_str();
    sub->add_option("--which", o.which, "matrix: up|act|down (repeatable; default all)");
    sub->add_option("--ref", o.ref, "dense reference checkpoint");
    sub->add_option("--cell", o.cell_px, "heatmap pixels per cell")->capture_default_str();
    sub->add_option("--seed", o.seed, "random seed (unused by deterministic analyses)");
  };
  auto add_corpus = [&](CLI::App* sub, bool required) {
    auto* c = sub->add_option("--corpus", o.corpus, "token-id corpus");
    if (required) c->required();
    sub->add_option("--k-override", o.k_override, "'all' routes every token to all experts");
    sub->add_option("--max-tokens", o.max_tokens, "truncate the corpus (0 = no limit)");
  };
  auto add_pca = [&](CLI::App* sub) {
    sub->add_option("--dims", o.dims, "projection dimensions (2 or 3)")->capture_default_str();
    sub->add_option("--eps", o.eps, "DBSCAN radius")->capture_default_str();
    sub->add_option("--min-pts", o.min_pts, "DBSCAN core threshold")->capture_default_str();
    sub->add_flag("--no-standardize", o.no_standardize, "skip per-feature standardization");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic checkpoint");
  synth->add_option("--out", o.out, "output directory")->required();
  synth->add_option("--mode", o.mode, "scratch|upcycled|permuted_clone")->capture_default_str();
  synth->add_option("--seed", o.seed, "random seed")->required();
  synth->add_option("--init-std", o.init_std)->capture_default_str();
  synth->add_option("--noise", o.noise, "upcycling noise, relative to init-std")->capture_default_str();
  synth->add_option("--layers", o.layers)->capture_default_str();
  synth->add_option("--experts", o.experts, "experts per layer (one value or one per layer; 1 = dense)");
  synth->add_option("--shared", o.shared, "shared experts per MoE layer")->capture_default_str();
  synth->add_option("--top-k", o.top_k)->capture_default_str();
  synth->add_option("--d-hid", o.d_hid)->capture_default_str();
  synth->add_option("--d-mid", o.d_mid)->capture_default_str();
  synth->add_option("--vocab", o.vocab)->capture_default_str();
  synth->add_option("--activation", o.activation, "silu|gelu")->capture_default_str();
  synth->add_option("--gating-order", o.gating_order, "topk_then_softmax|softmax_then_topk")->capture_default_str();
  synth->add_flag("--no-prenorm", o.no_prenorm);
  synth->add_option("--construct", o.construct, "none|gate-act-mean|norm-routed")->capture_default_str();
  synth->add_option("--corpus-tokens", o.corpus_tokens, "also write a random corpus of this many tokens");
  synth->add_option("--corpus-lines", o.corpus_lines, "number of sequences in that corpus");

  std::map<std::string, CLI::App*> subs;
  auto sub = [&](const std::string& name, const std::string& help) {
    return subs[name] = app.add_subcommand(name, help);
  };
  add_common(sub("matrix-sim", "flattened-matrix expert similarity"), true);
  add_common(sub("neuron-avg-sim", "neuron-averaged expert similarity"), true);
  add_common(sub("reorder", "optimal neuron reordering and Kendall tau"), true);
  add_common(sub("gate-sim", "gate embedding similarity"), true);
  add_common(sub("gate-corr", "gate vs expert similarity regression"), true);
  add_common(sub("pca", "PCA projection of expert matrices"), true);
  add_pca(subs["pca"]);
  for (const char* name : {"trace", "out-sim", "avg-out-sim", "norm-rank", "act-ratio", "route-log"}) {
    add_common(sub(name, std::string(name) + " over a traced corpus"), true);
    add_corpus(subs[name], true);
  }
  subs["act-ratio"]->add_option("--threshold", o.threshold)->capture_default_str();
  add_common(sub("report", "run every analysis"), true);
  add_corpus(subs["report"], false);
  add_pca(subs["report"]);
  subs["report"]->add_option("--threshold", o.threshold)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const bool unknown_command = app.get_subcommands().empty() || dynamic_cast<const CLI::ExtrasError*>(&e);
    std::cerr << "moe-lens: " << e.what() << "\n";
    return unknown_command ? 2 : 1;
  }

  const std::string command = join_argv(argc, argv);
  try {
    if (synth->parsed()) {
      cmd_synth(o, command);
      return 0;
    }
    Session s(o, command);
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "matrix-sim") cmd_matrix_sim(s, false);
    else if (name == "neuron-avg-sim") cmd_matrix_sim(s, true);
    else if (name == "reorder") cmd_reorder(s);
    else if (name == "gate-sim") cmd_gate_sim(s);
    else if (name == "gate-corr") cmd_gate_corr(s);
    else if (name == "pca") cmd_pca(s, o);
    else if (name == "trace") cmd_trace(s);
    else if (name == "out-sim") cmd_out_sim(s);
    else if (name == "avg-out-sim") cmd_avg_out_sim(s);
    else if (name == "norm-rank") cmd_norm_rank(s);
    else if (name == "act-ratio") cmd_act_ratio(s, o);
    else if (name == "route-log") cmd_route_log(s);
    else if (name == "report") cmd_report(s, o);
    else return 2;
  } catch (const std::exception& e) {
    std::cerr << "moe-lens: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
