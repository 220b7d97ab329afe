#pragma once

// The commands behind the `fastkv` CLI: train, eval, analyze, bench, inspect.
// Each returns its results as data and writes its reports under out_dir.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fastkv/config.hpp"
#include "fastkv/engine.hpp"
#include "fastkv/serialize.hpp"
#include "fastkv/trainer.hpp"

namespace fastkv {

inline TransformerWeights<float> load_or_init_model(const RunConfig& cfg) {
  if (!cfg.model_checkpoint.empty()) {
    if (!std::filesystem::exists(cfg.model_checkpoint))
      throw DataError("model checkpoint not found: " + cfg.model_checkpoint.string());
    return load_model(cfg.model_checkpoint);
  }
  return init_model<float>(cfg.model, cfg.resolved_model_seed());
}

/// `n` contiguous windows of `length` tokens at seeded uniform offsets.
inline std::vector<std::vector<Token>> sample_windows(const CorpusStream& corpus, std::size_t n, std::size_t length,
                                                      std::uint64_t seed) {
  if (corpus.tokens.size() < length)
    throw DataError("corpus has " + std::to_string(corpus.tokens.size()) + " tokens, need windows of " +
                    std::to_string(length));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> off(0, corpus.tokens.size() - length);
  std::vector<std::vector<Token>> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = off(rng);
    out.emplace_back(corpus.tokens.begin() + std::ptrdiff_t(o), corpus.tokens.begin() + std::ptrdiff_t(o + length));
  }
  return out;
}

// ---- train -----------------------------------------------------------------

struct TrainOutcome {
  TrainedGates trained;
  std::filesystem::path gate_file, report_file;
};

inline TrainOutcome cmd_train(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto weights = load_or_init_model(cfg);
  const auto prompt = cfg.prompt_tokens();
  const auto threads = worker_threads();
  const auto shards = build_training_shards(weights, cfg.corpus, prompt, cfg.resolved_corpus_seed(), threads);
  for (const auto& s : shards)
    save_shard(s, cfg.out_dir / "shards" / ("layer_" + std::to_string(s.layer) + ".fkvt"));

  TrainOutcome out;
  GateConfig gc = cfg.gate_config();
  out.trained = train_all_layers(shards, gc, cfg.trainer, threads);
  out.trained.gates.provenance = {{"corpus_hash", shards.empty() ? json(0) : shards[0].provenance.at("corpus_hash")},
                                  {"corpus_seed", cfg.resolved_corpus_seed()},
                                  {"model_seed", weights.seed},
                                  {"model", to_json(weights.config)},
                                  {"trainer", to_json(cfg.trainer)},
                                  {"tuples_per_layer", shards.empty() ? 0 : shards[0].count()}};
  out.gate_file = cfg.out_dir / "gates.fkvz";
  out.report_file = cfg.out_dir / "train_report.json";
  save_gates(out.trained.gates, out.gate_file);
  save_model(weights, cfg.out_dir / "model.fkvm");
  out.trained.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  atomic_write(out.report_file, out.trained.report.to_json().dump(2) + "\n");
  return out;
}

// ---- eval ------------------------------------------------------------------

struct FidelityMetrics {
  double logit_deviation = 0.0;  // mean L2 distance between logit vectors
  double top1_agreement = 0.0;   // fraction of positions with the same argmax
};

inline FidelityMetrics compare_logits(const Matrix<float>& ref, const Matrix<float>& got) {
  FidelityMetrics m;
  for (std::size_t t = 0; t < ref.rows(); ++t) {
    double ss = 0.0;
    for (std::size_t v = 0; v < ref.cols(); ++v) {
      const double d = double(ref(t, v)) - double(got(t, v));
      ss += d * d;
    }
    m.logit_deviation += std::sqrt(ss);
    m.top1_agreement += argmax_token<float>(ref.row(t)) == argmax_token<float>(got.row(t)) ? 1.0 : 0.0;
  }
  if (ref.rows() > 0) {
    m.logit_deviation /= double(ref.rows());
    m.top1_agreement /= double(ref.rows());
  }
  return m;
}

/// Logits of a teacher-forced continuation after prefilling `ctx` with the
/// given scorer and policy (no further eviction during the continuation).
inline Matrix<float> continuation_logits(const TransformerWeights<float>& weights, ImportanceScorer* scorer,
                                         std::span<const Token> ctx, std::span<const Token> suffix,
                                         const EvictionPolicy& policy) {
  auto pre = prefill_chunked(weights, scorer, ctx, policy);
  return forward<float>(suffix, pre.cache, weights, {.hiddens = false}).logits;
}

inline FidelityMetrics measure_fidelity(const TransformerWeights<float>& weights, ImportanceScorer* scorer,
                                        std::span<const Token> ctx, std::span<const Token> suffix,
                                        const EvictionPolicy& policy) {
  const auto ref = continuation_logits(weights, nullptr, ctx, suffix, policy);
  return compare_logits(ref, continuation_logits(weights, scorer, ctx, suffix, policy));
}

struct EvalRow {
  EvalPolicy policy;
  double ratio;
  FidelityMetrics metrics;
};

inline std::unique_ptr<ImportanceScorer> make_scorer(EvalPolicy p, const ModelConfig& mc, const GateSet* gates,
                                                     const ImportanceScores* oracle, std::uint64_t seed) {
  switch (p) {
    case EvalPolicy::gate:
      if (!gates) throw DataError("policy 'gate' requires a gate file");
      return std::make_unique<GateScorer>(*gates);
    case EvalPolicy::oracle: return std::make_unique<TableScorer>(*oracle);
    case EvalPolicy::random: return std::make_unique<RandomScorer>(mc.n_kv_heads, seed);
    case EvalPolicy::recency: return std::make_unique<RecencyScorer>(mc.n_kv_heads);
  }
  return nullptr;
}

/// Sweeps every (policy, budget) pair over held-out contexts.
inline std::vector<EvalRow> run_eval(const TransformerWeights<float>& weights, const GateSet* gates,
                                     const std::vector<std::vector<Token>>& contexts, std::size_t suffix_length,
                                     const EvalSettings& settings, const EvictionPolicy& base_policy,
                                     std::span<const Token> prompt) {
  const bool need_oracle =
      std::find(settings.policies.begin(), settings.policies.end(), EvalPolicy::oracle) != settings.policies.end();
  struct Prepared {
    std::span<const Token> ctx, suffix;
    ImportanceScores oracle;
    Matrix<float> reference;
  };
  std::vector<Prepared> prepared;
  for (const auto& window : contexts) {
    Prepared p;
    const std::span<const Token> all(window);
    p.ctx = all.first(all.size() - suffix_length);
    p.suffix = all.last(suffix_length);
    if (need_oracle) p.oracle = compute_reconstruction_targets<float>(weights, p.ctx, prompt);
    p.reference = continuation_logits(weights, nullptr, p.ctx, p.suffix, base_policy);
    prepared.push_back(std::move(p));
  }

  std::vector<EvalRow> rows;
  for (EvalPolicy pol : settings.policies) {
    for (double ratio : settings.budgets) {
      EvictionPolicy policy = base_policy;
      policy.budget_mode = BudgetMode::ratio;
      policy.ratio = ratio;
      EvalRow row{pol, ratio, {}};
      for (std::size_t i = 0; i < prepared.size(); ++i) {
        auto scorer = make_scorer(pol, weights.config, gates, &prepared[i].oracle, settings.seed * 7919 + i);
        const auto got = continuation_logits(weights, scorer.get(), prepared[i].ctx, prepared[i].suffix, policy);
        const auto m = compare_logits(prepared[i].reference, got);
        row.metrics.logit_deviation += m.logit_deviation / double(prepared.size());
        row.metrics.top1_agreement += m.top1_agreement / double(prepared.size());
      }
      rows.push_back(row);
    }
  }
  return rows;
}

inline std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  out << "policy,ratio,logit_deviation,top1_agreement\n";
  out.precision(10);
  for (const auto& r : rows)
    out << to_string(r.policy) << ',' << r.ratio << ',' << r.metrics.logit_deviation << ','
        << r.metrics.top1_agreement << '\n';
  return out.str();
}

struct EvalOutcome {
  std::vector<EvalRow> rows;
  std::filesystem::path csv_file;
};

inline EvalOutcome cmd_eval(const RunConfig& cfg) {
  const auto weights = load_or_init_model(cfg);
  std::optional<GateSet> gates;
  if (std::find(cfg.eval.policies.begin(), cfg.eval.policies.end(), EvalPolicy::gate) != cfg.eval.policies.end()) {
    const auto path = cfg.gates_path(cfg.eval.gate_file);
    if (!std::filesystem::exists(path)) throw DataError("missing gate file: " + path.string());
    gates = load_gates(path);
    if (gates->layers.size() != weights.config.n_layers)
      throw DataError("gate file has " + std::to_string(gates->layers.size()) + " layers, model has " +
                      std::to_string(weights.config.n_layers));
  }
  const auto stream = load_corpus(cfg.corpus);
  const auto windows = sample_windows(stream, cfg.eval.n_contexts, cfg.eval.context_length + cfg.eval.suffix_length,
                                      cfg.eval.seed);
  const auto prompt = cfg.prompt_tokens();
  EvalOutcome out;
  out.rows = run_eval(weights, gates ? &*gates : nullptr, windows, cfg.eval.suffix_length, cfg.eval, cfg.eviction,
                      prompt);
  out.csv_file = cfg.out_dir / "eval.csv";
  atomic_write(out.csv_file, eval_csv(out.rows));
  return out;
}

// ---- analyze ---------------------------------------------------------------

enum class HeadClass { sparse, medium, dense };

inline std::string to_string(HeadClass c) {
  return c == HeadClass::sparse ? "sparse" : c == HeadClass::medium ? "medium" : "dense";
}

inline HeadClass classify_head(double retention, double sparse_below = 0.05, double dense_at_or_above = 0.9) {
  if (retention < sparse_below) return HeadClass::sparse;
  if (retention >= dense_at_or_above) return HeadClass::dense;
  return HeadClass::medium;
}

struct TokenCount {
  Token token;
  std::size_t count;
};

struct AnalyzeResult {
  std::vector<std::vector<double>> retention;  // [layer][head]
  std::vector<std::vector<HeadClass>> classes;
  // [class][0 = retained, 1 = evicted] → top tokens by count
  std::map<HeadClass, std::array<std::vector<TokenCount>, 2>> token_tables;
  std::vector<double> mean_gate_score, mean_target_score, score_spearman;  // per layer
};

inline AnalyzeResult run_analyze(const TransformerWeights<float>& weights, const GateSet& gates,
                                 const std::vector<std::vector<Token>>& contexts, const AnalyzeSettings& settings,
                                 const EvictionPolicy& base_policy, std::span<const Token> prompt,
                                 bool with_targets = true) {
  const auto& mc = weights.config;
  const std::size_t L = mc.n_layers, H = mc.n_kv_heads;
  EvictionPolicy policy = base_policy;
  policy.budget_mode = BudgetMode::ratio;
  policy.ratio = settings.ratio;

  AnalyzeResult res;
  res.retention.assign(L, std::vector<double>(H, 0.0));
  // retained[c][l][h] = sorted positions kept
  std::vector<std::vector<std::vector<std::vector<Position>>>> kept(contexts.size());
  std::vector<std::vector<double>> gate_scores(L), target_scores(L);
  GateScorer scorer(gates);
  for (std::size_t c = 0; c < contexts.size(); ++c) {
    const auto& ctx = contexts[c];
    auto pre = prefill_chunked(weights, &scorer, ctx, policy);
    kept[c].assign(L, std::vector<std::vector<Position>>(H));
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t h = 0; h < H; ++h) {
        kept[c][l][h] = pre.cache.layers[l][h].positions;
        res.retention[l][h] += double(kept[c][l][h].size()) / double(ctx.size()) / double(contexts.size());
      }
    if (with_targets) {
      auto cache = KVCache<float>::empty(mc);
      const auto fwd = forward<float>(ctx, cache, weights);
      const auto targets = compute_reconstruction_targets<float>(weights, ctx, prompt);
      for (std::size_t l = 0; l < L; ++l) {
        const auto g = gate_forward(fwd.hiddens[l], gates.layers[l]);
        for (std::size_t i = 0; i < ctx.size(); ++i)
          for (std::size_t h = 0; h < H; ++h) {
            gate_scores[l].push_back(g(i, h));
            target_scores[l].push_back(targets.at(l, h, i));
          }
      }
    }
  }

  res.classes.assign(L, std::vector<HeadClass>(H));
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t h = 0; h < H; ++h)
      res.classes[l][h] = classify_head(res.retention[l][h], settings.sparse_below, settings.dense_at_or_above);

  std::map<HeadClass, std::array<std::map<Token, std::size_t>, 2>> counts;
  for (auto cls : {HeadClass::sparse, HeadClass::medium, HeadClass::dense}) counts[cls];
  for (std::size_t c = 0; c < contexts.size(); ++c)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t h = 0; h < H; ++h) {
        auto& table = counts[res.classes[l][h]];
        const auto& pos = kept[c][l][h];
        for (std::size_t i = 0; i < contexts[c].size(); ++i) {
          const bool retained = std::binary_search(pos.begin(), pos.end(), Position(i));
          ++table[retained ? 0 : 1][contexts[c][i]];
        }
      }
  for (auto& [cls, tables] : counts) {
    auto& dst = res.token_tables[cls];
    for (int k = 0; k < 2; ++k) {
      for (auto [tok, n] : tables[k]) dst[k].push_back({tok, n});
      std::stable_sort(dst[k].begin(), dst[k].end(), [](auto& a, auto& b) { return a.count > b.count; });
      if (dst[k].size() > settings.top_tokens) dst[k].resize(settings.top_tokens);
    }
  }

  if (with_targets) {
    for (std::size_t l = 0; l < L; ++l) {
      const auto& g = gate_scores[l];
      const auto& t = target_scores[l];
      res.mean_gate_score.push_back(std::accumulate(g.begin(), g.end(), 0.0) / double(std::max<std::size_t>(1, g.size())));
      res.mean_target_score.push_back(std::accumulate(t.begin(), t.end(), 0.0) / double(std::max<std::size_t>(1, t.size())));
      res.score_spearman.push_back(spearman(g, t));
    }
  }
  return res;
}

struct AnalyzeOutcome {
  AnalyzeResult result;
  std::filesystem::path retention_csv, taxonomy_json, tokens_csv, curves_csv;
};

inline AnalyzeOutcome cmd_analyze(const RunConfig& cfg) {
  const auto weights = load_or_init_model(cfg);
  const auto gate_path = cfg.gates_path(cfg.analyze.gate_file);
  if (!std::filesystem::exists(gate_path)) throw DataError("missing gate file: " + gate_path.string());
  const auto gates = load_gates(gate_path);
  const auto stream = load_corpus(cfg.corpus);
  const auto contexts = sample_windows(stream, cfg.analyze.n_contexts, cfg.analyze.context_length, cfg.analyze.seed);
  const auto prompt = cfg.prompt_tokens();
  const bool with_targets = 2 * cfg.analyze.context_length + prompt.size() <= weights.config.max_position;

  AnalyzeOutcome out;
  out.result = run_analyze(weights, gates, contexts, cfg.analyze, cfg.eviction, prompt, with_targets);
  const auto& r = out.result;

  std::ostringstream ret;
  ret << "layer,head,retention_rate,class\n";
  ret.precision(10);
  json taxonomy{{"ratio", cfg.analyze.ratio},
                {"thresholds", {{"sparse_below", cfg.analyze.sparse_below},
                                {"dense_at_or_above", cfg.analyze.dense_at_or_above}}},
                {"classes", {{"sparse", json::array()}, {"medium", json::array()}, {"dense", json::array()}}}};
  for (std::size_t l = 0; l < r.retention.size(); ++l)
    for (std::size_t h = 0; h < r.retention[l].size(); ++h) {
      ret << l << ',' << h << ',' << r.retention[l][h] << ',' << to_string(r.classes[l][h]) << '\n';
      taxonomy["classes"][to_string(r.classes[l][h])].push_back(
          {{"layer", l}, {"head", h}, {"retention_rate", r.retention[l][h]}});
    }
  for (auto cls : {"sparse", "medium", "dense"}) taxonomy["counts"][cls] = taxonomy["classes"][cls].size();

  std::ostringstream tok;
  tok << "class,kind,rank,token,label,count\n";
  for (const auto& [cls, tables] : r.token_tables)
    for (int k = 0; k < 2; ++k)
      for (std::size_t i = 0; i < tables[k].size(); ++i)
        tok << to_string(cls) << ',' << (k == 0 ? "retained" : "evicted") << ',' << i + 1 << ','
            << tables[k][i].token << ',' << token_label(tables[k][i].token) << ',' << tables[k][i].count << '\n';

  std::ostringstream curves;
  curves << "layer,mean_gate_score,mean_target_score,spearman\n";
  curves.precision(10);
  for (std::size_t l = 0; l < r.mean_gate_score.size(); ++l)
    curves << l << ',' << r.mean_gate_score[l] << ',' << r.mean_target_score[l] << ',' << r.score_spearman[l] << '\n';

  out.retention_csv = cfg.out_dir / "retention.csv";
  out.taxonomy_json = cfg.out_dir / "head_taxonomy.json";
  out.tokens_csv = cfg.out_dir / "token_frequency.csv";
  out.curves_csv = cfg.out_dir / "score_curves.csv";
  atomic_write(out.retention_csv, ret.str());
  atomic_write(out.taxonomy_json, taxonomy.dump(2) + "\n");
  atomic_write(out.tokens_csv, tok.str());
  if (with_targets) atomic_write(out.curves_csv, curves.str());
  return out;
}

// ---- bench -----------------------------------------------------------------

/// Number of gating events buffered decoding performs for n_steps tokens.
inline std::size_t expected_gating_events(std::size_t n_steps, std::size_t decode_buffer) {
  return (n_steps + decode_buffer - 1) / decode_buffer;
}

inline json run_bench(const TransformerWeights<float>& weights, const GateSet& gates, const BenchSettings& settings,
                      const EvictionPolicy& base_policy) {
  const auto& mc = weights.config;
  std::mt19937_64 rng(settings.seed);
  std::uniform_int_distribution<Token> byte(0, 255);
  GateScorer scorer(gates);

  EvictionPolicy full = base_policy;
  full.budget_mode = BudgetMode::ratio;
  full.ratio = 1.0;
  EvictionPolicy tight = full;
  tight.ratio = 0.3;
  EvictionPolicy per_step = full;
  per_step.decode_buffer = 1;

  json lengths = json::array();
  for (std::size_t length : settings.lengths) {
    if (length + settings.decode_steps > mc.max_position)
      throw ConfigError("bench length " + std::to_string(length) + " plus decode steps exceeds max_position");
    std::vector<Token> tokens(length);
    for (auto& t : tokens) t = byte(rng);

    double plain_prefill = 0, gated_prefill = 0, gated_fwd = 0, gated_gate = 0;
    double plain_decode = 0, buf_decode = 0, buf_fwd = 0, buf_gate = 0, step_decode = 0, step_fwd = 0, step_gate = 0;
    std::size_t buf_events = 0, peak_full = 0, peak_tight = 0;
    for (std::size_t rep = 0; rep < settings.repeats; ++rep) {
      auto t0 = std::chrono::steady_clock::now();
      auto plain = prefill_chunked(weights, nullptr, tokens, full);
      plain_prefill += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      t0 = std::chrono::steady_clock::now();
      auto gated = prefill_chunked(weights, &scorer, tokens, full);
      gated_prefill += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      gated_fwd += gated.stats.forward_seconds;
      gated_gate += gated.stats.gate_seconds;

      auto compressed = prefill_chunked(weights, &scorer, tokens, tight);
      peak_full = 0;
      peak_tight = 0;
      for (auto p : gated.stats.peak_entries) peak_full += p;
      for (auto p : compressed.stats.peak_entries) peak_tight += p;

      auto d_plain = decode_gated(weights, nullptr, plain.cache, plain.last_logits(), settings.decode_steps, full);
      plain_decode += d_plain.stats.forward_seconds;
      auto cache_b = gated.cache;
      auto d_buf = decode_gated(weights, &scorer, cache_b, gated.last_logits(), settings.decode_steps, full);
      buf_fwd += d_buf.stats.forward_seconds;
      buf_gate += d_buf.stats.gate_seconds;
      buf_decode += d_buf.stats.forward_seconds + d_buf.stats.gate_seconds + d_buf.stats.evict_seconds;
      buf_events = d_buf.stats.gating_events;
      auto cache_s = gated.cache;
      auto d_step = decode_gated(weights, &scorer, cache_s, gated.last_logits(), settings.decode_steps, per_step);
      step_fwd += d_step.stats.forward_seconds;
      step_gate += d_step.stats.gate_seconds;
      step_decode += d_step.stats.forward_seconds + d_step.stats.gate_seconds + d_step.stats.evict_seconds;
    }
    const double reps = double(settings.repeats);
    const double steps = double(std::max<std::size_t>(1, settings.decode_steps));
    auto frac = [](double num, double den) { return den > 0 ? num / den : 0.0; };
    lengths.push_back({{"length", length},
                       {"prefill_seconds_plain", plain_prefill / reps},
                       {"prefill_seconds_gated", gated_prefill / reps},
                       {"prefill_gate_overhead_fraction", frac(gated_gate, gated_fwd)},
                       {"decode_steps", settings.decode_steps},
                       {"decode_seconds_per_token_plain", plain_decode / reps / steps},
                       {"decode_seconds_per_token_buffered", buf_decode / reps / steps},
                       {"decode_seconds_per_token_per_step_gating", step_decode / reps / steps},
                       {"buffered_gate_overhead_fraction", frac(buf_gate, buf_fwd)},
                       {"per_step_gate_overhead_fraction", frac(step_gate, step_fwd)},
                       {"gating_events_buffered", buf_events},
                       {"gating_events_expected", expected_gating_events(settings.decode_steps, full.decode_buffer)},
                       {"peak_entries_ratio_1", peak_full},
                       {"peak_entries_ratio_0_3", peak_tight}});
  }
  const double attn = double(weights.attention_parameter_count());
  const double gate_per_layer = gates.layers.empty() ? 0.0 : double(gates.layers[0].parameter_count());
  return json{{"decode_buffer", base_policy.decode_buffer},
              {"chunk_size", base_policy.chunk_size},
              {"gate_parameters", gates.parameter_count()},
              {"gate_parameters_per_layer", gate_per_layer},
              {"model_parameters", weights.parameter_count()},
              {"attention_layer_parameters", attn},
              {"gate_to_attention_layer_ratio", attn > 0 ? gate_per_layer / attn : 0.0},
              {"gate_to_model_ratio", double(gates.parameter_count()) / double(weights.parameter_count())},
              {"lengths", lengths}};
}

struct BenchOutcome {
  json report;
  std::filesystem::path json_file;
};

inline BenchOutcome cmd_bench(const RunConfig& cfg) {
  const auto weights = load_or_init_model(cfg);
  const auto gate_path = cfg.gates_path(cfg.bench.gate_file);
  GateSet gates;
  std::string source;
  if (std::filesystem::exists(gate_path)) {
    gates = load_gates(gate_path);
    source = gate_path.string();
  } else {
    for (std::size_t l = 0; l < weights.config.n_layers; ++l)
      gates.layers.push_back(init_gate<float>(cfg.gate_config(), layer_seed(cfg.resolved_gate_seed(), l)));
    source = "initialized";
  }
  BenchOutcome out;
  out.report = run_bench(weights, gates, cfg.bench, cfg.eviction);
  out.report["gate_source"] = source;
  out.json_file = cfg.out_dir / "bench.json";
  atomic_write(out.json_file, out.report.dump(2) + "\n");
  return out;
}

// ---- inspect ---------------------------------------------------------------

/// Summary of a config and, optionally, of an FKVM/FKVZ/FKVT artifact.
inline json cmd_inspect(const RunConfig& cfg, const std::filesystem::path& artifact = {}) {
  json out{{"config", to_json(cfg)}};
  const auto gc = cfg.gate_config();
  const auto model_params = TransformerWeights<float>::zeros(cfg.model).parameter_count();
  out["model_parameters"] = model_params;
  out["gate_parameters_per_layer"] = GateParams<float>::zeros(gc).parameter_count();
  if (artifact.empty()) return out;
  const auto bytes = read_file_bytes(artifact);
  const std::string magic = bytes.substr(0, std::min<std::size_t>(4, bytes.size()));
  if (magic != "FKVM" && magic != "FKVZ" && magic != "FKVT")
    throw FormatError("unrecognized artifact magic in " + artifact.string() +
                      " (expected \"FKVM\", \"FKVZ\" or \"FKVT\")");
  auto art = decode_artifact(magic, bytes, artifact.string());
  out["artifact"] = {{"path", artifact.string()},
                     {"magic", magic},
                     {"version", kFormatVersion},
                     {"file_bytes", bytes.size()},
                     {"header", art.header}};
  return out;
}

}  // namespace fastkv
