#pragma once

// TOML run configuration shared by every CLI command. Unknown sections and
// keys are rejected. Relative paths resolve against the config file's
// directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "toml.hpp"

#include "fastkv/corpus.hpp"
#include "fastkv/eviction.hpp"
#include "fastkv/gate.hpp"
#include "fastkv/model.hpp"
#include "fastkv/serialize.hpp"
#include "fastkv/target_oracle.hpp"
#include "fastkv/trainer.hpp"

namespace fastkv {

enum class EvalPolicy { gate, oracle, random, recency };

inline std::string to_string(EvalPolicy p) {
  switch (p) {
    case EvalPolicy::gate: return "gate";
    case EvalPolicy::oracle: return "oracle";
    case EvalPolicy::random: return "random";
    case EvalPolicy::recency: return "recency";
  }
  return "?";
}

inline EvalPolicy eval_policy_from_string(const std::string& s) {
  if (s == "gate") return EvalPolicy::gate;
  if (s == "oracle") return EvalPolicy::oracle;
  if (s == "random") return EvalPolicy::random;
  if (s == "recency") return EvalPolicy::recency;
  throw ConfigError("unknown eval policy '" + s + "'");
}

struct EvalSettings {
  std::vector<double> budgets{0.25, 0.5, 0.75, 1.0};
  std::vector<EvalPolicy> policies{EvalPolicy::gate, EvalPolicy::oracle, EvalPolicy::random, EvalPolicy::recency};
  std::size_t n_contexts = 20;
  std::size_t context_length = 128;
  std::size_t suffix_length = 32;
  std::uint64_t seed = 0;
  std::filesystem::path gate_file;  // empty: <out>/gates.fkvz
};

struct AnalyzeSettings {
  double ratio = 0.36;
  std::size_t n_contexts = 8;
  std::size_t context_length = 256;
  std::uint64_t seed = 0;
  std::filesystem::path gate_file;
  double sparse_below = 0.05;
  double dense_at_or_above = 0.9;
  std::size_t top_tokens = 10;
};

struct BenchSettings {
  std::vector<std::size_t> lengths{128, 256, 512};
  std::size_t decode_steps = 64;
  std::size_t repeats = 1;
  std::uint64_t seed = 0;
  std::filesystem::path gate_file;
};

struct RunConfig {
  std::filesystem::path source;  // the TOML file, if loaded from disk
  std::uint64_t seed = 0;        // master seed; per-section seeds default from it
  ModelConfig model;
  std::optional<std::uint64_t> model_seed;
  std::filesystem::path model_checkpoint;
  GateConfig gate;
  std::optional<std::uint64_t> gate_seed;
  CorpusSpec corpus;
  std::optional<std::uint64_t> corpus_seed;
  std::string repeat_prompt{kDefaultRepeatPrompt};
  TrainerConfig trainer;
  bool trainer_seed_set = false;
  EvictionPolicy eviction;
  EvalSettings eval;
  bool eval_seed_set = false;
  AnalyzeSettings analyze;
  bool analyze_seed_set = false;
  BenchSettings bench;
  bool bench_seed_set = false;
  std::filesystem::path out_dir = "out";

  std::uint64_t resolved_model_seed() const { return model_seed.value_or(seed); }
  std::uint64_t resolved_gate_seed() const { return gate_seed.value_or(seed + 1); }
  std::uint64_t resolved_corpus_seed() const { return corpus_seed.value_or(seed + 2); }

  /// Applies --seed: replaces the master seed and every seed derived from it.
  void set_master_seed(std::uint64_t s) {
    seed = s;
    if (!trainer_seed_set) trainer.seed = s + 3;
    if (!eval_seed_set) eval.seed = s + 4;
    if (!analyze_seed_set) analyze.seed = s + 5;
    if (!bench_seed_set) bench.seed = s + 6;
  }

  GateConfig gate_config() const {
    GateConfig g = gate;
    g.d_model = model.d_model;
    g.n_kv_heads = model.n_kv_heads;
    g.group_size = model.group_size;
    return g;
  }

  std::vector<Token> prompt_tokens() const { return make_repeat_prompt(repeat_prompt); }

  std::filesystem::path gates_path(const std::filesystem::path& configured) const {
    return configured.empty() ? out_dir / "gates.fkvz" : configured;
  }

  void validate() const {
    model.validate();
    gate_config().validate();
    corpus.validate();
    trainer.validate();
    eviction.validate();
    if (eval.budgets.empty()) throw ConfigError("eval.budgets must not be empty");
    for (double b : eval.budgets)
      if (!(b > 0 && b <= 1)) throw ConfigError("eval budgets must lie in (0, 1]");
    if (eval.context_length == 0 || eval.suffix_length == 0 || eval.n_contexts == 0)
      throw ConfigError("eval lengths and n_contexts must be >= 1");
    if (!(analyze.ratio > 0 && analyze.ratio <= 1)) throw ConfigError("analyze.ratio must lie in (0, 1]");
    if (bench.lengths.empty()) throw ConfigError("bench.lengths must not be empty");
  }
};

namespace detail {

class TableReader {
 public:
  TableReader(const toml::table* table, std::string section) : table_(table), section_(std::move(section)) {}

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    out = convert<T>(*node, key);
  }

  template <typename T>
  bool read_opt(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!table_ || !table_->get(key)) return false;
    out = convert<T>(*table_->get(key), key);
    return true;
  }

  template <typename T>
  void read_list(const char* key, std::vector<T>& out) {
    seen_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    const auto* arr = node->as_array();
    if (!arr) throw ConfigError(where(key) + " must be an array");
    out.clear();
    for (const auto& el : *arr) out.push_back(convert<T>(el, key));
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_)
      if (!seen_.count(std::string(k.str()))) throw ConfigError("unknown key '" + section_ + "." + std::string(k.str()) + "'");
  }

 private:
  std::string where(const char* key) const { return "'" + section_ + "." + key + "'"; }

  template <typename T>
  T convert(const toml::node& node, const char* key) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = node.value_exact<bool>()) return *v;
      throw ConfigError(where(key) + " must be a boolean");
    } else if constexpr (std::is_same_v<T, double>) {
      if (auto v = node.value<double>()) return *v;
      throw ConfigError(where(key) + " must be a number");
    } else if constexpr (std::is_integral_v<T>) {
      auto v = node.value_exact<std::int64_t>();
      if (!v || *v < 0) throw ConfigError(where(key) + " must be a non-negative integer");
      return static_cast<T>(*v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = node.value_exact<std::string>()) return *v;
      throw ConfigError(where(key) + " must be a string");
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      if (auto v = node.value_exact<std::string>()) return std::filesystem::path(*v);
      throw ConfigError(where(key) + " must be a path string");
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  const toml::table* table_;
  std::string section_;
  std::set<std::string> seen_;
};

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return base / p;
}

}  // namespace detail

/// Parses TOML text. `base_dir` anchors relative paths.
inline RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = ".") {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config parse error: " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(msg.str());
  }

  static const std::set<std::string> sections{"model", "gate",    "corpus", "trainer", "eviction",
                                              "eval",  "analyze", "bench",  "output",  "seed"};
  for (const auto& [k, v] : root)
    if (!sections.count(std::string(k.str()))) throw ConfigError("unknown key '" + std::string(k.str()) + "'");

  RunConfig cfg;
  if (const auto* s = root.get("seed")) {
    auto v = s->value_exact<std::int64_t>();
    if (!v || *v < 0) throw ConfigError("'seed' must be a non-negative integer");
    cfg.seed = std::uint64_t(*v);
  }

  auto section = [&](const char* name) {
    const toml::node* node = root.get(name);
    if (node && !node->is_table()) throw ConfigError("'" + std::string(name) + "' must be a table");
    return detail::TableReader(node ? node->as_table() : nullptr, name);
  };

  {
    auto r = section("model");
    auto& m = cfg.model;
    r.read("n_layers", m.n_layers);
    r.read("d_model", m.d_model);
    r.read("n_kv_heads", m.n_kv_heads);
    r.read("group_size", m.group_size);
    r.read("d_head", m.d_head);
    r.read("d_ff", m.d_ff);
    r.read("vocab_size", m.vocab_size);
    r.read("rope_theta", m.rope_theta);
    r.read("max_position", m.max_position);
    r.read("init_std", m.init_std);
    std::string tap = to_string(m.hidden_tap);
    r.read("hidden_tap", tap);
    m.hidden_tap = hidden_tap_from_string(tap);
    r.read_opt("seed", cfg.model_seed);
    r.read("checkpoint", cfg.model_checkpoint);
    r.finish();
  }
  {
    auto r = section("gate");
    auto& g = cfg.gate;
    r.read("d_low", g.d_low);
    r.read("n_sinks", g.n_sinks);
    std::string variant = to_string(g.variant);
    r.read("variant", variant);
    g.variant = gate_variant_from_string(variant);
    r.read("norm_eps", g.norm_eps);
    r.read("per_head_norm", g.per_head_norm);
    r.read("mlp_hidden", g.mlp_hidden);
    r.read("init_std", g.init_std);
    r.read_opt("seed", cfg.gate_seed);
    r.finish();
  }
  {
    auto r = section("corpus");
    auto& c = cfg.corpus;
    c.sources.clear();
    std::vector<std::filesystem::path> sources{"data/corpus"};
    r.read_list("sources", sources);
    c.sources = sources;
    r.read("min_seq_tokens", c.min_seq_tokens);
    r.read("max_seq_tokens", c.max_seq_tokens);
    r.read("total_tokens", c.total_tokens);
    r.read("long_concat", c.long_concat.enabled);
    r.read("long_concat_length", c.long_concat.target_length);
    r.read("repeat_prompt", cfg.repeat_prompt);
    r.read_opt("seed", cfg.corpus_seed);
    r.finish();
  }
  std::optional<std::uint64_t> trainer_seed, eval_seed, analyze_seed, bench_seed;
  {
    auto r = section("trainer");
    auto& t = cfg.trainer;
    r.read("learning_rate", t.learning_rate);
    r.read("steps", t.steps);
    r.read("batch_size", t.batch_size);
    r.read_opt("seed", trainer_seed);
    r.read_opt("batch_seed", t.batch_seed);
    r.read("val_fraction", t.val_fraction);
    r.read("log_every", t.log_every);
    r.finish();
  }
  {
    auto r = section("eviction");
    auto& e = cfg.eviction;
    std::string mode = to_string(e.budget_mode), alloc = to_string(e.allocation), scope = to_string(e.nonuniform_scope);
    r.read("budget_mode", mode);
    r.read("ratio", e.ratio);
    r.read("fixed_total", e.fixed_total);
    r.read("allocation", alloc);
    r.read("nonuniform_scope", scope);
    r.read("chunk_size", e.chunk_size);
    r.read("prefill_window", e.prefill_window);
    r.read("short_context_window_fraction", e.short_context_window_fraction);
    r.read("decode_buffer", e.decode_buffer);
    r.read("decode_window", e.decode_window);
    r.finish();
    if (mode == "ratio") e.budget_mode = BudgetMode::ratio;
    else if (mode == "fixed_total") e.budget_mode = BudgetMode::fixed_total;
    else throw ConfigError("unknown eviction.budget_mode '" + mode + "'");
    if (alloc == "uniform") e.allocation = Allocation::uniform;
    else if (alloc == "nonuniform") e.allocation = Allocation::nonuniform;
    else throw ConfigError("unknown eviction.allocation '" + alloc + "'");
    if (scope == "per_layer") e.nonuniform_scope = PoolScope::per_layer;
    else if (scope == "global") e.nonuniform_scope = PoolScope::global;
    else throw ConfigError("unknown eviction.nonuniform_scope '" + scope + "'");
  }
  {
    auto r = section("eval");
    auto& e = cfg.eval;
    r.read_list("budgets", e.budgets);
    std::vector<std::string> policies;
    r.read_list("policies", policies);
    if (!policies.empty()) {
      e.policies.clear();
      for (const auto& p : policies) e.policies.push_back(eval_policy_from_string(p));
    }
    r.read("n_contexts", e.n_contexts);
    r.read("context_length", e.context_length);
    r.read("suffix_length", e.suffix_length);
    r.read_opt("seed", eval_seed);
    r.read("gate_file", e.gate_file);
    r.finish();
  }
  {
    auto r = section("analyze");
    auto& a = cfg.analyze;
    r.read("ratio", a.ratio);
    r.read("n_contexts", a.n_contexts);
    r.read("context_length", a.context_length);
    r.read_opt("seed", analyze_seed);
    r.read("gate_file", a.gate_file);
    r.read("sparse_below", a.sparse_below);
    r.read("dense_at_or_above", a.dense_at_or_above);
    r.read("top_tokens", a.top_tokens);
    r.finish();
  }
  {
    auto r = section("bench");
    auto& b = cfg.bench;
    r.read_list("lengths", b.lengths);
    r.read("decode_steps", b.decode_steps);
    r.read("repeats", b.repeats);
    r.read_opt("seed", bench_seed);
    r.read("gate_file", b.gate_file);
    r.finish();
  }
  {
    auto r = section("output");
    r.read("dir", cfg.out_dir);
    r.finish();
  }

  cfg.trainer_seed_set = trainer_seed.has_value();
  cfg.eval_seed_set = eval_seed.has_value();
  cfg.analyze_seed_set = analyze_seed.has_value();
  cfg.bench_seed_set = bench_seed.has_value();
  if (trainer_seed) cfg.trainer.seed = *trainer_seed;
  if (eval_seed) cfg.eval.seed = *eval_seed;
  if (analyze_seed) cfg.analyze.seed = *analyze_seed;
  if (bench_seed) cfg.bench.seed = *bench_seed;
  cfg.set_master_seed(cfg.seed);

  for (auto& s : cfg.corpus.sources) s = detail::resolve(base_dir, s);
  cfg.model_checkpoint = detail::resolve(base_dir, cfg.model_checkpoint);
  cfg.out_dir = detail::resolve(base_dir, cfg.out_dir);
  cfg.eval.gate_file = detail::resolve(base_dir, cfg.eval.gate_file);
  cfg.analyze.gate_file = detail::resolve(base_dir, cfg.analyze.gate_file);
  cfg.bench.gate_file = detail::resolve(base_dir, cfg.bench.gate_file);
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_run_config(ss.str(), path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
  cfg.source = path;
  return cfg;
}

inline json to_json(const RunConfig& c) {
  auto paths = [](const std::vector<std::filesystem::path>& ps) {
    std::vector<std::string> out;
    for (const auto& p : ps) out.push_back(p.string());
    return out;
  };
  std::vector<std::string> policies;
  for (auto p : c.eval.policies) policies.push_back(to_string(p));
  return json{
      {"seed", c.seed},
      {"model", to_json(c.model)},
      {"model_seed", c.resolved_model_seed()},
      {"model_checkpoint", c.model_checkpoint.string()},
      {"gate", to_json(c.gate_config())},
      {"gate_seed", c.resolved_gate_seed()},
      {"corpus",
       {{"sources", paths(c.corpus.sources)},
        {"min_seq_tokens", c.corpus.min_seq_tokens},
        {"max_seq_tokens", c.corpus.max_seq_tokens},
        {"total_tokens", c.corpus.total_tokens},
        {"long_concat", c.corpus.long_concat.enabled},
        {"long_concat_length", c.corpus.long_concat.target_length},
        {"seed", c.resolved_corpus_seed()},
        {"repeat_prompt", c.repeat_prompt}}},
      {"trainer", to_json(c.trainer)},
      {"eviction",
       {{"budget_mode", to_string(c.eviction.budget_mode)},
        {"ratio", c.eviction.ratio},
        {"fixed_total", c.eviction.fixed_total},
        {"allocation", to_string(c.eviction.allocation)},
        {"nonuniform_scope", to_string(c.eviction.nonuniform_scope)},
        {"chunk_size", c.eviction.chunk_size},
        {"prefill_window", c.eviction.prefill_window},
        {"short_context_window_fraction", c.eviction.short_context_window_fraction},
        {"decode_buffer", c.eviction.decode_buffer},
        {"decode_window", c.eviction.decode_window}}},
      {"eval",
       {{"budgets", c.eval.budgets},
        {"policies", policies},
        {"n_contexts", c.eval.n_contexts},
        {"context_length", c.eval.context_length},
        {"suffix_length", c.eval.suffix_length},
        {"seed", c.eval.seed}}},
      {"analyze", {{"ratio", c.analyze.ratio}, {"n_contexts", c.analyze.n_contexts},
                   {"context_length", c.analyze.context_length}, {"seed", c.analyze.seed}}},
      {"bench", {{"lengths", c.bench.lengths}, {"decode_steps", c.bench.decode_steps},
                 {"repeats", c.bench.repeats}, {"seed", c.bench.seed}}},
      {"output", {{"dir", c.out_dir.string()}}}};
}

}  // namespace fastkv
