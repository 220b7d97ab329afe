#pragma once

// Gated inference: chunked prefill with per-chunk eviction, and buffered
// decoding that gates recent hidden states in batches.

#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"

#include "fastkv/common.hpp"
#include "fastkv/eviction.hpp"
#include "fastkv/gate.hpp"
#include "fastkv/model.hpp"
#include "fastkv/serialize.hpp"
#include "fastkv/target_oracle.hpp"

namespace fastkv {

/// Produces per-KV-head importance scores for a batch of new tokens of one
/// layer: returns |positions| × H values in [0, 1].
class ImportanceScorer {
 public:
  virtual ~ImportanceScorer() = default;
  virtual Matrix<float> score(std::size_t layer, const Matrix<float>& hiddens,
                              std::span<const Position> positions) = 0;
};

class GateScorer final : public ImportanceScorer {
 public:
  explicit GateScorer(const GateSet& gates) : gates_(gates) {}
  Matrix<float> score(std::size_t layer, const Matrix<float>& hiddens, std::span<const Position>) override {
    return gate_forward(hiddens, gates_.layers.at(layer));
  }

 private:
  const GateSet& gates_;
};

/// Looks scores up by absolute position; positions beyond the table get
/// `fallback`.
class TableScorer final : public ImportanceScorer {
 public:
  explicit TableScorer(ImportanceScores table, float fallback = 0.0f)
      : table_(std::move(table)), fallback_(fallback) {}
  Matrix<float> score(std::size_t layer, const Matrix<float>&, std::span<const Position> positions) override {
    Matrix<float> out(positions.size(), table_.n_heads);
    for (std::size_t t = 0; t < positions.size(); ++t)
      for (std::size_t h = 0; h < table_.n_heads; ++h)
        out(t, h) = std::size_t(positions[t]) < table_.n_positions ? table_.at(layer, h, std::size_t(positions[t]))
                                                                    : fallback_;
    return out;
  }

 private:
  ImportanceScores table_;
  float fallback_;
};

/// Seeded uniform scores: random eviction.
class RandomScorer final : public ImportanceScorer {
 public:
  RandomScorer(std::size_t n_heads, std::uint64_t seed) : n_heads_(n_heads), rng_(seed) {}
  Matrix<float> score(std::size_t, const Matrix<float>&, std::span<const Position> positions) override {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Matrix<float> out(positions.size(), n_heads_);
    for (auto& v : out.data()) v = u(rng_);
    return out;
  }

 private:
  std::size_t n_heads_;
  std::mt19937_64 rng_;
};

/// Score grows with position: keeps the most recent tokens.
class RecencyScorer final : public ImportanceScorer {
 public:
  explicit RecencyScorer(std::size_t n_heads) : n_heads_(n_heads) {}
  Matrix<float> score(std::size_t, const Matrix<float>&, std::span<const Position> positions) override {
    Matrix<float> out(positions.size(), n_heads_);
    for (std::size_t t = 0; t < positions.size(); ++t)
      for (std::size_t h = 0; h < n_heads_; ++h)
        out(t, h) = static_cast<float>(double(positions[t]) / double(positions[t] + 1));
    return out;
  }

 private:
  std::size_t n_heads_;
};

struct EngineStats {
  std::vector<std::size_t> peak_entries;                // per layer
  std::vector<std::vector<double>> retained_ratio;      // [layer][head], entries / tokens seen
  std::vector<EvictionEvent> events;
  std::size_t gating_events = 0;
  std::size_t window = 0;
  double forward_seconds = 0.0;
  double gate_seconds = 0.0;
  double evict_seconds = 0.0;

  json to_json(bool with_events = true) const {
    json ev = json::array();
    if (with_events)
      for (const auto& e : events)
        ev.push_back({{"total_tokens", e.total_tokens},
                      {"window_start", e.window_start},
                      {"before", e.before},
                      {"after", e.after},
                      {"window", e.window},
                      {"evicted", e.evicted()},
                      {"window_violations", e.window_violations}});
    return json{{"peak_entries", peak_entries}, {"retained_ratio", retained_ratio},
                {"gating_events", gating_events}, {"window", window},
                {"forward_seconds", forward_seconds}, {"gate_seconds", gate_seconds},
                {"evict_seconds", evict_seconds}, {"events", ev}};
  }
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline void track_peak(const KVCache<float>& cache, EngineStats& stats) {
  stats.peak_entries.resize(cache.layers.size(), 0);
  for (std::size_t l = 0; l < cache.layers.size(); ++l)
    stats.peak_entries[l] = std::max(stats.peak_entries[l], cache.layer_entries(l));
}

inline void finish_ratios(const KVCache<float>& cache, EngineStats& stats) {
  stats.retained_ratio.assign(cache.layers.size(), {});
  const double seen = double(cache.next_position);
  for (std::size_t l = 0; l < cache.layers.size(); ++l)
    for (const auto& head : cache.layers[l])
      stats.retained_ratio[l].push_back(seen > 0 ? double(head.size()) / seen : 0.0);
}

/// Writes scores onto the trailing entries of every head of `layer` whose
/// positions are `positions` (the most recent, still unscored entries).
inline void assign_scores(KVCache<float>& cache, std::size_t layer, std::span<const Position> positions,
                          const Matrix<float>& scores) {
  auto& heads = cache.layers[layer];
  for (std::size_t h = 0; h < heads.size(); ++h) {
    auto& head = heads[h];
    if (head.size() < positions.size()) throw std::logic_error("assign_scores: head shorter than batch");
    const std::size_t base = head.size() - positions.size();
    for (std::size_t t = 0; t < positions.size(); ++t) {
      if (head.positions[base + t] != positions[t]) throw std::logic_error("assign_scores: position mismatch");
      const float s = scores(t, h);
      if (!(s >= 0.0f && s <= 1.0f)) throw NumericError("importance score outside [0,1]");
      head.scores[base + t] = s;
    }
  }
}

}  // namespace detail

struct PrefillResult {
  KVCache<float> cache;
  Matrix<float> logits;  // one row per prompt token
  EngineStats stats;

  std::span<const float> last_logits() const { return logits.row(logits.rows() - 1); }
};

/// Processes `tokens` in chunks of policy.chunk_size. After each chunk the new
/// entries are scored by `scorer` and the cache is evicted to budget with the
/// most recent `window` tokens exempt. A null scorer disables gating and
/// eviction (plain chunked prefill).
inline PrefillResult prefill_chunked(const TransformerWeights<float>& weights, ImportanceScorer* scorer,
                                     std::span<const Token> tokens, const EvictionPolicy& policy) {
  policy.validate();
  if (tokens.empty()) throw std::invalid_argument("prefill_chunked: empty prompt");
  const ModelConfig& c = weights.config;
  PrefillResult out{KVCache<float>::empty(c), Matrix<float>(0, c.vocab_size), {}};
  out.stats.window = policy.prefill_window_for(tokens.size());
  std::vector<Position> positions;
  for (std::size_t begin = 0; begin < tokens.size(); begin += policy.chunk_size) {
    const std::size_t end = std::min(tokens.size(), begin + policy.chunk_size);
    auto t0 = detail::Clock::now();
    auto fwd = forward<float>(tokens.subspan(begin, end - begin), out.cache, weights, {.hiddens = scorer != nullptr});
    out.stats.forward_seconds += detail::seconds_since(t0);
    out.logits.append_rows(fwd.logits);
    detail::track_peak(out.cache, out.stats);
    if (!scorer) continue;

    positions.resize(end - begin);
    for (std::size_t t = 0; t < positions.size(); ++t) positions[t] = Position(begin + t);
    t0 = detail::Clock::now();
    for (std::size_t l = 0; l < c.n_layers; ++l)
      detail::assign_scores(out.cache, l, positions, scorer->score(l, fwd.hiddens[l], positions));
    out.stats.gate_seconds += detail::seconds_since(t0);
    ++out.stats.gating_events;

    t0 = detail::Clock::now();
    const Position window_start = Position(end) - Position(std::min(out.stats.window, end));
    out.stats.events.push_back(evict(out.cache, policy, {end, window_start}));
    out.stats.evict_seconds += detail::seconds_since(t0);
  }
  detail::finish_ratios(out.cache, out.stats);
  return out;
}

struct Sampler {
  enum class Kind { greedy, categorical } kind = Kind::greedy;
  std::uint64_t seed = 0;
  double temperature = 1.0;
};

/// Draws the next token from logits; greedy picks the lowest-index maximum.
class TokenSampler {
 public:
  explicit TokenSampler(Sampler s) : cfg_(s), rng_(s.seed) {}
  Token operator()(std::span<const float> logits) {
    if (cfg_.kind == Sampler::Kind::greedy) return argmax_token<float>(logits);
    double mx = -INFINITY;
    for (float v : logits) mx = std::max(mx, double(v));
    std::vector<double> w(logits.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp((double(logits[i]) - mx) / cfg_.temperature);
    std::discrete_distribution<std::size_t> d(w.begin(), w.end());
    return static_cast<Token>(d(rng_));
  }

 private:
  Sampler cfg_;
  std::mt19937_64 rng_;
};

struct DecodeResult {
  std::vector<Token> tokens;
  Matrix<float> logits;  // row i: logits after feeding tokens[i]
  EngineStats stats;
};

/// Generates n_steps tokens. Each step appends the new token's KV entries
/// unscored and buffers its hidden states; when decode_buffer states have
/// accumulated (and once more at the end if any remain) they are gated in
/// one batch and the cache is evicted with the last decode_window tokens
/// exempt. A null scorer decodes without gating or eviction.
inline DecodeResult decode_gated(const TransformerWeights<float>& weights, ImportanceScorer* scorer,
                                 KVCache<float>& cache, std::span<const float> prompt_logits, std::size_t n_steps,
                                 const EvictionPolicy& policy, Sampler sampler = {}) {
  policy.validate();
  const ModelConfig& c = weights.config;
  if (policy.budget_mode == BudgetMode::fixed_total && policy.fixed_total < c.n_kv_heads * policy.decode_window)
    throw ConfigError("fixed_total budget " + std::to_string(policy.fixed_total) +
                      " is smaller than the decode window (" + std::to_string(c.n_kv_heads) + " heads x " +
                      std::to_string(policy.decode_window) + " tokens)");

  DecodeResult out{{}, Matrix<float>(0, c.vocab_size), {}};
  TokenSampler sample(sampler);
  std::vector<float> logits(prompt_logits.begin(), prompt_logits.end());
  std::vector<Matrix<float>> buffer(c.n_layers);
  std::vector<Position> buffer_pos;
  out.stats.window = policy.decode_window;
  detail::track_peak(cache, out.stats);

  auto flush = [&] {
    if (buffer_pos.empty()) return;
    auto t0 = detail::Clock::now();
    for (std::size_t l = 0; l < c.n_layers; ++l)
      detail::assign_scores(cache, l, buffer_pos, scorer->score(l, buffer[l], buffer_pos));
    out.stats.gate_seconds += detail::seconds_since(t0);
    ++out.stats.gating_events;
    t0 = detail::Clock::now();
    const std::size_t seen = std::size_t(cache.next_position);
    const Position window_start = Position(seen) - Position(std::min(policy.decode_window, seen));
    out.stats.events.push_back(evict(cache, policy, {seen, window_start}));
    out.stats.evict_seconds += detail::seconds_since(t0);
    for (auto& b : buffer) b = Matrix<float>();
    buffer_pos.clear();
  };

  for (std::size_t step = 0; step < n_steps; ++step) {
    const Token tok = sample(logits);
    out.tokens.push_back(tok);
    const auto t0 = detail::Clock::now();
    auto fwd = forward<float>(std::span<const Token>(&tok, 1), cache, weights, {.hiddens = scorer != nullptr});
    out.stats.forward_seconds += detail::seconds_since(t0);
    out.logits.append_rows(fwd.logits);
    logits.assign(fwd.logits.row(0).begin(), fwd.logits.row(0).end());
    detail::track_peak(cache, out.stats);
    if (!scorer) continue;
    for (std::size_t l = 0; l < c.n_layers; ++l) buffer[l].append_rows(fwd.hiddens[l]);
    buffer_pos.push_back(cache.next_position - 1);
    if (buffer_pos.size() == policy.decode_buffer) flush();
  }
  if (scorer) flush();
  detail::finish_ratios(cache, out.stats);
  return out;
}

}  // namespace fastkv
