#pragma once

// Distillation targets: the maximum attention probability each context KV
// pair receives while the frozen model re-reads the context after a repeat
// prompt, and the next-token variant that uses every causal query instead.

#include <algorithm>
#include <span>
#include <string_view>
#include <vector>

#include "fastkv/common.hpp"
#include "fastkv/corpus.hpp"
#include "fastkv/model.hpp"

namespace fastkv {

/// Dense (layer, head, position) tensor of values in [0, 1].
struct ImportanceScores {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t n_positions = 0;
  std::vector<float> values;

  ImportanceScores() = default;
  ImportanceScores(std::size_t layers, std::size_t heads, std::size_t positions)
      : n_layers(layers), n_heads(heads), n_positions(positions), values(layers * heads * positions, 0.0f) {}

  float& at(std::size_t l, std::size_t h, std::size_t i) { return values[(l * n_heads + h) * n_positions + i]; }
  float at(std::size_t l, std::size_t h, std::size_t i) const {
    return values[(l * n_heads + h) * n_positions + i];
  }

  double mean() const {
    double acc = 0.0;
    for (float v : values) acc += v;
    return values.empty() ? 0.0 : acc / double(values.size());
  }

  /// Position-major slice for one layer: n_positions × n_heads.
  Matrix<float> layer_matrix(std::size_t l) const {
    Matrix<float> m(n_positions, n_heads);
    for (std::size_t h = 0; h < n_heads; ++h)
      for (std::size_t i = 0; i < n_positions; ++i) m(i, h) = at(l, h, i);
    return m;
  }

  friend bool operator==(const ImportanceScores&, const ImportanceScores&) = default;
};

inline constexpr std::string_view kDefaultRepeatPrompt = "\n\nRepeat the previous context:\n\n";

/// The repeat prompt bracketed by the repeat-sep special token.
inline std::vector<Token> make_repeat_prompt(std::string_view text = kDefaultRepeatPrompt) {
  std::vector<Token> out{special::repeat_sep};
  auto body = encode_bytes(text);
  out.insert(out.end(), body.begin(), body.end());
  out.push_back(special::repeat_sep);
  return out;
}

struct ReconstructionLayout {
  std::vector<Token> tokens;  // ctx ∥ prompt ∥ ctx
  std::size_t key_begin = 0, key_end = 0;
  std::size_t query_begin = 0, query_end = 0;

  std::size_t prompt_begin() const { return key_end; }
};

inline ReconstructionLayout build_reconstruction_layout(std::span<const Token> ctx, std::span<const Token> prompt,
                                                        std::size_t max_position) {
  if (ctx.empty()) throw std::invalid_argument("build_reconstruction_layout: empty context");
  const std::size_t total = 2 * ctx.size() + prompt.size();
  if (total > max_position)
    throw DataError("reconstruction sequence of " + std::to_string(total) + " tokens exceeds max_position " +
                    std::to_string(max_position));
  ReconstructionLayout out;
  out.tokens.reserve(total);
  out.tokens.insert(out.tokens.end(), ctx.begin(), ctx.end());
  out.tokens.insert(out.tokens.end(), prompt.begin(), prompt.end());
  out.tokens.insert(out.tokens.end(), ctx.begin(), ctx.end());
  out.key_begin = 0;
  out.key_end = ctx.size();
  out.query_begin = ctx.size() + prompt.size();
  out.query_end = total;
  return out;
}

/// t[l,h,i] = max over the given query rows q and group members j of
/// A[l, h·G+j][q, key_begin + i], for keys in [key_begin, key_end).
template <typename Real>
ImportanceScores max_attention_targets(std::span<const Token> tokens, const TransformerWeights<Real>& weights,
                                       std::size_t key_begin, std::size_t key_end,
                                       std::span<const std::size_t> query_rows) {
  const ModelConfig& c = weights.config;
  ImportanceScores out(c.n_layers, c.n_kv_heads, key_end - key_begin);
  for_each_attention_matrix<Real>(tokens, weights, [&](std::size_t l, std::size_t qh, const Matrix<Real>& A) {
    const std::size_t h = qh / c.group_size;
    for (std::size_t q : query_rows) {
      const auto row = A.row(q);
      for (std::size_t i = key_begin; i < key_end; ++i) {
        float& slot = out.at(l, h, i - key_begin);
        slot = std::max(slot, static_cast<float>(row[i]));
      }
    }
  });
  return out;
}

struct ReconstructionOptions {
  bool include_prompt_queries = false;
};

template <typename Real>
ImportanceScores compute_reconstruction_targets(const TransformerWeights<Real>& weights,
                                                std::span<const Token> ctx, std::span<const Token> prompt,
                                                ReconstructionOptions opts = {}) {
  const auto layout = build_reconstruction_layout(ctx, prompt, weights.config.max_position);
  std::vector<std::size_t> rows;
  for (std::size_t q = opts.include_prompt_queries ? layout.prompt_begin() : layout.query_begin;
       q < layout.query_end; ++q)
    rows.push_back(q);
  return max_attention_targets<Real>(layout.tokens, weights, layout.key_begin, layout.key_end, rows);
}

template <typename Real>
ImportanceScores compute_reconstruction_targets(const TransformerWeights<Real>& weights,
                                                std::span<const Token> ctx) {
  const auto prompt = make_repeat_prompt();
  return compute_reconstruction_targets(weights, ctx, std::span<const Token>(prompt));
}

/// Next-token variant: every position queries every earlier key.
template <typename Real>
ImportanceScores compute_next_token_targets(const TransformerWeights<Real>& weights, std::span<const Token> seq) {
  std::vector<std::size_t> rows(seq.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return max_attention_targets<Real>(seq, weights, 0, seq.size(), rows);
}

}  // namespace fastkv
