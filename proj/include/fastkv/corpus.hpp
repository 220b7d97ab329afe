#pragma once

// Byte-level tokenizer and corpus sampling.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fastkv/common.hpp"
#include "fastkv/model.hpp"

namespace fastkv {

// Ids 0..255 are raw bytes; four specials follow.
namespace special {
inline constexpr Token pad = 256;
inline constexpr Token bos = 257;
inline constexpr Token eos = 258;
inline constexpr Token repeat_sep = 259;
}  // namespace special

inline constexpr std::size_t kByteVocab = 260;

inline std::vector<Token> encode_bytes(std::string_view text) {
  std::vector<Token> out;
  out.reserve(text.size());
  for (unsigned char ch : text) out.push_back(static_cast<Token>(ch));
  return out;
}

/// Printable form of a token for reports: "a", "\n", "0x07", "<eos>".
inline std::string token_label(Token t) {
  switch (t) {
    case special::pad: return "<pad>";
    case special::bos: return "<bos>";
    case special::eos: return "<eos>";
    case special::repeat_sep: return "<sep>";
    default: break;
  }
  if (t == '\n') return "\\n";
  if (t == '\t') return "\\t";
  if (t == ' ') return "<space>";
  if (t == ',') return "<comma>";
  if (t == '"') return "<quote>";
  if (t >= 33 && t < 127) return std::string(1, static_cast<char>(t));
  char buf[8];
  std::snprintf(buf, sizeof buf, "0x%02x", unsigned(t));
  return buf;
}

struct LongConcat {
  bool enabled = false;
  std::size_t target_length = 2048;
  friend bool operator==(const LongConcat&, const LongConcat&) = default;
};

struct CorpusSpec {
  std::vector<std::filesystem::path> sources;  // files or directories
  std::size_t min_seq_tokens = 256;
  std::size_t max_seq_tokens = 1024;
  std::size_t total_tokens = 50000;
  LongConcat long_concat;

  void validate() const {
    if (min_seq_tokens == 0) throw ConfigError("corpus min_seq_tokens must be >= 1");
    if (min_seq_tokens > max_seq_tokens) throw ConfigError("corpus requires min_seq_tokens <= max_seq_tokens");
    if (max_seq_tokens > total_tokens) throw ConfigError("corpus requires max_seq_tokens <= total_tokens");
    if (long_concat.enabled && long_concat.target_length == 0)
      throw ConfigError("corpus long_concat.target_length must be >= 1");
  }
  friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

/// Every regular file reachable from the sources, sorted for determinism.
inline std::vector<std::filesystem::path> list_corpus_files(const CorpusSpec& spec) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& src : spec.sources) {
    std::error_code ec;
    if (fs::is_directory(src, ec)) {
      for (const auto& e : fs::recursive_directory_iterator(src))
        if (e.is_regular_file()) files.push_back(e.path());
    } else if (fs::is_regular_file(src, ec)) {
      files.push_back(src);
    } else {
      throw DataError("corpus source not found: " + src.string());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

/// All corpus files as one token stream, documents separated by <eos>.
struct CorpusStream {
  std::vector<Token> tokens;
  std::uint64_t hash = 0;
};

inline CorpusStream load_corpus(const CorpusSpec& spec) {
  CorpusStream out;
  out.hash = 0xcbf29ce484222325ULL;
  for (const auto& path : list_corpus_files(spec)) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read corpus file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    if (text.empty()) continue;
    out.hash = fnv1a(std::as_bytes(std::span(text.data(), text.size())), out.hash);
    auto toks = encode_bytes(text);
    out.tokens.insert(out.tokens.end(), toks.begin(), toks.end());
    out.tokens.push_back(special::eos);
  }
  if (out.tokens.empty()) throw DataError("empty corpus: no text found in configured sources");
  return out;
}

/// Draws windows of uniform length in [min, max] at uniform offsets until the
/// running total reaches total_tokens, so the total lands in
/// [total_tokens, total_tokens + max_seq_tokens). With long_concat enabled,
/// half of the budget goes to short windows and the other half to sequences
/// of target_length built by concatenating further short windows.
inline std::vector<std::vector<Token>> sample_sequences(const CorpusStream& corpus, const CorpusSpec& spec,
                                                        std::uint64_t seed) {
  spec.validate();
  const std::size_t n = corpus.tokens.size();
  if (n < spec.min_seq_tokens)
    throw DataError("corpus has " + std::to_string(n) + " tokens, fewer than min_seq_tokens " +
                    std::to_string(spec.min_seq_tokens));
  std::mt19937_64 rng(seed);
  const std::size_t max_len = std::min(spec.max_seq_tokens, n);
  std::uniform_int_distribution<std::size_t> len_dist(spec.min_seq_tokens, max_len);
  auto draw = [&] {
    const std::size_t len = len_dist(rng);
    std::uniform_int_distribution<std::size_t> off_dist(0, n - len);
    const std::size_t off = off_dist(rng);
    return std::vector<Token>(corpus.tokens.begin() + off, corpus.tokens.begin() + off + len);
  };

  std::vector<std::vector<Token>> out;
  const std::size_t short_budget =
      spec.long_concat.enabled ? spec.total_tokens - spec.total_tokens / 2 : spec.total_tokens;
  std::size_t total = 0;
  while (total < short_budget) {
    out.push_back(draw());
    total += out.back().size();
  }
  if (spec.long_concat.enabled) {
    const std::size_t long_budget = spec.total_tokens / 2;
    std::size_t long_total = 0;
    while (long_total < long_budget) {
      std::vector<Token> seq;
      while (seq.size() < spec.long_concat.target_length) {
        auto piece = draw();
        seq.insert(seq.end(), piece.begin(), piece.end());
      }
      seq.resize(spec.long_concat.target_length);
      long_total += seq.size();
      out.push_back(std::move(seq));
    }
  }
  return out;
}

}  // namespace fastkv
