#pragma once

// Frozen toy decoder-only transformer: pre-norm blocks, RMSNorm, rotary
// position embeddings, grouped-query attention and a SwiGLU MLP. Serves as
// the hidden-state source for the gates and as the attention oracle.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fastkv/common.hpp"

namespace fastkv {

using Token = std::int32_t;
using Position = std::int64_t;

/// Where the per-layer hidden state handed to the gates is tapped.
enum class HiddenTap {
  post_norm,          // after the pre-attention RMSNorm (attention input)
  pre_norm_residual,  // raw residual stream entering the block
};

inline constexpr double kRmsNormEps = 1e-6;

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 64;
  std::size_t n_kv_heads = 2;
  std::size_t group_size = 2;
  std::size_t d_head = 16;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 260;
  double rope_theta = 10000.0;
  std::size_t max_position = 4096;
  double init_std = 0.02;
  HiddenTap hidden_tap = HiddenTap::post_norm;

  std::size_t n_q_heads() const { return n_kv_heads * group_size; }
  std::size_t q_dim() const { return n_q_heads() * d_head; }
  std::size_t kv_dim() const { return n_kv_heads * d_head; }

  void validate() const {
    if (n_layers == 0) throw ConfigError("empty model: n_layers must be >= 1");
    if (d_model == 0 || n_kv_heads == 0 || group_size == 0 || d_head == 0 || d_ff == 0 ||
        vocab_size == 0 || max_position == 0)
      throw ConfigError("model config has a zero-sized dimension");
    if (d_head % 2 != 0) throw ConfigError("d_head must be even for rotary embeddings");
    if (!(rope_theta > 0)) throw ConfigError("rope_theta must be positive");
    if (!(init_std > 0) || !std::isfinite(init_std)) throw ConfigError("init_std must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename Real>
struct LayerWeights {
  std::vector<Real> attn_norm;  // D
  std::vector<Real> wq;         // (H·G·d_head) × D
  std::vector<Real> wk;         // (H·d_head) × D
  std::vector<Real> wv;         // (H·d_head) × D
  std::vector<Real> wo;         // D × (H·G·d_head)
  std::vector<Real> mlp_norm;   // D
  std::vector<Real> w_gate;     // d_ff × D
  std::vector<Real> w_up;       // d_ff × D
  std::vector<Real> w_down;     // D × d_ff
};

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
};

template <typename Real>
struct TransformerWeights {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<Real> embedding;  // vocab × D
  std::vector<LayerWeights<Real>> layers;
  std::vector<Real> final_norm;  // D
  std::vector<Real> lm_head;     // vocab × D

  /// Visits every tensor in serialization order: fn(info, span).
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    const auto& c = self.config;
    fn(TensorInfo{"embedding", {c.vocab_size, c.d_model}}, std::span(self.embedding));
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      fn(TensorInfo{p + "attn_norm", {c.d_model}}, std::span(L.attn_norm));
      fn(TensorInfo{p + "wq", {c.q_dim(), c.d_model}}, std::span(L.wq));
      fn(TensorInfo{p + "wk", {c.kv_dim(), c.d_model}}, std::span(L.wk));
      fn(TensorInfo{p + "wv", {c.kv_dim(), c.d_model}}, std::span(L.wv));
      fn(TensorInfo{p + "wo", {c.d_model, c.q_dim()}}, std::span(L.wo));
      fn(TensorInfo{p + "mlp_norm", {c.d_model}}, std::span(L.mlp_norm));
      fn(TensorInfo{p + "w_gate", {c.d_ff, c.d_model}}, std::span(L.w_gate));
      fn(TensorInfo{p + "w_up", {c.d_ff, c.d_model}}, std::span(L.w_up));
      fn(TensorInfo{p + "w_down", {c.d_model, c.d_ff}}, std::span(L.w_down));
    }
    fn(TensorInfo{"final_norm", {c.d_model}}, std::span(self.final_norm));
    fn(TensorInfo{"lm_head", {c.vocab_size, c.d_model}}, std::span(self.lm_head));
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    visit(*this, std::forward<Fn>(fn));
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    visit(*this, std::forward<Fn>(fn));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const TensorInfo&, auto span) { n += span.size(); });
    return n;
  }

  std::size_t attention_parameter_count() const {
    const auto& c = config;
    return 2 * c.q_dim() * c.d_model + 2 * c.kv_dim() * c.d_model;
  }

  /// Allocates correctly-shaped zero tensors (norm scales are zero too).
  static TransformerWeights zeros(const ModelConfig& config) {
    TransformerWeights w;
    w.config = config;
    w.layers.resize(config.n_layers);
    const auto& c = config;
    w.embedding.assign(c.vocab_size * c.d_model, Real(0));
    for (auto& L : w.layers) {
      L.attn_norm.assign(c.d_model, Real(0));
      L.wq.assign(c.q_dim() * c.d_model, Real(0));
      L.wk.assign(c.kv_dim() * c.d_model, Real(0));
      L.wv.assign(c.kv_dim() * c.d_model, Real(0));
      L.wo.assign(c.d_model * c.q_dim(), Real(0));
      L.mlp_norm.assign(c.d_model, Real(0));
      L.w_gate.assign(c.d_ff * c.d_model, Real(0));
      L.w_up.assign(c.d_ff * c.d_model, Real(0));
      L.w_down.assign(c.d_model * c.d_ff, Real(0));
    }
    w.final_norm.assign(c.d_model, Real(0));
    w.lm_head.assign(c.vocab_size * c.d_model, Real(0));
    return w;
  }

  template <typename Other>
  TransformerWeights<Other> cast() const {
    auto out = TransformerWeights<Other>::zeros(config);
    out.seed = seed;
    std::vector<std::span<const Real>> src;
    for_each_tensor([&](const TensorInfo&, auto s) { src.emplace_back(s.data(), s.size()); });
    std::size_t i = 0;
    out.for_each_tensor([&](const TensorInfo&, auto dst) {
      std::transform(src[i].begin(), src[i].end(), dst.begin(),
                     [](Real v) { return static_cast<Other>(v); });
      ++i;
    });
    return out;
  }

  friend bool operator==(const TransformerWeights& a, const TransformerWeights& b) {
    if (!(a.config == b.config) || a.seed != b.seed) return false;
    std::vector<std::span<const Real>> lhs;
    a.for_each_tensor([&](const TensorInfo&, auto s) { lhs.emplace_back(s.data(), s.size()); });
    std::size_t i = 0;
    bool same = true;
    b.for_each_tensor([&](const TensorInfo&, auto s) {
      same = same && std::equal(s.begin(), s.end(), lhs[i].begin(), lhs[i].end());
      ++i;
    });
    return same;
  }
};

/// Normal(0, init_std) draws from one mt19937_64 stream in tensor order;
/// norm scales are ones. Values are drawn in double and rounded to Real, so
/// float and double models built from the same seed agree up to rounding.
template <typename Real = float>
TransformerWeights<Real> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  auto w = TransformerWeights<Real>::zeros(config);
  w.seed = seed;
  std::mt19937_64 rng(seed);
  w.for_each_tensor([&](const TensorInfo& info, std::span<Real> s) {
    const bool is_norm = info.shape.size() == 1;
    if (is_norm)
      std::fill(s.begin(), s.end(), Real(1));
    else
      fill_normal(s, config.init_std, rng);
  });
  return w;
}

/// Rotary embedding: rotates pairs (2i, 2i+1) by position·theta^(-2i/d).
template <typename Real>
void apply_rope_inplace(std::span<Real> vec, Position position, double theta) {
  const std::size_t d = vec.size();
  if (d % 2 != 0) throw std::invalid_argument("apply_rope: vector width must be even");
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(theta, -2.0 * double(i) / double(d));
    const double angle = double(position) * freq;
    const double c = std::cos(angle), s = std::sin(angle);
    const double x0 = vec[2 * i], x1 = vec[2 * i + 1];
    vec[2 * i] = static_cast<Real>(x0 * c - x1 * s);
    vec[2 * i + 1] = static_cast<Real>(x0 * s + x1 * c);
  }
}

template <typename Real>
std::vector<Real> apply_rope(std::span<const Real> vec, Position position, double theta) {
  std::vector<Real> out(vec.begin(), vec.end());
  apply_rope_inplace(std::span<Real>(out), position, theta);
  return out;
}

template <typename Real>
void rms_norm(std::span<const Real> x, std::span<const Real> scale, std::span<Real> out,
              double eps = kRmsNormEps) {
  double ss = 0.0;
  for (auto v : x) ss += double(v) * double(v);
  const double inv = 1.0 / std::sqrt(ss / double(x.size()) + eps);
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = static_cast<Real>(double(x[i]) * inv * double(scale[i]));
}

/// One KV head's entries, ordered by position. Keys are stored post-RoPE.
/// `scores` is empty-optional until a gate has scored the entry.
template <typename Real>
struct HeadCache {
  std::size_t d_head = 0;
  std::vector<Position> positions;
  std::vector<Real> keys;
  std::vector<Real> values;
  std::vector<std::optional<float>> scores;

  std::size_t size() const { return positions.size(); }
  std::span<const Real> key(std::size_t i) const { return {keys.data() + i * d_head, d_head}; }
  std::span<const Real> value(std::size_t i) const { return {values.data() + i * d_head, d_head}; }

  void append(Position pos, std::span<const Real> k, std::span<const Real> v,
              std::optional<float> score = std::nullopt) {
    if (!positions.empty() && pos <= positions.back())
      throw std::logic_error("HeadCache: positions must be strictly increasing");
    positions.push_back(pos);
    keys.insert(keys.end(), k.begin(), k.end());
    values.insert(values.end(), v.begin(), v.end());
    scores.push_back(score);
  }

  /// Keeps entries whose flag is set, preserving order.
  void retain(const std::vector<bool>& keep) {
    std::size_t out = 0;
    for (std::size_t i = 0; i < size(); ++i) {
      if (!keep[i]) continue;
      if (out != i) {
        positions[out] = positions[i];
        scores[out] = scores[i];
        std::copy_n(keys.begin() + i * d_head, d_head, keys.begin() + out * d_head);
        std::copy_n(values.begin() + i * d_head, d_head, values.begin() + out * d_head);
      }
      ++out;
    }
    positions.resize(out);
    scores.resize(out);
    keys.resize(out * d_head);
    values.resize(out * d_head);
  }

  friend bool operator==(const HeadCache&, const HeadCache&) = default;
};

/// Per-layer, per-KV-head cache. Used both uncompressed (full) and as the
/// compressed cache maintained by the eviction engine.
template <typename Real>
struct KVCache {
  std::vector<std::vector<HeadCache<Real>>> layers;
  Position next_position = 0;

  static KVCache empty(const ModelConfig& config) {
    KVCache c;
    c.layers.assign(config.n_layers, std::vector<HeadCache<Real>>(config.n_kv_heads));
    for (auto& layer : c.layers)
      for (auto& head : layer) head.d_head = config.d_head;
    return c;
  }

  std::size_t layer_entries(std::size_t l) const {
    std::size_t n = 0;
    for (const auto& h : layers[l]) n += h.size();
    return n;
  }
  std::size_t total_entries() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layers.size(); ++l) n += layer_entries(l);
    return n;
  }

  friend bool operator==(const KVCache&, const KVCache&) = default;
};

template <typename Real>
using LayerKVCacheFull = std::vector<HeadCache<Real>>;

struct CaptureFlags {
  bool hiddens = true;
  bool attention = false;
};

template <typename Real>
struct ForwardResult {
  std::vector<Matrix<Real>> hiddens;  // per layer: T_new × D at the configured tap
  Matrix<Real> logits;                // T_new × vocab
  // attention[l][q_head]: T_new × |cache head after append|, columns follow
  // the head's entry order; masked (future) keys are exactly zero.
  std::vector<std::vector<Matrix<Real>>> attention;
};

/// Runs new tokens against `cache`, appending their KV entries (unscored).
/// Query head h·G+j reads KV head h.
template <typename Real>
ForwardResult<Real> forward(std::span<const Token> tokens, KVCache<Real>& cache,
                            const TransformerWeights<Real>& weights, CaptureFlags capture = {}) {
  const ModelConfig& c = weights.config;
  const std::size_t T = tokens.size();
  if (T == 0) throw std::invalid_argument("forward: empty token sequence");
  if (cache.layers.size() != c.n_layers) throw std::invalid_argument("forward: cache layer count mismatch");
  const Position first = cache.next_position;
  if (first + Position(T) > Position(c.max_position))
    throw DataError("position overflow: " + std::to_string(first + Position(T)) +
                    " tokens exceed max_position " + std::to_string(c.max_position));

  const std::size_t D = c.d_model, dh = c.d_head, Hq = c.n_q_heads(), G = c.group_size;
  const double scale = 1.0 / std::sqrt(double(dh));

  ForwardResult<Real> result;
  if (capture.hiddens) result.hiddens.reserve(c.n_layers);
  if (capture.attention) result.attention.resize(c.n_layers);

  Matrix<Real> x(T, D);
  for (std::size_t t = 0; t < T; ++t) {
    const Token tok = tokens[t];
    if (tok < 0 || std::size_t(tok) >= c.vocab_size)
      throw DataError("token id out of range: " + std::to_string(tok));
    std::copy_n(weights.embedding.begin() + std::size_t(tok) * D, D, x.row(t).begin());
  }

  Matrix<Real> xn(T, D), q(T, c.q_dim()), k(T, c.kv_dim()), v(T, c.kv_dim()), attn_out(T, c.q_dim());
  std::vector<Real> tmp(D), ff_a(c.d_ff), ff_u(c.d_ff);
  std::vector<double> probs;

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& L = weights.layers[l];
    auto& heads = cache.layers[l];
    for (std::size_t t = 0; t < T; ++t) {
      rms_norm<Real>(x.row(t), L.attn_norm, xn.row(t));
      matvec<Real>(L.wq, c.q_dim(), xn.row(t), q.row(t));
      matvec<Real>(L.wk, c.kv_dim(), xn.row(t), k.row(t));
      matvec<Real>(L.wv, c.kv_dim(), xn.row(t), v.row(t));
      const Position pos = first + Position(t);
      for (std::size_t h = 0; h < Hq; ++h)
        apply_rope_inplace(q.row(t).subspan(h * dh, dh), pos, c.rope_theta);
      for (std::size_t h = 0; h < c.n_kv_heads; ++h) {
        apply_rope_inplace(k.row(t).subspan(h * dh, dh), pos, c.rope_theta);
        heads[h].append(pos, k.row(t).subspan(h * dh, dh), v.row(t).subspan(h * dh, dh));
      }
    }
    if (capture.hiddens) result.hiddens.push_back(c.hidden_tap == HiddenTap::post_norm ? xn : x);
    if (capture.attention) {
      result.attention[l].reserve(Hq);
      for (std::size_t qh = 0; qh < Hq; ++qh)
        result.attention[l].emplace_back(T, heads[qh / G].size());
    }

    for (std::size_t t = 0; t < T; ++t) {
      const Position pos = first + Position(t);
      for (std::size_t qh = 0; qh < Hq; ++qh) {
        const auto& head = heads[qh / G];
        const auto qv = std::span<const Real>(q.row(t)).subspan(qh * dh, dh);
        std::size_t n_visible = 0;
        while (n_visible < head.size() && head.positions[n_visible] <= pos) ++n_visible;
        probs.assign(n_visible, 0.0);
        double mx = -INFINITY;
        for (std::size_t i = 0; i < n_visible; ++i) {
          probs[i] = dot<Real>(qv, head.key(i)) * scale;
          mx = std::max(mx, probs[i]);
        }
        double denom = 0.0;
        for (auto& p : probs) {
          p = std::exp(p - mx);
          denom += p;
        }
        auto out = attn_out.row(t).subspan(qh * dh, dh);
        for (std::size_t d = 0; d < dh; ++d) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n_visible; ++i) acc += probs[i] * double(head.values[i * dh + d]);
          out[d] = static_cast<Real>(acc / denom);
        }
        if (capture.attention) {
          auto row = result.attention[l][qh].row(t);
          for (std::size_t i = 0; i < n_visible; ++i) row[i] = static_cast<Real>(probs[i] / denom);
        }
      }
      matvec<Real>(L.wo, D, attn_out.row(t), tmp);
      for (std::size_t d = 0; d < D; ++d) x(t, d) += tmp[d];

      rms_norm<Real>(x.row(t), L.mlp_norm, tmp);
      matvec<Real>(L.w_gate, c.d_ff, tmp, ff_a);
      matvec<Real>(L.w_up, c.d_ff, tmp, ff_u);
      for (std::size_t f = 0; f < c.d_ff; ++f)
        ff_a[f] = static_cast<Real>(silu(double(ff_a[f])) * double(ff_u[f]));
      matvec<Real>(L.w_down, D, ff_a, tmp);
      for (std::size_t d = 0; d < D; ++d) x(t, d) += tmp[d];
    }
  }

  result.logits = Matrix<Real>(T, c.vocab_size);
  for (std::size_t t = 0; t < T; ++t) {
    rms_norm<Real>(x.row(t), weights.final_norm, tmp);
    matvec<Real>(weights.lm_head, c.vocab_size, tmp, result.logits.row(t));
  }
  cache.next_position = first + Position(T);
  return result;
}

/// Dense per-layer, per-query-head T×T causal attention probabilities.
template <typename Real>
using AttentionTensor = std::vector<std::vector<Matrix<Real>>>;

/// Whole-sequence reference pass, written independently of `forward`: all
/// projections are materialized as matrices and the score matrix is formed
/// explicitly. Calls fn(layer, q_head, probs) once per head; probs is T×T
/// lower-triangular. Memory stays at one T×T matrix at a time.
template <typename Real>
void for_each_attention_matrix(
    std::span<const Token> tokens, const TransformerWeights<Real>& weights,
    const std::function<void(std::size_t, std::size_t, const Matrix<Real>&)>& fn) {
  const ModelConfig& c = weights.config;
  const std::size_t T = tokens.size(), D = c.d_model, dh = c.d_head;
  if (T == 0) throw std::invalid_argument("attention_matrix_bruteforce: empty sequence");
  if (T > c.max_position) throw DataError("sequence longer than max_position");

  auto project = [](const Matrix<Real>& in, const std::vector<Real>& w, std::size_t out_dim) {
    Matrix<Real> out(in.rows(), out_dim);
    for (std::size_t r = 0; r < in.rows(); ++r)
      for (std::size_t o = 0; o < out_dim; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < in.cols(); ++i) acc += double(w[o * in.cols() + i]) * double(in(r, i));
        out(r, o) = static_cast<Real>(acc);
      }
    return out;
  };
  auto norm_rows = [&](const Matrix<Real>& in, const std::vector<Real>& scale) {
    Matrix<Real> out(in.rows(), in.cols());
    for (std::size_t r = 0; r < in.rows(); ++r) rms_norm<Real>(in.row(r), scale, out.row(r));
    return out;
  };
  auto rope_rows = [&](Matrix<Real>& m, std::size_t n_heads) {
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t h = 0; h < n_heads; ++h)
        apply_rope_inplace(m.row(r).subspan(h * dh, dh), Position(r), c.rope_theta);
  };

  Matrix<Real> x(T, D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) x(t, d) = weights.embedding[std::size_t(tokens[t]) * D + d];

  const double scale = 1.0 / std::sqrt(double(dh));
  Matrix<Real> probs(T, T);
  std::vector<double> scores(T);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& L = weights.layers[l];
    const Matrix<Real> xn = norm_rows(x, L.attn_norm);
    Matrix<Real> Q = project(xn, L.wq, c.q_dim());
    Matrix<Real> K = project(xn, L.wk, c.kv_dim());
    const Matrix<Real> V = project(xn, L.wv, c.kv_dim());
    rope_rows(Q, c.n_q_heads());
    rope_rows(K, c.n_kv_heads);

    Matrix<Real> heads_out(T, c.q_dim());
    for (std::size_t qh = 0; qh < c.n_q_heads(); ++qh) {
      const std::size_t kvh = qh / c.group_size;
      probs = Matrix<Real>(T, T);
      for (std::size_t i = 0; i < T; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t d = 0; d < dh; ++d) s += double(Q(i, qh * dh + d)) * double(K(j, kvh * dh + d));
          scores[j] = s * scale;
          mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        for (std::size_t d = 0; d < dh; ++d) {
          double acc = 0.0;
          for (std::size_t j = 0; j <= i; ++j) acc += scores[j] * double(V(j, kvh * dh + d));
          heads_out(i, qh * dh + d) = static_cast<Real>(acc / z);
        }
        for (std::size_t j = 0; j <= i; ++j) probs(i, j) = static_cast<Real>(scores[j] / z);
      }
      fn(l, qh, probs);
    }

    const Matrix<Real> o = project(heads_out, L.wo, D);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += o.data()[i];
    const Matrix<Real> xm = norm_rows(x, L.mlp_norm);
    Matrix<Real> a = project(xm, L.w_gate, c.d_ff);
    const Matrix<Real> u = project(xm, L.w_up, c.d_ff);
    for (std::size_t i = 0; i < a.size(); ++i)
      a.data()[i] = static_cast<Real>(silu(double(a.data()[i])) * double(u.data()[i]));
    const Matrix<Real> m = project(a, L.w_down, D);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += m.data()[i];
  }
}

template <typename Real>
AttentionTensor<Real> attention_matrix_bruteforce(std::span<const Token> tokens,
                                                  const TransformerWeights<Real>& weights) {
  AttentionTensor<Real> out(weights.config.n_layers,
                            std::vector<Matrix<Real>>(weights.config.n_q_heads()));
  for_each_attention_matrix<Real>(tokens, weights,
                                  [&](std::size_t l, std::size_t h, const Matrix<Real>& p) { out[l][h] = p; });
  return out;
}

/// Greedy pick with lowest-index tie-breaking.
template <typename Real>
Token argmax_token(std::span<const Real> logits) {
  return static_cast<Token>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

}  // namespace fastkv
