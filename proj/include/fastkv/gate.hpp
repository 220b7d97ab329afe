#pragma once

// Low-rank sink-attention gate g_l: R^D -> [0,1]^H and its ablation variants.
//
// For each token the gate projects the hidden state to one low-rank key per
// KV head and G low-rank queries per KV head, normalizes them (RMS with a
// learnable scale), and scores head h as
//
//   s_h = 1/G · Σ_j exp(q_jh·k_h) / (exp(q_jh·k_h) + Σ_r exp(q_jh·k_sink[r,h]) + b_jh)
//
// with b = softplus(β) ≥ 0. There is no positional input and no logit scale.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fastkv/common.hpp"
#include "fastkv/model.hpp"

namespace fastkv {

enum class GateVariant { sink_attention, no_denominator, mlp, linear };

inline std::string to_string(GateVariant v) {
  switch (v) {
    case GateVariant::sink_attention: return "sink_attention";
    case GateVariant::no_denominator: return "no_denominator";
    case GateVariant::mlp: return "mlp";
    case GateVariant::linear: return "linear";
  }
  return "?";
}

inline GateVariant gate_variant_from_string(const std::string& s) {
  if (s == "sink_attention") return GateVariant::sink_attention;
  if (s == "no_denominator") return GateVariant::no_denominator;
  if (s == "mlp") return GateVariant::mlp;
  if (s == "linear") return GateVariant::linear;
  throw ConfigError("unknown gate variant '" + s + "'");
}

struct GateConfig {
  std::size_t d_model = 64;
  std::size_t n_kv_heads = 2;
  std::size_t group_size = 2;
  std::size_t d_low = 16;
  std::size_t n_sinks = 16;
  GateVariant variant = GateVariant::sink_attention;
  double norm_eps = 1e-6;
  bool per_head_norm = false;   // γ per (head, group slot) instead of shared
  std::size_t mlp_hidden = 0;   // 0: chosen to match the sink-attention parameter count
  double init_std = 0.02;

  void validate() const {
    if (d_model == 0 || n_kv_heads == 0 || group_size == 0)
      throw ConfigError("gate config has a zero-sized dimension");
    if (d_low == 0) throw ConfigError("gate d_low must be >= 1");
    if (!(norm_eps > 0)) throw ConfigError("gate norm_eps must be positive");
    if (!(init_std > 0)) throw ConfigError("gate init_std must be positive");
  }

  /// Parameter count of the sink-attention gate with this shape.
  std::size_t sink_attention_parameter_count() const {
    const std::size_t H = n_kv_heads, G = group_size, Dl = d_low, D = d_model;
    const std::size_t gammas = per_head_norm ? (H + G * H) * Dl : 2 * Dl;
    return H * Dl * D + G * H * Dl * D + gammas + n_sinks * H * Dl + G * H;
  }

  std::size_t mlp_hidden_width() const {
    if (mlp_hidden > 0) return mlp_hidden;
    const double target = double(sink_attention_parameter_count()) - double(n_kv_heads);
    const double per_unit = double(2 * d_model + n_kv_heads);
    return std::max<std::size_t>(1, round_half_up(target / per_unit));
  }

  static GateConfig for_model(const ModelConfig& m) {
    GateConfig g;
    g.d_model = m.d_model;
    g.n_kv_heads = m.n_kv_heads;
    g.group_size = m.group_size;
    return g;
  }

  friend bool operator==(const GateConfig&, const GateConfig&) = default;
};

template <typename Real>
struct GateParams {
  GateConfig config;
  // sink_attention / no_denominator
  std::vector<Real> wk;       // (H·D') × D
  std::vector<Real> wq;       // (H·G·D') × D, row block (h·G + j)
  std::vector<Real> gamma_k;  // D'  (H·D' when per_head_norm)
  std::vector<Real> gamma_q;  // D'  (H·G·D' when per_head_norm)
  std::vector<Real> k_sink;   // S × H × D'   (sink_attention only)
  std::vector<Real> beta;     // G × H, b = softplus(β)   (sink_attention only)
  // mlp: s = sigmoid(W_down (silu(W_gate h) ⊙ W_up h) + b_down)
  std::vector<Real> w_gate, w_up, w_down, b_down;
  // linear: s = sigmoid(W h + b)
  std::vector<Real> w_lin, b_lin;

  /// Visits the tensors used by the configured variant, in file order.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    const auto& c = self.config;
    const std::size_t H = c.n_kv_heads, G = c.group_size, Dl = c.d_low, D = c.d_model;
    switch (c.variant) {
      case GateVariant::sink_attention:
      case GateVariant::no_denominator:
        fn(TensorInfo{"wk", {H * Dl, D}}, std::span(self.wk));
        fn(TensorInfo{"wq", {H * G * Dl, D}}, std::span(self.wq));
        fn(TensorInfo{"gamma_k", {self.gamma_k.size()}}, std::span(self.gamma_k));
        fn(TensorInfo{"gamma_q", {self.gamma_q.size()}}, std::span(self.gamma_q));
        if (c.variant == GateVariant::sink_attention) {
          if (c.n_sinks > 0) fn(TensorInfo{"k_sink", {c.n_sinks, H, Dl}}, std::span(self.k_sink));
          fn(TensorInfo{"beta", {G, H}}, std::span(self.beta));
        }
        break;
      case GateVariant::mlp: {
        const std::size_t F = c.mlp_hidden_width();
        fn(TensorInfo{"w_gate", {F, D}}, std::span(self.w_gate));
        fn(TensorInfo{"w_up", {F, D}}, std::span(self.w_up));
        fn(TensorInfo{"w_down", {H, F}}, std::span(self.w_down));
        fn(TensorInfo{"b_down", {H}}, std::span(self.b_down));
        break;
      }
      case GateVariant::linear:
        fn(TensorInfo{"w_lin", {H, D}}, std::span(self.w_lin));
        fn(TensorInfo{"b_lin", {H}}, std::span(self.b_lin));
        break;
    }
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
    for_each_tensor([&](const TensorInfo&, auto s) { n += s.size(); });
    return n;
  }

  static GateParams zeros(const GateConfig& c) {
    c.validate();
    GateParams p;
    p.config = c;
    const std::size_t H = c.n_kv_heads, G = c.group_size, Dl = c.d_low, D = c.d_model;
    switch (c.variant) {
      case GateVariant::sink_attention:
        p.k_sink.assign(c.n_sinks * H * Dl, Real(0));
        p.beta.assign(G * H, Real(0));
        [[fallthrough]];
      case GateVariant::no_denominator:
        p.wk.assign(H * Dl * D, Real(0));
        p.wq.assign(H * G * Dl * D, Real(0));
        p.gamma_k.assign(c.per_head_norm ? H * Dl : Dl, Real(0));
        p.gamma_q.assign(c.per_head_norm ? H * G * Dl : Dl, Real(0));
        break;
      case GateVariant::mlp: {
        const std::size_t F = c.mlp_hidden_width();
        p.w_gate.assign(F * D, Real(0));
        p.w_up.assign(F * D, Real(0));
        p.w_down.assign(H * F, Real(0));
        p.b_down.assign(H, Real(0));
        break;
      }
      case GateVariant::linear:
        p.w_lin.assign(H * D, Real(0));
        p.b_lin.assign(H, Real(0));
        break;
    }
    return p;
  }

  /// Flattened views, one per tensor, in visit order.
  std::vector<std::span<Real>> spans() {
    std::vector<std::span<Real>> out;
    for_each_tensor([&](const TensorInfo&, std::span<Real> s) { out.push_back(s); });
    return out;
  }

  template <typename Other>
  GateParams<Other> cast() const {
    auto out = GateParams<Other>::zeros(config);
    std::vector<std::span<const Real>> src;
    for_each_tensor([&](const TensorInfo&, auto s) { src.emplace_back(s.data(), s.size()); });
    std::size_t i = 0;
    out.for_each_tensor([&](const TensorInfo&, std::span<Other> dst) {
      std::transform(src[i].begin(), src[i].end(), dst.begin(),
                     [](Real v) { return static_cast<Other>(v); });
      ++i;
    });
    return out;
  }

  /// FNV-1a over the raw tensor bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for_each_tensor([&](const TensorInfo&, auto s) {
      h = fnv1a_values<Real>(std::span<const Real>(s.data(), s.size()), h);
    });
    return h;
  }

  friend bool operator==(const GateParams&, const GateParams&) = default;
};

/// Projections and sinks ~ N(0, init_std); γ = 1; β = 0 (b = ln 2); biases 0.
template <typename Real = float>
GateParams<Real> init_gate(const GateConfig& config, std::uint64_t seed) {
  auto p = GateParams<Real>::zeros(config);
  std::mt19937_64 rng(seed);
  p.for_each_tensor([&](const TensorInfo& info, std::span<Real> s) {
    if (info.name.starts_with("gamma"))
      std::fill(s.begin(), s.end(), Real(1));
    else if (info.name == "beta" || info.name.starts_with("b_"))
      std::fill(s.begin(), s.end(), Real(0));
    else
      fill_normal(s, config.init_std, rng);
  });
  return p;
}

/// One sink-attention fraction exp(e)/(exp(e) + Σ_r exp(c_r) + b), evaluated
/// after subtracting max(e, c..., 0); b enters as b·exp(-max).
inline double sink_attention_fraction(double e, std::span<const double> sink_logits, double b) {
  double m = std::max(e, 0.0);
  for (double c : sink_logits) m = std::max(m, c);
  const double num = std::exp(e - m);
  double den = num + b * std::exp(-m);
  for (double c : sink_logits) den += std::exp(c - m);
  return num / den;
}

namespace detail {

// Forward intermediates of one token, kept for the backward pass.
struct GateTrace {
  std::vector<double> k_raw, k_hat, k, k_inv;  // H·D', H·D', H·D', H
  std::vector<double> q_raw, q_hat, q, q_inv;  // HG·D', ..., HG
  std::vector<double> frac;                    // HG (slot h·G+j)
  std::vector<double> sink_exp;                // HG·S, exp(c - m)
  std::vector<double> den, shift;              // HG
  std::vector<double> a, u, z;                 // mlp hidden
  std::vector<double> out_logit;               // H, mlp/linear pre-sigmoid
  std::vector<double> scores;                  // H
};

template <typename Real>
void gate_normed(std::span<const Real> w, std::span<const Real> gamma, bool per_slot,
                 std::size_t n_slots, std::size_t Dl, double eps, std::span<const Real> h,
                 std::vector<double>& raw, std::vector<double>& hat, std::vector<double>& out,
                 std::vector<double>& inv) {
  const std::size_t D = h.size();
  raw.assign(n_slots * Dl, 0.0);
  hat.assign(n_slots * Dl, 0.0);
  out.assign(n_slots * Dl, 0.0);
  inv.assign(n_slots, 0.0);
  for (std::size_t row = 0; row < n_slots * Dl; ++row) {
    double acc = 0.0;
    const Real* wr = w.data() + row * D;
    for (std::size_t i = 0; i < D; ++i) acc += double(wr[i]) * double(h[i]);
    raw[row] = acc;
  }
  for (std::size_t s = 0; s < n_slots; ++s) {
    double ss = 0.0;
    for (std::size_t d = 0; d < Dl; ++d) ss += raw[s * Dl + d] * raw[s * Dl + d];
    inv[s] = 1.0 / std::sqrt(ss / double(Dl) + eps);
    for (std::size_t d = 0; d < Dl; ++d) {
      hat[s * Dl + d] = raw[s * Dl + d] * inv[s];
      out[s * Dl + d] = hat[s * Dl + d] * double(gamma[per_slot ? s * Dl + d : d]);
    }
  }
}

template <typename Real>
void gate_token_forward(const GateParams<Real>& p, std::span<const Real> h, GateTrace& tr) {
  const GateConfig& c = p.config;
  const std::size_t H = c.n_kv_heads, G = c.group_size, Dl = c.d_low, S = c.n_sinks, D = c.d_model;
  tr.scores.assign(H, 0.0);
  switch (c.variant) {
    case GateVariant::sink_attention:
    case GateVariant::no_denominator: {
      const bool sinks = c.variant == GateVariant::sink_attention;
      gate_normed<Real>(p.wk, p.gamma_k, c.per_head_norm, H, Dl, c.norm_eps, h, tr.k_raw, tr.k_hat, tr.k,
                        tr.k_inv);
      gate_normed<Real>(p.wq, p.gamma_q, c.per_head_norm, H * G, Dl, c.norm_eps, h, tr.q_raw, tr.q_hat,
                        tr.q, tr.q_inv);
      tr.frac.assign(H * G, 0.0);
      tr.den.assign(H * G, 0.0);
      tr.shift.assign(H * G, 0.0);
      tr.sink_exp.assign(H * G * S, 0.0);
      for (std::size_t hd = 0; hd < H; ++hd) {
        double sum = 0.0;
        for (std::size_t j = 0; j < G; ++j) {
          const std::size_t slot = hd * G + j;
          const double* q = tr.q.data() + slot * Dl;
          const double* k = tr.k.data() + hd * Dl;
          double e = 0.0;
          for (std::size_t d = 0; d < Dl; ++d) e += q[d] * k[d];
          double frac;
          if (sinks) {
            double m = std::max(e, 0.0);
            double* cexp = tr.sink_exp.data() + slot * S;
            for (std::size_t r = 0; r < S; ++r) {
              const Real* ks = p.k_sink.data() + (r * H + hd) * Dl;
              double cr = 0.0;
              for (std::size_t d = 0; d < Dl; ++d) cr += q[d] * double(ks[d]);
              cexp[r] = cr;
              m = std::max(m, cr);
            }
            const double b = softplus(double(p.beta[j * H + hd]));
            const double num = std::exp(e - m);
            double den = num + b * std::exp(-m);
            for (std::size_t r = 0; r < S; ++r) {
              cexp[r] = std::exp(cexp[r] - m);
              den += cexp[r];
            }
            frac = num / den;
            tr.den[slot] = den;
            tr.shift[slot] = m;
          } else {
            frac = sigmoid(e);
          }
          tr.frac[slot] = frac;
          sum += frac;
        }
        tr.scores[hd] = sum / double(G);
      }
      break;
    }
    case GateVariant::mlp: {
      const std::size_t F = c.mlp_hidden_width();
      tr.a.assign(F, 0.0);
      tr.u.assign(F, 0.0);
      tr.z.assign(F, 0.0);
      tr.out_logit.assign(H, 0.0);
      for (std::size_t f = 0; f < F; ++f) {
        double a = 0.0, u = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
          a += double(p.w_gate[f * D + i]) * double(h[i]);
          u += double(p.w_up[f * D + i]) * double(h[i]);
        }
        tr.a[f] = a;
        tr.u[f] = u;
        tr.z[f] = silu(a) * u;
      }
      for (std::size_t hd = 0; hd < H; ++hd) {
        double o = double(p.b_down[hd]);
        for (std::size_t f = 0; f < F; ++f) o += double(p.w_down[hd * F + f]) * tr.z[f];
        tr.out_logit[hd] = o;
        tr.scores[hd] = sigmoid(o);
      }
      break;
    }
    case GateVariant::linear: {
      tr.out_logit.assign(H, 0.0);
      for (std::size_t hd = 0; hd < H; ++hd) {
        double o = double(p.b_lin[hd]);
        for (std::size_t i = 0; i < D; ++i) o += double(p.w_lin[hd * D + i]) * double(h[i]);
        tr.out_logit[hd] = o;
        tr.scores[hd] = sigmoid(o);
      }
      break;
    }
  }
}

// Backprop of one RMS-normalized projection block into W and γ.
template <typename Real>
void gate_normed_backward(std::span<const double> dout, const std::vector<double>& hat,
                          const std::vector<double>& inv, std::span<const Real> gamma, bool per_slot,
                          std::size_t n_slots, std::size_t Dl, std::span<const Real> h,
                          std::span<Real> dw, std::span<Real> dgamma) {
  const std::size_t D = h.size();
  std::vector<double> dhat(Dl);
  for (std::size_t s = 0; s < n_slots; ++s) {
    double proj = 0.0;
    for (std::size_t d = 0; d < Dl; ++d) {
      const std::size_t gi = per_slot ? s * Dl + d : d;
      const double dy = dout[s * Dl + d];
      dgamma[gi] += static_cast<Real>(dy * hat[s * Dl + d]);
      dhat[d] = dy * double(gamma[gi]);
      proj += dhat[d] * hat[s * Dl + d];
    }
    proj /= double(Dl);
    for (std::size_t d = 0; d < Dl; ++d) {
      const double dx = inv[s] * (dhat[d] - hat[s * Dl + d] * proj);
      if (dx == 0.0) continue;
      Real* row = dw.data() + (s * Dl + d) * D;
      for (std::size_t i = 0; i < D; ++i) row[i] += static_cast<Real>(dx * double(h[i]));
    }
  }
}

template <typename Real>
void gate_token_backward(const GateParams<Real>& p, std::span<const Real> h, const GateTrace& tr,
                         std::span<const double> dscores, GateParams<Real>& grad) {
  const GateConfig& c = p.config;
  const std::size_t H = c.n_kv_heads, G = c.group_size, Dl = c.d_low, S = c.n_sinks, D = c.d_model;
  switch (c.variant) {
    case GateVariant::sink_attention:
    case GateVariant::no_denominator: {
      const bool sinks = c.variant == GateVariant::sink_attention;
      std::vector<double> dq(H * G * Dl, 0.0), dk(H * Dl, 0.0);
      for (std::size_t hd = 0; hd < H; ++hd) {
        for (std::size_t j = 0; j < G; ++j) {
          const std::size_t slot = hd * G + j;
          const double f = tr.frac[slot];
          const double dfrac = dscores[hd] / double(G);
          const double de = dfrac * f * (1.0 - f);
          const double* q = tr.q.data() + slot * Dl;
          const double* k = tr.k.data() + hd * Dl;
          for (std::size_t d = 0; d < Dl; ++d) {
            dq[slot * Dl + d] += de * k[d];
            dk[hd * Dl + d] += de * q[d];
          }
          if (!sinks) continue;
          const double den = tr.den[slot];
          const double* cexp = tr.sink_exp.data() + slot * S;
          for (std::size_t r = 0; r < S; ++r) {
            const double dc = -dfrac * f * cexp[r] / den;
            const Real* ks = p.k_sink.data() + (r * H + hd) * Dl;
            Real* dks = grad.k_sink.data() + (r * H + hd) * Dl;
            for (std::size_t d = 0; d < Dl; ++d) {
              dq[slot * Dl + d] += dc * double(ks[d]);
              dks[d] += static_cast<Real>(dc * q[d]);
            }
          }
          const double db = -dfrac * f * std::exp(-tr.shift[slot]) / den;
          grad.beta[j * H + hd] += static_cast<Real>(db * sigmoid(double(p.beta[j * H + hd])));
        }
      }
      gate_normed_backward<Real>(dk, tr.k_hat, tr.k_inv, p.gamma_k, c.per_head_norm, H, Dl, h, grad.wk,
                                 grad.gamma_k);
      gate_normed_backward<Real>(dq, tr.q_hat, tr.q_inv, p.gamma_q, c.per_head_norm, H * G, Dl, h, grad.wq,
                                 grad.gamma_q);
      break;
    }
    case GateVariant::mlp: {
      const std::size_t F = c.mlp_hidden_width();
      std::vector<double> dz(F, 0.0);
      for (std::size_t hd = 0; hd < H; ++hd) {
        const double s = tr.scores[hd];
        const double dout = dscores[hd] * s * (1.0 - s);
        grad.b_down[hd] += static_cast<Real>(dout);
        for (std::size_t f = 0; f < F; ++f) {
          grad.w_down[hd * F + f] += static_cast<Real>(dout * tr.z[f]);
          dz[f] += dout * double(p.w_down[hd * F + f]);
        }
      }
      for (std::size_t f = 0; f < F; ++f) {
        const double a = tr.a[f], sg = sigmoid(a);
        const double du = dz[f] * silu(a);
        const double da = dz[f] * tr.u[f] * sg * (1.0 + a * (1.0 - sg));
        for (std::size_t i = 0; i < D; ++i) {
          grad.w_gate[f * D + i] += static_cast<Real>(da * double(h[i]));
          grad.w_up[f * D + i] += static_cast<Real>(du * double(h[i]));
        }
      }
      break;
    }
    case GateVariant::linear: {
      for (std::size_t hd = 0; hd < H; ++hd) {
        const double s = tr.scores[hd];
        const double dout = dscores[hd] * s * (1.0 - s);
        grad.b_lin[hd] += static_cast<Real>(dout);
        for (std::size_t i = 0; i < D; ++i) grad.w_lin[hd * D + i] += static_cast<Real>(dout * double(h[i]));
      }
      break;
    }
  }
}

}  // namespace detail

/// Scores every row of `hiddens` (T × D) independently; returns T × H.
template <typename Real>
Matrix<Real> gate_forward(const Matrix<Real>& hiddens, const GateParams<Real>& params) {
  const GateConfig& c = params.config;
  if (hiddens.rows() > 0 && hiddens.cols() != c.d_model)
    throw std::invalid_argument("gate_forward: hidden width " + std::to_string(hiddens.cols()) +
                                " != gate d_model " + std::to_string(c.d_model));
  Matrix<Real> out(hiddens.rows(), c.n_kv_heads);
  detail::GateTrace tr;
  for (std::size_t t = 0; t < hiddens.rows(); ++t) {
    detail::gate_token_forward(params, hiddens.row(t), tr);
    for (std::size_t h = 0; h < c.n_kv_heads; ++h) out(t, h) = static_cast<Real>(tr.scores[h]);
  }
  return out;
}

inline constexpr double kBceClamp = 1e-7;

inline double bce_term(double pred, double target) {
  const double s = std::clamp(pred, kBceClamp, 1.0 - kBceClamp);
  return -(target * std::log(s) + (1.0 - target) * std::log(1.0 - s));
}

/// Mean soft-label binary cross-entropy with predictions clamped to
/// [1e-7, 1 - 1e-7].
template <typename Real>
double bce_loss(std::span<const Real> pred, std::span<const Real> target) {
  if (pred.size() != target.size())
    throw std::invalid_argument("bce_loss: shape mismatch (" + std::to_string(pred.size()) + " vs " +
                                std::to_string(target.size()) + ")");
  if (pred.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += bce_term(double(pred[i]), double(target[i]));
  return acc / double(pred.size());
}

template <typename Real>
struct GateLossAndGrad {
  double loss = 0.0;
  GateParams<Real> grads;
};

/// BCE of the gate against soft targets (T × H) and its analytic gradient
/// with respect to every gate tensor.
template <typename Real>
GateLossAndGrad<Real> gate_loss_and_grad(const GateParams<Real>& params, const Matrix<Real>& hiddens,
                                         const Matrix<Real>& targets) {
  const GateConfig& c = params.config;
  const std::size_t T = hiddens.rows(), H = c.n_kv_heads;
  if (hiddens.cols() != c.d_model) throw std::invalid_argument("gate_loss_and_grad: hidden width mismatch");
  if (targets.rows() != T || targets.cols() != H)
    throw std::invalid_argument("gate_loss_and_grad: target shape mismatch");
  for (auto v : hiddens.data())
    if (!std::isfinite(double(v))) throw NumericError("gate_loss_and_grad: non-finite hidden state");
  for (auto v : targets.data())
    if (!std::isfinite(double(v)) || v < 0 || v > 1)
      throw NumericError("gate_loss_and_grad: target outside [0,1]");

  GateLossAndGrad<Real> out{0.0, GateParams<Real>::zeros(c)};
  if (T == 0) return out;
  const double norm = 1.0 / double(T * H);
  detail::GateTrace tr;
  std::vector<double> ds(H);
  for (std::size_t t = 0; t < T; ++t) {
    detail::gate_token_forward(params, hiddens.row(t), tr);
    for (std::size_t h = 0; h < H; ++h) {
      const double s = tr.scores[h], y = double(targets(t, h));
      out.loss += bce_term(s, y) * norm;
      const bool clamped = s < kBceClamp || s > 1.0 - kBceClamp;
      ds[h] = clamped ? 0.0 : norm * (s - y) / (s * (1.0 - s));
    }
    detail::gate_token_backward(params, hiddens.row(t), tr, ds, out.grads);
  }
  return out;
}

}  // namespace fastkv
