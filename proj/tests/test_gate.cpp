#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fastkv/gate.hpp"
#include "support.hpp"

namespace fastkv {
namespace {

using testing::gradcheck;
using testing::gradcheck_gate;
using testing::random_gate;
using testing::random_matrix;
using testing::random_unit_matrix;

TEST(SinkFraction, ZeroLogitsSixteenSinksNoBias) {
  const std::vector<double> sinks(16, 0.0);
  EXPECT_NEAR(sink_attention_fraction(0.0, sinks, 0.0), 1.0 / 17.0, 1e-12);
}

TEST(SinkFraction, NoSinksNoBiasIsOne) {
  EXPECT_EQ(sink_attention_fraction(3.7, {}, 0.0), 1.0);
  EXPECT_EQ(sink_attention_fraction(-50.0, {}, 0.0), 1.0);
}

TEST(SinkFraction, BiasOnlyIsLogistic) {
  // exp(e) / (exp(e) + b) = sigmoid(e - ln b)
  for (double e : {-3.0, 0.0, 2.5})
    for (double b : {0.5, 1.0, 4.0}) EXPECT_NEAR(sink_attention_fraction(e, {}, b), sigmoid(e - std::log(b)), 1e-14);
}

TEST(SinkFraction, MonotoneInOwnLogit) {
  const std::vector<double> sinks{0.3, -1.2, 2.0};
  double prev = 0.0;
  for (double e = -10; e <= 10; e += 0.25) {
    const double f = sink_attention_fraction(e, sinks, 0.7);
    EXPECT_GT(f, prev);
    prev = f;
  }
}

TEST(SinkFraction, DecreasingInEachSinkLogit) {
  std::vector<double> sinks{0.3, -1.2, 2.0};
  const double base = sink_attention_fraction(0.5, sinks, 0.7);
  for (std::size_t r = 0; r < sinks.size(); ++r) {
    auto more = sinks;
    more[r] += 0.5;
    EXPECT_LT(sink_attention_fraction(0.5, more, 0.7), base);
  }
}

TEST(SinkFraction, SinkPermutationInvariant) {
  std::vector<double> sinks{0.3, -1.2, 2.0, 0.0, 5.5};
  const double base = sink_attention_fraction(1.0, sinks, 0.2);
  std::sort(sinks.begin(), sinks.end());
  do {
    EXPECT_NEAR(sink_attention_fraction(1.0, sinks, 0.2), base, 1e-15);
  } while (std::next_permutation(sinks.begin(), sinks.end()));
}

TEST(SinkFraction, StableForHugeLogits) {
  const std::vector<double> sinks{800.0, 700.0};
  const double f = sink_attention_fraction(900.0, sinks, 1.0);
  EXPECT_TRUE(std::isfinite(f));
  EXPECT_NEAR(f, 1.0, 1e-12);
  EXPECT_NEAR(sink_attention_fraction(-900.0, sinks, 1.0), 0.0, 1e-300);
}

TEST(GateForward, ZeroProjectionsGiveAnalyticValue) {
  // Zero projections make every logit zero, so s = 1 / (1 + S + b).
  GateConfig cfg;
  auto p = GateParams<double>::zeros(cfg);
  std::fill(p.gamma_k.begin(), p.gamma_k.end(), 1.0);
  std::fill(p.gamma_q.begin(), p.gamma_q.end(), 1.0);
  Matrix<double> h(3, cfg.d_model);
  std::mt19937_64 rng(1);
  fill_normal<double>(h.data(), 1.0, rng);
  const auto s = gate_forward(h, p);
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / (17.0 + std::numbers::ln2), 1e-12);

  std::fill(p.beta.begin(), p.beta.end(), -60.0);  // b = softplus(-60) ~ 1e-26
  const auto s0 = gate_forward(h, p);
  for (double v : s0.data()) EXPECT_NEAR(v, 1.0 / 17.0, 1e-9);
}

TEST(GateForward, InitialBiasIsLnTwo) {
  const auto p = init_gate<double>(GateConfig{}, 3);
  for (double b : p.beta) EXPECT_NEAR(softplus(b), std::numbers::ln2, 1e-15);
}

TEST(GateForward, ScoresInUnitInterval) {
  std::mt19937_64 rng(4);
  for (auto v : {GateVariant::sink_attention, GateVariant::no_denominator, GateVariant::mlp, GateVariant::linear}) {
    auto cfg = GateConfig{};
    cfg.variant = v;
    const auto p = random_gate(cfg, rng, 1.0);
    const auto h = random_matrix<double>(50, cfg.d_model, 3.0, rng);
    const auto scores = gate_forward(h, p);
    for (double s : scores.data()) {
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
  }
}

TEST(GateForward, NoDenominatorIsSigmoidOfLogit) {
  std::mt19937_64 rng(5);
  auto cfg = gradcheck_gate(GateVariant::no_denominator);
  cfg.group_size = 1;
  const auto p = random_gate(cfg, rng);
  const auto h = random_matrix<double>(10, cfg.d_model, 1.0, rng);
  const auto s = gate_forward(h, p);
  // Recompute the logit q·k independently.
  for (std::size_t t = 0; t < h.rows(); ++t)
    for (std::size_t hd = 0; hd < cfg.n_kv_heads; ++hd) {
      auto normed = [&](const std::vector<double>& w, const std::vector<double>& g, std::size_t slot) {
        std::vector<double> v(cfg.d_low);
        double ss = 0;
        for (std::size_t d = 0; d < cfg.d_low; ++d) {
          for (std::size_t i = 0; i < cfg.d_model; ++i) v[d] += w[(slot * cfg.d_low + d) * cfg.d_model + i] * h(t, i);
          ss += v[d] * v[d];
        }
        const double inv = 1.0 / std::sqrt(ss / double(cfg.d_low) + cfg.norm_eps);
        for (std::size_t d = 0; d < cfg.d_low; ++d) v[d] *= inv * g[d];
        return v;
      };
      const auto k = normed(p.wk, p.gamma_k, hd);
      const auto q = normed(p.wq, p.gamma_q, hd);
      double e = 0;
      for (std::size_t d = 0; d < cfg.d_low; ++d) e += q[d] * k[d];
      EXPECT_NEAR(s(t, hd), 1.0 / (1.0 + std::exp(-e)), 1e-12);
    }
}

TEST(GateForward, RowsScoredIndependently) {
  std::mt19937_64 rng(6);
  const auto cfg = GateConfig{};
  const auto p = random_gate(cfg, rng);
  const auto h = random_matrix<double>(12, cfg.d_model, 1.0, rng);
  const auto all = gate_forward(h, p);
  for (std::size_t t = 0; t < h.rows(); ++t) {
    Matrix<double> one(0, cfg.d_model);
    one.push_row(h.row(t));
    const auto s = gate_forward(one, p);
    for (std::size_t hd = 0; hd < cfg.n_kv_heads; ++hd) EXPECT_EQ(s(0, hd), all(t, hd));
  }
  // Reversing row order permutes outputs exactly.
  Matrix<double> rev(0, cfg.d_model);
  for (std::size_t t = h.rows(); t-- > 0;) rev.push_row(h.row(t));
  const auto rs = gate_forward(rev, p);
  for (std::size_t t = 0; t < h.rows(); ++t)
    for (std::size_t hd = 0; hd < cfg.n_kv_heads; ++hd) EXPECT_EQ(rs(h.rows() - 1 - t, hd), all(t, hd));
}

TEST(GateForward, WidthMismatchThrows) {
  const auto p = init_gate<float>(GateConfig{}, 1);
  EXPECT_THROW(gate_forward(Matrix<float>(2, 10), p), std::invalid_argument);
}

TEST(GateParams, LinearParameterCount) {
  GateConfig cfg;
  cfg.variant = GateVariant::linear;
  EXPECT_EQ(init_gate<float>(cfg, 1).parameter_count(), cfg.n_kv_heads * cfg.d_model + cfg.n_kv_heads);
}

TEST(GateParams, SinkAttentionParameterCount) {
  GateConfig cfg;
  const std::size_t H = 2, G = 2, Dl = 16, D = 64, S = 16;
  EXPECT_EQ(init_gate<float>(cfg, 1).parameter_count(), H * Dl * D + G * H * Dl * D + 2 * Dl + S * H * Dl + G * H);
  EXPECT_EQ(cfg.sink_attention_parameter_count(), init_gate<float>(cfg, 1).parameter_count());
}

TEST(GateParams, MlpMatchesSinkAttentionWithinTwoPercent) {
  GateConfig cfg;
  const double sink = double(init_gate<float>(cfg, 1).parameter_count());
  cfg.variant = GateVariant::mlp;
  const double mlp = double(init_gate<float>(cfg, 1).parameter_count());
  EXPECT_LE(std::abs(mlp - sink) / sink, 0.02);
}

TEST(GateParams, SameSeedSameInit) {
  EXPECT_TRUE(init_gate<float>(GateConfig{}, 9) == init_gate<float>(GateConfig{}, 9));
  EXPECT_FALSE(init_gate<float>(GateConfig{}, 9) == init_gate<float>(GateConfig{}, 10));
}

TEST(Bce, AnalyticValues) {
  const std::vector<double> pred{0.5, 0.25, 0.9}, target{1.0, 0.0, 0.3};
  const double expected = (std::log(2.0) - std::log(0.75) - (0.3 * std::log(0.9) + 0.7 * std::log(0.1))) / 3.0;
  EXPECT_NEAR(bce_loss<double>(pred, target), expected, 1e-14);
}

TEST(Bce, ClampsExtremePredictions) {
  const std::vector<double> pred{0.0, 1.0}, target{1.0, 0.0};
  EXPECT_NEAR(bce_loss<double>(pred, target), -std::log(1e-7), 1e-9);
}

TEST(Bce, ShapeMismatchThrows) {
  const std::vector<double> a{0.1, 0.2}, b{0.1};
  EXPECT_THROW(bce_loss<double>(a, b), std::invalid_argument);
}

TEST(Bce, MinimizedAtTarget) {
  for (double y : {0.05, 0.3, 0.8})
    for (double d : {-0.02, 0.02}) {
      const std::vector<double> t{y}, at{y}, off{y + d};
      EXPECT_LT(bce_loss<double>(at, t), bce_loss<double>(off, t));
    }
}

TEST(GateLoss, RejectsTargetsOutsideUnitInterval) {
  const auto p = init_gate<double>(GateConfig{}, 1);
  Matrix<double> h(1, 64), t(1, 2);
  t(0, 0) = 1.5;
  EXPECT_THROW(gate_loss_and_grad<double>(p, h, t), NumericError);
}

TEST(GateLoss, RejectsNonFiniteHiddens) {
  const auto p = init_gate<double>(GateConfig{}, 1);
  Matrix<double> h(1, 64), t(1, 2);
  h(0, 3) = std::nan("");
  EXPECT_THROW(gate_loss_and_grad<double>(p, h, t), NumericError);
}

TEST(GateLoss, LossMatchesForwardBce) {
  std::mt19937_64 rng(7);
  const auto cfg = GateConfig{};
  const auto p = random_gate(cfg, rng);
  const auto h = random_matrix<double>(9, cfg.d_model, 1.0, rng);
  const auto t = random_unit_matrix<double>(9, cfg.n_kv_heads, rng);
  const auto s = gate_forward(h, p);
  EXPECT_NEAR(gate_loss_and_grad<double>(p, h, t).loss, bce_loss<double>(s.data(), t.data()), 1e-13);
}

struct GradcheckCase {
  GateVariant variant;
  bool per_head_norm;
};

class Gradcheck : public ::testing::TestWithParam<GradcheckCase> {};

TEST_P(Gradcheck, AnalyticMatchesCentralDifferences) {
  const auto param = GetParam();
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    std::mt19937_64 rng(1000 + draw);
    const auto cfg = gradcheck_gate(param.variant, param.per_head_norm);
    const auto p = random_gate(cfg, rng);
    const auto h = random_matrix<double>(6, cfg.d_model, 1.0, rng);
    const auto t = random_unit_matrix<double>(6, cfg.n_kv_heads, rng);
    const auto r = gradcheck(p, h, t);
    EXPECT_LT(r.max_rel_error, 1e-4) << to_string(param.variant) << " draw " << draw << " worst " << r.worst_tensor;
    EXPECT_EQ(r.checked, p.parameter_count());
  }
}

INSTANTIATE_TEST_SUITE_P(AllVariants, Gradcheck,
                         ::testing::Values(GradcheckCase{GateVariant::sink_attention, false},
                                           GradcheckCase{GateVariant::sink_attention, true},
                                           GradcheckCase{GateVariant::no_denominator, false},
                                           GradcheckCase{GateVariant::no_denominator, true},
                                           GradcheckCase{GateVariant::mlp, false},
                                           GradcheckCase{GateVariant::linear, false}),
                         [](const auto& info) {
                           return to_string(info.param.variant) + (info.param.per_head_norm ? "_per_head" : "");
                         });

TEST(GateLoss, ClampedRegionHasZeroGradient) {
  GateConfig cfg = gradcheck_gate(GateVariant::linear);
  auto p = GateParams<double>::zeros(cfg);
  std::fill(p.b_lin.begin(), p.b_lin.end(), 40.0);  // sigmoid(40) > 1 - 1e-7
  Matrix<double> h(2, cfg.d_model), t(2, cfg.n_kv_heads);
  const auto g = gate_loss_and_grad<double>(p, h, t);
  for (double v : g.grads.b_lin) EXPECT_EQ(v, 0.0);
}

}  // namespace
}  // namespace fastkv
