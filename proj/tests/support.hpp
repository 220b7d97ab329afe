#pragma once

// Shared fixtures and hand-rolled generators for the test suites.

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fastkv/model.hpp"
#include "fastkv/gate.hpp"

namespace fastkv::testing {

inline ModelConfig tiny_model(std::size_t layers = 2) {
  ModelConfig c;
  c.n_layers = layers;
  c.d_model = 16;
  c.n_kv_heads = 2;
  c.group_size = 2;
  c.d_head = 4;
  c.d_ff = 32;
  c.max_position = 512;
  c.init_std = 0.25;
  return c;
}

inline std::vector<Token> random_tokens(std::size_t n, std::mt19937_64& rng, Token hi = 255) {
  std::uniform_int_distribution<Token> d(0, hi);
  std::vector<Token> out(n);
  for (auto& t : out) t = d(rng);
  return out;
}

inline std::vector<Token> random_tokens(std::size_t n, std::uint64_t seed, Token hi = 255) {
  std::mt19937_64 rng(seed);
  return random_tokens(n, rng, hi);
}

template <typename Real>
Matrix<Real> random_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  Matrix<Real> m(rows, cols);
  fill_normal<Real>(m.data(), stddev, rng);
  return m;
}

template <typename Real>
Matrix<Real> random_unit_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix<Real> m(rows, cols);
  for (auto& v : m.data()) v = static_cast<Real>(u(rng));
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("fastkv_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path source_dir() { return FASTKV_SOURCE_DIR; }

}  // namespace fastkv::testing

namespace fastkv::testing {

/// Gate params with every tensor randomized (γ near 1, β spread around 0),
/// so gradient checks exercise all code paths.
inline GateParams<double> random_gate(const GateConfig& cfg, std::mt19937_64& rng, double stddev = 0.5) {
  auto p = GateParams<double>::zeros(cfg);
  std::normal_distribution<double> n(0.0, 1.0);
  p.for_each_tensor([&](const TensorInfo& info, std::span<double> s) {
    for (auto& v : s) {
      if (info.name.starts_with("gamma"))
        v = 1.0 + 0.3 * n(rng);
      else if (info.name == "beta" || info.name.starts_with("b_"))
        v = n(rng);
      else
        v = stddev * n(rng);
    }
  });
  return p;
}

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
};

/// Central differences over every parameter; relative error is
/// |a - n| / max(|a|, |n|, floor).
inline GradcheckResult gradcheck(const GateParams<double>& params, const Matrix<double>& hiddens,
                                 const Matrix<double>& targets, double step = 1e-4, double floor = 1e-6) {
  GradcheckResult res;
  const auto analytic = gate_loss_and_grad<double>(params, hiddens, targets);
  auto probe = params;
  std::vector<std::string> names;
  probe.for_each_tensor([&](const TensorInfo& info, std::span<double>) { names.push_back(info.name); });
  auto ps = probe.spans();
  auto grads = const_cast<GateParams<double>&>(analytic.grads).spans();
  for (std::size_t t = 0; t < ps.size(); ++t)
    for (std::size_t i = 0; i < ps[t].size(); ++i) {
      const double orig = ps[t][i];
      ps[t][i] = orig + step;
      const double up = gate_loss_and_grad<double>(probe, hiddens, targets).loss;
      ps[t][i] = orig - step;
      const double down = gate_loss_and_grad<double>(probe, hiddens, targets).loss;
      ps[t][i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double a = grads[t][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_tensor = names[t];
      }
    }
  return res;
}

/// Small gate shape used by the gradient checks.
inline GateConfig gradcheck_gate(GateVariant variant, bool per_head_norm = false) {
  GateConfig g;
  g.d_model = 8;
  g.n_kv_heads = 2;
  g.group_size = 2;
  g.d_low = 4;
  g.n_sinks = 3;
  g.variant = variant;
  g.per_head_norm = per_head_norm;
  return g;
}

}  // namespace fastkv::testing
