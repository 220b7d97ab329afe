#pragma once

// Shard building and per-layer gate training (plain SGD on soft-label BCE).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"

#include "fastkv/common.hpp"
#include "fastkv/corpus.hpp"
#include "fastkv/gate.hpp"
#include "fastkv/model.hpp"
#include "fastkv/serialize.hpp"
#include "fastkv/target_oracle.hpp"

namespace fastkv {

struct TrainerConfig {
  double learning_rate = 0.2;
  std::size_t steps = 500;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> batch_seed;  // defaults to `seed`
  double val_fraction = 0.1;
  std::size_t log_every = 50;
  std::size_t eval_cap = 8192;  // max train tuples used for the initial/final BCE

  void validate() const {
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
      throw ConfigError("trainer learning_rate must be finite and >= 0");
    if (batch_size == 0) throw ConfigError("trainer batch_size must be >= 1");
    if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("trainer val_fraction must be in [0, 1)");
    if (log_every == 0) throw ConfigError("trainer log_every must be >= 1");
  }
  friend bool operator==(const TrainerConfig&, const TrainerConfig&) = default;
};

inline json to_json(const TrainerConfig& c) {
  json j{{"learning_rate", c.learning_rate}, {"steps", c.steps},         {"batch_size", c.batch_size},
         {"seed", c.seed},                   {"val_fraction", c.val_fraction}, {"log_every", c.log_every}};
  if (c.batch_seed) j["batch_seed"] = *c.batch_seed;
  return j;
}

struct LossPoint {
  std::size_t step = 0;
  double train = 0.0;  // mean minibatch BCE over the logging interval
  double val = 0.0;    // BCE over the full validation split
};

struct LayerReport {
  std::size_t layer = 0;
  std::size_t n_train = 0, n_val = 0;
  double initial_train_bce = 0.0, final_train_bce = 0.0;
  double initial_val_bce = 0.0, final_val_bce = 0.0;
  std::vector<LossPoint> trajectory;
  std::uint64_t checksum = 0;
  double epochs = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<LayerReport> layers;
  double wall_seconds = 0.0;

  json to_json() const {
    json out{{"wall_seconds", wall_seconds}, {"layers", json::array()}};
    for (const auto& l : layers) {
      json traj = json::array();
      for (const auto& p : l.trajectory) traj.push_back({{"step", p.step}, {"train", p.train}, {"val", p.val}});
      char sum[17];
      std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(l.checksum));
      out["layers"].push_back({{"layer", l.layer},
                               {"n_train", l.n_train},
                               {"n_val", l.n_val},
                               {"initial_train_bce", l.initial_train_bce},
                               {"final_train_bce", l.final_train_bce},
                               {"initial_val_bce", l.initial_val_bce},
                               {"final_val_bce", l.final_val_bce},
                               {"epochs", l.epochs},
                               {"seconds", l.seconds},
                               {"params_checksum", sum},
                               {"trajectory", traj}});
    }
    return out;
  }
};

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: size mismatch");
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  auto ranks = [n](std::span<const double> v) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto x, auto y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * double(i + j);
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / double(n);
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / double(n);
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0 || vb == 0) return 0.0;
  return cov / std::sqrt(va * vb);
}

// ---- shard building ----------------------------------------------------------

/// Runs the reconstruction oracle over sampled contexts and returns one shard
/// per layer holding (hidden state, target) for every first-copy position.
/// Hidden states come from a plain forward over the context, which by
/// causality equals the first copy inside the reconstruction sequence.
inline std::vector<TrainingShard> build_training_shards(const TransformerWeights<float>& weights,
                                                        const CorpusSpec& corpus, std::span<const Token> prompt,
                                                        std::uint64_t seed,
                                                        std::size_t threads = worker_threads()) {
  const ModelConfig& c = weights.config;
  if (2 * corpus.max_seq_tokens + prompt.size() > c.max_position)
    throw DataError("max_seq_tokens " + std::to_string(corpus.max_seq_tokens) +
                    " does not fit the reconstruction layout under max_position " + std::to_string(c.max_position));
  if (corpus.long_concat.enabled && 2 * corpus.long_concat.target_length + prompt.size() > c.max_position)
    throw DataError("long_concat.target_length does not fit the reconstruction layout under max_position");

  const auto stream = load_corpus(corpus);
  const auto contexts = sample_sequences(stream, corpus, seed);

  struct Sample {
    std::vector<Matrix<float>> hiddens;
    ImportanceScores targets;
  };
  std::vector<Sample> samples(contexts.size());
  parallel_for(contexts.size(), threads, [&](std::size_t i) {
    auto cache = KVCache<float>::empty(c);
    auto fwd = forward<float>(contexts[i], cache, weights, {.hiddens = true, .attention = false});
    samples[i].hiddens = std::move(fwd.hiddens);
    samples[i].targets = compute_reconstruction_targets<float>(weights, contexts[i], prompt);
  });

  json provenance{{"corpus_hash", stream.hash},
                  {"seed", seed},
                  {"model_seed", weights.seed},
                  {"n_contexts", contexts.size()},
                  {"min_seq_tokens", corpus.min_seq_tokens},
                  {"max_seq_tokens", corpus.max_seq_tokens},
                  {"total_tokens", corpus.total_tokens}};
  std::vector<TrainingShard> shards(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto& s = shards[l];
    s.layer = l;
    s.provenance = provenance;
    s.hiddens = Matrix<float>(0, c.d_model);
    s.targets = Matrix<float>(0, c.n_kv_heads);
    for (const auto& smp : samples) {
      s.sample_lengths.push_back(smp.hiddens[l].rows());
      s.hiddens.append_rows(smp.hiddens[l]);
      s.targets.append_rows(smp.targets.layer_matrix(l));
    }
  }
  return shards;
}

// ---- training --------------------------------------------------------------

struct TrainedLayer {
  GateParams<float> params;
  LayerReport report;
};

namespace detail {

inline Matrix<double> gather_rows(const Matrix<float>& m, std::span<const std::size_t> rows) {
  Matrix<double> out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline double gate_bce(const GateParams<double>& p, const Matrix<double>& hiddens, const Matrix<double>& targets) {
  if (hiddens.rows() == 0) return 0.0;
  const auto pred = gate_forward(hiddens, p);
  return bce_loss<double>(pred.data(), targets.data());
}

}  // namespace detail

/// Deterministic train/validation split of tuple indices.
struct TupleSplit {
  std::vector<std::size_t> train, val;
};

inline TupleSplit split_tuples(std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_val = round_half_up(val_fraction * double(n));
  if (val_fraction > 0 && n_val == 0 && n >= 2) n_val = 1;
  TupleSplit s;
  s.val.assign(idx.begin(), idx.begin() + n_val);
  s.train.assign(idx.begin() + n_val, idx.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

/// Plain SGD (no momentum, no weight decay) on mini-batches drawn uniformly
/// with replacement from the training split.
inline TrainedLayer train_layer(const TrainingShard& shard, const GateConfig& gate_config,
                                const TrainerConfig& tc) {
  tc.validate();
  gate_config.validate();
  if (shard.hiddens.cols() != gate_config.d_model || shard.targets.cols() != gate_config.n_kv_heads)
    throw DataError("shard for layer " + std::to_string(shard.layer) + " does not match gate dimensions");
  if (shard.count() == 0) throw DataError("empty training shard for layer " + std::to_string(shard.layer));

  const auto t0 = std::chrono::steady_clock::now();
  const auto split = split_tuples(shard.count(), tc.val_fraction, tc.seed);
  if (split.train.empty()) throw DataError("training split is empty");

  std::vector<std::size_t> eval_rows = split.train;
  if (eval_rows.size() > tc.eval_cap) {
    std::vector<std::size_t> sub;
    const double stride = double(eval_rows.size()) / double(tc.eval_cap);
    for (std::size_t i = 0; i < tc.eval_cap; ++i) sub.push_back(eval_rows[std::size_t(double(i) * stride)]);
    eval_rows = std::move(sub);
  }
  const auto eval_h = detail::gather_rows(shard.hiddens, eval_rows);
  const auto eval_t = detail::gather_rows(shard.targets, eval_rows);
  const auto val_h = detail::gather_rows(shard.hiddens, split.val);
  const auto val_t = detail::gather_rows(shard.targets, split.val);

  auto params = init_gate<double>(gate_config, tc.seed);
  LayerReport rep;
  rep.layer = shard.layer;
  rep.n_train = split.train.size();
  rep.n_val = split.val.size();
  rep.initial_train_bce = detail::gate_bce(params, eval_h, eval_t);
  rep.initial_val_bce = detail::gate_bce(params, val_h, val_t);

  std::mt19937_64 rng(tc.batch_seed.value_or(tc.seed));
  std::uniform_int_distribution<std::size_t> pick(0, split.train.size() - 1);
  std::vector<std::size_t> batch(tc.batch_size);
  double interval_loss = 0.0;
  std::size_t interval_n = 0;
  for (std::size_t step = 1; step <= tc.steps; ++step) {
    for (auto& b : batch) b = split.train[pick(rng)];
    const auto bh = detail::gather_rows(shard.hiddens, batch);
    const auto bt = detail::gather_rows(shard.targets, batch);
    auto lg = gate_loss_and_grad<double>(params, bh, bt);
    if (!std::isfinite(lg.loss))
      throw NumericError("non-finite loss at layer " + std::to_string(shard.layer) + ", step " +
                         std::to_string(step) + " (lr=" + std::to_string(tc.learning_rate) + ")");
    auto ps = params.spans();
    auto gs = lg.grads.spans();
    for (std::size_t t = 0; t < ps.size(); ++t)
      for (std::size_t i = 0; i < ps[t].size(); ++i) ps[t][i] -= tc.learning_rate * gs[t][i];
    interval_loss += lg.loss;
    ++interval_n;
    if (step % tc.log_every == 0) {
      rep.trajectory.push_back({step, interval_loss / double(interval_n), detail::gate_bce(params, val_h, val_t)});
      interval_loss = 0.0;
      interval_n = 0;
    }
  }
  rep.final_train_bce = detail::gate_bce(params, eval_h, eval_t);
  rep.final_val_bce = detail::gate_bce(params, val_h, val_t);
  if (!std::isfinite(rep.final_train_bce)) throw NumericError("non-finite final loss at layer " + std::to_string(shard.layer));

  TrainedLayer out{params.cast<float>(), std::move(rep)};
  out.report.checksum = out.params.checksum();
  out.report.epochs = double(tc.steps * tc.batch_size) / double(split.train.size());
  out.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// Seed used for layer `l` when training a whole stack.
inline std::uint64_t layer_seed(std::uint64_t seed, std::size_t layer) {
  return seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL * (layer + 1);
}

struct TrainedGates {
  GateSet gates;
  TrainReport report;
};

/// Trains every layer independently (in parallel when threads > 1).
inline TrainedGates train_all_layers(const std::vector<TrainingShard>& shards, const GateConfig& gate_config,
                                     const TrainerConfig& tc, std::size_t threads = worker_threads()) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::optional<TrainedLayer>> results(shards.size());
  parallel_for(shards.size(), threads, [&](std::size_t l) {
    TrainerConfig layer_tc = tc;
    layer_tc.seed = layer_seed(tc.seed, l);
    if (tc.batch_seed) layer_tc.batch_seed = layer_seed(*tc.batch_seed, l);
    results[l] = train_layer(shards[l], gate_config, layer_tc);
  });
  TrainedGates out;
  out.gates.seed = tc.seed;
  for (auto& r : results) {
    out.gates.layers.push_back(std::move(r->params));
    out.report.layers.push_back(std::move(r->report));
  }
  out.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace fastkv
