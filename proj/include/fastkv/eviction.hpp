#pragma once

// Budgeted KV eviction over a per-head cache. Entries whose position falls in
// the active local window are exempt but still count toward the budget.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fastkv/common.hpp"
#include "fastkv/model.hpp"

namespace fastkv {

enum class BudgetMode { ratio, fixed_total };
enum class Allocation { uniform, nonuniform };
enum class PoolScope { per_layer, global };

inline std::string to_string(BudgetMode m) { return m == BudgetMode::ratio ? "ratio" : "fixed_total"; }
inline std::string to_string(Allocation a) { return a == Allocation::uniform ? "uniform" : "nonuniform"; }
inline std::string to_string(PoolScope s) { return s == PoolScope::per_layer ? "per_layer" : "global"; }

struct EvictionPolicy {
  BudgetMode budget_mode = BudgetMode::ratio;
  double ratio = 1.0;
  std::size_t fixed_total = 0;  // per-layer entry budget in fixed_total mode
  Allocation allocation = Allocation::nonuniform;
  PoolScope nonuniform_scope = PoolScope::global;
  std::size_t chunk_size = 64;
  std::size_t prefill_window = 16;
  double short_context_window_fraction = 0.02;
  std::size_t decode_buffer = 8;
  std::size_t decode_window = 8;

  void validate() const {
    if (budget_mode == BudgetMode::ratio && !(ratio > 0 && ratio <= 1))
      throw ConfigError("eviction ratio must be in (0, 1]");
    if (budget_mode == BudgetMode::fixed_total && fixed_total == 0)
      throw ConfigError("eviction fixed_total must be >= 1");
    if (chunk_size == 0) throw ConfigError("eviction chunk_size must be >= 1");
    if (decode_buffer == 0) throw ConfigError("eviction decode_buffer must be >= 1");
    if (!(short_context_window_fraction >= 0 && short_context_window_fraction <= 1))
      throw ConfigError("short_context_window_fraction must be in [0, 1]");
  }

  /// Local window used during prefill of a T-token prompt.
  std::size_t prefill_window_for(std::size_t total_tokens) const {
    if (total_tokens < chunk_size)
      return static_cast<std::size_t>(std::ceil(short_context_window_fraction * double(total_tokens)));
    return prefill_window;
  }

  friend bool operator==(const EvictionPolicy&, const EvictionPolicy&) = default;
};

/// One eviction candidate. `id` is opaque to the selection.
struct Candidate {
  std::size_t id = 0;
  float score = 0.0f;
  Position position = 0;
  std::size_t layer = 0;
  std::size_t head = 0;
};

/// Strict total order used for retention: higher score first, then more
/// recent position, then lower layer, then lower head.
inline bool retention_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.position != b.position) return a.position > b.position;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.head < b.head;
}

/// Ids of the keep_count best candidates under retention_before, ascending.
inline std::vector<std::size_t> select_retained(std::span<const Candidate> entries, std::size_t keep_count) {
  if (keep_count > entries.size())
    throw std::invalid_argument("select_retained: keep_count " + std::to_string(keep_count) + " exceeds " +
                                std::to_string(entries.size()) + " entries");
  std::vector<Candidate> work(entries.begin(), entries.end());
  if (keep_count < work.size())
    std::nth_element(work.begin(), work.begin() + std::ptrdiff_t(keep_count), work.end(), retention_before);
  std::vector<std::size_t> ids;
  ids.reserve(keep_count);
  for (std::size_t i = 0; i < keep_count; ++i) ids.push_back(work[i].id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct EvictionContext {
  std::size_t total_tokens = 0;  // tokens seen so far (uncompressed entries per head)
  Position window_start = 0;     // entries at or after this position are exempt
};

/// Record of one eviction event. Counts are per layer (per head for
/// `head_after`); `expected` is the policy formula's retained count for the
/// budget unit (layer, or the whole cache under global pooling).
struct EvictionEvent {
  std::size_t total_tokens = 0;
  Position window_start = 0;
  std::vector<std::size_t> before, after, window;
  std::vector<std::vector<std::size_t>> head_after;
  std::vector<std::size_t> expected;
  std::size_t window_violations = 0;

  std::size_t evicted() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < before.size(); ++l) n += before[l] - after[l];
    return n;
  }
};

/// Applies `policy` to `cache` in place.
template <typename Real>
EvictionEvent evict(KVCache<Real>& cache, const EvictionPolicy& policy, const EvictionContext& ctx) {
  const std::size_t L = cache.layers.size();
  const std::size_t H = L ? cache.layers[0].size() : 0;
  EvictionEvent ev;
  ev.total_tokens = ctx.total_tokens;
  ev.window_start = ctx.window_start;
  ev.before.assign(L, 0);
  ev.after.assign(L, 0);
  ev.window.assign(L, 0);
  ev.head_after.assign(L, std::vector<std::size_t>(H, 0));

  // window_count[l][h], evictable candidates per (l,h)
  std::vector<std::vector<std::size_t>> win(L, std::vector<std::size_t>(H, 0));
  std::vector<std::vector<std::vector<Candidate>>> cand(L, std::vector<std::vector<Candidate>>(H));
  std::vector<std::vector<std::vector<bool>>> keep(L, std::vector<std::vector<bool>>(H));
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t h = 0; h < H; ++h) {
      const auto& head = cache.layers[l][h];
      keep[l][h].assign(head.size(), false);
      for (std::size_t i = 0; i < head.size(); ++i) {
        if (head.positions[i] >= ctx.window_start) {
          keep[l][h][i] = true;
          ++win[l][h];
          continue;
        }
        if (!head.scores[i])
          throw std::logic_error("evict: unscored entry at position " + std::to_string(head.positions[i]) +
                                 " outside the local window (layer " + std::to_string(l) + ", head " +
                                 std::to_string(h) + ")");
        cand[l][h].push_back({i, *head.scores[i], head.positions[i], l, h});
      }
      ev.before[l] += head.size();
      ev.window[l] += win[l][h];
    }
  }

  // Retains the best `keep_total - windowed` of a pooled candidate list.
  auto apply = [&](std::vector<Candidate>& pool, std::size_t extra) {
    std::vector<Candidate> tagged(pool.size());
    for (std::size_t k = 0; k < pool.size(); ++k) {
      tagged[k] = pool[k];
      tagged[k].id = k;
    }
    for (std::size_t k : select_retained(tagged, extra)) keep[pool[k].layer][pool[k].head][pool[k].id] = true;
  };

  const bool ratio_mode = policy.budget_mode == BudgetMode::ratio;
  auto quota_for = [&](std::size_t heads_in_unit, std::size_t window_entries) {
    const std::size_t raw = ratio_mode ? round_half_up(policy.ratio * double(ctx.total_tokens * heads_in_unit))
                                       : (heads_in_unit == 1 ? policy.fixed_total / H : policy.fixed_total);
    return std::max(window_entries, raw);
  };

  if (policy.allocation == Allocation::uniform) {
    ev.expected.assign(L * H, 0);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t cur = cache.layers[l][h].size();
        const std::size_t target = std::min(cur, quota_for(1, win[l][h]));
        ev.expected[l * H + h] = target;
        apply(cand[l][h], target - win[l][h]);
      }
  } else if (ratio_mode && policy.nonuniform_scope == PoolScope::global) {
    std::size_t cur = 0, w = 0;
    std::vector<Candidate> pool;
    for (std::size_t l = 0; l < L; ++l) {
      cur += ev.before[l];
      w += ev.window[l];
      for (std::size_t h = 0; h < H; ++h) pool.insert(pool.end(), cand[l][h].begin(), cand[l][h].end());
    }
    const std::size_t target = std::min(cur, quota_for(H * L, w));
    ev.expected.assign(1, target);
    apply(pool, target - w);
  } else {
    ev.expected.assign(L, 0);
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<Candidate> pool;
      for (std::size_t h = 0; h < H; ++h) pool.insert(pool.end(), cand[l][h].begin(), cand[l][h].end());
      const std::size_t target = std::min(ev.before[l], quota_for(H, ev.window[l]));
      ev.expected[l] = target;
      apply(pool, target - ev.window[l]);
    }
  }

  for (std::size_t l = 0; l < L; ++l) {
    std::size_t window_after = 0;
    for (std::size_t h = 0; h < H; ++h) {
      auto& head = cache.layers[l][h];
      head.retain(keep[l][h]);
      ev.head_after[l][h] = head.size();
      ev.after[l] += head.size();
      for (auto p : head.positions) window_after += p >= ctx.window_start;
    }
    ev.window_violations += ev.window[l] - window_after;
  }
  return ev;
}

/// Retained count the policy formulae demand for each budget unit, computed
/// from pre-event counts; used to audit events independently of `evict`.
inline std::vector<std::size_t> expected_retained(const EvictionPolicy& policy, std::size_t n_layers,
                                                  std::size_t n_heads, std::size_t total_tokens,
                                                  const std::vector<std::vector<std::size_t>>& current,
                                                  const std::vector<std::vector<std::size_t>>& window) {
  std::vector<std::size_t> out;
  const bool ratio_mode = policy.budget_mode == BudgetMode::ratio;
  if (policy.allocation == Allocation::uniform) {
    for (std::size_t l = 0; l < n_layers; ++l)
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t raw = ratio_mode ? round_half_up(policy.ratio * double(total_tokens))
                                           : policy.fixed_total / n_heads;
        out.push_back(std::min(current[l][h], std::max(window[l][h], raw)));
      }
    return out;
  }
  auto sum = [](const std::vector<std::size_t>& v) { return std::accumulate(v.begin(), v.end(), std::size_t(0)); };
  if (ratio_mode && policy.nonuniform_scope == PoolScope::global) {
    std::size_t cur = 0, w = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      cur += sum(current[l]);
      w += sum(window[l]);
    }
    const std::size_t raw = round_half_up(policy.ratio * double(total_tokens * n_heads * n_layers));
    out.push_back(std::min(cur, std::max(w, raw)));
    return out;
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t raw =
        ratio_mode ? round_half_up(policy.ratio * double(total_tokens * n_heads)) : policy.fixed_total;
    out.push_back(std::min(sum(current[l]), std::max(sum(window[l]), raw)));
  }
  return out;
}

}  // namespace fastkv
