#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "fastkv/eviction.hpp"
#include "support.hpp"

namespace fastkv {
namespace {

std::vector<Candidate> make_candidates(const std::vector<float>& scores) {
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < scores.size(); ++i) out.push_back({i, scores[i], Position(i), 0, 0});
  return out;
}

TEST(SelectRetained, KeepsHighestScores) {
  const auto c = make_candidates({0.9f, 0.1f, 0.5f, 0.7f});
  EXPECT_EQ(select_retained(c, 2), (std::vector<std::size_t>{0, 3}));
}

TEST(SelectRetained, TiesPreferRecentPositions) {
  const auto c = make_candidates({0.5f, 0.5f, 0.5f, 0.5f});
  EXPECT_EQ(select_retained(c, 2), (std::vector<std::size_t>{2, 3}));
}

TEST(SelectRetained, TiesThenLowerLayerThenLowerHead) {
  std::vector<Candidate> c{{0, 0.5f, 7, 1, 0}, {1, 0.5f, 7, 0, 1}, {2, 0.5f, 7, 0, 0}, {3, 0.5f, 7, 1, 1}};
  EXPECT_EQ(select_retained(c, 1), (std::vector<std::size_t>{2}));
  EXPECT_EQ(select_retained(c, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(select_retained(c, 3), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(SelectRetained, KeepMoreThanAvailableThrows) {
  const auto c = make_candidates({0.1f, 0.2f});
  EXPECT_THROW(select_retained(c, 3), std::invalid_argument);
  EXPECT_TRUE(select_retained(c, 0).empty());
  EXPECT_EQ(select_retained(c, 2).size(), 2u);
}

TEST(SelectRetained, AgreesWithFullSortOracle) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<Candidate> c;
    for (std::size_t i = 0; i < n; ++i)
      c.push_back({i, float(rng() % 5) / 4.0f, Position(rng() % 8), rng() % 3, rng() % 2});
    const std::size_t keep = rng() % (n + 1);
    auto sorted = c;
    std::sort(sorted.begin(), sorted.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.position != b.position) return a.position > b.position;
      if (a.layer != b.layer) return a.layer < b.layer;
      if (a.head != b.head) return a.head < b.head;
      return a.id < b.id;
    });
    // Exact duplicates across all four keys are interchangeable; compare as
    // multisets of (score, position, layer, head).
    auto key = [&](std::size_t id) { return std::tuple(c[id].score, c[id].position, c[id].layer, c[id].head); };
    std::multiset<std::tuple<float, Position, std::size_t, std::size_t>> want, got;
    for (std::size_t i = 0; i < keep; ++i) want.insert(key(sorted[i].id));
    for (auto id : select_retained(c, keep)) got.insert(key(id));
    ASSERT_EQ(want, got) << "trial " << trial;
  }
}

// A cache of `positions` per head with given scores; keys and values are zeros.
KVCache<float> make_cache(const std::vector<std::vector<std::vector<Position>>>& positions,
                          const std::vector<std::vector<std::vector<std::optional<float>>>>& scores) {
  KVCache<float> cache;
  const std::vector<float> zero(2, 0.0f);
  for (std::size_t l = 0; l < positions.size(); ++l) {
    cache.layers.emplace_back();
    for (std::size_t h = 0; h < positions[l].size(); ++h) {
      HeadCache<float> head;
      head.d_head = 2;
      for (std::size_t i = 0; i < positions[l][h].size(); ++i) head.append(positions[l][h][i], zero, zero, scores[l][h][i]);
      cache.layers[l].push_back(std::move(head));
    }
  }
  return cache;
}

KVCache<float> one_head_cache(const std::vector<float>& scores) {
  std::vector<Position> pos;
  std::vector<std::optional<float>> sc;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    pos.push_back(Position(i));
    sc.push_back(scores[i]);
  }
  return make_cache({{pos}}, {{sc}});
}

TEST(Evict, RatioOneLeavesCacheUnchanged) {
  auto cache = one_head_cache({0.1f, 0.9f, 0.2f, 0.3f, 0.0f});
  const auto before = cache;
  EvictionPolicy p;
  p.ratio = 1.0;
  const auto ev = evict(cache, p, {5, 4});
  EXPECT_TRUE(cache == before);
  EXPECT_EQ(ev.evicted(), 0u);
}

TEST(Evict, HalfRatioTenEntriesWindowTwo) {
  auto cache = one_head_cache({0.9f, 0.1f, 0.8f, 0.2f, 0.7f, 0.3f, 0.05f, 0.6f, 0.0f, 0.0f});
  EvictionPolicy p;
  p.ratio = 0.5;
  const auto ev = evict(cache, p, {10, 8});
  const auto& head = cache.layers[0][0];
  EXPECT_EQ(head.size(), 5u);
  EXPECT_EQ(head.positions, (std::vector<Position>{0, 2, 4, 8, 9}));
  EXPECT_EQ(ev.window_violations, 0u);
}

TEST(Evict, WindowExceedingQuotaKeepsWholeWindow) {
  auto cache = one_head_cache({0.9f, 0.9f, 0.1f, 0.1f, 0.1f, 0.1f});
  EvictionPolicy p;
  p.ratio = 0.25;  // round(1.5) = 2 < window of 4
  evict(cache, p, {6, 2});
  EXPECT_EQ(cache.layers[0][0].positions, (std::vector<Position>{2, 3, 4, 5}));
}

TEST(Evict, UnscoredEntryOutsideWindowIsAnError) {
  auto cache = make_cache({{{0, 1, 2}}}, {{{0.5f, std::nullopt, std::nullopt}}});
  EvictionPolicy p;
  p.ratio = 0.5;
  EXPECT_THROW(evict(cache, p, {3, 2}), std::logic_error);
  auto ok = make_cache({{{0, 1, 2}}}, {{{0.5f, std::nullopt, std::nullopt}}});
  EXPECT_NO_THROW(evict(ok, p, {3, 1}));
}

TEST(Evict, NonuniformFavoursHighScoringHead) {
  // Head 0 scores in [0.6, 1), head 1 in [0, 0.4).
  std::vector<Position> pos;
  std::vector<std::optional<float>> hi, lo;
  for (int i = 0; i < 20; ++i) {
    pos.push_back(i);
    hi.push_back(0.6f + 0.019f * float(i % 20));
    lo.push_back(0.019f * float((i * 7) % 20));
  }
  EvictionPolicy p;
  p.ratio = 0.5;
  p.allocation = Allocation::nonuniform;
  auto nonuni = make_cache({{pos, pos}}, {{hi, lo}});
  evict(nonuni, p, {20, 20});
  EXPECT_EQ(nonuni.layers[0][0].size(), 20u);
  EXPECT_EQ(nonuni.layers[0][1].size(), 0u);

  p.allocation = Allocation::uniform;
  auto uni = make_cache({{pos, pos}}, {{hi, lo}});
  evict(uni, p, {20, 20});
  EXPECT_EQ(uni.layers[0][0].size(), 10u);
  EXPECT_EQ(uni.layers[0][1].size(), 10u);
}

TEST(Evict, GlobalScopePoolsAcrossLayers) {
  std::vector<Position> pos{0, 1, 2, 3};
  std::vector<std::optional<float>> hi{0.9f, 0.9f, 0.9f, 0.9f}, lo{0.1f, 0.1f, 0.1f, 0.1f};
  EvictionPolicy p;
  p.ratio = 0.5;
  p.nonuniform_scope = PoolScope::global;
  auto global = make_cache({{pos}, {pos}}, {{hi}, {lo}});
  evict(global, p, {4, 4});
  EXPECT_EQ(global.layers[0][0].size(), 4u);
  EXPECT_EQ(global.layers[1][0].size(), 0u);

  p.nonuniform_scope = PoolScope::per_layer;
  auto per_layer = make_cache({{pos}, {pos}}, {{hi}, {lo}});
  evict(per_layer, p, {4, 4});
  EXPECT_EQ(per_layer.layers[0][0].size(), 2u);
  EXPECT_EQ(per_layer.layers[1][0].size(), 2u);
}

TEST(Evict, FixedTotalPerLayer) {
  std::vector<Position> pos;
  std::vector<std::optional<float>> a, b;
  for (int i = 0; i < 12; ++i) {
    pos.push_back(i);
    a.push_back(float(i) / 12.0f);
    b.push_back(float(11 - i) / 12.0f);
  }
  EvictionPolicy p;
  p.budget_mode = BudgetMode::fixed_total;
  p.fixed_total = 10;
  auto cache = make_cache({{pos, pos}, {pos, pos}}, {{a, b}, {a, b}});
  const auto ev = evict(cache, p, {12, 10});
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(cache.layer_entries(l), 10u);
  EXPECT_EQ(ev.window_violations, 0u);

  p.allocation = Allocation::uniform;
  auto uni = make_cache({{pos, pos}}, {{a, b}});
  evict(uni, p, {12, 12});
  EXPECT_EQ(uni.layers[0][0].size(), 5u);
  EXPECT_EQ(uni.layers[0][1].size(), 5u);
}

TEST(Evict, RoundsHalfUp) {
  auto cache = one_head_cache({0.1f, 0.2f, 0.3f, 0.4f, 0.5f});
  EvictionPolicy p;
  p.ratio = 0.5;  // 2.5 → 3
  evict(cache, p, {5, 5});
  EXPECT_EQ(cache.layers[0][0].size(), 3u);
}

TEST(EvictionPolicy, ShortPromptWindowIsFractionCeil) {
  EvictionPolicy p;
  EXPECT_EQ(p.prefill_window_for(40), 1u);
  EXPECT_EQ(p.prefill_window_for(63), 2u);
  EXPECT_EQ(p.prefill_window_for(64), p.prefill_window);
}

TEST(EvictionPolicy, ValidationRejectsBadValues) {
  EvictionPolicy p;
  p.ratio = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p.ratio = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.chunk_size = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.budget_mode = BudgetMode::fixed_total;
  EXPECT_THROW(p.validate(), ConfigError);
}

// Random caches as they look mid-run: heads of one layer share the token
// stream but have been evicted differently; the most recent entries are the
// window and may be unscored.
struct FuzzCase {
  KVCache<float> cache;
  EvictionPolicy policy;
  EvictionContext ctx;
};

FuzzCase random_case(std::mt19937_64& rng) {
  FuzzCase fc;
  const std::size_t L = 1 + rng() % 3, H = 1 + rng() % 3, T = 1 + rng() % 60;
  const std::size_t window = rng() % (T + 1);
  fc.ctx = {T, Position(T - window)};
  std::vector<std::vector<std::vector<Position>>> pos(L, std::vector<std::vector<Position>>(H));
  std::vector<std::vector<std::vector<std::optional<float>>>> sc(L, std::vector<std::vector<std::optional<float>>>(H));
  const int levels = 1 + int(rng() % 6);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t t = 0; t < T; ++t) {
        const bool in_window = Position(t) >= fc.ctx.window_start;
        if (!in_window && rng() % 4 == 0) continue;  // evicted earlier
        pos[l][h].push_back(Position(t));
        if (in_window && rng() % 2)
          sc[l][h].push_back(std::nullopt);
        else
          sc[l][h].push_back(float(rng() % levels) / float(levels));
      }
  fc.cache = make_cache(pos, sc);
  auto& p = fc.policy;
  p.budget_mode = rng() % 3 == 0 ? BudgetMode::fixed_total : BudgetMode::ratio;
  p.ratio = double(1 + rng() % 100) / 100.0;
  p.fixed_total = 1 + rng() % (2 * T * H);
  p.allocation = rng() % 2 ? Allocation::uniform : Allocation::nonuniform;
  p.nonuniform_scope = rng() % 2 ? PoolScope::global : PoolScope::per_layer;
  return fc;
}

TEST(EvictFuzz, CountsMatchFormulaAndWindowIsInviolate) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 2000; ++trial) {
    auto fc = random_case(rng);
    const std::size_t L = fc.cache.layers.size(), H = fc.cache.layers[0].size();
    std::vector<std::vector<std::size_t>> cur(L, std::vector<std::size_t>(H)), win(L, std::vector<std::size_t>(H));
    std::vector<std::vector<std::vector<Position>>> window_pos(L, std::vector<std::vector<Position>>(H));
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t h = 0; h < H; ++h) {
        cur[l][h] = fc.cache.layers[l][h].size();
        for (auto p : fc.cache.layers[l][h].positions)
          if (p >= fc.ctx.window_start) {
            ++win[l][h];
            window_pos[l][h].push_back(p);
          }
      }
    const auto expected = expected_retained(fc.policy, L, H, fc.ctx.total_tokens, cur, win);
    const auto before = fc.cache;
    const auto ev = evict(fc.cache, fc.policy, fc.ctx);

    EXPECT_EQ(ev.window_violations, 0u);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t h = 0; h < H; ++h) {
        const auto& kept = fc.cache.layers[l][h].positions;
        for (auto p : window_pos[l][h]) ASSERT_TRUE(std::binary_search(kept.begin(), kept.end(), p));
        ASSERT_TRUE(std::is_sorted(kept.begin(), kept.end()));
        ASSERT_TRUE(std::includes(before.layers[l][h].positions.begin(), before.layers[l][h].positions.end(),
                                  kept.begin(), kept.end()));
      }
    const bool global = fc.policy.budget_mode == BudgetMode::ratio && fc.policy.allocation == Allocation::nonuniform &&
                        fc.policy.nonuniform_scope == PoolScope::global;
    if (fc.policy.allocation == Allocation::uniform) {
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t h = 0; h < H; ++h) ASSERT_EQ(ev.head_after[l][h], expected[l * H + h]) << "trial " << trial;
    } else if (global) {
      ASSERT_EQ(fc.cache.total_entries(), expected[0]) << "trial " << trial;
    } else {
      for (std::size_t l = 0; l < L; ++l) ASSERT_EQ(fc.cache.layer_entries(l), expected[l]) << "trial " << trial;
    }
    ASSERT_EQ(ev.expected, expected);
  }
}

TEST(EvictFuzz, EvictedEntriesNeverOutscoreRetainedOnes) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    auto fc = random_case(rng);
    fc.policy.allocation = Allocation::nonuniform;
    fc.policy.budget_mode = BudgetMode::ratio;
    fc.policy.nonuniform_scope = PoolScope::global;
    const auto before = fc.cache;
    evict(fc.cache, fc.policy, fc.ctx);
    float worst_kept = 2.0f, best_dropped = -1.0f;
    for (std::size_t l = 0; l < before.layers.size(); ++l)
      for (std::size_t h = 0; h < before.layers[l].size(); ++h) {
        const auto& b = before.layers[l][h];
        const auto& kept = fc.cache.layers[l][h].positions;
        for (std::size_t i = 0; i < b.size(); ++i) {
          if (b.positions[i] >= fc.ctx.window_start) continue;
          const bool k = std::binary_search(kept.begin(), kept.end(), b.positions[i]);
          (k ? worst_kept : best_dropped) = k ? std::min(worst_kept, *b.scores[i]) : std::max(best_dropped, *b.scores[i]);
        }
      }
    ASSERT_LE(best_dropped, worst_kept) << "trial " << trial;
  }
}

}  // namespace
}  // namespace fastkv
