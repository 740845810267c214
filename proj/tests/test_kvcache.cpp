// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "flowcache/kvcache.hpp"
#include "flowcache/random.hpp"
#include "flowcache/verify.hpp"
#include "oracles.hpp"

using namespace flowcache;

namespace {

Tensor randn(Rng& rng, Shape shape) { return random_tensor(rng, std::move(shape)); }

double row_sum(const Tensor& t, std::size_t h) {
    const std::size_t n = t.dim(1);
    double s = 0;
    for (std::size_t j = 0; j < n; ++j)
        s += t[h * n + j];
    return s;
}

CompressionConfig token_config(std::size_t budget, double lambda = 0.07) {
    CompressionConfig c;
    c.lambda = lambda;
    c.budget_tokens = budget;
    return c;
}

// Buffer holding `clean` tokens in its clean region and `staged` tokens of a
// finished chunk waiting to be merged.
KVBuffer staged_buffer(Rng& rng, std::size_t heads, std::size_t d, std::size_t budget, std::size_t clean,
                       std::size_t staged) {
    KVBuffer buf(heads, d, budget, std::max(clean, staged));
    std::int64_t next_id = 0;
    auto add = [&](int chunk, std::size_t n) {
        buf.activate(chunk, n);
        std::vector<std::int64_t> ids(n);
        std::iota(ids.begin(), ids.end(), next_id);
        next_id += static_cast<std::int64_t>(n);
        buf.finish(chunk, randn(rng, {n, heads, d}), randn(rng, {n, heads, d}), ids);
    };
    if (clean > 0) {
        add(1, clean);
        buf.fill();
    }
    add(2, staged);
    return buf;
}

}  // namespace

TEST(Importance, IdenticalKeysGiveUniform) {
    Rng rng(1);
    const Tensor q = randn(rng, {1, 2, 4});
    const Tensor k = Tensor::filled({5, 1, 4}, 0.3);
    const Tensor imp = importance(q, k, 50);
    for (double v : imp.data())
        EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Importance, MatchesAttentionLoop) {
    Rng rng(2);
    for (int n = 0; n < 10; ++n) {
        const Tensor q = randn(rng, {8, 2, 4});
        const Tensor k = randn(rng, {16, 2, 4});
        const Tensor imp = importance(q, k, 50);
        const auto ref = oracle::attention_importance(q, k, 50);
        for (std::size_t i = 0; i < ref.size(); ++i)
            EXPECT_NEAR(imp[i], ref[i], 1e-10);
    }
}

TEST(Importance, TrailingWindowOnly) {
    Rng rng(3);
    const Tensor q = randn(rng, {20, 4, 8});
    const Tensor k = randn(rng, {12, 2, 8});
    const Tensor imp = importance(q, k, 5);
    const auto ref = oracle::attention_importance(q, k, 5);
    for (std::size_t i = 0; i < ref.size(); ++i)
        EXPECT_NEAR(imp[i], ref[i], 1e-12);
    // only the last 5 rows matter
    std::vector<double> qd(q.data().begin(), q.data().end());
    for (std::size_t i = 0; i < 15 * 4 * 8; ++i)
        qd[i] = rng.normal();
    EXPECT_EQ(importance(Tensor(q.shape(), qd), k, 5), imp);
}

TEST(Importance, Errors) {
    Rng rng(4);
    EXPECT_THROW(importance(randn(rng, {2, 3, 4}), randn(rng, {5, 2, 4}), 50), InvalidInput);
    EXPECT_THROW(importance(randn(rng, {2, 2, 4}), randn(rng, {5, 2, 3}), 50), InvalidInput);
    EXPECT_THROW(importance(randn(rng, {2, 2}), randn(rng, {5, 2, 3}), 50), InvalidInput);
}

TEST(PooledImportance, KernelOneIsIdentity) {
    const Tensor imp({1, 4}, {0.1, 0.4, 0.2, 0.3});
    EXPECT_EQ(pooled_importance(imp, 1), imp);
}

TEST(PooledImportance, ImpulseBecomesPlateau) {
    const Tensor imp({1, 9}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    EXPECT_EQ(pooled_importance(imp, 5), Tensor({1, 9}, {0, 0, 1, 1, 1, 1, 1, 0, 0}));
}

TEST(PooledImportance, MatchesWindowScanPerHead) {
    Rng rng(5);
    std::vector<double> x(3 * 40);
    for (double& v : x)
        v = rng.uniform();
    const Tensor pooled = pooled_importance(Tensor({3, 40}, x), 5);
    for (std::size_t h = 0; h < 3; ++h) {
        const std::vector<double> row(x.begin() + static_cast<std::ptrdiff_t>(h * 40),
                                      x.begin() + static_cast<std::ptrdiff_t>((h + 1) * 40));
        const auto ref = oracle::window_max(row, 5);
        for (std::size_t j = 0; j < 40; ++j)
            EXPECT_EQ(pooled[h * 40 + j], ref[j]);
    }
}

TEST(PooledImportance, EvenKernelThrows) { EXPECT_THROW(pooled_importance(Tensor({1, 3}, {1, 2, 3}), 4), InvalidInput); }

TEST(Redundancy, IdenticalKeysUniform) {
    const Tensor k = Tensor::filled({6, 2, 3}, 1.5);
    for (const Tensor& r : {redundancy_naive(k), redundancy_fast(k)})
        for (double v : r.data())
            EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST(Redundancy, OrthogonalPairUniform) {
    const Tensor k({2, 1, 2}, {1, 0, 0, 1});
    for (const Tensor& r : {redundancy_naive(k), redundancy_fast(k)}) {
        EXPECT_NEAR(r[0], 0.5, 1e-15);
        EXPECT_NEAR(r[1], 0.5, 1e-15);
    }
}

TEST(Redundancy, NaiveMatchesPairwiseLoop) {
    Rng rng(6);
    const Tensor k = randn(rng, {64, 2, 8});
    const Tensor r = redundancy_naive(k);
    const auto ref = oracle::pairwise_redundancy(k);
    for (std::size_t i = 0; i < ref.size(); ++i)
        EXPECT_NEAR(r[i], ref[i], 1e-10);
}

TEST(Redundancy, FastMatchesNaive) {
    Rng rng(7);
    for (int n = 0; n < 30; ++n) {
        const std::size_t lk = 2 + rng.next_u64() % 300, d = 1 + rng.next_u64() % 32, h = 1 + rng.next_u64() % 4;
        const Tensor k = randn(rng, {lk, h, d});
        EXPECT_LT(max_abs_diff(redundancy_fast(k), redundancy_naive(k)), 1e-9);
    }
}

TEST(Redundancy, Errors) {
    EXPECT_THROW(redundancy_naive(Tensor({1, 1, 2}, {1, 2})), InvalidInput);
    EXPECT_THROW(redundancy_fast(Tensor({1, 1, 2}, {1, 2})), InvalidInput);
    EXPECT_THROW(redundancy_naive(Tensor({2, 1, 2}, {1, 2, 0, 0})), DegenerateInput);
    EXPECT_THROW(redundancy_fast(Tensor({2, 1, 2}, {1, 2, 0, 0})), DegenerateInput);
}

TEST(Distributions, SumToOnePerHead) {
    Rng rng(8);
    for (int n = 0; n < 20; ++n) {
        const Tensor q = randn(rng, {10, 4, 6});
        const Tensor k = randn(rng, {33, 2, 6});
        const Tensor imp = importance(q, k, 50);
        const Tensor red = redundancy_fast(k);
        for (std::size_t h = 0; h < 2; ++h) {
            EXPECT_NEAR(row_sum(imp, h), 1.0, 1e-9);
            EXPECT_NEAR(row_sum(red, h), 1.0, 1e-9);
        }
        for (double v : red.data())
            EXPECT_GT(v, 0.0);
    }
}

TEST(CombinedScore, Boundaries) {
    const Tensor pooled({1, 4}, {0.4, 0.1, 0.3, 0.2});
    const Tensor red({1, 4}, {0.1, 0.4, 0.2, 0.3});
    EXPECT_EQ(stable_topk(combined_score(pooled, red, 1.0).data(), 2), stable_topk(pooled.data(), 2));
    // lambda = 0 ranks by ascending redundancy
    const Tensor s0 = combined_score(pooled, red, 0.0);
    EXPECT_EQ(stable_topk(s0.data(), 2), (std::vector<std::size_t>{0, 2}));
}

TEST(CombinedScore, Errors) {
    const Tensor a({1, 2}, {0.5, 0.5});
    EXPECT_THROW(combined_score(a, a, 1.5), InvalidInput);
    EXPECT_THROW(combined_score(a, a, -0.1), InvalidInput);
    EXPECT_THROW(combined_score(a, Tensor({1, 3}, {1, 1, 1}), 0.5), InvalidInput);
}

TEST(CombinedScore, RankingInvariantUnderCommonScale) {
    Rng rng(10);
    std::vector<double> p(50), r(50);
    for (std::size_t i = 0; i < 50; ++i)
        p[i] = rng.uniform(), r[i] = rng.uniform();
    const auto base = stable_topk(combined_score(Tensor({1, 50}, p), Tensor({1, 50}, r), 0.3).data(), 50 / 2);
    for (double c : {0.5, 4.0}) {
        std::vector<double> ps = p, rs = r;
        for (std::size_t i = 0; i < 50; ++i)
            ps[i] *= c, rs[i] *= c;
        EXPECT_EQ(stable_topk(combined_score(Tensor({1, 50}, ps), Tensor({1, 50}, rs), 0.3).data(), 25), base);
    }
}

TEST(Granularity, FrameSizeOneIsTokenLevel) {
    const std::vector<double> s{0.3, 0.1, 0.5, 0.2};
    EXPECT_EQ(select_tokens(s, 2, KeyGranularity::frame, 1, 2), select_tokens(s, 2, KeyGranularity::token, 1, 2));
}

TEST(Granularity, FrameSelectionKeepsWholeFrames) {
    // two frames of three tokens with means 0.6 and 0.4
    const std::vector<double> s{0.6, 0.6, 0.6, 0.4, 0.4, 0.4};
    EXPECT_EQ(select_tokens(s, 3, KeyGranularity::frame, 3, 6), (std::vector<std::size_t>{0, 1, 2}));
    const GroupedScores g = granularity_aggregate(s, KeyGranularity::frame, 3, 6);
    EXPECT_EQ(g.scores.size(), 2u);
    EXPECT_NEAR(g.scores[0], 0.6, 1e-15);
    EXPECT_EQ(g.group_budget(5), 1u);
}

TEST(Granularity, MatchesGroupLoop) {
    Rng rng(11);
    for (int n = 0; n < 50; ++n) {
        const std::size_t frame = 1 + rng.next_u64() % 6, frames = 2 + rng.next_u64() % 20;
        std::vector<double> s(frame * frames);
        for (double& v : s)
            v = rng.uniform();
        const std::size_t budget = 1 + rng.next_u64() % s.size();
        std::vector<double> means(frames, 0.0);
        for (std::size_t i = 0; i < s.size(); ++i)
            means[i / frame] += s[i] / static_cast<double>(frame);
        std::vector<std::size_t> expect;
        for (std::size_t g : oracle::sorted_topk(means, budget / frame))
            for (std::size_t t = 0; t < frame; ++t)
                expect.push_back(g * frame + t);
        EXPECT_EQ(select_tokens(s, budget, KeyGranularity::frame, frame, frame * frames), expect);
    }
}

TEST(Granularity, DivisibilityViolationThrows) {
    const std::vector<double> s(7, 0.1);
    EXPECT_THROW(granularity_aggregate(s, KeyGranularity::frame, 3, 6), InvalidConfig);
    EXPECT_THROW(granularity_aggregate(std::vector<double>(12, 0.1), KeyGranularity::chunk, 3, 9), InvalidConfig);
}

TEST(CompressionConfig, Validation) {
    CompressionConfig c = token_config(4);
    EXPECT_NO_THROW(c.validate());
    c.lambda = 2;
    EXPECT_THROW(c.validate(), InvalidConfig);
    c = token_config(4);
    c.pool_kernel = 4;
    EXPECT_THROW(c.validate(), InvalidConfig);
    c = token_config(0);
    EXPECT_THROW(c.validate(), InvalidConfig);
}

TEST(Compress, UnderBudgetKeepsEverything) {
    Rng rng(12);
    KVBuffer buf = staged_buffer(rng, 2, 4, 10, 3, 4);
    const CompressionReport r = compress(buf, randn(rng, {4, 2, 4}), token_config(10));
    EXPECT_TRUE(r.under_budget);
    EXPECT_EQ(r.evicted_total(), 0u);
    EXPECT_EQ(buf.clean_len(), 7u);
    EXPECT_EQ(buf.active_len(), 0u);
}

TEST(Compress, LambdaOneKeepsTopPooledImportance) {
    // single head; keys chosen so that importance follows the query direction
    KVBuffer buf(1, 1, 2, 4);
    buf.activate(1, 4);
    buf.finish(1, Tensor({4, 1, 1}, {std::log(0.4), std::log(0.1), std::log(0.3), std::log(0.2)}),
               Tensor::zeros({4, 1, 1}), std::vector<std::int64_t>{0, 1, 2, 3});
    CompressionConfig c = token_config(2, 1.0);
    c.pool_kernel = 1;
    // query 1 with d=1: logits equal the keys, softmax gives [0.4, 0.1, 0.3, 0.2]
    const CompressionReport r = compress(buf, Tensor({1, 1, 1}, {1.0}), c);
    EXPECT_EQ(r.heads[0].retained_ids, (std::vector<std::int64_t>{0, 2}));
    EXPECT_EQ(r.heads[0].evicted_count, 2u);
    EXPECT_EQ(buf.head(0).ids, (std::vector<std::int64_t>{0, 2}));
    EXPECT_NEAR(r.heads[0].retained_importance, 0.7, 1e-12);
}

TEST(Compress, RetainedIdsAreSortedSubset) {
    Rng rng(13);
    for (int n = 0; n < 10; ++n) {
        KVBuffer buf = staged_buffer(rng, 3, 8, 20, 20, 16);
        std::vector<std::set<std::int64_t>> before;
        for (std::size_t h = 0; h < 3; ++h) {
            const auto ids = buf.merged_ids(h);
            before.emplace_back(ids.begin(), ids.end());
        }
        const CompressionReport r = compress(buf, randn(rng, {16, 6, 8}), token_config(20));
        for (std::size_t h = 0; h < 3; ++h) {
            const auto& ids = buf.head(h).ids;
            EXPECT_EQ(ids.size(), 20u);
            EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
            for (auto id : ids)
                EXPECT_TRUE(before[h].count(id));
            EXPECT_EQ(ids, r.heads[h].retained_ids);
        }
        EXPECT_EQ(buf.active_len(), 0u);
    }
}

TEST(Compress, BudgetAboveCapacityThrows) {
    Rng rng(14);
    KVBuffer buf = staged_buffer(rng, 1, 4, 5, 0, 8);
    EXPECT_THROW(compress(buf, randn(rng, {2, 1, 4}), token_config(6)), InvalidConfig);
}

TEST(Compress, HeadsAreIndependent) {
    Rng rng(15);
    KVBuffer buf = staged_buffer(rng, 2, 4, 8, 8, 8);
    const Tensor keys = buf.merged_keys();
    const Tensor q = randn(rng, {8, 2, 4});
    compress(buf, q, token_config(8));
    // each head alone gives the same selection
    for (std::size_t h = 0; h < 2; ++h) {
        std::vector<double> kh, qh;
        for (std::size_t t = 0; t < 16; ++t)
            for (std::size_t e = 0; e < 4; ++e)
                kh.push_back(keys[(t * 2 + h) * 4 + e]);
        for (std::size_t t = 0; t < 8; ++t)
            for (std::size_t e = 0; e < 4; ++e)
                qh.push_back(q[(t * 2 + h) * 4 + e]);
        KVBuffer single(1, 4, 8, 16);
        single.activate(1, 16);
        std::vector<std::int64_t> ids(16);
        std::iota(ids.begin(), ids.end(), 0);
        single.finish(1, Tensor({16, 1, 4}, kh), Tensor({16, 1, 4}, kh), ids);
        compress(single, Tensor({8, 1, 4}, qh), token_config(8));
        EXPECT_EQ(single.head(0).ids, buf.head(h).ids);
    }
}

TEST(KVBuffer, FillThenCompressLifecycle) {
    Rng rng(16);
    const std::size_t chunk = 4, budget = 2 * chunk;
    KVBuffer buf(2, 4, budget, 2 * chunk);
    EXPECT_EQ(*buf.total_capacity(), 4 * chunk);
    const CompressionConfig c = token_config(budget);
    std::vector<CompressionReport::Phase> phases;
    for (int i = 1; i <= 5; ++i) {
        buf.activate(i, chunk);
        std::vector<std::int64_t> ids(chunk);
        std::iota(ids.begin(), ids.end(), static_cast<std::int64_t>((i - 1) * chunk));
        buf.finish(i, randn(rng, {chunk, 2, 4}), randn(rng, {chunk, 2, 4}), ids);
        EXPECT_LE(buf.resident_tokens(), *buf.total_capacity());
        phases.push_back(settle(buf, randn(rng, {chunk, 4, 4}), c).phase);
        EXPECT_LE(buf.clean_len(), budget);
        EXPECT_EQ(buf.active_len(), 0u);
    }
    using P = CompressionReport::Phase;
    EXPECT_EQ(phases, (std::vector<P>{P::fill, P::fill, P::compress, P::compress, P::compress}));
}

TEST(KVBuffer, ActiveOverflowAndUnknownChunk) {
    KVBuffer buf(1, 2, 4, 4);
    buf.activate(1, 4);
    EXPECT_THROW(buf.activate(2, 1), InternalError);
    EXPECT_THROW(buf.finish(3, Tensor::zeros({4, 1, 2}), Tensor::zeros({4, 1, 2}), std::vector<std::int64_t>(4)),
                 InternalError);
    EXPECT_THROW(buf.finish(1, Tensor::zeros({3, 1, 2}), Tensor::zeros({3, 1, 2}), std::vector<std::int64_t>(3)),
                 InvalidInput);
}

TEST(KVBuffer, UnboundedWithoutBudget) {
    Rng rng(17);
    KVBuffer buf(1, 2, std::nullopt, 3);
    for (int i = 1; i <= 6; ++i) {
        buf.activate(i, 3);
        std::vector<std::int64_t> ids{3 * i, 3 * i + 1, 3 * i + 2};
        buf.finish(i, randn(rng, {3, 1, 2}), randn(rng, {3, 1, 2}), ids);
        EXPECT_EQ(settle(buf, Tensor(), token_config(1)).phase, CompressionReport::Phase::fill);
        EXPECT_EQ(buf.clean_len(), static_cast<std::size_t>(3 * i));
    }
    EXPECT_FALSE(buf.total_capacity().has_value());
}

TEST(KVBuffer, SettleWithNothingStaged) {
    KVBuffer buf(1, 2, 4, 4);
    EXPECT_EQ(settle(buf, Tensor(), token_config(4)).phase, CompressionReport::Phase::none);
}

TEST(CompressionReport, JsonSchema) {
    Rng rng(18);
    KVBuffer buf = staged_buffer(rng, 2, 4, 4, 4, 4);
    const CompressionReport r = compress(buf, randn(rng, {4, 2, 4}), token_config(4));
    const auto j = to_json(r);
    EXPECT_EQ(j.at("schema_version"), 1);
    EXPECT_EQ(j.at("phase"), "compress");
    ASSERT_TRUE(j.at("heads").contains("1"));
    const auto& h = j.at("heads").at("0");
    EXPECT_EQ(h.at("retained_ids").size(), 4u);
    EXPECT_EQ(h.at("evicted_count"), 4);
    for (const char* key : {"score_min", "score_max", "score_mean"})
        EXPECT_TRUE(h.contains(key));
    EXPECT_LE(h.at("score_min").get<double>(), h.at("score_mean").get<double>());
    EXPECT_LE(h.at("score_mean").get<double>(), h.at("score_max").get<double>());
}
