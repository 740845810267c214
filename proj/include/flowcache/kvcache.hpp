// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowcache/error.hpp"
#include "flowcache/numerics.hpp"
#include "flowcache/tensor.hpp"

namespace flowcache {

enum class QueryGranularity { token, frame };
enum class KeyGranularity { token, frame, chunk };

inline const char* to_string(QueryGranularity g) { return g == QueryGranularity::token ? "token" : "frame"; }

inline const char* to_string(KeyGranularity g) {
    switch (g) {
    case KeyGranularity::token: return "token";
    case KeyGranularity::frame: return "frame";
    case KeyGranularity::chunk: return "chunk";
    }
    return "?";
}

struct CompressionConfig {
    double lambda = 0.07;
    std::size_t pool_kernel = 5;
    std::size_t query_window = 50;
    QueryGranularity query_granularity = QueryGranularity::token;
    KeyGranularity key_granularity = KeyGranularity::token;
    std::size_t budget_tokens = 0;  // B, per head
    std::size_t frame_tokens = 1;
    std::size_t chunk_tokens = 1;

    void validate() const {
        if (!(lambda >= 0.0 && lambda <= 1.0))
            throw InvalidConfig("kv.lambda: must lie in [0, 1]");
        if (pool_kernel == 0 || pool_kernel % 2 == 0)
            throw InvalidConfig("kv.pool_kernel: must be a positive odd integer");
        if (query_window == 0)
            throw InvalidConfig("kv.query_window: must be >= 1");
        if (budget_tokens == 0)
            throw InvalidConfig("kv.budget: must be >= 1 token");
        if (frame_tokens == 0 || chunk_tokens == 0 || chunk_tokens % frame_tokens != 0)
            throw InvalidConfig("kv: chunk size must be a positive multiple of frame size");
    }
};

namespace detail {

inline void check_heads_layout(const Tensor& t, const char* what) {
    if (t.rank() != 3)
        throw InvalidInput(std::string(what) + " must have shape (L, H, d), got " + shape_string(t.shape()));
}

// Row j of head h in a (L, H, d) tensor.
inline std::span<const double> head_row(const Tensor& t, std::size_t j, std::size_t h) {
    const std::size_t heads = t.dim(1);
    const std::size_t d = t.dim(2);
    return t.data().subspan((j * heads + h) * d, d);
}

inline double row_norm(std::span<const double> row) { return std::sqrt(dot(row, row)); }

inline void check_redundancy_input(const Tensor& keys) {
    check_heads_layout(keys, "keys");
    if (keys.dim(0) < 2)
        throw InvalidInput("redundancy needs at least two key tokens");
}

}  // namespace detail

/// Per key head, the attention distribution of the trailing `query_window`
/// query rows over the keys, averaged over those rows and over the query
/// heads grouped onto the key head (contiguous blocks of H_q/H_k).
/// queries: (L_q, H_q, d); keys: (L_k, H_k, d); result: (H_k, L_k).
inline Tensor importance(const Tensor& queries, const Tensor& keys, std::size_t query_window) {
    detail::check_heads_layout(queries, "queries");
    detail::check_heads_layout(keys, "keys");
    const std::size_t lq = queries.dim(0), hq = queries.dim(1), d = queries.dim(2);
    const std::size_t lk = keys.dim(0), hk = keys.dim(1);
    if (keys.dim(2) != d)
        throw InvalidInput("importance: query and key head dims differ");
    if (hq % hk != 0)
        throw InvalidInput("importance: query heads (" + std::to_string(hq) + ") not divisible by key heads (" +
                           std::to_string(hk) + ")");
    if (query_window == 0)
        throw InvalidInput("importance: query window must be positive");
    const std::size_t group = hq / hk;
    const std::size_t first_row = lq > query_window ? lq - query_window : 0;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double rows = static_cast<double>((lq - first_row) * group);

    std::vector<double> out(hk * lk, 0.0);
    std::vector<double> logits(lk);
    for (std::size_t h = 0; h < hk; ++h) {
        double* acc = out.data() + h * lk;
        for (std::size_t qh = h * group; qh < (h + 1) * group; ++qh) {
            for (std::size_t i = first_row; i < lq; ++i) {
                const auto q = detail::head_row(queries, i, qh);
                for (std::size_t j = 0; j < lk; ++j)
                    logits[j] = dot(q, detail::head_row(keys, j, h)) * inv_sqrt_d;
                softmax_inplace(logits);
                for (std::size_t j = 0; j < lk; ++j)
                    acc[j] += logits[j];
            }
        }
        for (std::size_t j = 0; j < lk; ++j)
            acc[j] /= rows;
    }
    return Tensor({hk, lk}, std::move(out));
}

/// Max-pool each head's importance row along the token axis.
inline Tensor pooled_importance(const Tensor& imp, std::size_t kernel) {
    if (imp.rank() != 2)
        throw InvalidInput("pooled_importance expects (H, L), got " + shape_string(imp.shape()));
    const std::size_t heads = imp.dim(0), len = imp.dim(1);
    std::vector<double> out;
    out.reserve(imp.size());
    for (std::size_t h = 0; h < heads; ++h) {
        auto pooled = maxpool1d(imp.data().subspan(h * len, len), kernel);
        out.insert(out.end(), pooled.begin(), pooled.end());
    }
    return Tensor(imp.shape(), std::move(out));
}

/// Reference redundancy: materializes the L_k x L_k cosine matrix per head,
/// zeroes its diagonal, takes column means and a softmax over tokens.
inline Tensor redundancy_naive(const Tensor& keys) {
    detail::check_redundancy_input(keys);
    const std::size_t lk = keys.dim(0), hk = keys.dim(1), d = keys.dim(2);
    std::vector<double> out(hk * lk);
    std::vector<double> normalized(lk * d);
    std::vector<double> sim(lk * lk);
    for (std::size_t h = 0; h < hk; ++h) {
        for (std::size_t j = 0; j < lk; ++j) {
            const auto row = detail::head_row(keys, j, h);
            const double norm = detail::row_norm(row);
            if (!(norm > 0.0))
                throw DegenerateInput("key row " + std::to_string(j) + " of head " + std::to_string(h) +
                                      " has zero norm");
            for (std::size_t c = 0; c < d; ++c)
                normalized[j * d + c] = row[c] / norm;
        }
        for (std::size_t i = 0; i < lk; ++i) {
            const std::span<const double> ki(normalized.data() + i * d, d);
            for (std::size_t j = 0; j < lk; ++j)
                sim[i * lk + j] = i == j ? 0.0 : dot(ki, std::span<const double>(normalized.data() + j * d, d));
        }
        double* col = out.data() + h * lk;
        for (std::size_t j = 0; j < lk; ++j) {
            double sum = 0.0;
            for (std::size_t i = 0; i < lk; ++i)
                sum += sim[i * lk + j];
            col[j] = sum / static_cast<double>(lk);
        }
        softmax_inplace(std::span<double>(col, lk));
    }
    return Tensor({hk, lk}, std::move(out));
}

/// Same values as redundancy_naive without the L_k x L_k matrix: the column
/// mean of the cosine matrix is (mean of normalized rows) . k_j / |k_j|,
/// minus the self term k_j.k_j / (|k_j|^2 L_k) that the zeroed diagonal
/// removes. Transient memory is O(L_k + d) per call beyond the output.
inline Tensor redundancy_fast(const Tensor& keys) {
    detail::check_redundancy_input(keys);
    const std::size_t lk = keys.dim(0), hk = keys.dim(1), d = keys.dim(2);
    const double inv_len = 1.0 / static_cast<double>(lk);
    std::vector<double> out(hk * lk);
    std::vector<double> norms(lk);
    std::vector<double> mean(d);
    for (std::size_t h = 0; h < hk; ++h) {
        std::fill(mean.begin(), mean.end(), 0.0);
        for (std::size_t i = 0; i < lk; ++i) {
            const auto row = detail::head_row(keys, i, h);
            norms[i] = detail::row_norm(row);
            if (!(norms[i] > 0.0))
                throw DegenerateInput("key row " + std::to_string(i) + " of head " + std::to_string(h) +
                                      " has zero norm");
            for (std::size_t c = 0; c < d; ++c)
                mean[c] += row[c] / norms[i];
        }
        for (double& m : mean)
            m *= inv_len;
        double* col = out.data() + h * lk;
        for (std::size_t j = 0; j < lk; ++j) {
            const auto row = detail::head_row(keys, j, h);
            const double self = dot(row, row) / (norms[j] * norms[j]);
            col[j] = dot(row, mean) / norms[j] - self * inv_len;
        }
        softmax_inplace(std::span<double>(col, lk));
    }
    return Tensor({hk, lk}, std::move(out));
}

/// lambda * pooled_importance - (1 - lambda) * redundancy, elementwise.
inline Tensor combined_score(const Tensor& pooled, const Tensor& redundancy, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw InvalidInput("combined_score: lambda must lie in [0, 1]");
    if (pooled.shape() != redundancy.shape())
        throw InvalidInput("combined_score: shape " + shape_string(pooled.shape()) + " vs " +
                           shape_string(redundancy.shape()));
    std::vector<double> out(pooled.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = lambda * pooled[i] - (1.0 - lambda) * redundancy[i];
    return Tensor(pooled.shape(), std::move(out));
}

struct SelectionScores {
    Tensor importance;
    Tensor pooled;
    Tensor redundancy;
    Tensor combined;
};

inline SelectionScores selection_scores(const Tensor& queries, const Tensor& keys, const CompressionConfig& config) {
    SelectionScores s;
    s.importance = importance(queries, keys, config.query_window);
    s.pooled = pooled_importance(s.importance, config.pool_kernel);
    s.redundancy = redundancy_fast(keys);
    s.combined = combined_score(s.pooled, s.redundancy, config.lambda);
    return s;
}

/// Token scores averaged over consecutive groups of `group_size` tokens.
struct GroupedScores {
    std::vector<double> scores;
    std::size_t group_size = 1;
    std::size_t token_count = 0;

    /// Token positions covered by the given groups, ascending.
    std::vector<std::size_t> expand(std::span<const std::size_t> groups) const {
        std::vector<std::size_t> out;
        out.reserve(groups.size() * group_size);
        for (std::size_t g : groups)
            for (std::size_t t = 0; t < group_size; ++t)
                out.push_back(g * group_size + t);
        std::sort(out.begin(), out.end());
        return out;
    }

    /// Group budget for a token budget: whole groups only.
    std::size_t group_budget(std::size_t token_budget) const { return token_budget / group_size; }
};

inline std::size_t group_size_for(KeyGranularity granularity, std::size_t frame_tokens, std::size_t chunk_tokens) {
    switch (granularity) {
    case KeyGranularity::token: return 1;
    case KeyGranularity::frame: return frame_tokens;
    case KeyGranularity::chunk: return chunk_tokens;
    }
    return 1;
}

inline GroupedScores granularity_aggregate(std::span<const double> scores, KeyGranularity granularity,
                                           std::size_t frame_tokens, std::size_t chunk_tokens) {
    const std::size_t group = group_size_for(granularity, frame_tokens, chunk_tokens);
    if (group == 0 || scores.size() % group != 0)
        throw InvalidConfig("kv.key_granularity: " + std::to_string(scores.size()) +
                            " tokens do not split into groups of " + std::to_string(group));
    GroupedScores out;
    out.group_size = group;
    out.token_count = scores.size();
    out.scores.reserve(scores.size() / group);
    for (std::size_t g = 0; g < scores.size() / group; ++g) {
        double sum = 0.0;
        for (std::size_t t = 0; t < group; ++t)
            sum += scores[g * group + t];
        out.scores.push_back(sum / static_cast<double>(group));
    }
    return out;
}

/// Positions kept for one head under a token budget at the given key
/// granularity.
inline std::vector<std::size_t> select_tokens(std::span<const double> scores, std::size_t token_budget,
                                              KeyGranularity granularity, std::size_t frame_tokens,
                                              std::size_t chunk_tokens) {
    if (granularity == KeyGranularity::token)
        return stable_topk(scores, std::min(token_budget, scores.size()));
    const GroupedScores grouped = granularity_aggregate(scores, granularity, frame_tokens, chunk_tokens);
    const std::size_t groups = std::min(grouped.group_budget(token_budget), grouped.scores.size());
    const auto chosen = stable_topk(grouped.scores, groups);
    return grouped.expand(chosen);
}

/// Keys, values and source token ids of one head's clean region.
struct HeadStore {
    std::vector<std::int64_t> ids;
    std::vector<double> keys;    // ids.size() x head_dim
    std::vector<double> values;  // ids.size() x head_dim
};

struct HeadReport {
    std::vector<std::int64_t> retained_ids;
    std::size_t evicted_count = 0;
    double score_min = 0.0;
    double score_max = 0.0;
    double score_mean = 0.0;
    double retained_importance = 1.0;  // importance mass of the kept tokens
};

struct CompressionReport {
    enum class Phase { none, fill, compress };

    Phase phase = Phase::none;
    bool under_budget = false;  // nothing had to be evicted
    std::size_t available = 0;
    std::size_t budget = 0;
    std::vector<HeadReport> heads;

    std::size_t evicted_total() const {
        std::size_t n = 0;
        for (const auto& h : heads)
            n += h.evicted_count;
        return n;
    }
};

inline const char* to_string(CompressionReport::Phase p) {
    switch (p) {
    case CompressionReport::Phase::none: return "none";
    case CompressionReport::Phase::fill: return "fill";
    case CompressionReport::Phase::compress: return "compress";
    }
    return "?";
}

inline nlohmann::ordered_json to_json(const CompressionReport& r) {
    nlohmann::ordered_json heads = nlohmann::ordered_json::object();
    for (std::size_t h = 0; h < r.heads.size(); ++h) {
        const HeadReport& hr = r.heads[h];
        heads[std::to_string(h)] = {
            {"retained_ids", hr.retained_ids}, {"evicted_count", hr.evicted_count},
            {"score_min", hr.score_min},       {"score_max", hr.score_max},
            {"score_mean", hr.score_mean},     {"retained_importance", hr.retained_importance},
        };
    }
    return {
        {"schema_version", 1},       {"phase", to_string(r.phase)}, {"under_budget", r.under_budget},
        {"available", r.available}, {"budget", r.budget},           {"heads", std::move(heads)},
    };
}

/// Fixed-capacity two-region KV store.
///
/// The clean region holds the (possibly compressed) KV of finished chunks,
/// up to B_budget tokens per head; an unset budget means compression is off
/// and the region grows without bound. The active region reserves
/// B_active token slots shared by all heads for chunks still denoising.
/// A chunk that finishes is staged: its KV keeps its active slots until
/// fill() or compress() moves it into the clean region.
///
/// Every head holds the same number of tokens; only the ids differ.
class KVBuffer {
public:
    KVBuffer(std::size_t heads, std::size_t head_dim, std::optional<std::size_t> budget_tokens,
             std::size_t active_tokens)
        : m_head_dim(head_dim), m_budget(budget_tokens), m_active_capacity(active_tokens), m_heads(heads) {
        if (heads == 0 || head_dim == 0)
            throw InvalidConfig("kv: heads and head_dim must be positive");
    }

    std::size_t heads() const noexcept { return m_heads.size(); }
    std::size_t head_dim() const noexcept { return m_head_dim; }
    std::optional<std::size_t> budget_capacity() const noexcept { return m_budget; }
    std::size_t active_capacity() const noexcept { return m_active_capacity; }
    std::optional<std::size_t> total_capacity() const {
        if (!m_budget)
            return std::nullopt;
        return *m_budget + m_active_capacity;
    }

    const HeadStore& head(std::size_t h) const { return m_heads.at(h); }
    std::size_t clean_len(std::size_t h = 0) const { return m_heads.at(h).ids.size(); }
    std::size_t active_len() const noexcept { return m_active_len; }
    std::size_t staged_len() const noexcept { return m_staged_ids.size(); }
    std::size_t resident_tokens(std::size_t h = 0) const { return clean_len(h) + m_active_len; }

    void activate(int chunk, std::size_t tokens) {
        if (m_active_len + tokens > m_active_capacity)
            throw InternalError("active region overflow: " + std::to_string(m_active_len + tokens) + " > " +
                                std::to_string(m_active_capacity));
        m_active.push_back({chunk, tokens});
        m_active_len += tokens;
    }

    /// Stage a finished chunk. keys/values: (tokens, heads, head_dim).
    void finish(int chunk, const Tensor& keys, const Tensor& values, std::span<const std::int64_t> ids) {
        auto it = std::find_if(m_active.begin(), m_active.end(), [&](const Slot& s) { return s.chunk == chunk; });
        if (it == m_active.end())
            throw InternalError("finish: chunk " + std::to_string(chunk) + " is not active");
        if (keys.rank() != 3 || keys.dim(0) != it->tokens || keys.dim(1) != heads() || keys.dim(2) != m_head_dim ||
            values.shape() != keys.shape() || ids.size() != it->tokens)
            throw InvalidInput("finish: KV for chunk " + std::to_string(chunk) + " has the wrong layout");
        it->staged = true;
        m_staged_ids.insert(m_staged_ids.end(), ids.begin(), ids.end());
        m_staged_keys.insert(m_staged_keys.end(), keys.data().begin(), keys.data().end());
        m_staged_values.insert(m_staged_values.end(), values.data().begin(), values.data().end());
    }

    /// True once the staged tokens no longer fit next to the clean region.
    bool needs_compression() const { return m_budget && clean_len() + staged_len() > *m_budget; }

    /// Cache-filling phase: append staged KV without compression.
    void fill() {
        if (needs_compression())
            throw InternalError("fill would exceed the clean-region budget");
        for (std::size_t h = 0; h < heads(); ++h) {
            HeadStore& store = m_heads[h];
            for (std::size_t t = 0; t < m_staged_ids.size(); ++t) {
                store.ids.push_back(m_staged_ids[t]);
                const auto k = staged_row(m_staged_keys, t, h);
                const auto v = staged_row(m_staged_values, t, h);
                store.keys.insert(store.keys.end(), k.begin(), k.end());
                store.values.insert(store.values.end(), v.begin(), v.end());
            }
        }
        release_staged();
    }

    /// Clean region followed by staged tokens, as a (L, H, d) key tensor.
    Tensor merged_keys() const { return merged(&HeadStore::keys, m_staged_keys); }
    Tensor merged_values() const { return merged(&HeadStore::values, m_staged_values); }

    /// Merged ids of one head (clean then staged).
    std::vector<std::int64_t> merged_ids(std::size_t h) const {
        std::vector<std::int64_t> out = m_heads.at(h).ids;
        out.insert(out.end(), m_staged_ids.begin(), m_staged_ids.end());
        return out;
    }

    /// Replace the clean region with the given merged positions per head and
    /// free the staged chunks' active slots.
    void retain(const std::vector<std::vector<std::size_t>>& positions) {
        if (positions.size() != heads())
            throw InternalError("retain: one position list per head required");
        const Tensor keys = merged_keys();
        const Tensor values = merged_values();
        for (std::size_t h = 0; h < heads(); ++h) {
            const auto ids = merged_ids(h);
            HeadStore next;
            for (std::size_t pos : positions[h]) {
                next.ids.push_back(ids.at(pos));
                const auto k = detail::head_row(keys, pos, h);
                const auto v = detail::head_row(values, pos, h);
                next.keys.insert(next.keys.end(), k.begin(), k.end());
                next.values.insert(next.values.end(), v.begin(), v.end());
            }
            if (m_budget && next.ids.size() > *m_budget)
                throw InternalError("retain: head " + std::to_string(h) + " exceeds the clean-region budget");
            m_heads[h] = std::move(next);
        }
        release_staged();
    }

private:
    struct Slot {
        int chunk;
        std::size_t tokens;
        bool staged = false;
    };

    std::span<const double> staged_row(const std::vector<double>& buf, std::size_t t, std::size_t h) const {
        return std::span<const double>(buf).subspan((t * heads() + h) * m_head_dim, m_head_dim);
    }

    Tensor merged(std::vector<double> HeadStore::*field, const std::vector<double>& staged) const {
        const std::size_t len = clean_len() + staged_len();
        if (len == 0)
            throw InvalidInput("KV buffer holds no clean or staged tokens");
        std::vector<double> out(len * heads() * m_head_dim);
        for (std::size_t h = 0; h < heads(); ++h) {
            const HeadStore& store = m_heads[h];
            const std::vector<double>& rows = store.*field;
            for (std::size_t t = 0; t < store.ids.size(); ++t)
                std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>(t * m_head_dim), m_head_dim,
                            out.begin() + static_cast<std::ptrdiff_t>((t * heads() + h) * m_head_dim));
            for (std::size_t t = 0; t < staged_len(); ++t) {
                const auto row = staged_row(staged, t, h);
                std::copy(row.begin(), row.end(),
                          out.begin() + static_cast<std::ptrdiff_t>(((store.ids.size() + t) * heads() + h) * m_head_dim));
            }
        }
        return Tensor({len, heads(), m_head_dim}, std::move(out));
    }

    void release_staged() {
        for (auto it = m_active.begin(); it != m_active.end();) {
            if (it->staged) {
                m_active_len -= it->tokens;
                it = m_active.erase(it);
            } else {
                ++it;
            }
        }
        m_staged_ids.clear();
        m_staged_keys.clear();
        m_staged_values.clear();
    }

    std::size_t m_head_dim;
    std::optional<std::size_t> m_budget;
    std::size_t m_active_capacity;
    std::vector<HeadStore> m_heads;
    std::vector<Slot> m_active;
    std::size_t m_active_len = 0;
    std::vector<std::int64_t> m_staged_ids;
    std::vector<double> m_staged_keys;    // staged tokens x heads x head_dim
    std::vector<double> m_staged_values;
};

/// Compression phase: merge the clean region with the staged chunks, score
/// every merged token per head and keep the top `budget_tokens` (in
/// ascending original order). When everything fits, all tokens are kept
/// and the report is flagged under_budget.
inline CompressionReport compress(KVBuffer& buffer, const Tensor& queries, const CompressionConfig& config) {
    config.validate();
    if (buffer.budget_capacity() && config.budget_tokens > *buffer.budget_capacity())
        throw InvalidConfig("kv.budget: per-head budget " + std::to_string(config.budget_tokens) +
                            " exceeds the clean-region capacity " + std::to_string(*buffer.budget_capacity()));
    CompressionReport report;
    report.phase = CompressionReport::Phase::compress;
    report.available = buffer.clean_len() + buffer.staged_len();
    report.budget = config.budget_tokens;
    report.heads.resize(buffer.heads());

    std::vector<std::vector<std::size_t>> keep(buffer.heads());
    if (report.available <= config.budget_tokens) {
        report.under_budget = true;
        for (std::size_t h = 0; h < buffer.heads(); ++h) {
            keep[h].resize(report.available);
            std::iota(keep[h].begin(), keep[h].end(), std::size_t{0});
            report.heads[h].retained_ids = buffer.merged_ids(h);
        }
        buffer.retain(keep);
        return report;
    }

    const Tensor keys = buffer.merged_keys();
    const SelectionScores scores = selection_scores(queries, keys, config);
    const std::size_t len = report.available;
    for (std::size_t h = 0; h < buffer.heads(); ++h) {
        const auto row = scores.combined.data().subspan(h * len, len);
        keep[h] = select_tokens(row, config.budget_tokens, config.key_granularity, config.frame_tokens,
                                config.chunk_tokens);
        HeadReport& hr = report.heads[h];
        const auto ids = buffer.merged_ids(h);
        hr.retained_ids.reserve(keep[h].size());
        hr.retained_importance = 0.0;
        for (std::size_t pos : keep[h]) {
            hr.retained_ids.push_back(ids[pos]);
            hr.retained_importance += scores.importance[h * len + pos];
        }
        hr.evicted_count = len - keep[h].size();
        hr.score_min = *std::min_element(row.begin(), row.end());
        hr.score_max = *std::max_element(row.begin(), row.end());
        hr.score_mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(len);
    }
    buffer.retain(keep);
    return report;
}

/// Apply the two-phase rule to whatever is staged: fill while the clean
/// region has room, compress once it would overflow.
inline CompressionReport settle(KVBuffer& buffer, const Tensor& queries, const CompressionConfig& config) {
    if (buffer.staged_len() == 0)
        return {};
    if (!buffer.needs_compression()) {
        CompressionReport report;
        report.phase = CompressionReport::Phase::fill;
        report.under_budget = true;
        report.available = buffer.clean_len() + buffer.staged_len();
        report.budget = buffer.budget_capacity().value_or(report.available);
        buffer.fill();
        report.heads.resize(buffer.heads());
        for (std::size_t h = 0; h < buffer.heads(); ++h)
            report.heads[h].retained_ids = buffer.head(h).ids;
        return report;
    }
    return compress(buffer, queries, config);
}

}  // namespace flowcache
