// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowcache/armodel.hpp"
#include "flowcache/chunkcache.hpp"
#include "flowcache/error.hpp"
#include "flowcache/kvcache.hpp"
#include "flowcache/schedule.hpp"

namespace flowcache {

struct ScheduleConfig {
    double p = 0.25;
    double T = 1.0;
    int steps = 64;
};

struct PolicySettings {
    bool enabled = true;  // false: every step computes and no estimate is taken
    PolicyConfig rule;
};

struct ModelConfig {
    double noise_scale = 0.0;
};

struct KVSettings {
    bool compression = true;  // false: unbounded clean region
    std::size_t heads_k = 2;
    std::size_t heads_q = 4;
    std::size_t head_dim = 16;
    std::size_t budget_chunks = 5;
    double lambda = 0.07;
    std::size_t pool_kernel = 5;
    std::size_t query_window = 50;
    QueryGranularity query_granularity = QueryGranularity::token;
    KeyGranularity key_granularity = KeyGranularity::token;
};

struct RunConfig {
    std::string profile = "magi-fast";
    SceneConfig scene;
    ScheduleConfig schedule;
    PolicySettings policy;
    ModelConfig model;
    KVSettings kv;
    CostModel cost;
    std::string out_dir = "out";

    PowerLawSchedule make_schedule() const { return {schedule.p, schedule.T, schedule.steps}; }

    std::size_t budget_tokens() const { return kv.budget_chunks * scene.shape.tokens(); }
    std::size_t active_tokens() const { return static_cast<std::size_t>(scene.window) * scene.shape.tokens(); }

    CompressionConfig compression() const {
        CompressionConfig c;
        c.lambda = kv.lambda;
        c.pool_kernel = kv.pool_kernel;
        c.query_window = kv.query_window;
        c.query_granularity = kv.query_granularity;
        c.key_granularity = kv.key_granularity;
        c.budget_tokens = budget_tokens();
        c.frame_tokens = scene.shape.frame_tokens();
        c.chunk_tokens = scene.shape.tokens();
        return c;
    }

    void validate() const {
        scene.validate();
        make_schedule();
        check_staggering(schedule.steps, scene.window);
        policy.rule.validate();
        if (!(model.noise_scale >= 0.0) || !std::isfinite(model.noise_scale))
            throw InvalidConfig("model.noise_scale: must be a nonnegative finite real");
        if (kv.heads_k == 0 || kv.heads_q == 0 || kv.heads_q % kv.heads_k != 0)
            throw InvalidConfig("kv.heads_q: must be a positive multiple of kv.heads_k");
        if (kv.head_dim == 0)
            throw InvalidConfig("kv.head_dim: must be >= 1");
        if (kv.budget_chunks == 0)
            throw InvalidConfig("kv.budget_chunks: must be >= 1");
        compression().validate();
        cost.validate();
    }
};

inline QueryGranularity parse_query_granularity(const std::string& s, const std::string& path) {
    if (s == "token")
        return QueryGranularity::token;
    if (s == "frame")
        return QueryGranularity::frame;
    throw InvalidConfig(path + ": expected token or frame, got '" + s + "'");
}

inline KeyGranularity parse_key_granularity(const std::string& s, const std::string& path) {
    if (s == "token")
        return KeyGranularity::token;
    if (s == "frame")
        return KeyGranularity::frame;
    if (s == "chunk")
        return KeyGranularity::chunk;
    throw InvalidConfig(path + ": expected token, frame or chunk, got '" + s + "'");
}

inline std::vector<std::string> profile_names() {
    return {"magi-slow", "magi-fast", "skyreels-slow", "skyreels-fast", "baseline"};
}

inline RunConfig profile_config(const std::string& name) {
    RunConfig c;
    c.profile = name;
    if (name == "magi-slow" || name == "magi-fast" || name == "baseline") {
        c.scene.chunks = 10;
        c.scene.window = 4;
        c.schedule.steps = 64;
        c.policy.rule.warmup = 5;
        c.policy.rule.epsilon = name == "magi-slow" ? 0.01 : name == "magi-fast" ? 0.015 : 0.0;
    } else if (name == "skyreels-slow" || name == "skyreels-fast") {
        c.scene.chunks = 10;
        c.scene.window = 5;
        c.schedule.steps = 50;
        c.policy.rule.warmup = 4;
        c.policy.rule.epsilon = name == "skyreels-slow" ? 0.1 : 0.15;
    } else {
        throw InvalidConfig("profile: unknown profile '" + name + "'");
    }
    return c;
}

namespace detail {

inline nlohmann::ordered_json real_or_inf(double v) {
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    return v;
}

template <class T>
T get_field(const nlohmann::ordered_json& j, const std::string& path) {
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw InvalidConfig(path + ": wrong type (" + std::string(j.type_name()) + ")");
    }
}

inline double get_real(const nlohmann::ordered_json& j, const std::string& path) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf" || s == "+inf")
            return std::numeric_limits<double>::infinity();
        throw InvalidConfig(path + ": expected a number, got '" + s + "'");
    }
    if (!j.is_number())
        throw InvalidConfig(path + ": expected a number");
    return j.get<double>();
}

inline std::size_t get_count(const nlohmann::ordered_json& j, const std::string& path) {
    if (!j.is_number_integer() || j.get<long long>() < 0)
        throw InvalidConfig(path + ": expected a nonnegative integer");
    return j.get<std::size_t>();
}

inline int get_int(const nlohmann::ordered_json& j, const std::string& path) {
    if (!j.is_number_integer())
        throw InvalidConfig(path + ": expected an integer");
    return j.get<int>();
}

inline void require_object(const nlohmann::ordered_json& j, const std::string& path) {
    if (!j.is_object())
        throw InvalidConfig(path + ": expected an object");
}

[[noreturn]] inline void unknown_key(const std::string& path) {
    throw InvalidConfig(path + ": unknown field");
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    using detail::real_or_inf;
    const ChunkShape& s = c.scene.shape;
    return {
        {"profile", c.profile},
        {"scene",
         {{"k", c.scene.chunks},
          {"l", c.scene.window},
          {"shape", {s.channels, s.frames, s.height, s.width}},
          {"seed", c.scene.seed},
          {"norm_spread", c.scene.norm_spread},
          {"data_scale", c.scene.data_scale}}},
        {"schedule", {{"p", c.schedule.p}, {"T", c.schedule.T}, {"steps", c.schedule.steps}}},
        {"policy",
         {{"enabled", c.policy.enabled},
          {"epsilon", real_or_inf(c.policy.rule.epsilon)},
          {"warmup", c.policy.rule.warmup}}},
        {"model", {{"noise_scale", c.model.noise_scale}}},
        {"kv",
         {{"compression", c.kv.compression},
          {"heads_k", c.kv.heads_k},
          {"heads_q", c.kv.heads_q},
          {"head_dim", c.kv.head_dim},
          {"budget_chunks", c.kv.budget_chunks},
          {"lambda", c.kv.lambda},
          {"pool_kernel", c.kv.pool_kernel},
          {"query_window", c.kv.query_window},
          {"query_granularity", to_string(c.kv.query_granularity)},
          {"key_granularity", to_string(c.kv.key_granularity)}}},
        {"cost",
         {{"flops_per_chunk_forward", c.cost.flops_per_chunk_forward},
          {"flops_per_kv_token_pair", c.cost.flops_per_kv_token_pair},
          {"bytes_per_kv_token", c.cost.bytes_per_kv_token}}},
        {"output", {{"dir", c.out_dir}}},
    };
}

/// Overlay the fields present in `j` onto `c`. A "profile" key, if present,
/// first resets `c` to that profile.
inline void apply_overlay(RunConfig& c, const nlohmann::ordered_json& j) {
    using namespace detail;
    require_object(j, "config");
    if (j.contains("profile"))
        c = profile_config(get_field<std::string>(j.at("profile"), "profile"));
    for (const auto& [key, v] : j.items()) {
        const std::string base = key;
        if (key == "profile")
            continue;
        require_object(v, base);
        for (const auto& [field, x] : v.items()) {
            const std::string path = base + "." + field;
            if (key == "scene") {
                if (field == "k")
                    c.scene.chunks = get_int(x, path);
                else if (field == "l")
                    c.scene.window = get_int(x, path);
                else if (field == "shape") {
                    if (!x.is_array() || x.size() != 4)
                        throw InvalidConfig(path + ": expected [c_in, s, h, w]");
                    c.scene.shape = {get_count(x[0], path + "[0]"), get_count(x[1], path + "[1]"),
                                     get_count(x[2], path + "[2]"), get_count(x[3], path + "[3]")};
                } else if (field == "seed")
                    c.scene.seed = get_field<std::uint64_t>(x, path);
                else if (field == "norm_spread")
                    c.scene.norm_spread = get_real(x, path);
                else if (field == "data_scale")
                    c.scene.data_scale = get_real(x, path);
                else
                    unknown_key(path);
            } else if (key == "schedule") {
                if (field == "p")
                    c.schedule.p = get_real(x, path);
                else if (field == "T")
                    c.schedule.T = get_real(x, path);
                else if (field == "steps")
                    c.schedule.steps = get_int(x, path);
                else
                    unknown_key(path);
            } else if (key == "policy") {
                if (field == "enabled")
                    c.policy.enabled = get_field<bool>(x, path);
                else if (field == "epsilon")
                    c.policy.rule.epsilon = get_real(x, path);
                else if (field == "warmup")
                    c.policy.rule.warmup = get_int(x, path);
                else
                    unknown_key(path);
            } else if (key == "model") {
                if (field == "noise_scale")
                    c.model.noise_scale = get_real(x, path);
                else
                    unknown_key(path);
            } else if (key == "kv") {
                if (field == "compression")
                    c.kv.compression = get_field<bool>(x, path);
                else if (field == "heads_k")
                    c.kv.heads_k = get_count(x, path);
                else if (field == "heads_q")
                    c.kv.heads_q = get_count(x, path);
                else if (field == "head_dim")
                    c.kv.head_dim = get_count(x, path);
                else if (field == "budget_chunks")
                    c.kv.budget_chunks = get_count(x, path);
                else if (field == "lambda")
                    c.kv.lambda = get_real(x, path);
                else if (field == "pool_kernel")
                    c.kv.pool_kernel = get_count(x, path);
                else if (field == "query_window")
                    c.kv.query_window = get_count(x, path);
                else if (field == "query_granularity")
                    c.kv.query_granularity = parse_query_granularity(get_field<std::string>(x, path), path);
                else if (field == "key_granularity")
                    c.kv.key_granularity = parse_key_granularity(get_field<std::string>(x, path), path);
                else
                    unknown_key(path);
            } else if (key == "cost") {
                if (field == "flops_per_chunk_forward")
                    c.cost.flops_per_chunk_forward = get_real(x, path);
                else if (field == "flops_per_kv_token_pair")
                    c.cost.flops_per_kv_token_pair = get_real(x, path);
                else if (field == "bytes_per_kv_token")
                    c.cost.bytes_per_kv_token = get_real(x, path);
                else
                    unknown_key(path);
            } else if (key == "output") {
                if (field == "dir")
                    c.out_dir = get_field<std::string>(x, path);
                else
                    unknown_key(path);
            } else {
                unknown_key(base);
            }
        }
    }
}

inline RunConfig config_from_json(const nlohmann::ordered_json& j) {
    RunConfig c = profile_config("magi-fast");
    apply_overlay(c, j);
    c.validate();
    return c;
}

}  // namespace flowcache
