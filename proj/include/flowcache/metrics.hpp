// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "flowcache/chunkcache.hpp"
#include "flowcache/error.hpp"
#include "flowcache/tensor.hpp"

namespace flowcache {

inline constexpr int trace_schema_version = 1;

/// One active chunk's slot within a global step.
struct ChunkStep {
    int chunk = 0;
    int local_step = 0;
    Action decision = Action::compute;
    double metric = 0.0;       // true L1_rel when computed, the estimate when reused
    double f = 0.0;            // accumulator after the decision
    double true_metric = 0.0;  // L1_rel of the model velocity, evaluated for tracing only
    std::optional<double> estimate;  // stale-residual estimate, when the policy produced one

    friend bool operator==(const ChunkStep&, const ChunkStep&) = default;
};

struct CompressionEvent {
    int chunk = 0;  // chunk whose completion triggered it
    std::string phase;
    std::size_t available = 0;
    std::size_t retained = 0;
    std::size_t evicted = 0;  // summed over heads
    double retained_importance = 1.0;  // mean over heads

    friend bool operator==(const CompressionEvent&, const CompressionEvent&) = default;
};

struct StepRecord {
    int global_step = 0;
    std::vector<ChunkStep> chunks;
    double flops = 0.0;
    std::vector<std::size_t> resident_kv_tokens;  // per head
    double peak_resident_bytes = 0.0;             // running peak up to this step
    std::vector<CompressionEvent> compressions;

    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct RunTotals {
    long computed = 0;
    long reused = 0;
    double total_flops = 0.0;
    double peak_resident_bytes = 0.0;
    std::size_t peak_resident_tokens = 0;

    double reuse_fraction() const {
        const long slots = computed + reused;
        return slots == 0 ? 0.0 : static_cast<double>(reused) / static_cast<double>(slots);
    }

    friend bool operator==(const RunTotals&, const RunTotals&) = default;
};

struct FinalChunk {
    int chunk = 0;
    double l1 = 0.0;
    double error_vs_x0 = 0.0;  // ||x - x0||_1 / ||x0||_1
    std::uint64_t digest = 0;  // of the final latent's bytes

    friend bool operator==(const FinalChunk&, const FinalChunk&) = default;
};

struct RunTrace {
    nlohmann::ordered_json config;
    int steps_per_chunk = 0;
    std::vector<StepRecord> steps;
    RunTotals totals;
    std::vector<FinalChunk> finals;
    std::uint64_t hash = 0;

    friend bool operator==(const RunTrace&, const RunTrace&) = default;
};

// FNV-1a 64, fed with fixed-width little-endian fields.
class Fnv1a {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            m_state ^= b[i];
            m_state *= 0x100000001b3ULL;
        }
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            const unsigned char b = static_cast<unsigned char>(v >> (8 * i));
            bytes(&b, 1);
        }
    }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
    std::uint64_t value() const noexcept { return m_state; }

private:
    std::uint64_t m_state = 0xcbf29ce484222325ULL;
};

inline std::uint64_t tensor_digest(const Tensor& t) {
    Fnv1a h;
    h.u64(t.rank());
    for (std::size_t d : t.shape())
        h.u64(d);
    for (double v : t.data())
        h.f64(v);
    return h.value();
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::uint64_t parse_hex64(const std::string& s) {
    if (s.size() != 16)
        throw InvalidInput("expected 16 hex digits, got '" + s + "'");
    return std::stoull(s, nullptr, 16);
}

/// Hash over everything a run produced: decisions, metrics, costs, KV
/// occupancy, compression events and final-latent digests. The config
/// snapshot and the optional estimate diagnostic are not part of it, so a
/// run with the policy disabled and an eps=0 run compare bitwise.
inline std::uint64_t content_hash(const RunTrace& trace) {
    Fnv1a h;
    h.i64(trace.steps_per_chunk);
    h.u64(trace.steps.size());
    for (const StepRecord& s : trace.steps) {
        h.i64(s.global_step);
        h.f64(s.flops);
        h.f64(s.peak_resident_bytes);
        h.u64(s.resident_kv_tokens.size());
        for (std::size_t r : s.resident_kv_tokens)
            h.u64(r);
        h.u64(s.chunks.size());
        for (const ChunkStep& c : s.chunks) {
            h.i64(c.chunk);
            h.i64(c.local_step);
            h.u64(c.decision == Action::compute ? 0 : 1);
            h.f64(c.metric);
            h.f64(c.f);
            h.f64(c.true_metric);
        }
        h.u64(s.compressions.size());
        for (const CompressionEvent& e : s.compressions) {
            h.i64(e.chunk);
            h.str(e.phase);
            h.u64(e.available);
            h.u64(e.retained);
            h.u64(e.evicted);
            h.f64(e.retained_importance);
        }
    }
    h.i64(trace.totals.computed);
    h.i64(trace.totals.reused);
    h.f64(trace.totals.total_flops);
    h.f64(trace.totals.peak_resident_bytes);
    h.u64(trace.totals.peak_resident_tokens);
    h.u64(trace.finals.size());
    for (const FinalChunk& f : trace.finals) {
        h.i64(f.chunk);
        h.f64(f.l1);
        h.f64(f.error_vs_x0);
        h.u64(f.digest);
    }
    return h.value();
}

/// Baseline model flops over this run's model flops.
inline double speedup(const RunTrace& trace, const RunTrace& baseline) {
    for (const char* key : {"scene", "schedule"}) {
        const bool a = trace.config.contains(key), b = baseline.config.contains(key);
        if (a != b || (a && trace.config.at(key) != baseline.config.at(key)))
            throw InvalidComparison(std::string("speedup: runs differ in their ") + key + " config");
    }
    if (!(trace.totals.total_flops > 0.0))
        throw InvalidComparison("speedup: run has zero model flops");
    return baseline.totals.total_flops / trace.totals.total_flops;
}

struct CurvePoint {
    int local_step = 0;
    int global_step = 0;
    double progress = 0.0;  // local_step / steps * 100
    double metric = 0.0;    // true L1_rel
    double decision_metric = 0.0;
    Action decision = Action::compute;
};

/// Per-chunk (denoising progress, relative L1) series in local-step order.
inline std::map<int, std::vector<CurvePoint>> l1rel_curves(const RunTrace& trace) {
    if (trace.steps_per_chunk <= 0)
        throw InvalidInput("l1rel_curves: trace has no step count");
    std::map<int, std::vector<CurvePoint>> out;
    for (const StepRecord& s : trace.steps) {
        for (const ChunkStep& c : s.chunks) {
            out[c.chunk].push_back({c.local_step, s.global_step,
                                    100.0 * c.local_step / static_cast<double>(trace.steps_per_chunk),
                                    c.true_metric, c.metric, c.decision});
        }
    }
    return out;
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline Action parse_action(const std::string& s) {
    if (s == "compute")
        return Action::compute;
    if (s == "reuse")
        return Action::reuse;
    throw InvalidInput("unknown decision '" + s + "'");
}

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

inline std::string curves_csv(const RunTrace& trace) {
    std::ostringstream os;
    os << "schema_version,chunk,local_step,global_step,progress,metric,decision_metric,decision\n";
    for (const auto& [chunk, points] : l1rel_curves(trace)) {
        for (const CurvePoint& p : points) {
            os << trace_schema_version << ',' << chunk << ',' << p.local_step << ',' << p.global_step << ','
               << detail::fmt_double(p.progress) << ',' << detail::fmt_double(p.metric) << ','
               << detail::fmt_double(p.decision_metric) << ',' << to_string(p.decision) << '\n';
        }
    }
    return os.str();
}

// ---- JSON ----

inline nlohmann::ordered_json to_json(const RunTrace& trace) {
    using nlohmann::ordered_json;
    ordered_json steps = ordered_json::array();
    for (const StepRecord& s : trace.steps) {
        ordered_json chunks = ordered_json::array();
        for (const ChunkStep& c : s.chunks) {
            ordered_json jc = {
                {"chunk", c.chunk},     {"local_step", c.local_step}, {"decision", to_string(c.decision)},
                {"metric", c.metric},   {"f", c.f},                   {"true_metric", c.true_metric},
            };
            jc["estimate"] = c.estimate ? ordered_json(*c.estimate) : ordered_json(nullptr);
            chunks.push_back(std::move(jc));
        }
        ordered_json comps = ordered_json::array();
        for (const CompressionEvent& e : s.compressions) {
            comps.push_back({{"chunk", e.chunk},
                             {"phase", e.phase},
                             {"available", e.available},
                             {"retained", e.retained},
                             {"evicted", e.evicted},
                             {"retained_importance", e.retained_importance}});
        }
        steps.push_back({{"global_step", s.global_step},
                         {"flops", s.flops},
                         {"resident_kv_tokens", s.resident_kv_tokens},
                         {"peak_resident_bytes", s.peak_resident_bytes},
                         {"chunks", std::move(chunks)},
                         {"compressions", std::move(comps)}});
    }
    ordered_json finals = ordered_json::array();
    for (const FinalChunk& f : trace.finals)
        finals.push_back(
            {{"chunk", f.chunk}, {"l1", f.l1}, {"error_vs_x0", f.error_vs_x0}, {"digest", hex64(f.digest)}});
    return {
        {"schema_version", trace_schema_version},
        {"config", trace.config},
        {"steps_per_chunk", trace.steps_per_chunk},
        {"totals",
         {{"computed", trace.totals.computed},
          {"reused", trace.totals.reused},
          {"total_flops", trace.totals.total_flops},
          {"peak_resident_bytes", trace.totals.peak_resident_bytes},
          {"peak_resident_tokens", trace.totals.peak_resident_tokens}}},
        {"finals", std::move(finals)},
        {"steps", std::move(steps)},
        {"hash", hex64(trace.hash)},
    };
}

inline RunTrace trace_from_json(const nlohmann::ordered_json& j) {
    if (j.value("schema_version", 0) != trace_schema_version)
        throw InvalidInput("trace: unsupported schema_version");
    RunTrace t;
    t.config = j.at("config");
    t.steps_per_chunk = j.at("steps_per_chunk").get<int>();
    const auto& tot = j.at("totals");
    t.totals.computed = tot.at("computed").get<long>();
    t.totals.reused = tot.at("reused").get<long>();
    t.totals.total_flops = tot.at("total_flops").get<double>();
    t.totals.peak_resident_bytes = tot.at("peak_resident_bytes").get<double>();
    t.totals.peak_resident_tokens = tot.at("peak_resident_tokens").get<std::size_t>();
    for (const auto& jf : j.at("finals"))
        t.finals.push_back({jf.at("chunk").get<int>(), jf.at("l1").get<double>(), jf.at("error_vs_x0").get<double>(),
                            parse_hex64(jf.at("digest").get<std::string>())});
    for (const auto& js : j.at("steps")) {
        StepRecord s;
        s.global_step = js.at("global_step").get<int>();
        s.flops = js.at("flops").get<double>();
        s.resident_kv_tokens = js.at("resident_kv_tokens").get<std::vector<std::size_t>>();
        s.peak_resident_bytes = js.at("peak_resident_bytes").get<double>();
        for (const auto& jc : js.at("chunks")) {
            ChunkStep c;
            c.chunk = jc.at("chunk").get<int>();
            c.local_step = jc.at("local_step").get<int>();
            c.decision = detail::parse_action(jc.at("decision").get<std::string>());
            c.metric = jc.at("metric").get<double>();
            c.f = jc.at("f").get<double>();
            c.true_metric = jc.at("true_metric").get<double>();
            if (!jc.at("estimate").is_null())
                c.estimate = jc.at("estimate").get<double>();
            s.chunks.push_back(c);
        }
        for (const auto& je : js.at("compressions"))
            s.compressions.push_back({je.at("chunk").get<int>(), je.at("phase").get<std::string>(),
                                      je.at("available").get<std::size_t>(), je.at("retained").get<std::size_t>(),
                                      je.at("evicted").get<std::size_t>(),
                                      je.at("retained_importance").get<double>()});
        t.steps.push_back(std::move(s));
    }
    t.hash = parse_hex64(j.at("hash").get<std::string>());
    return t;
}

// ---- CSV ----
//
// One row per record, discriminated by `kind`:
//   meta   : config (JSON text in the `text` column), steps_per_chunk, hash
//   total  : computed, reused, flops, peak bytes, peak tokens
//   final  : chunk, l1, error_vs_x0, digest
//   step   : global_step, flops, resident tokens ("a;b;..."), peak bytes
//   chunk  : global_step, chunk, local_step, decision, metric, f, true_metric, estimate
//   comp   : global_step, chunk, phase, available, retained, evicted, retained_importance
// Text fields are quoted with doubled inner quotes.

namespace detail {

inline std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"')
            out += "\"\"";
        else
            out.push_back(ch);
    }
    return out + "\"";
}

inline std::vector<std::string> csv_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
        throw InvalidInput("bad number '" + s + "'");
    return v;
}

}  // namespace detail

inline constexpr const char* trace_csv_header =
    "schema_version,kind,global_step,chunk,local_step,decision,a,b,c,d,e,text";

inline std::string to_csv(const RunTrace& trace) {
    using detail::fmt_double;
    std::ostringstream os;
    os << trace_csv_header << '\n';
    const std::string v = std::to_string(trace_schema_version);
    os << v << ",meta,,,,," << trace.steps_per_chunk << ',' << hex64(trace.hash) << ",,,,"
       << detail::csv_quote(trace.config.dump()) << '\n';
    os << v << ",total,,,,," << trace.totals.computed << ',' << trace.totals.reused << ','
       << fmt_double(trace.totals.total_flops) << ',' << fmt_double(trace.totals.peak_resident_bytes) << ','
       << trace.totals.peak_resident_tokens << ",\n";
    for (const FinalChunk& f : trace.finals)
        os << v << ",final,," << f.chunk << ",,," << fmt_double(f.l1) << ',' << fmt_double(f.error_vs_x0) << ','
           << hex64(f.digest) << ",,,\n";
    for (const StepRecord& s : trace.steps) {
        std::string resident;
        for (std::size_t i = 0; i < s.resident_kv_tokens.size(); ++i) {
            if (i != 0)
                resident += ';';
            resident += std::to_string(s.resident_kv_tokens[i]);
        }
        os << v << ",step," << s.global_step << ",,,," << fmt_double(s.flops) << ','
           << fmt_double(s.peak_resident_bytes) << ",,,," << resident << '\n';
        for (const ChunkStep& c : s.chunks)
            os << v << ",chunk," << s.global_step << ',' << c.chunk << ',' << c.local_step << ','
               << to_string(c.decision) << ',' << fmt_double(c.metric) << ',' << fmt_double(c.f) << ','
               << fmt_double(c.true_metric) << ',' << (c.estimate ? fmt_double(*c.estimate) : std::string())
               << ",,\n";
        for (const CompressionEvent& e : s.compressions)
            os << v << ",comp," << s.global_step << ',' << e.chunk << ",,," << e.available << ',' << e.retained
               << ',' << e.evicted << ',' << fmt_double(e.retained_importance) << ",," << e.phase << '\n';
    }
    return os.str();
}

inline RunTrace trace_from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != trace_csv_header)
        throw InvalidInput("trace csv: missing or unexpected header");
    RunTrace t;
    bool have_meta = false;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        const auto f = detail::csv_fields(line);
        if (f.size() != 12)
            throw InvalidInput("trace csv: expected 12 fields, got " + std::to_string(f.size()));
        if (std::stoi(f[0]) != trace_schema_version)
            throw InvalidInput("trace csv: unsupported schema_version");
        const std::string& kind = f[1];
        if (kind == "meta") {
            t.steps_per_chunk = std::stoi(f[6]);
            t.hash = parse_hex64(f[7]);
            t.config = nlohmann::ordered_json::parse(f[11]);
            have_meta = true;
        } else if (kind == "total") {
            t.totals.computed = std::stol(f[6]);
            t.totals.reused = std::stol(f[7]);
            t.totals.total_flops = detail::parse_double(f[8]);
            t.totals.peak_resident_bytes = detail::parse_double(f[9]);
            t.totals.peak_resident_tokens = std::stoull(f[10]);
        } else if (kind == "final") {
            t.finals.push_back(
                {std::stoi(f[3]), detail::parse_double(f[6]), detail::parse_double(f[7]), parse_hex64(f[8])});
        } else if (kind == "step") {
            StepRecord s;
            s.global_step = std::stoi(f[2]);
            s.flops = detail::parse_double(f[6]);
            s.peak_resident_bytes = detail::parse_double(f[7]);
            if (!f[11].empty())
                for (const auto& r : detail::split(f[11], ';'))
                    s.resident_kv_tokens.push_back(std::stoull(r));
            t.steps.push_back(std::move(s));
        } else if (kind == "chunk" || kind == "comp") {
            if (t.steps.empty() || t.steps.back().global_step != std::stoi(f[2]))
                throw InvalidInput("trace csv: " + kind + " row before its step row");
            StepRecord& s = t.steps.back();
            if (kind == "chunk") {
                ChunkStep c;
                c.chunk = std::stoi(f[3]);
                c.local_step = std::stoi(f[4]);
                c.decision = detail::parse_action(f[5]);
                c.metric = detail::parse_double(f[6]);
                c.f = detail::parse_double(f[7]);
                c.true_metric = detail::parse_double(f[8]);
                if (!f[9].empty())
                    c.estimate = detail::parse_double(f[9]);
                s.chunks.push_back(c);
            } else {
                s.compressions.push_back({std::stoi(f[3]), f[11], std::stoull(f[6]), std::stoull(f[7]),
                                          std::stoull(f[8]), detail::parse_double(f[9])});
            }
        } else {
            throw InvalidInput("trace csv: unknown row kind '" + kind + "'");
        }
    }
    if (!have_meta)
        throw InvalidInput("trace csv: missing meta row");
    return t;
}

enum class ExportFormat { json, csv };

inline std::string export_trace(const RunTrace& trace, ExportFormat format) {
    if (format == ExportFormat::json)
        return to_json(trace).dump(1) + "\n";
    return to_csv(trace);
}

inline RunTrace import_trace(const std::string& text, ExportFormat format) {
    if (format == ExportFormat::json)
        return trace_from_json(nlohmann::ordered_json::parse(text));
    return trace_from_csv(text);
}

}  // namespace flowcache
