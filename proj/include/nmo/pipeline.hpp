#pragma once

// Glue between the simulator and the file-based tools: workload spec files, run
// manifests, and the counter / RSS series a simulated run exposes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "nmo/analysis.hpp"
#include "nmo/error.hpp"
#include "nmo/profiler.hpp"
#include "nmo/sampler.hpp"
#include "nmo/text.hpp"
#include "nmo/transport.hpp"
#include "nmo/workload.hpp"

namespace nmo::pipeline {

using nlohmann::json;

// ---------------------------------------------------------------- spec file

// Everything a spec file can set besides the profile configuration.
struct SimSpec {
    sim::WorkloadSpec workload;
    sim::MemoryModel model;
    sim::SamplerConfig sampler;  // period, filter and buffers are filled from the profile config
    std::string phase;
};

inline std::string default_phase_name(sim::WorkloadKind k) {
    switch (k) {
    case sim::WorkloadKind::StreamTriad: return "triad";
    case sim::WorkloadKind::RandomGraph: return "graph";
    case sim::WorkloadKind::Mixed: return "mixed";
    }
    return "run";
}

namespace detail {

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key)) throw ConfigError(where, "unknown key '" + key + "'");
}

inline std::uint64_t u64_field(const json& obj, const char* key, const std::string& where) {
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where + "." + key, "expected an unsigned integer");
    return v.get<std::uint64_t>();
}

inline double number_field(const json& obj, const char* key, const std::string& where) {
    const auto& v = obj.at(key);
    if (!v.is_number()) throw ConfigError(where + "." + key, "expected a number");
    return v.get<double>();
}

} // namespace detail

// {"kind": "stream_triad", "total_ops": N, "threads": T,
//  "regions": [{"name": "a", "base": "0x10000000", "length": 1048576}, ...],
//  "load_fraction": 0.5, "stride_bytes": 8, "seed": 1, "phase": "triad",
//  "memory_model": {"probabilities": [4 reals], "latencies": [4 integers]},
//  "sampler": {"jitter_max": J, "interrupt_cost_ops": .., "per_sample_cost_ops": ..,
//              "drain_latency_ops": .., "collection_pause_ops": .., "disable_on_truncation": bool}}
inline SimSpec parse_sim_spec(const json& j) {
    using detail::number_field;
    using detail::u64_field;
    if (!j.is_object()) throw ConfigError("spec", "expected a JSON object");
    detail::reject_unknown_keys(j,
                                {"kind", "total_ops", "threads", "regions", "load_fraction", "stride_bytes", "seed",
                                 "phase", "memory_model", "sampler"},
                                "spec");
    SimSpec s;
    auto& w = s.workload;
    if (j.contains("kind")) {
        if (!j["kind"].is_string()) throw ConfigError("spec.kind", "expected a string");
        w.kind = sim::parse_workload_kind(j["kind"].get<std::string>());
    }
    if (!j.contains("total_ops")) throw ConfigError("spec.total_ops", "required");
    w.total_ops = u64_field(j, "total_ops", "spec");
    if (j.contains("threads")) {
        const auto t = u64_field(j, "threads", "spec");
        if (t > 65535) throw ConfigError("spec.threads", "at most 65535");
        w.threads = static_cast<std::uint32_t>(t);
    }
    if (j.contains("load_fraction")) w.load_fraction = number_field(j, "load_fraction", "spec");
    if (j.contains("stride_bytes")) w.stride_bytes = u64_field(j, "stride_bytes", "spec");
    if (j.contains("seed")) w.seed = u64_field(j, "seed", "spec");
    if (!j.contains("regions") || !j["regions"].is_array()) throw ConfigError("spec.regions", "expected an array");
    for (const auto& r : j["regions"]) {
        if (!r.is_object()) throw ConfigError("spec.regions", "expected objects");
        detail::reject_unknown_keys(r, {"name", "base", "length"}, "spec.regions");
        if (!r.contains("name") || !r["name"].is_string() || !r.contains("base") || !r.contains("length"))
            throw ConfigError("spec.regions", "each region needs name, base and length");
        sim::Region region;
        region.name = r["name"].get<std::string>();
        region.base_address = profiler::detail::json_address(r["base"], "spec.regions.base");
        region.length_bytes = profiler::detail::json_address(r["length"], "spec.regions.length");
        w.region_layout.push_back(std::move(region));
    }
    w.validate();

    s.phase = default_phase_name(w.kind);
    if (j.contains("phase")) {
        if (!j["phase"].is_string() || j["phase"].get<std::string>().empty())
            throw ConfigError("spec.phase", "expected a non-empty string");
        s.phase = j["phase"].get<std::string>();
    }

    if (j.contains("memory_model")) {
        const auto& m = j["memory_model"];
        detail::reject_unknown_keys(m, {"probabilities", "latencies"}, "spec.memory_model");
        if (!m.contains("probabilities") || !m.contains("latencies") || m["probabilities"].size() != 4 ||
            m["latencies"].size() != 4)
            throw ConfigError("spec.memory_model", "needs 4 probabilities and 4 latencies (L1, L2, SLC, DRAM)");
        for (std::size_t i = 0; i < 4; ++i) {
            if (!m["probabilities"][i].is_number() || !m["latencies"][i].is_number_unsigned())
                throw ConfigError("spec.memory_model", "probabilities are numbers, latencies unsigned integers");
            s.model.level_probabilities[i] = m["probabilities"][i].get<double>();
            const auto lat = m["latencies"][i].get<std::uint64_t>();
            if (lat > 0xffffffffu) throw ConfigError("spec.memory_model", "latency does not fit 32 bits");
            s.model.level_latency_cycles[i] = static_cast<std::uint32_t>(lat);
        }
        s.model.validate();
    }

    if (j.contains("sampler")) {
        const auto& c = j["sampler"];
        detail::reject_unknown_keys(c,
                                    {"jitter_max", "interrupt_cost_ops", "per_sample_cost_ops", "drain_latency_ops",
                                     "collection_pause_ops", "disable_on_truncation"},
                                    "spec.sampler");
        if (c.contains("jitter_max")) s.sampler.jitter_max = u64_field(c, "jitter_max", "spec.sampler");
        if (c.contains("interrupt_cost_ops"))
            s.sampler.interrupt_cost_ops = u64_field(c, "interrupt_cost_ops", "spec.sampler");
        if (c.contains("per_sample_cost_ops"))
            s.sampler.per_sample_cost_ops = u64_field(c, "per_sample_cost_ops", "spec.sampler");
        if (c.contains("drain_latency_ops"))
            s.sampler.drain_latency_ops = u64_field(c, "drain_latency_ops", "spec.sampler");
        if (c.contains("collection_pause_ops"))
            s.sampler.collection_pause_ops = u64_field(c, "collection_pause_ops", "spec.sampler");
        if (c.contains("disable_on_truncation")) {
            if (!c["disable_on_truncation"].is_boolean())
                throw ConfigError("spec.sampler.disable_on_truncation", "expected a boolean");
            s.sampler.disable_on_truncation = c["disable_on_truncation"].get<bool>();
        }
    }
    return s;
}

inline SimSpec read_sim_spec(const std::filesystem::path& path) {
    const auto content = profiler::read_text_file(path);
    json j;
    try {
        j = json::parse(content);
    } catch (const json::parse_error& e) {
        throw ConfigError("spec", path.string() + ": " + e.what());
    }
    return parse_sim_spec(j);
}

// Period, filter and buffers from the profile configuration.
inline sim::SamplerConfig sampler_config(const profiler::ProfileConfig& profile, sim::SamplerConfig base) {
    base.sampling_enabled = profile.sampling_active();
    base.period = profile.period;
    base.buffers = profile.buffer_config();
    switch (profile.mode) {
    case profiler::Mode::Load: base.filter = sim::FilterSpec::only(codec::OpKind::Load); break;
    case profiler::Mode::Store: base.filter = sim::FilterSpec::only(codec::OpKind::Store); break;
    default: base.filter = sim::FilterSpec::all(); break;
    }
    return base;
}

// ---------------------------------------------------------------- simulated series

// Ops core c has retired strictly before time t_ns. Op k carries raw timestamp k+1.
inline std::uint64_t ops_before(std::uint64_t core_ops, std::uint64_t t_ns, const transport::TimescaleParams& p) {
    std::uint64_t lo = 0, hi = core_ops;
    while (lo < hi) {
        const std::uint64_t mid = lo + (hi - lo) / 2;
        if (transport::convert_timestamp(mid + 1, p) < t_ns)
            lo = mid + 1;
        else
            hi = mid;
    }
    return lo;
}

inline std::uint64_t run_end_ns(const sim::OpStream& stream, const transport::TimescaleParams& p) {
    std::uint64_t longest = 0;
    for (std::uint32_t c = 0; c < stream.cores(); ++c) longest = std::max(longest, stream.core_ops(c));
    return transport::convert_timestamp(longest, p) + 1;
}

inline constexpr std::uint64_t kRssPageBytes = 4096;

// Resident bytes once every core has retired ops_done[c] operations. Streaming
// kinds touch their slices front to back; random kinds follow the expected number
// of distinct pages hit by uniform draws.
inline std::uint64_t working_set_bytes(const sim::OpStream& stream, const std::vector<std::uint64_t>& ops_done) {
    const auto& spec = stream.spec();
    const std::uint64_t per = spec.region_layout.size();
    std::uint64_t total_bytes = 0;
    for (const auto& r : spec.region_layout)
        total_bytes += (r.length_bytes + kRssPageBytes - 1) / kRssPageBytes * kRssPageBytes;

    const double stream_share = spec.kind == sim::WorkloadKind::StreamTriad ? 1.0
                                : spec.kind == sim::WorkloadKind::Mixed    ? 0.5
                                                                           : 0.0;
    std::uint64_t streamed = 0;
    double draws = 0.0;
    for (std::uint32_t c = 0; c < stream.cores(); ++c) {
        const auto k = ops_done[c];
        draws += static_cast<double>(k) * (1.0 - stream_share);
        if (stream_share == 0.0) continue;
        const auto ks = static_cast<std::uint64_t>(static_cast<double>(k) * stream_share);
        const auto slice = stream.slice(c);
        const std::uint64_t elements = std::min(slice.count, (ks + per - 1) / per);
        if (elements == 0) continue;
        for (const auto& r : spec.region_layout) {
            const std::uint64_t lo = r.base_address + slice.first * spec.stride_bytes;
            const std::uint64_t hi = lo + elements * spec.stride_bytes;
            streamed += ((hi + kRssPageBytes - 1) / kRssPageBytes - lo / kRssPageBytes) * kRssPageBytes;
        }
    }
    const double pages = static_cast<double>(total_bytes / kRssPageBytes);
    const auto random_bytes =
        static_cast<std::uint64_t>(std::llround(pages * -std::expm1(-draws / pages))) * kRssPageBytes;
    return std::min(total_bytes, streamed + random_bytes);
}

struct SimulatedSeries {
    std::vector<analysis::CounterPoint> counts;  // memory ops retired per interval
    std::vector<profiler::RssPoint> rss;         // sampled at interval boundaries
};

inline SimulatedSeries simulated_series(const sim::OpStream& stream, const transport::TimescaleParams& p,
                                        std::uint64_t interval_ns) {
    if (interval_ns == 0) throw ConfigError("interval_ns", "must be positive");
    SimulatedSeries out;
    const std::uint64_t start = p.time_zero;
    const std::uint64_t end = run_end_ns(stream, p);
    std::vector<std::uint64_t> prev(stream.cores(), 0), now(stream.cores(), 0);
    for (std::uint64_t t = start;; t += interval_ns) {
        const std::uint64_t next = t + interval_ns;
        std::uint64_t count = 0;
        for (std::uint32_t c = 0; c < stream.cores(); ++c) {
            now[c] = ops_before(stream.core_ops(c), next, p);
            count += now[c] - prev[c];
        }
        out.rss.push_back({t, working_set_bytes(stream, prev)});
        out.counts.push_back({t, count});
        prev = now;
        if (next >= end) {
            out.rss.push_back({next, working_set_bytes(stream, now)});
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------- manifest

inline json outcome_json(const sim::CoreOutcome& o) {
    return json{{"ground_truth_ops", o.ground_truth_ops},
                {"ground_truth_loads", o.ground_truth_by_kind[0]},
                {"ground_truth_stores", o.ground_truth_by_kind[1]},
                {"selected", o.selected},
                {"collided", o.collided},
                {"filtered_out", o.filtered_out},
                {"delivered", o.delivered},
                {"truncated_dropped", o.truncated_dropped},
                {"interrupts", o.interrupts},
                {"baseline_time_ops", o.baseline_time_ops},
                {"instrumented_time_ops", o.instrumented_time_ops}};
}

inline json timescale_json(const transport::TimescaleParams& p) {
    return json{{"time_zero", p.time_zero}, {"time_shift", p.time_shift}, {"time_mult", p.time_mult}};
}

inline transport::TimescaleParams timescale_from_json(const json& j) {
    transport::TimescaleParams p;
    try {
        p.time_zero = j.at("time_zero").get<std::uint64_t>();
        p.time_shift = j.at("time_shift").get<std::uint32_t>();
        p.time_mult = j.at("time_mult").get<std::uint32_t>();
    } catch (const json::exception& e) {
        throw ConfigError("timescale", e.what());
    }
    p.validate();
    return p;
}

inline json profile_json(const profiler::ProfileConfig& c) {
    return json{{"enable", c.enable},
                {"name", c.name},
                {"mode", profiler::to_string(c.mode)},
                {"period", c.period},
                {"track_rss", c.track_rss},
                {"ring_bufsize_mib", c.ring_bufsize_mib},
                {"aux_bufsize_mib", c.aux_bufsize_mib}};
}

inline json workload_json(const sim::WorkloadSpec& w) {
    json regions = json::array();
    for (const auto& r : w.region_layout)
        regions.push_back({{"name", r.name}, {"base", text::format_hex(r.base_address)}, {"length", r.length_bytes}});
    return json{{"kind", sim::to_string(w.kind)}, {"total_ops", w.total_ops},       {"threads", w.threads},
                {"regions", regions},             {"load_fraction", w.load_fraction}, {"stride_bytes", w.stride_bytes},
                {"seed", w.seed}};
}

inline json sampler_json(const sim::SamplerConfig& s, const sim::MemoryModel& m) {
    return json{{"sampling_enabled", s.sampling_enabled},
                {"period", s.period},
                {"jitter_max", s.jitter()},
                {"page_size_bytes", s.buffers.page_size_bytes},
                {"ring_pages", s.buffers.ring_pages},
                {"aux_pages", s.buffers.aux_pages},
                {"aux_watermark_bytes", s.buffers.watermark()},
                {"interrupt_cost_ops", s.interrupt_cost_ops},
                {"per_sample_cost_ops", s.per_sample_cost_ops},
                {"drain_latency_ops", s.drain_latency_ops},
                {"collection_pause_ops", s.collection_pause_ops},
                {"disable_on_truncation", s.disable_on_truncation},
                {"filter",
                 {{"loads", s.filter.op_kinds[0]}, {"stores", s.filter.op_kinds[1]}, {"min_latency", s.filter.min_latency}}},
                {"memory_model",
                 {{"probabilities", m.level_probabilities}, {"latencies", m.level_latency_cycles}}}};
}

} // namespace nmo::pipeline
