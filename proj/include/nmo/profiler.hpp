#pragma once

// Profiling session: environment configuration, perf attribute encoding, address
// and phase annotations, RSS ingestion, and normalisation of raw traces.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nmo/error.hpp"
#include "nmo/spe_codec.hpp"
#include "nmo/text.hpp"
#include "nmo/trace_file.hpp"
#include "nmo/transport.hpp"

namespace nmo::profiler {

// ---------------------------------------------------------------- configuration

enum class Mode { None, Load, Store, LoadStore };

inline std::string_view to_string(Mode m) {
    switch (m) {
    case Mode::None: return "none";
    case Mode::Load: return "load";
    case Mode::Store: return "store";
    case Mode::LoadStore: return "loadstore";
    }
    return "?";
}

inline constexpr std::string_view kEnvEnable = "NMO_ENABLE";
inline constexpr std::string_view kEnvName = "NMO_NAME";
inline constexpr std::string_view kEnvMode = "NMO_MODE";
inline constexpr std::string_view kEnvPeriod = "NMO_PERIOD";
inline constexpr std::string_view kEnvTrackRss = "NMO_TRACK_RSS";
inline constexpr std::string_view kEnvBufsize = "NMO_BUFSIZE";
inline constexpr std::string_view kEnvAuxBufsize = "NMO_AUXBUFSIZE";

inline constexpr std::array<std::string_view, 7> kEnvVars{kEnvEnable,   kEnvName,    kEnvMode,      kEnvPeriod,
                                                          kEnvTrackRss, kEnvBufsize, kEnvAuxBufsize};

inline Mode parse_mode(std::string_view s, std::string_view field = kEnvMode) {
    const auto v = text::to_lower(text::trim(s));
    if (v == "none") return Mode::None;
    if (v == "load") return Mode::Load;
    if (v == "store") return Mode::Store;
    if (v == "loadstore") return Mode::LoadStore;
    throw ConfigError(std::string(field), "unknown mode '" + std::string(s) + "' (load, store, loadstore, none)");
}

inline bool parse_switch(std::string_view s, std::string_view field) {
    const auto v = text::to_lower(text::trim(s));
    if (v == "1" || v == "on" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "off" || v == "false" || v == "no" || v.empty()) return false;
    throw ConfigError(std::string(field), "expected on/off, got '" + std::string(s) + "'");
}

inline std::uint64_t parse_count(std::string_view s, std::string_view field, bool positive) {
    const auto v = text::parse_u64(text::trim(s));
    if (!v) throw ConfigError(std::string(field), "expected a decimal integer, got '" + std::string(s) + "'");
    if (positive && *v == 0) throw ConfigError(std::string(field), "must be at least 1");
    return *v;
}

struct ProfileConfig {
    bool enable = false;
    std::string name = "nmo";
    Mode mode = Mode::None;
    std::uint64_t period = 0;  // 0: sampling stays off
    bool track_rss = false;
    std::uint64_t ring_bufsize_mib = 1;
    std::uint64_t aux_bufsize_mib = 1;

    bool sampling_active() const { return enable && mode != Mode::None && period > 0; }

    transport::BufferConfig buffer_config(std::uint64_t page_size = transport::kDefaultPageSize) const {
        constexpr std::uint64_t mib = 1ull << 20;
        transport::BufferConfig b;
        b.page_size_bytes = page_size;
        b.ring_pages = std::max<std::uint64_t>(1, ring_bufsize_mib * mib / page_size);
        b.aux_pages = std::max<std::uint64_t>(1, aux_bufsize_mib * mib / page_size);
        return b;
    }

    friend bool operator==(const ProfileConfig&, const ProfileConfig&) = default;
};

using Env = std::map<std::string, std::string, std::less<>>;

// Applies the variables present in `env` on top of `base`; absent ones keep the
// base value. Errors name the variable.
inline ProfileConfig apply_env(ProfileConfig base, const Env& env) {
    auto get = [&](std::string_view key) -> const std::string* {
        auto it = env.find(key);
        return it == env.end() ? nullptr : &it->second;
    };
    if (auto v = get(kEnvEnable)) base.enable = parse_switch(*v, kEnvEnable);
    if (auto v = get(kEnvName)) {
        if (text::trim(*v).empty()) throw ConfigError(std::string(kEnvName), "must not be empty");
        base.name = *v;
    }
    if (auto v = get(kEnvMode)) base.mode = parse_mode(*v, kEnvMode);
    if (auto v = get(kEnvPeriod)) base.period = parse_count(*v, kEnvPeriod, false);
    if (auto v = get(kEnvTrackRss)) base.track_rss = parse_switch(*v, kEnvTrackRss);
    if (auto v = get(kEnvBufsize)) base.ring_bufsize_mib = parse_count(*v, kEnvBufsize, true);
    if (auto v = get(kEnvAuxBufsize)) base.aux_bufsize_mib = parse_count(*v, kEnvAuxBufsize, true);
    return base;
}

inline ProfileConfig parse_config(const Env& env) { return apply_env(ProfileConfig{}, env); }

// The seven NMO_* variables of the current process that are set.
inline Env process_env() {
    Env env;
    for (auto key : kEnvVars)
        if (const char* v = std::getenv(std::string(key).c_str())) env.emplace(std::string(key), v);
    return env;
}

// ---------------------------------------------------------------- perf attribute

inline constexpr std::uint32_t kSpePmuType = 0x2c;
inline constexpr std::uint64_t kSpeConfigLoad = 0x200000001;
inline constexpr std::uint64_t kSpeConfigStore = 0x400000001;
inline constexpr std::uint64_t kSpeConfigLoadStore = 0x600000001;

struct AttrSpec {
    std::uint32_t pmu_type = kSpePmuType;
    std::uint64_t config_bits = 0;
    std::uint64_t sample_period = 0;

    friend bool operator==(const AttrSpec&, const AttrSpec&) = default;
};

inline AttrSpec encode_perf_attr(const ProfileConfig& cfg) {
    AttrSpec a;
    a.sample_period = cfg.period;
    switch (cfg.mode) {
    case Mode::Load: a.config_bits = kSpeConfigLoad; break;
    case Mode::Store: a.config_bits = kSpeConfigStore; break;
    case Mode::LoadStore: a.config_bits = kSpeConfigLoadStore; break;
    case Mode::None: throw ConfigError(std::string(kEnvMode), "sampling disabled");
    }
    return a;
}

// ---------------------------------------------------------------- annotations

struct RegionTag {
    std::string name;
    std::uint64_t start = 0;
    std::uint64_t end = 0;  // exclusive

    bool contains(std::uint64_t a) const { return a >= start && a < end; }
    friend bool operator==(const RegionTag&, const RegionTag&) = default;
};

// Non-overlapping half-open address ranges, looked up by binary search.
class TagRegistry {
public:
    void add(std::string name, std::uint64_t start, std::uint64_t end) {
        if (name.empty()) throw ConfigError("tag", "name must not be empty");
        if (start >= end)
            throw ConfigError("tag", "'" + name + "' has an empty or inverted range " + text::format_hex(start) +
                                         ".." + text::format_hex(end));
        for (const auto& t : _tags) {
            if (t.name == name) throw ConfigError("tag", "duplicate tag name '" + name + "'");
            if (start < t.end && t.start < end)
                throw ConfigError("tag", "'" + name + "' overlaps '" + t.name + "'");
        }
        RegionTag tag{std::move(name), start, end};
        auto pos = std::upper_bound(_tags.begin(), _tags.end(), tag.start,
                                    [](std::uint64_t a, const RegionTag& t) { return a < t.start; });
        _tags.insert(pos, std::move(tag));
    }

    // Sorted by start address.
    const std::vector<RegionTag>& tags() const { return _tags; }

    std::optional<std::size_t> find(std::uint64_t address) const {
        auto it = std::upper_bound(_tags.begin(), _tags.end(), address,
                                   [](std::uint64_t a, const RegionTag& t) { return a < t.start; });
        if (it == _tags.begin()) return std::nullopt;
        --it;
        if (!it->contains(address)) return std::nullopt;
        return static_cast<std::size_t>(it - _tags.begin());
    }

private:
    std::vector<RegionTag> _tags;
};

struct PhaseTag {
    std::string name;
    std::uint64_t t_start = 0;
    std::optional<std::uint64_t> t_end;  // unset while open

    bool contains(std::uint64_t t) const { return t >= t_start && (!t_end || t < *t_end); }
    friend bool operator==(const PhaseTag&, const PhaseTag&) = default;
};

// Sequential, non-overlapping phases; at most one open, and only as the last.
class PhaseLog {
public:
    void start(std::string name, std::uint64_t t) {
        if (name.empty()) throw UsageError("phase name must not be empty");
        if (open()) throw UsageError("phase '" + name + "' started while '" + _phases.back().name + "' is open");
        if (!_phases.empty() && t < *_phases.back().t_end)
            throw UsageError("phase '" + name + "' starts before the previous phase ended");
        _phases.push_back({std::move(name), t, std::nullopt});
    }

    void stop(std::uint64_t t) {
        if (!open()) throw UsageError("phase stop without an open phase");
        if (t < _phases.back().t_start) throw UsageError("phase '" + _phases.back().name + "' stops before it starts");
        _phases.back().t_end = t;
    }

    void add(PhaseTag p) {
        start(p.name, p.t_start);
        if (p.t_end) stop(*p.t_end);
    }

    bool open() const { return !_phases.empty() && !_phases.back().t_end; }
    const std::vector<PhaseTag>& phases() const { return _phases; }

    std::optional<std::size_t> find(std::uint64_t t) const {
        auto it = std::upper_bound(_phases.begin(), _phases.end(), t,
                                   [](std::uint64_t v, const PhaseTag& p) { return v < p.t_start; });
        if (it == _phases.begin()) return std::nullopt;
        --it;
        if (!it->contains(t)) return std::nullopt;
        return static_cast<std::size_t>(it - _phases.begin());
    }

private:
    std::vector<PhaseTag> _phases;
};

// ---------------------------------------------------------------- RSS series

struct RssPoint {
    std::uint64_t t_ns = 0;
    std::uint64_t bytes = 0;
    friend bool operator==(const RssPoint&, const RssPoint&) = default;
};

inline void check_rss_order(const std::vector<RssPoint>& series) {
    for (std::size_t i = 1; i < series.size(); ++i)
        if (series[i].t_ns < series[i - 1].t_ns)
            throw FormatError("rss series: timestamp " + std::to_string(series[i].t_ns) + " at point " +
                              std::to_string(i) + " is earlier than its predecessor");
}

// Lines of "t_ns bytes"; blank lines and lines starting with '#' are ignored.
inline std::vector<RssPoint> parse_rss_text(std::string_view content) {
    std::vector<RssPoint> out;
    std::size_t line_no = 0;
    for (auto line : text::split(content, '\n')) {
        ++line_no;
        line = text::trim(line);
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string_view> fields;
        for (auto f : text::split(line, ' '))
            if (!f.empty()) fields.push_back(text::trim(f));
        std::optional<std::uint64_t> t, b;
        if (fields.size() == 2) {
            t = text::parse_u64(fields[0]);
            b = text::parse_u64(fields[1]);
        }
        if (!t || !b) throw FormatError("rss line " + std::to_string(line_no) + ": expected 't_ns bytes'");
        out.push_back({*t, *b});
    }
    check_rss_order(out);
    return out;
}

inline std::string format_rss_text(const std::vector<RssPoint>& series) {
    std::string out;
    for (const auto& p : series) out += std::to_string(p.t_ns) + " " + std::to_string(p.bytes) + "\n";
    return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::ios_base::failure("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::ios_base::failure("cannot create " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::ios_base::failure("write failed: " + path.string());
}

inline std::vector<RssPoint> read_rss_file(const std::filesystem::path& path) {
    return parse_rss_text(read_text_file(path));
}

// ---------------------------------------------------------------- normalised trace

struct Sample {
    std::uint64_t t_ns = 0;
    std::uint64_t virtual_address = 0;
    codec::OpKind op_kind = codec::OpKind::Load;
    codec::MemoryLevel memory_level = codec::MemoryLevel::L1;
    std::uint32_t latency_cycles = 0;
    std::uint16_t core_id = 0;
    std::uint64_t raw_timestamp = 0;
    std::optional<std::uint32_t> region;  // index into NormalizedTrace::tags
    std::optional<std::uint32_t> phase;   // index into NormalizedTrace::phases

    friend bool operator==(const Sample&, const Sample&) = default;
};

struct NormalizedTrace {
    std::vector<Sample> samples;  // sorted by (t_ns, core_id, raw_timestamp)
    std::vector<RssPoint> rss_series;
    std::vector<RegionTag> tags;
    std::vector<PhaseTag> phases;
    // Decode statistics and aux flag totals, e.g. "skip.zero_address", "flag.collision".
    std::map<std::string, std::uint64_t> counters;

    const std::string* region_name(const Sample& s) const { return s.region ? &tags[*s.region].name : nullptr; }
    const std::string* phase_name(const Sample& s) const { return s.phase ? &phases[*s.phase].name : nullptr; }
};

inline NormalizedTrace build_trace(const transport::TraceFile& raw, const TagRegistry& tags, const PhaseLog& phases,
                                   const transport::TimescaleParams& params) {
    params.validate();
    NormalizedTrace out;
    out.tags = tags.tags();
    out.phases = phases.phases();

    codec::StreamDecode decoded;
    std::uint64_t records = 0, truncated = 0, collision = 0, payload_bytes = 0;
    for (const auto& core : raw.cores) {
        for (const auto& rec : core.records) {
            ++records;
            truncated += rec.flags.has(transport::AuxFlag::Truncated);
            collision += rec.flags.has(transport::AuxFlag::Collision);
        }
        for (const auto& p : core.payloads) {
            payload_bytes += p.size();
            codec::decode_stream_into(p, decoded);
        }
    }

    out.samples.reserve(decoded.records.size());
    for (const auto& r : decoded.records) {
        Sample s;
        s.t_ns = transport::convert_timestamp(r.timestamp, params);
        s.virtual_address = r.virtual_address;
        s.op_kind = r.op_kind;
        s.memory_level = r.memory_level;
        s.latency_cycles = r.latency_cycles;
        s.core_id = r.core_id;
        s.raw_timestamp = r.timestamp;
        if (auto i = tags.find(r.virtual_address)) s.region = static_cast<std::uint32_t>(*i);
        if (auto i = phases.find(s.t_ns)) s.phase = static_cast<std::uint32_t>(*i);
        out.samples.push_back(s);
    }
    std::stable_sort(out.samples.begin(), out.samples.end(), [](const Sample& a, const Sample& b) {
        return std::tie(a.t_ns, a.core_id, a.raw_timestamp) < std::tie(b.t_ns, b.core_id, b.raw_timestamp);
    });

    out.counters["samples"] = out.samples.size();
    out.counters["packets"] = payload_bytes / codec::kPacketSize;
    out.counters["aux_records"] = records;
    out.counters["flag.truncated"] = truncated;
    out.counters["flag.collision"] = collision;
    for (std::size_t i = 0; i < codec::kSkipReasonCount; ++i) {
        const auto reason = static_cast<codec::SkipReason>(i);
        out.counters["skip." + std::string(codec::to_string(reason))] = decoded.stats[reason];
    }
    return out;
}

// ---------------------------------------------------------------- session

// Nanosecond clock; injectable so phase timing is reproducible.
using Clock = std::function<std::uint64_t()>;

inline Clock steady_clock_ns() {
    return [] {
        return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                              std::chrono::steady_clock::now().time_since_epoch())
                                              .count());
    };
}

class Session {
public:
    explicit Session(ProfileConfig config, Clock clock = steady_clock_ns())
        : _config(std::move(config)), _clock(std::move(clock)) {}

    const ProfileConfig& config() const { return _config; }

    void tag_addr(std::string name, std::uint64_t start, std::uint64_t end) { _tags.add(std::move(name), start, end); }
    void phase_start(std::string name) { _phases.start(std::move(name), _clock()); }
    void phase_stop() { _phases.stop(_clock()); }

    void ingest_rss(std::vector<RssPoint> series) {
        check_rss_order(series);
        if (!_rss.empty() && !series.empty() && series.front().t_ns < _rss.back().t_ns)
            throw FormatError("rss series: new points start before the stored ones end");
        _rss.insert(_rss.end(), series.begin(), series.end());
    }

    const TagRegistry& tags() const { return _tags; }
    const PhaseLog& phases() const { return _phases; }
    const std::vector<RssPoint>& rss() const { return _rss; }

    NormalizedTrace build_trace(const transport::TraceFile& raw, const transport::TimescaleParams& params) const {
        auto t = profiler::build_trace(raw, _tags, _phases, params);
        t.rss_series = _rss;
        return t;
    }

private:
    ProfileConfig _config;
    Clock _clock;
    TagRegistry _tags;
    PhaseLog _phases;
    std::vector<RssPoint> _rss;
};

// ---------------------------------------------------------------- JSON forms

using nlohmann::json;

inline json tags_to_json(const std::vector<RegionTag>& tags) {
    json arr = json::array();
    for (const auto& t : tags)
        arr.push_back({{"name", t.name}, {"start", text::format_hex(t.start)}, {"end", text::format_hex(t.end)}});
    return arr;
}

namespace detail {

inline std::uint64_t json_address(const json& v, const std::string& what) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_string())
        if (auto a = text::parse_address(v.get<std::string>())) return *a;
    throw ConfigError(what, "expected an address (0x-hex string or unsigned integer)");
}

inline std::uint64_t json_u64(const json& v, const std::string& what) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    throw ConfigError(what, "expected an unsigned integer");
}

} // namespace detail

// [{"name": "a", "start": "0x1000", "end": "0x2000"}, ...]
inline TagRegistry tags_from_json(const json& arr) {
    if (!arr.is_array()) throw ConfigError("tags", "expected a JSON array");
    TagRegistry reg;
    for (const auto& t : arr) {
        if (!t.is_object() || !t.contains("name") || !t["name"].is_string() || !t.contains("start") ||
            !t.contains("end"))
            throw ConfigError("tags", "each tag needs name, start and end");
        reg.add(t["name"].get<std::string>(), detail::json_address(t["start"], "tags.start"),
                detail::json_address(t["end"], "tags.end"));
    }
    return reg;
}

inline json phases_to_json(const std::vector<PhaseTag>& phases) {
    json arr = json::array();
    for (const auto& p : phases) {
        json o{{"name", p.name}, {"t_start_ns", p.t_start}};
        o["t_end_ns"] = p.t_end ? json(*p.t_end) : json(nullptr);
        arr.push_back(std::move(o));
    }
    return arr;
}

// [{"name": "triad", "t_start_ns": 0, "t_end_ns": 100}, ...]; a null end leaves it open.
inline PhaseLog phases_from_json(const json& arr) {
    if (!arr.is_array()) throw ConfigError("phases", "expected a JSON array");
    PhaseLog log;
    for (const auto& p : arr) {
        if (!p.is_object() || !p.contains("name") || !p["name"].is_string() || !p.contains("t_start_ns"))
            throw ConfigError("phases", "each phase needs name and t_start_ns");
        PhaseTag tag{p["name"].get<std::string>(), detail::json_u64(p["t_start_ns"], "phases.t_start_ns"),
                     std::nullopt};
        if (p.contains("t_end_ns") && !p["t_end_ns"].is_null())
            tag.t_end = detail::json_u64(p["t_end_ns"], "phases.t_end_ns");
        try {
            log.add(std::move(tag));
        } catch (const UsageError& e) {
            throw ConfigError("phases", e.what());
        }
    }
    return log;
}

inline json sample_to_json(const NormalizedTrace& trace, const Sample& s) {
    json o;
    o["t_ns"] = s.t_ns;
    o["address"] = text::format_hex(s.virtual_address);
    o["op"] = codec::to_string(s.op_kind);
    o["level"] = codec::to_string(s.memory_level);
    o["latency"] = s.latency_cycles;
    o["core"] = s.core_id;
    if (auto r = trace.region_name(s)) o["region"] = *r;
    if (auto p = trace.phase_name(s)) o["phase"] = *p;
    return o;
}

// Header object first, then one sample object per line.
inline void write_json_lines(std::ostream& out, const NormalizedTrace& trace) {
    json header;
    header["type"] = "header";
    header["samples"] = trace.samples.size();
    header["counters"] = trace.counters;
    header["tags"] = tags_to_json(trace.tags);
    header["phases"] = phases_to_json(trace.phases);
    out << header.dump() << '\n';
    for (const auto& s : trace.samples) out << sample_to_json(trace, s).dump() << '\n';
}

} // namespace nmo::profiler
