#pragma once

// Metrics over simulated runs and normalised traces, plus the sensitivity sweep
// driver and the CSV / JSON output forms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nmo/error.hpp"
#include "nmo/profiler.hpp"
#include "nmo/sampler.hpp"
#include "nmo/text.hpp"
#include "nmo/workload.hpp"

namespace nmo::analysis {

using nlohmann::json;
using profiler::NormalizedTrace;
using profiler::RssPoint;

// ---------------------------------------------------------------- accuracy, overhead

struct AccuracyInput {
    std::uint64_t mem_counted = 0;
    std::uint64_t samples = 0;
    std::uint64_t period = 1;
};

// 1 - |mem - samples*period| / mem, unclamped (negative once samples*period > 2*mem).
// The numerator is formed exactly in 128-bit integers and divided in extended
// precision, so the result is within one rounding of the exact rational value.
inline double compute_accuracy(const AccuracyInput& in) {
    if (in.mem_counted == 0) throw ConfigError("mem_counted", "must be positive");
    if (in.period == 0) throw ConfigError("period", "must be positive");
    const auto mem = static_cast<unsigned __int128>(in.mem_counted);
    const auto est = static_cast<unsigned __int128>(in.samples) * in.period;
    const auto diff = est > mem ? est - mem : mem - est;
    const long double num = diff <= mem ? static_cast<long double>(mem - diff)
                                        : -static_cast<long double>(diff - mem);
    return static_cast<double>(num / static_cast<long double>(in.mem_counted));
}

inline double compute_overhead(double t_instrumented, double t_baseline) {
    if (!(t_baseline > 0.0)) throw ConfigError("baseline", "baseline time must be positive");
    return (t_instrumented - t_baseline) / t_baseline;
}

// ---------------------------------------------------------------- time series

struct CounterPoint {
    std::uint64_t t_ns = 0;
    std::uint64_t count = 0;
    friend bool operator==(const CounterPoint&, const CounterPoint&) = default;
};

struct BandwidthPoint {
    std::uint64_t t_ns = 0;
    double bytes_per_s = 0.0;
    friend bool operator==(const BandwidthPoint&, const BandwidthPoint&) = default;
};

inline constexpr double kDefaultBytesPerEvent = 64.0;

inline std::vector<BandwidthPoint> bandwidth_series(const std::vector<CounterPoint>& counts, std::uint64_t interval_ns,
                                                    double bytes_per_event = kDefaultBytesPerEvent) {
    if (interval_ns == 0) throw ConfigError("interval_ns", "must be positive");
    if (!(bytes_per_event >= 0.0)) throw ConfigError("bytes_per_event", "must be non-negative");
    const double seconds = static_cast<double>(interval_ns) / 1e9;
    std::vector<BandwidthPoint> out;
    out.reserve(counts.size());
    for (const auto& c : counts) out.push_back({c.t_ns, static_cast<double>(c.count) * bytes_per_event / seconds});
    return out;
}

struct CapacitySummary {
    std::vector<RssPoint> series;
    std::uint64_t peak_bytes = 0;
    std::optional<double> peak_utilization;  // peak / total capacity, when a capacity is given
};

inline double utilization(double peak_bytes, double total_capacity_bytes) {
    if (!(total_capacity_bytes > 0.0)) throw ConfigError("total_capacity", "must be positive");
    return peak_bytes / total_capacity_bytes;
}

inline CapacitySummary capacity_series(const std::vector<RssPoint>& rss,
                                       std::optional<std::uint64_t> total_capacity_bytes = std::nullopt) {
    CapacitySummary s;
    s.series = rss;
    for (const auto& p : rss) s.peak_bytes = std::max(s.peak_bytes, p.bytes);
    if (total_capacity_bytes)
        s.peak_utilization =
            utilization(static_cast<double>(s.peak_bytes), static_cast<double>(*total_capacity_bytes));
    return s;
}

inline CapacitySummary capacity_series(const NormalizedTrace& trace,
                                       std::optional<std::uint64_t> total_capacity_bytes = std::nullopt) {
    return capacity_series(trace.rss_series, total_capacity_bytes);
}

// ---------------------------------------------------------------- region profile

inline constexpr std::string_view kUntagged = "(untagged)";

struct ScatterPoint {
    std::uint64_t t_ns = 0;
    std::uint64_t address = 0;
    friend bool operator==(const ScatterPoint&, const ScatterPoint&) = default;
};

struct RegionStats {
    std::uint64_t access_count = 0;
    std::uint64_t load_count = 0;
    std::uint64_t store_count = 0;
    std::optional<std::uint64_t> first_t;
    std::optional<std::uint64_t> last_t;
    std::vector<ScatterPoint> scatter;

    void add(const profiler::Sample& s) {
        ++access_count;
        ++(s.op_kind == codec::OpKind::Load ? load_count : store_count);
        if (!first_t) first_t = s.t_ns;
        last_t = s.t_ns;
        scatter.push_back({s.t_ns, s.virtual_address});
    }
};

struct RegionProfile {
    std::optional<std::string> phase;
    std::map<std::string, RegionStats> regions;  // every registered tag, plus kUntagged
    std::uint64_t total_samples = 0;             // samples considered (after the phase filter)

    const RegionStats& untagged() const { return regions.at(std::string(kUntagged)); }
};

inline RegionProfile region_profile(const NormalizedTrace& trace, const std::optional<std::string>& phase = {}) {
    RegionProfile p;
    p.phase = phase;
    if (phase) {
        const bool known = std::any_of(trace.phases.begin(), trace.phases.end(),
                                       [&](const profiler::PhaseTag& t) { return t.name == *phase; });
        if (!known) throw ConfigError("phase", "unknown phase '" + *phase + "'");
    }
    for (const auto& t : trace.tags) p.regions[t.name];
    auto& untagged = p.regions[std::string(kUntagged)];
    for (const auto& s : trace.samples) {
        if (phase) {
            const auto* name = trace.phase_name(s);
            if (!name || *name != *phase) continue;
        }
        ++p.total_samples;
        if (const auto* r = trace.region_name(s))
            p.regions[*r].add(s);
        else
            untagged.add(s);
    }
    return p;
}

// ---------------------------------------------------------------- sweeps

enum class Knob { Period, AuxPages, Threads };

inline std::string_view to_string(Knob k) {
    switch (k) {
    case Knob::Period: return "period";
    case Knob::AuxPages: return "aux_pages";
    case Knob::Threads: return "threads";
    }
    return "?";
}

inline Knob parse_knob(std::string_view s) {
    const auto v = text::to_lower(s);
    if (v == "period") return Knob::Period;
    if (v == "aux_pages" || v == "auxpages") return Knob::AuxPages;
    if (v == "threads") return Knob::Threads;
    throw ConfigError("knob", "unknown knob '" + std::string(s) + "' (period, aux_pages, threads)");
}

struct SweepBase {
    sim::WorkloadSpec workload;
    sim::SamplerConfig sampler;
    sim::MemoryModel model;
};

struct SensitivityRow {
    Knob knob = Knob::Period;
    std::uint64_t value = 0;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double overhead = 0.0;
    std::uint64_t collisions = 0;
    std::uint64_t delivered = 0;
    std::uint64_t interrupts = 0;  // not part of the CSV form

    friend bool operator==(const SensitivityRow&, const SensitivityRow&) = default;
};

struct Stat {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation; 0 for a single value
};

inline Stat mean_stddev(const std::vector<double>& xs) {
    Stat s;
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return s;
}

struct ValueSummary {
    Knob knob = Knob::Period;
    std::uint64_t value = 0;
    std::size_t trials = 0;
    Stat accuracy, overhead, collisions, delivered;
};

// Groups rows by (knob, value) in first-appearance order.
inline std::vector<ValueSummary> summarize(const std::vector<SensitivityRow>& rows) {
    std::vector<ValueSummary> out;
    std::vector<std::vector<const SensitivityRow*>> groups;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const ValueSummary& v) { return v.knob == r.knob && v.value == r.value; });
        if (it == out.end()) {
            out.push_back({r.knob, r.value, 0, {}, {}, {}, {}});
            groups.emplace_back();
            it = out.end() - 1;
        }
        groups[static_cast<std::size_t>(it - out.begin())].push_back(&r);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::vector<double> acc, ovh, col, del;
        for (const auto* r : groups[i]) {
            acc.push_back(r->accuracy);
            ovh.push_back(r->overhead);
            col.push_back(static_cast<double>(r->collisions));
            del.push_back(static_cast<double>(r->delivered));
        }
        out[i].trials = groups[i].size();
        out[i].accuracy = mean_stddev(acc);
        out[i].overhead = mean_stddev(ovh);
        out[i].collisions = mean_stddev(col);
        out[i].delivered = mean_stddev(del);
    }
    return out;
}

struct SweepResult {
    std::vector<SensitivityRow> rows;  // value-major, seeds in the given order
    std::vector<ValueSummary> summary;
};

inline SweepBase with_knob(SweepBase base, Knob knob, std::uint64_t value) {
    switch (knob) {
    case Knob::Period: base.sampler.period = value; break;
    case Knob::AuxPages: base.sampler.buffers.aux_pages = value; break;
    case Knob::Threads:
        if (value > 65535) throw ConfigError("threads", "at most 65535 cores");
        base.workload.threads = static_cast<std::uint32_t>(value);
        break;
    }
    return base;
}

inline SensitivityRow run_point(const SweepBase& point, Knob knob, std::uint64_t value, std::uint64_t seed) {
    const auto stream = sim::gen_workload(point.workload);
    const auto run = sim::run_sampling(stream, point.sampler, point.model, seed, false);
    const auto& o = run.outcome;
    SensitivityRow row;
    row.knob = knob;
    row.value = value;
    row.seed = seed;
    row.accuracy = compute_accuracy({o.ground_truth_ops, o.delivered, point.sampler.period});
    row.overhead = compute_overhead(static_cast<double>(o.instrumented_time_ops),
                                    static_cast<double>(o.baseline_time_ops));
    row.collisions = o.collided;
    row.delivered = o.delivered;
    row.interrupts = o.interrupts;
    return row;
}

// One simulation per (value, seed). Points run concurrently; the table does not
// depend on completion order.
inline SweepResult run_sweep(Knob knob, const std::vector<std::uint64_t>& values, const SweepBase& base,
                             const std::vector<std::uint64_t>& seeds) {
    if (values.empty()) throw ConfigError("values", "at least one knob value is required");
    if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");

    std::vector<SweepBase> points;
    for (auto v : values) {
        auto p = with_knob(base, knob, v);
        p.workload.validate();
        try {
            p.sampler.validate();
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(to_string(knob)), "value " + std::to_string(v) + ": " + e.what());
        }
        p.model.validate();
        points.push_back(std::move(p));
    }

    SweepResult res;
    res.rows.resize(values.size() * seeds.size());
    sim::detail::parallel_for(res.rows.size(), [&](std::size_t i) {
        const std::size_t vi = i / seeds.size(), si = i % seeds.size();
        res.rows[i] = run_point(points[vi], knob, values[vi], seeds[si]);
    });
    res.summary = summarize(res.rows);
    return res;
}

struct LinearFit {
    double slope = 0.0;
    double r2 = 0.0;
};

// Least squares of delivered against 1/period through the origin. r2 is measured
// against the mean of delivered.
inline LinearFit linearity_check(const std::vector<SensitivityRow>& rows) {
    std::vector<std::pair<double, double>> xy;
    std::vector<std::uint64_t> periods;
    for (const auto& r : rows) {
        if (r.knob != Knob::Period) continue;
        if (r.value == 0) throw ConfigError("period", "period 0 in sweep table");
        xy.emplace_back(1.0 / static_cast<double>(r.value), static_cast<double>(r.delivered));
        periods.push_back(r.value);
    }
    std::sort(periods.begin(), periods.end());
    periods.erase(std::unique(periods.begin(), periods.end()), periods.end());
    if (periods.size() < 3)
        throw ConfigError("period", "linearity check needs at least 3 distinct periods, got " +
                                        std::to_string(periods.size()));
    double sxy = 0, sxx = 0, sy = 0;
    for (auto [x, y] : xy) {
        sxy += x * y;
        sxx += x * x;
        sy += y;
    }
    LinearFit fit;
    fit.slope = sxy / sxx;
    const double ybar = sy / static_cast<double>(xy.size());
    double ss_res = 0, ss_tot = 0;
    for (auto [x, y] : xy) {
        ss_res += (y - fit.slope * x) * (y - fit.slope * x);
        ss_tot += (y - ybar) * (y - ybar);
    }
    fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : (ss_res == 0 ? 1.0 : 0.0);
    return fit;
}

// ---------------------------------------------------------------- CSV / JSON forms

inline constexpr std::string_view kSweepHeader = "knob,value,seed,accuracy,overhead,collisions,delivered";
inline constexpr std::string_view kCapacityHeader = "t_ns,bytes";
inline constexpr std::string_view kBandwidthHeader = "t_ns,bytes_per_s";
inline constexpr std::string_view kScatterHeader = "t_ns,address,region,phase";

inline std::string sweep_csv(const std::vector<SensitivityRow>& rows) {
    std::string out(kSweepHeader);
    out += '\n';
    for (const auto& r : rows) {
        out += to_string(r.knob);
        out += ',' + std::to_string(r.value) + ',' + std::to_string(r.seed) + ',' + text::format_double(r.accuracy) +
               ',' + text::format_double(r.overhead) + ',' + std::to_string(r.collisions) + ',' +
               std::to_string(r.delivered) + '\n';
    }
    return out;
}

inline std::string capacity_csv(const std::vector<RssPoint>& series) {
    std::string out(kCapacityHeader);
    out += '\n';
    for (const auto& p : series) out += std::to_string(p.t_ns) + ',' + std::to_string(p.bytes) + '\n';
    return out;
}

inline std::string bandwidth_csv(const std::vector<BandwidthPoint>& series) {
    std::string out(kBandwidthHeader);
    out += '\n';
    for (const auto& p : series) out += std::to_string(p.t_ns) + ',' + text::format_double(p.bytes_per_s) + '\n';
    return out;
}

// Region and phase names are written verbatim; commas in names would break the
// column count, so they are rejected at this point.
inline std::string scatter_csv(const NormalizedTrace& trace) {
    auto checked = [](const std::string* s) -> std::string_view {
        if (!s) return {};
        if (s->find_first_of(",\n\"") != std::string::npos)
            throw ConfigError("scatter", "name '" + *s + "' cannot be written to CSV");
        return *s;
    };
    std::string out(kScatterHeader);
    out += '\n';
    for (const auto& s : trace.samples) {
        out += std::to_string(s.t_ns) + ',' + text::format_hex(s.virtual_address) + ',';
        out += checked(trace.region_name(s));
        out += ',';
        out += checked(trace.phase_name(s));
        out += '\n';
    }
    return out;
}

inline json regions_json(const RegionProfile& p) {
    json out;
    out["phase"] = p.phase ? json(*p.phase) : json(nullptr);
    out["total_samples"] = p.total_samples;
    json regions = json::object();
    for (const auto& [name, st] : p.regions) {
        json r;
        r["access_count"] = st.access_count;
        r["load_count"] = st.load_count;
        r["store_count"] = st.store_count;
        r["first_t_ns"] = st.first_t ? json(*st.first_t) : json(nullptr);
        r["last_t_ns"] = st.last_t ? json(*st.last_t) : json(nullptr);
        json scatter = json::array();
        for (const auto& s : st.scatter) scatter.push_back(json::array({s.t_ns, text::format_hex(s.address)}));
        r["scatter"] = std::move(scatter);
        regions[name] = std::move(r);
    }
    out["regions"] = std::move(regions);
    return out;
}

// ---------------------------------------------------------------- CSV input

// Parsed CSV with a header row. Errors carry the 1-based line number.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // source line of each row

    std::size_t column(std::string_view name) const {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ConfigError("csv", "line 1: missing column '" + std::string(name) + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

inline CsvTable parse_csv(std::string_view content) {
    CsvTable t;
    std::size_t line_no = 0;
    bool have_header = false;
    for (auto line : text::split(content, '\n')) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        std::vector<std::string> fields;
        for (auto f : text::split(line, ',')) fields.emplace_back(f);
        if (!have_header) {
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            throw ConfigError("csv", "line " + std::to_string(line_no) + ": expected " +
                                         std::to_string(t.header.size()) + " fields, got " +
                                         std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.line_numbers.push_back(line_no);
    }
    if (!have_header) throw ConfigError("csv", "line 1: missing header");
    return t;
}

inline std::vector<SensitivityRow> parse_sweep_csv(std::string_view content) {
    const auto t = parse_csv(content);
    const std::size_t ck = t.column("knob"), cv = t.column("value"), cs = t.column("seed"), ca = t.column("accuracy"),
                      co = t.column("overhead"), cc = t.column("collisions"), cd = t.column("delivered");
    std::vector<SensitivityRow> rows;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& f = t.rows[i];
        const std::string where = "line " + std::to_string(t.line_numbers[i]) + ": ";
        auto u64 = [&](std::size_t c) {
            if (auto v = text::parse_u64(f[c])) return *v;
            throw ConfigError("csv", where + "column '" + t.header[c] + "' is not an unsigned integer");
        };
        auto dbl = [&](std::size_t c) {
            if (auto v = text::parse_double(f[c])) return *v;
            throw ConfigError("csv", where + "column '" + t.header[c] + "' is not a number");
        };
        SensitivityRow r;
        try {
            r.knob = parse_knob(f[ck]);
        } catch (const ConfigError&) {
            throw ConfigError("csv", where + "unknown knob '" + f[ck] + "'");
        }
        r.value = u64(cv);
        r.seed = u64(cs);
        r.accuracy = dbl(ca);
        r.overhead = dbl(co);
        r.collisions = u64(cc);
        r.delivered = u64(cd);
        rows.push_back(r);
    }
    return rows;
}

inline std::vector<RssPoint> parse_capacity_csv(std::string_view content) {
    const auto t = parse_csv(content);
    const std::size_t ct = t.column("t_ns"), cb = t.column("bytes");
    std::vector<RssPoint> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        auto tv = text::parse_u64(t.rows[i][ct]);
        auto bv = text::parse_u64(t.rows[i][cb]);
        if (!tv || !bv) throw ConfigError("csv", "line " + std::to_string(t.line_numbers[i]) + ": bad number");
        out.push_back({*tv, *bv});
    }
    return out;
}

inline std::vector<BandwidthPoint> parse_bandwidth_csv(std::string_view content) {
    const auto t = parse_csv(content);
    const std::size_t ct = t.column("t_ns"), cb = t.column("bytes_per_s");
    std::vector<BandwidthPoint> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        auto tv = text::parse_u64(t.rows[i][ct]);
        auto bv = text::parse_double(t.rows[i][cb]);
        if (!tv || !bv) throw ConfigError("csv", "line " + std::to_string(t.line_numbers[i]) + ": bad number");
        out.push_back({*tv, *bv});
    }
    return out;
}

// Event-count input for bandwidth: lines "t_ns count", '#' comments allowed.
inline std::vector<CounterPoint> parse_counts_text(std::string_view content) {
    std::vector<CounterPoint> out;
    for (const auto& p : profiler::parse_rss_text(content)) out.push_back({p.t_ns, p.bytes});
    return out;
}

inline std::string format_counts_text(const std::vector<CounterPoint>& counts) {
    std::string out;
    for (const auto& c : counts) out += std::to_string(c.t_ns) + " " + std::to_string(c.count) + "\n";
    return out;
}

// ---------------------------------------------------------------- report

inline json stat_json(const Stat& s) { return json{{"mean", s.mean}, {"stddev", s.stddev}}; }

inline json sweep_report(const std::vector<SensitivityRow>& rows) {
    json out;
    json by_knob = json::object();
    for (const auto& v : summarize(rows)) {
        json e;
        e["trials"] = v.trials;
        e["accuracy"] = stat_json(v.accuracy);
        e["overhead"] = stat_json(v.overhead);
        e["collisions"] = stat_json(v.collisions);
        e["delivered"] = stat_json(v.delivered);
        by_knob[std::string(to_string(v.knob))][std::to_string(v.value)] = std::move(e);
    }
    out["values"] = std::move(by_knob);
    out["rows"] = rows.size();
    std::uint64_t negative = 0;
    for (const auto& r : rows) negative += r.accuracy < 0.0;
    out["flags"] = {{"negative_accuracy_rows", negative}};
    std::set<std::uint64_t> periods;
    for (const auto& r : rows)
        if (r.knob == Knob::Period) periods.insert(r.value);
    if (periods.size() >= 3) {
        const auto fit = linearity_check(rows);
        out["linearity"] = {{"slope", fit.slope}, {"r2", fit.r2}};
    }
    return out;
}

} // namespace nmo::analysis
