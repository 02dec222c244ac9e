#pragma once

// The `nmo` command line: sim, decode, analyze, sweep, report.
// Exit codes: 0 ok, 1 I/O failure, 2 bad configuration or usage, 3 bad input data.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nmo/analysis.hpp"
#include "nmo/error.hpp"
#include "nmo/pipeline.hpp"
#include "nmo/profiler.hpp"
#include "nmo/sampler.hpp"
#include "nmo/text.hpp"
#include "nmo/trace_file.hpp"
#include "nmo/workload.hpp"

namespace nmo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;

inline constexpr std::uint64_t kDefaultIntervalNs = 100'000;
inline constexpr std::uint64_t kDefaultSweepPeriod = 4000;

namespace detail {

// Flags mirror the environment variables and win over them.
struct ProfileFlags {
    std::optional<std::string> enable, name, mode, period, track_rss, bufsize, auxbufsize;

    void attach(CLI::App& app) {
        app.add_option("--enable", enable, "Overrides NMO_ENABLE");
        app.add_option("--name", name, "Overrides NMO_NAME (output file stem)");
        app.add_option("--mode", mode, "Overrides NMO_MODE: none, load, store, loadstore");
        app.add_option("--period", period, "Overrides NMO_PERIOD");
        app.add_option("--track-rss", track_rss, "Overrides NMO_TRACK_RSS");
        app.add_option("--bufsize", bufsize, "Overrides NMO_BUFSIZE (MiB)");
        app.add_option("--auxbufsize", auxbufsize, "Overrides NMO_AUXBUFSIZE (MiB)");
    }

    profiler::ProfileConfig resolve(const profiler::Env& env) const {
        profiler::Env merged = env;
        auto put = [&](std::string_view key, const std::optional<std::string>& v) {
            if (v) merged[std::string(key)] = *v;
        };
        put(profiler::kEnvEnable, enable);
        put(profiler::kEnvName, name);
        put(profiler::kEnvMode, mode);
        put(profiler::kEnvPeriod, period);
        put(profiler::kEnvTrackRss, track_rss);
        put(profiler::kEnvBufsize, bufsize);
        put(profiler::kEnvAuxBufsize, auxbufsize);
        return profiler::parse_config(merged);
    }
};

inline pipeline::SimSpec default_spec() {
    pipeline::SimSpec s;
    s.workload.kind = sim::WorkloadKind::StreamTriad;
    s.workload.total_ops = 3'000'000;
    s.workload.threads = 1;
    s.workload.region_layout = sim::triad_regions(1u << 20);
    s.phase = pipeline::default_phase_name(s.workload.kind);
    return s;
}

inline json read_json_file(const fs::path& path, const std::string& field) {
    const auto content = profiler::read_text_file(path);
    try {
        return json::parse(content);
    } catch (const json::parse_error& e) {
        throw ConfigError(field, path.string() + ": " + e.what());
    }
}

// "<dir>/<name>.trace" -> "<dir>/<name><suffix>"
inline fs::path sibling(const fs::path& trace, std::string_view suffix) {
    fs::path p = trace;
    p.replace_extension();
    p += std::string(suffix);
    return p;
}

inline std::optional<fs::path> explicit_or_sibling(const std::optional<std::string>& given, const fs::path& trace,
                                                   std::string_view suffix) {
    if (given) return fs::path(*given);
    auto p = sibling(trace, suffix);
    if (fs::exists(p)) return p;
    return std::nullopt;
}

inline std::vector<std::uint64_t> parse_u64_list(const std::string& s, const std::string& field) {
    std::vector<std::uint64_t> out;
    for (auto part : text::split(s, ',')) {
        auto t = text::trim(part);
        if (t.empty()) continue;
        auto v = text::parse_u64(t);
        if (!v) throw ConfigError(field, "'" + std::string(t) + "' is not an unsigned integer");
        out.push_back(*v);
    }
    if (out.empty()) throw ConfigError(field, "empty list");
    return out;
}

inline void ensure_dir(const fs::path& dir) {
    if (!dir.empty()) fs::create_directories(dir);
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Manifest fields needed downstream of sim.
struct ManifestView {
    std::optional<transport::TimescaleParams> timescale;
    std::optional<std::uint64_t> interval_ns;
};

inline ManifestView read_manifest(const std::optional<fs::path>& path) {
    ManifestView v;
    if (!path) return v;
    const auto j = read_json_file(*path, "manifest");
    if (!j.is_object()) throw ConfigError("manifest", "expected a JSON object");
    if (j.contains("timescale")) v.timescale = pipeline::timescale_from_json(j["timescale"]);
    if (j.contains("counts_interval_ns")) {
        if (!j["counts_interval_ns"].is_number_unsigned())
            throw ConfigError("manifest.counts_interval_ns", "expected an unsigned integer");
        v.interval_ns = j["counts_interval_ns"].get<std::uint64_t>();
    }
    return v;
}

// ---------------------------------------------------------------- sim

struct SimArgs {
    ProfileFlags flags;
    std::optional<std::string> spec;
    std::uint64_t seed = 1;
    std::string out_dir = ".";
    std::uint64_t interval_ns = kDefaultIntervalNs;
};

inline int cmd_sim(const SimArgs& a, const profiler::Env& env, std::ostream& out) {
    const auto profile = a.flags.resolve(env);
    auto spec = a.spec ? pipeline::read_sim_spec(*a.spec) : default_spec();
    const auto sampler = pipeline::sampler_config(profile, spec.sampler);
    sampler.validate();
    spec.model.validate();
    if (a.interval_ns == 0) throw ConfigError("interval-ns", "must be positive");

    const auto stream = sim::gen_workload(spec.workload);
    const auto run = sim::run_sampling(stream, sampler, spec.model, a.seed, true);
    const auto& ts = sampler.time;

    // Annotations are recorded through a session driven by the simulated clock.
    std::vector<std::uint64_t> clock_ticks{ts.time_zero, pipeline::run_end_ns(stream, ts)};
    std::size_t tick = 0;
    profiler::Session session(profile, [&] { return clock_ticks.at(tick++); });
    for (const auto& r : spec.workload.region_layout)
        session.tag_addr(r.name, r.base_address, r.base_address + r.length_bytes);
    session.phase_start(spec.phase);
    session.phase_stop();
    const auto series = pipeline::simulated_series(stream, ts, a.interval_ns);
    if (profile.track_rss) session.ingest_rss(series.rss);

    json manifest;
    manifest["config"] = pipeline::profile_json(profile);
    if (profile.sampling_active()) {
        const auto attr = profiler::encode_perf_attr(profile);
        manifest["perf_attr"] = {{"type", text::format_hex(attr.pmu_type)},
                                 {"config", text::format_hex(attr.config_bits)},
                                 {"sample_period", attr.sample_period}};
    } else {
        manifest["perf_attr"] = nullptr;
    }
    manifest["workload"] = pipeline::workload_json(spec.workload);
    manifest["sampler"] = pipeline::sampler_json(sampler, spec.model);
    manifest["timescale"] = pipeline::timescale_json(ts);
    manifest["seed"] = a.seed;
    manifest["outcome"] = pipeline::outcome_json(run.outcome);
    json per_core = json::array();
    for (const auto& c : run.outcome.per_core) per_core.push_back(pipeline::outcome_json(c));
    manifest["per_core"] = std::move(per_core);
    manifest["counts_interval_ns"] = a.interval_ns;

    const fs::path dir(a.out_dir);
    ensure_dir(dir);
    const fs::path stem = dir / profile.name;
    std::vector<fs::path> written;
    auto emit = [&](const std::string& suffix, std::string_view content) {
        fs::path p = stem;
        p += suffix;
        profiler::write_text_file(p, content);
        written.push_back(p);
    };
    {
        fs::path p = stem;
        p += ".trace";
        transport::write_trace_file(p, run.trace);
        written.push_back(p);
    }
    emit(".manifest.json", dump(manifest));
    emit(".tags.json", dump(profiler::tags_to_json(session.tags().tags())));
    emit(".phases.json", dump(profiler::phases_to_json(session.phases().phases())));
    emit(".counts", analysis::format_counts_text(series.counts));
    if (profile.track_rss) emit(".rss", profiler::format_rss_text(session.rss()));

    out << "ops " << run.outcome.ground_truth_ops << ", samples " << run.outcome.delivered << ", collisions "
        << run.outcome.collided << ", interrupts " << run.outcome.interrupts << "\n";
    for (const auto& p : written) out << "wrote " << p.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- decode / analyze

struct TraceInputs {
    std::string trace;
    std::optional<std::string> manifest, tags, phases;
};

struct LoadedTrace {
    profiler::NormalizedTrace trace;
    ManifestView manifest;
    bool identity_timescale = false;
};

inline LoadedTrace load_trace(const TraceInputs& in) {
    const fs::path trace_path(in.trace);
    LoadedTrace lt;
    lt.manifest = read_manifest(explicit_or_sibling(in.manifest, trace_path, ".manifest.json"));
    profiler::TagRegistry tags;
    if (auto p = explicit_or_sibling(in.tags, trace_path, ".tags.json"))
        tags = profiler::tags_from_json(read_json_file(*p, "tags"));
    profiler::PhaseLog phases;
    if (auto p = explicit_or_sibling(in.phases, trace_path, ".phases.json"))
        phases = profiler::phases_from_json(read_json_file(*p, "phases"));
    transport::TimescaleParams params;  // identity: raw timestamps taken as nanoseconds
    if (lt.manifest.timescale)
        params = *lt.manifest.timescale;
    else
        lt.identity_timescale = true;
    const auto raw = transport::read_trace_file(trace_path);
    lt.trace = profiler::build_trace(raw, tags, phases, params);
    return lt;
}

inline int cmd_decode(const TraceInputs& in, std::ostream& out, std::ostream& err) {
    const auto lt = load_trace(in);
    profiler::write_json_lines(out, lt.trace);
    if (lt.identity_timescale) err << "note: no manifest found, timestamps are raw counter values\n";
    json counters(lt.trace.counters);
    err << counters.dump() << "\n";
    return kExitOk;
}

struct AnalyzeArgs {
    TraceInputs inputs;
    std::optional<std::string> rss, counts, phase;
    std::optional<std::uint64_t> interval_ns, total_capacity;
    double bytes_per_event = analysis::kDefaultBytesPerEvent;
    std::string out_dir = ".";
};

inline int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
    auto lt = load_trace(a.inputs);
    const fs::path trace_path(a.inputs.trace);
    if (auto p = explicit_or_sibling(a.rss, trace_path, ".rss")) lt.trace.rss_series = profiler::read_rss_file(*p);

    std::vector<analysis::BandwidthPoint> bandwidth;
    if (auto p = explicit_or_sibling(a.counts, trace_path, ".counts")) {
        const auto counts = analysis::parse_counts_text(profiler::read_text_file(*p));
        const auto interval = a.interval_ns ? a.interval_ns : lt.manifest.interval_ns;
        if (!interval) throw ConfigError("interval-ns", "required when the manifest does not provide it");
        bandwidth = analysis::bandwidth_series(counts, *interval, a.bytes_per_event);
    }
    const auto capacity = analysis::capacity_series(lt.trace, a.total_capacity);
    const auto profile = analysis::region_profile(lt.trace, a.phase);

    json regions = analysis::regions_json(profile);
    regions["capacity"] = {{"peak_bytes", capacity.peak_bytes},
                           {"peak_utilization", capacity.peak_utilization ? json(*capacity.peak_utilization)
                                                                          : json(nullptr)}};

    const fs::path dir(a.out_dir);
    ensure_dir(dir);
    profiler::write_text_file(dir / "capacity.csv", analysis::capacity_csv(capacity.series));
    profiler::write_text_file(dir / "bandwidth.csv", analysis::bandwidth_csv(bandwidth));
    profiler::write_text_file(dir / "regions.json", dump(regions));
    profiler::write_text_file(dir / "scatter.csv", analysis::scatter_csv(lt.trace));
    out << "samples " << lt.trace.samples.size() << "\n";
    for (const char* f : {"capacity.csv", "bandwidth.csv", "regions.json", "scatter.csv"})
        out << "wrote " << (dir / f).string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
    ProfileFlags flags;
    std::string knob;
    std::string values;
    std::optional<std::string> seeds, spec;
    std::uint64_t seed = 1;
    std::uint64_t trials = 1;
    std::string out_dir = ".";
};

inline int cmd_sweep(const SweepArgs& a, const profiler::Env& env, std::ostream& out) {
    const auto profile = a.flags.resolve(env);
    const auto knob = analysis::parse_knob(a.knob);
    const auto values = parse_u64_list(a.values, "values");
    std::vector<std::uint64_t> seeds;
    if (a.seeds) {
        seeds = parse_u64_list(*a.seeds, "seeds");
    } else {
        if (a.trials == 0) throw ConfigError("trials", "must be positive");
        for (std::uint64_t i = 0; i < a.trials; ++i) seeds.push_back(a.seed + i);
    }
    const auto spec = a.spec ? pipeline::read_sim_spec(*a.spec) : default_spec();

    // A sweep always samples; the mode only narrows the filter.
    analysis::SweepBase base;
    base.workload = spec.workload;
    base.model = spec.model;
    base.sampler = pipeline::sampler_config(profile, spec.sampler);
    base.sampler.sampling_enabled = true;
    if (base.sampler.period == 0) base.sampler.period = kDefaultSweepPeriod;

    const auto result = analysis::run_sweep(knob, values, base, seeds);
    const fs::path dir(a.out_dir);
    ensure_dir(dir);
    profiler::write_text_file(dir / "sweep.csv", analysis::sweep_csv(result.rows));
    out << "rows " << result.rows.size() << "\n";
    out << "wrote " << (dir / "sweep.csv").string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- report

inline json report_one(std::string_view content) {
    const auto first_line = text::trim(content.substr(0, content.find('\n')));
    if (first_line == analysis::kSweepHeader) return analysis::sweep_report(analysis::parse_sweep_csv(content));
    if (first_line == analysis::kCapacityHeader) {
        const auto s = analysis::capacity_series(analysis::parse_capacity_csv(content));
        return json{{"kind", "capacity"}, {"points", s.series.size()}, {"peak_bytes", s.peak_bytes}};
    }
    if (first_line == analysis::kBandwidthHeader) {
        const auto pts = analysis::parse_bandwidth_csv(content);
        std::vector<double> xs;
        double peak = 0.0;
        for (const auto& p : pts) {
            xs.push_back(p.bytes_per_s);
            peak = std::max(peak, p.bytes_per_s);
        }
        return json{{"kind", "bandwidth"},
                    {"points", pts.size()},
                    {"bytes_per_s", analysis::stat_json(analysis::mean_stddev(xs))},
                    {"peak_bytes_per_s", peak}};
    }
    if (first_line == analysis::kScatterHeader) {
        const auto t = analysis::parse_csv(content);
        const std::size_t cr = t.column("region");
        std::map<std::string, std::uint64_t> per_region;
        for (const auto& row : t.rows) ++per_region[row[cr]];
        return json{{"kind", "scatter"}, {"samples", t.rows.size()}, {"per_region", per_region}};
    }
    throw ConfigError("csv", "line 1: unrecognised header '" + std::string(first_line) + "'");
}

struct ReportArgs {
    std::vector<std::string> inputs;
    std::optional<std::string> out;
};

inline int cmd_report(const ReportArgs& a, std::ostream& out) {
    json report = json::object();
    for (const auto& in : a.inputs) {
        const fs::path p(in);
        const auto content = profiler::read_text_file(p);
        json entry;
        try {
            entry = report_one(content);
        } catch (const ConfigError& e) {
            std::string_view msg = e.what();
            msg.remove_prefix(std::min(msg.size(), e.field().size() + 2));
            throw ConfigError(e.field(), p.filename().string() + ": " + std::string(msg));
        }
        const auto key = p.filename().string();
        if (report.contains(key)) throw ConfigError("in", "two inputs share the file name '" + key + "'");
        report[key] = std::move(entry);
    }
    const auto text = dump(report);
    if (a.out)
        profiler::write_text_file(*a.out, text);
    else
        out << text;
    return kExitOk;
}

} // namespace detail

// args excludes the program name.
inline int run(const std::vector<std::string>& args, const profiler::Env& env, std::ostream& out,
               std::ostream& err) {
    CLI::App app{"NMO memory profiling tools"};
    app.name("nmo");
    app.require_subcommand(1);

    detail::SimArgs sim_args;
    auto* sim_cmd = app.add_subcommand("sim", "Simulate a profiled run and write its trace and annotations");
    sim_args.flags.attach(*sim_cmd);
    sim_cmd->add_option("--spec", sim_args.spec, "Workload spec (JSON)");
    sim_cmd->add_option("--seed", sim_args.seed, "Sampler seed");
    sim_cmd->add_option("--out-dir", sim_args.out_dir, "Output directory");
    sim_cmd->add_option("--interval-ns", sim_args.interval_ns, "Counter / RSS interval");

    detail::TraceInputs decode_args;
    auto* decode_cmd = app.add_subcommand("decode", "Decode a trace to JSON lines on stdout");
    decode_cmd->add_option("--trace", decode_args.trace, "Trace file")->required();
    decode_cmd->add_option("--manifest", decode_args.manifest, "Run manifest");
    decode_cmd->add_option("--tags", decode_args.tags, "Region tags (JSON)");
    decode_cmd->add_option("--phases", decode_args.phases, "Phases (JSON)");

    detail::AnalyzeArgs analyze_args;
    auto* analyze_cmd = app.add_subcommand("analyze", "Write capacity, bandwidth and region views of a trace");
    analyze_cmd->add_option("--trace", analyze_args.inputs.trace, "Trace file")->required();
    analyze_cmd->add_option("--manifest", analyze_args.inputs.manifest, "Run manifest");
    analyze_cmd->add_option("--tags", analyze_args.inputs.tags, "Region tags (JSON)");
    analyze_cmd->add_option("--phases", analyze_args.inputs.phases, "Phases (JSON)");
    analyze_cmd->add_option("--rss", analyze_args.rss, "RSS series (t_ns bytes per line)");
    analyze_cmd->add_option("--counts", analyze_args.counts, "Event counts (t_ns count per line)");
    analyze_cmd->add_option("--interval-ns", analyze_args.interval_ns, "Counter interval");
    analyze_cmd->add_option("--bytes-per-event", analyze_args.bytes_per_event, "Bytes moved per counted event");
    analyze_cmd->add_option("--total-capacity", analyze_args.total_capacity, "Memory capacity in bytes");
    analyze_cmd->add_option("--phase", analyze_args.phase, "Restrict the region view to one phase");
    analyze_cmd->add_option("--out-dir", analyze_args.out_dir, "Output directory");

    detail::SweepArgs sweep_args;
    auto* sweep_cmd = app.add_subcommand("sweep", "Run a sensitivity sweep over one knob");
    sweep_args.flags.attach(*sweep_cmd);
    sweep_cmd->add_option("--knob", sweep_args.knob, "period, aux_pages or threads")->required();
    sweep_cmd->add_option("--values", sweep_args.values, "Comma-separated knob values")->required();
    auto* seeds_opt = sweep_cmd->add_option("--seeds", sweep_args.seeds, "Comma-separated seeds");
    sweep_cmd->add_option("--seed", sweep_args.seed, "First seed")->excludes(seeds_opt);
    sweep_cmd->add_option("--trials", sweep_args.trials, "Seeds per value")->excludes(seeds_opt);
    sweep_cmd->add_option("--spec", sweep_args.spec, "Workload spec (JSON)");
    sweep_cmd->add_option("--out-dir", sweep_args.out_dir, "Output directory");

    detail::ReportArgs report_args;
    auto* report_cmd = app.add_subcommand("report", "Summarise result CSVs as JSON");
    report_cmd->add_option("--in", report_args.inputs, "Input CSV files")->required();
    report_cmd->add_option("--out", report_args.out, "Output file (default stdout)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (sim_cmd->parsed()) return detail::cmd_sim(sim_args, env, out);
        if (decode_cmd->parsed()) return detail::cmd_decode(decode_args, out, err);
        if (analyze_cmd->parsed()) return detail::cmd_analyze(analyze_args, out);
        if (sweep_cmd->parsed()) return detail::cmd_sweep(sweep_args, env, out);
        if (report_cmd->parsed()) return detail::cmd_report(report_args, out);
    } catch (const IntegrityError& e) {
        err << "error: integrity: " << e.what() << "\n";
        return kExitData;
    } catch (const FormatError& e) {
        err << "error: format: " << e.what() << "\n";
        return kExitData;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const json::exception& e) {
        err << "error: json: " << e.what() << "\n";
        return kExitConfig;
    } catch (const fs::filesystem_error& e) {
        err << "error: io: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::ios_base::failure& e) {
        err << "error: io: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitConfig;
}

} // namespace nmo::cli
