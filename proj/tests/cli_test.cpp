#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nmo/cli.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nmo::profiler::Env;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result nmo_run(std::vector<std::string> args, const Env& env = {}) {
    std::ostringstream out, err;
    const int code = nmo::cli::run(args, env, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return nmo::profiler::read_text_file(p); }

void put(const fs::path& p, const std::string& s) { nmo::profiler::write_text_file(p, s); }

const Env kSampling{{"NMO_ENABLE", "1"}, {"NMO_MODE", "loadstore"}, {"NMO_PERIOD", "1000"}, {"NMO_TRACK_RSS", "1"}};

const char* kSmallSpec = R"({
  "kind": "stream_triad", "total_ops": 300000, "threads": 2, "seed": 3,
  "regions": [{"name": "a", "base": "0x10000000", "length": 262144},
              {"name": "b", "base": "0x10040000", "length": 262144},
              {"name": "c", "base": "0x10080000", "length": 262144}]
})";

fs::path small_spec(const fs::path& dir) {
    auto p = dir / "spec.json";
    put(p, kSmallSpec);
    return p;
}

} // namespace

TEST(Cli, HelpAndUsage) {
    EXPECT_EQ(nmo_run({"--help"}).code, 0);
    EXPECT_EQ(nmo_run({}).code, 2);
    EXPECT_EQ(nmo_run({"frobnicate"}).code, 2);
    EXPECT_EQ(nmo_run({"sim", "--no-such-flag"}).code, 2);
    EXPECT_EQ(nmo_run({"decode"}).code, 2);  // --trace is required
}

TEST(Cli, SimDefaultNamesWithSamplingOff) {
    const auto dir = nmo::test::scratch_dir("cli_defaults");
    const auto r = nmo_run({"sim", "--out-dir", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"nmo.trace", "nmo.manifest.json", "nmo.tags.json", "nmo.phases.json", "nmo.counts"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    EXPECT_FALSE(fs::exists(dir / "nmo.rss"));
    const auto m = json::parse(slurp(dir / "nmo.manifest.json"));
    EXPECT_TRUE(m["perf_attr"].is_null());
    EXPECT_EQ(m["outcome"]["delivered"], 0u);
    EXPECT_EQ(m["outcome"]["instrumented_time_ops"], m["outcome"]["baseline_time_ops"]);
}

TEST(Cli, EnvironmentAndFlagLayering) {
    const auto dir = nmo::test::scratch_dir("cli_layering");
    const Env env{{"NMO_ENABLE", "1"}, {"NMO_MODE", "load"}, {"NMO_PERIOD", "1234"}, {"NMO_NAME", "run7"}};
    auto r = nmo_run({"sim", "--out-dir", dir.string()}, env);
    ASSERT_EQ(r.code, 0) << r.err;
    auto m = json::parse(slurp(dir / "run7.manifest.json"));
    EXPECT_EQ(m["config"]["period"], 1234u);
    EXPECT_EQ(m["sampler"]["period"], 1234u);
    EXPECT_EQ(m["perf_attr"]["config"], "0x200000001");
    EXPECT_EQ(m["perf_attr"]["type"], "0x2c");
    EXPECT_FALSE(m["sampler"]["filter"]["stores"].get<bool>());

    r = nmo_run({"sim", "--out-dir", dir.string(), "--period", "5000", "--mode", "store"}, env);
    ASSERT_EQ(r.code, 0) << r.err;
    m = json::parse(slurp(dir / "run7.manifest.json"));
    EXPECT_EQ(m["config"]["period"], 5000u);
    EXPECT_EQ(m["perf_attr"]["config"], "0x400000001");

    r = nmo_run({"sim", "--out-dir", dir.string()}, {{"NMO_PERIOD", "abc"}});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("NMO_PERIOD"), std::string::npos) << r.err;
    r = nmo_run({"sim", "--out-dir", dir.string(), "--auxbufsize", "-1"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("NMO_AUXBUFSIZE"), std::string::npos) << r.err;
}

TEST(Cli, SpecErrorsAreConfigErrors) {
    const auto dir = nmo::test::scratch_dir("cli_spec");
    put(dir / "unknown.json", R"({"total_ops": 10, "regions": [{"name":"a","base":"0x1000","length":64}], "colour": 1})");
    put(dir / "broken.json", "{ not json");
    put(dir / "noregions.json", R"({"total_ops": 10, "regions": []})");
    for (const char* f : {"unknown.json", "broken.json", "noregions.json"}) {
        const auto r = nmo_run({"sim", "--spec", (dir / f).string(), "--out-dir", dir.string()});
        EXPECT_EQ(r.code, 2) << f << ": " << r.err;
    }
    EXPECT_EQ(nmo_run({"sim", "--spec", (dir / "missing.json").string()}).code, 1);
}

TEST(Cli, DecodeMatchesDeliveredCount) {
    const auto dir = nmo::test::scratch_dir("cli_decode");
    const auto spec = small_spec(dir);
    ASSERT_EQ(nmo_run({"sim", "--spec", spec.string(), "--out-dir", dir.string()}, kSampling).code, 0);
    const auto m = json::parse(slurp(dir / "nmo.manifest.json"));
    const auto delivered = m["outcome"]["delivered"].get<std::uint64_t>();
    EXPECT_GT(delivered, 200u);

    const auto r = nmo_run({"decode", "--trace", (dir / "nmo.trace").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream lines(r.out);
    std::string line;
    std::getline(lines, line);
    const auto header = json::parse(line);
    EXPECT_EQ(header["type"], "header");
    EXPECT_EQ(header["samples"], delivered);
    std::uint64_t n = 0, in_phase = 0;
    std::uint64_t prev_t = 0;
    while (std::getline(lines, line)) {
        const auto s = json::parse(line);
        ++n;
        EXPECT_GE(s["t_ns"].get<std::uint64_t>(), prev_t);
        prev_t = s["t_ns"].get<std::uint64_t>();
        EXPECT_TRUE(s.contains("region"));
        in_phase += s.contains("phase");
    }
    EXPECT_EQ(n, delivered);
    EXPECT_EQ(in_phase, delivered);
}

TEST(Cli, StoreModeDeliversOnlyStores) {
    const auto dir = nmo::test::scratch_dir("cli_store");
    const auto spec = small_spec(dir);
    Env env = kSampling;
    env["NMO_MODE"] = "store";
    ASSERT_EQ(nmo_run({"sim", "--spec", spec.string(), "--out-dir", dir.string()}, env).code, 0);
    const auto r = nmo_run({"decode", "--trace", (dir / "nmo.trace").string()});
    ASSERT_EQ(r.code, 0);
    std::istringstream lines(r.out);
    std::string line;
    std::getline(lines, line);
    std::uint64_t n = 0;
    while (std::getline(lines, line)) {
        EXPECT_EQ(json::parse(line)["op"], "store");
        ++n;
    }
    EXPECT_GT(n, 0u);
}

TEST(Cli, DataErrorsExitThree) {
    const auto dir = nmo::test::scratch_dir("cli_data");
    ASSERT_EQ(nmo_run({"sim", "--spec", small_spec(dir).string(), "--out-dir", dir.string()}, kSampling).code, 0);
    auto bytes = nmo::transport::read_file_bytes(dir / "nmo.trace");

    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x40;
    nmo::transport::write_file_bytes(dir / "flipped.trace", flipped);
    auto r = nmo_run({"decode", "--trace", (dir / "flipped.trace").string()});
    EXPECT_EQ(r.code, 3) << r.err;

    auto cut = bytes;
    cut.resize(cut.size() - 20);
    nmo::transport::write_file_bytes(dir / "cut.trace", cut);
    EXPECT_EQ(nmo_run({"decode", "--trace", (dir / "cut.trace").string()}).code, 3);

    EXPECT_EQ(nmo_run({"decode", "--trace", (dir / "absent.trace").string()}).code, 1);
    EXPECT_EQ(nmo_run({"analyze", "--trace", (dir / "absent.trace").string()}).code, 1);
}

TEST(Cli, DecodeWithoutManifestUsesRawTimestamps) {
    const auto dir = nmo::test::scratch_dir("cli_raw");
    ASSERT_EQ(nmo_run({"sim", "--spec", small_spec(dir).string(), "--out-dir", dir.string()}, kSampling).code, 0);
    fs::copy_file(dir / "nmo.trace", dir / "lonely.trace");
    const auto r = nmo_run({"decode", "--trace", (dir / "lonely.trace").string()});
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.err.find("raw counter"), std::string::npos);
    std::istringstream lines(r.out);
    std::string line;
    std::getline(lines, line);
    std::getline(lines, line);
    const auto s = json::parse(line);
    EXPECT_FALSE(s.contains("region"));
    // Timestamps are op index + 1 on the core, so a raw value never exceeds the op count.
    EXPECT_LE(s["t_ns"].get<std::uint64_t>(), 150000u);
}

TEST(Cli, AnalyzeOutputs) {
    const auto dir = nmo::test::scratch_dir("cli_analyze");
    ASSERT_EQ(nmo_run({"sim", "--spec", small_spec(dir).string(), "--out-dir", dir.string(), "--interval-ns", "10000"},
                      kSampling)
                  .code,
              0);
    const auto out = dir / "analysis";
    auto r = nmo_run({"analyze", "--trace", (dir / "nmo.trace").string(), "--out-dir", out.string(),
                      "--total-capacity", "1572864"});
    ASSERT_EQ(r.code, 0) << r.err;

    const auto regions = json::parse(slurp(out / "regions.json"));
    std::uint64_t total = 0;
    for (const auto& [name, reg] : regions["regions"].items()) total += reg["access_count"].get<std::uint64_t>();
    const auto m = json::parse(slurp(dir / "nmo.manifest.json"));
    EXPECT_EQ(total, m["outcome"]["delivered"].get<std::uint64_t>());
    // All three 256 KiB arrays are resident by the end: 786432 of 1572864 bytes.
    EXPECT_EQ(regions["capacity"]["peak_bytes"], 786432u);
    EXPECT_DOUBLE_EQ(regions["capacity"]["peak_utilization"].get<double>(), 0.5);

    // Bandwidth: counted ops in each interval times 64 bytes over 10 us.
    const auto counts = nmo::analysis::parse_counts_text(slurp(dir / "nmo.counts"));
    const auto bw = nmo::analysis::parse_bandwidth_csv(slurp(out / "bandwidth.csv"));
    ASSERT_EQ(bw.size(), counts.size());
    std::uint64_t counted = 0;
    for (std::size_t i = 0; i < bw.size(); ++i) {
        EXPECT_EQ(bw[i].t_ns, counts[i].t_ns);
        EXPECT_DOUBLE_EQ(bw[i].bytes_per_s, static_cast<double>(counts[i].count) * 64.0 / 1e-5);
        counted += counts[i].count;
    }
    EXPECT_EQ(counted, 300000u);

    const auto cap = nmo::analysis::parse_capacity_csv(slurp(out / "capacity.csv"));
    ASSERT_FALSE(cap.empty());
    for (std::size_t i = 1; i < cap.size(); ++i) EXPECT_GE(cap[i].bytes, cap[i - 1].bytes);

    r = nmo_run({"analyze", "--trace", (dir / "nmo.trace").string(), "--out-dir", out.string(), "--phase", "nope"});
    EXPECT_EQ(r.code, 2);

    // An explicit counts file without any interval source is a configuration error.
    fs::copy_file(dir / "nmo.trace", dir / "bare.trace");
    r = nmo_run({"analyze", "--trace", (dir / "bare.trace").string(), "--counts", (dir / "nmo.counts").string(),
                 "--out-dir", out.string()});
    EXPECT_EQ(r.code, 2);
}

TEST(Cli, SweepWritesOneRowPerPoint) {
    const auto dir = nmo::test::scratch_dir("cli_sweep");
    const auto spec = small_spec(dir);
    auto r = nmo_run({"sweep", "--knob", "period", "--values", "1000,2000,5000", "--seeds", "4,9", "--spec",
                      spec.string(), "--out-dir", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = nmo::analysis::parse_sweep_csv(slurp(dir / "sweep.csv"));
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[0].value, 1000u);
    EXPECT_EQ(rows[0].seed, 4u);
    EXPECT_EQ(rows[5].value, 5000u);
    EXPECT_EQ(rows[5].seed, 9u);

    r = nmo_run({"sweep", "--knob", "period", "--values", "1000", "--seeds", "1", "--seed", "2"});
    EXPECT_EQ(r.code, 2);
    r = nmo_run({"sweep", "--knob", "colour", "--values", "1", "--out-dir", dir.string()});
    EXPECT_EQ(r.code, 2);
    r = nmo_run({"sweep", "--knob", "period", "--values", "1,x", "--out-dir", dir.string()});
    EXPECT_EQ(r.code, 2);
}

TEST(Cli, ReportRejectsMalformedCsvWithLineNumber) {
    const auto dir = nmo::test::scratch_dir("cli_report");
    put(dir / "bad.csv", "knob,value,seed,accuracy,overhead,collisions,delivered\n"
                         "period,1000,1,0.9,0.01,0,10\n"
                         "period,1000,2,0.9\n");
    auto r = nmo_run({"report", "--in", (dir / "bad.csv").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;

    put(dir / "odd.csv", "x,y\n1,2\n");
    r = nmo_run({"report", "--in", (dir / "odd.csv").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(nmo_run({"report", "--in", (dir / "none.csv").string()}).code, 1);
}

TEST(Cli, PipelineIsByteDeterministic) {
    auto pipeline = [](const std::string& tag) {
        const auto dir = nmo::test::scratch_dir("cli_det_" + tag);
        const auto spec = small_spec(dir);
        EXPECT_EQ(nmo_run({"sim", "--spec", spec.string(), "--out-dir", (dir / "run").string(), "--seed", "11"},
                          kSampling)
                      .code,
                  0);
        const auto decoded = nmo_run({"decode", "--trace", (dir / "run" / "nmo.trace").string()});
        EXPECT_EQ(decoded.code, 0);
        put(dir / "decoded.jsonl", decoded.out);
        EXPECT_EQ(nmo_run({"analyze", "--trace", (dir / "run" / "nmo.trace").string(), "--out-dir",
                           (dir / "an").string()})
                      .code,
                  0);
        EXPECT_EQ(nmo_run({"sweep", "--knob", "aux_pages", "--values", "2,4", "--trials", "2", "--spec",
                           spec.string(), "--out-dir", (dir / "sw").string()})
                      .code,
                  0);
        EXPECT_EQ(nmo_run({"report", "--in", (dir / "sw" / "sweep.csv").string(), "--in",
                           (dir / "an" / "capacity.csv").string(), "--in", (dir / "an" / "bandwidth.csv").string(),
                           "--in", (dir / "an" / "scatter.csv").string(), "--out", (dir / "report.json").string()})
                      .code,
                  0);
        return dir;
    };
    const auto a = pipeline("a"), b = pipeline("b");
    std::size_t compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a);
        ASSERT_TRUE(fs::exists(b / rel)) << rel;
        EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
        ++compared;
    }
    EXPECT_GE(compared, 13u);
}

#ifdef NMO_CLI_BINARY
TEST(Cli, BinaryExitCodes) {
    const auto dir = nmo::test::scratch_dir("cli_binary");
    auto sh = [](const std::string& cmd) {
        const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    const std::string bin = NMO_CLI_BINARY;
    EXPECT_EQ(sh(bin + " --help"), 0);
    EXPECT_EQ(sh(bin + " sim --bogus"), 2);
    EXPECT_EQ(sh("cd " + dir.string() + " && NMO_ENABLE=1 NMO_MODE=load NMO_PERIOD=777 " + bin + " sim"), 0);
    const auto m = json::parse(slurp(dir / "nmo.manifest.json"));
    EXPECT_EQ(m["config"]["period"], 777u);
    EXPECT_EQ(sh(bin + " decode --trace " + (dir / "nmo.trace").string()), 0);
    EXPECT_EQ(sh("NMO_PERIOD=zero " + bin + " sim --out-dir " + dir.string()), 2);
    put(dir / "junk.trace", "NMO1 but not really a trace");
    EXPECT_EQ(sh(bin + " decode --trace " + (dir / "junk.trace").string()), 3);
    EXPECT_EQ(sh(bin + " decode --trace " + (dir / "missing.trace").string()), 1);
}
#endif
