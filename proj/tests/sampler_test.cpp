#include <gtest/gtest.h>

#include <cmath>
#include <optional>

#include "nmo/sampler.hpp"
#include "nmo/trace_file.hpp"

using namespace nmo;
using namespace nmo::sim;

namespace {

WorkloadSpec triad_spec(std::uint64_t ops, std::uint32_t threads = 1, std::uint64_t seed = 0) {
    WorkloadSpec s;
    s.kind = WorkloadKind::StreamTriad;
    s.total_ops = ops;
    s.threads = threads;
    s.region_layout = triad_regions(64ull << 20);
    s.seed = seed;
    return s;
}

// Op-by-op reference: decrements a counter on every operation and models the aux
// buffer as a byte count that a drain resets to zero.
CoreOutcome reference_core(const OpStream& stream, std::uint32_t core, const SamplerConfig& cfg,
                           const MemoryModel& model, std::uint64_t seed) {
    CoreOutcome out;
    const std::uint64_t n = stream.core_ops(core);
    out.ground_truth_ops = n;
    out.baseline_time_ops = n;
    std::mt19937_64 rng(mix64(seed ^ core));
    const std::uint64_t j = cfg.jitter();
    auto reload = [&] { return j == 0 ? cfg.period : cfg.period - j + uniform_below(rng, 2 * j + 1); };

    const std::uint64_t capacity = cfg.buffers.aux_bytes();
    const std::uint64_t watermark = cfg.buffers.watermark();
    std::uint64_t fill = 0, written = 0, busy_until = 0;
    constexpr std::uint64_t kNoDrain = ~std::uint64_t{0};
    std::uint64_t drain_at = kNoDrain;
    std::uint64_t counter = reload();
    for (std::uint64_t i = 0; i < n; ++i) {
        if (i >= drain_at) {
            fill = 0;
            drain_at = kNoDrain;
        }
        if (--counter != 0) continue;
        ++out.selected;
        bool stop = false;
        if (i < busy_until) {
            ++out.collided;
        } else {
            const auto level = model.draw(rng);
            codec::SampleRecord r;
            r.op_kind = stream.at(core, i).kind;
            r.memory_level = level;
            r.latency_cycles = model.latency(level);
            busy_until = i + r.latency_cycles;
            if (!apply_filter(r, cfg.filter)) {
                ++out.filtered_out;
            } else if (fill + 64 > capacity) {
                ++out.truncated_dropped;
                stop = cfg.disable_on_truncation;
            } else {
                fill += 64;
                ++out.delivered;
                written += 64;
                if (written >= watermark) {
                    written -= watermark;
                    ++out.interrupts;
                    if (drain_at == kNoDrain) drain_at = i + cfg.drain_latency_ops;
                    busy_until = std::max(busy_until, i + 1 + cfg.collection_pause_ops);
                }
            }
        }
        if (stop) break;
        counter = reload();
    }
    out.instrumented_time_ops = n + out.interrupts * cfg.interrupt_cost_ops + out.delivered * cfg.per_sample_cost_ops;
    return out;
}

std::uint64_t identity_gap(const CoreOutcome& o) {
    return o.selected - (o.collided + o.filtered_out + o.delivered + o.truncated_dropped);
}

SamplerConfig small_buffer_config(std::uint64_t period) {
    SamplerConfig c;
    c.period = period;
    c.buffers.page_size_bytes = 4096;
    c.buffers.ring_pages = 8;
    c.buffers.aux_pages = 4;
    c.drain_latency_ops = 30'000;
    c.collection_pause_ops = 2'000;
    return c;
}

} // namespace

TEST(Sampler, ExactDivisionCollisionFree) {
    const auto stream = gen_workload(triad_spec(100));
    SamplerConfig cfg;
    cfg.period = 10;
    cfg.jitter_max = 0;
    const auto run = run_sampling(stream, cfg, MemoryModel::negligible_latency(), 1);
    EXPECT_EQ(run.outcome.selected, 10u);
    EXPECT_EQ(run.outcome.collided, 0u);
    EXPECT_EQ(run.outcome.delivered, 10u);
    EXPECT_EQ(run.outcome.interrupts, 0u);

    // Selected ops are 9, 19, ..., 99; timestamps are op index + 1.
    ASSERT_EQ(run.trace.cores.size(), 1u);
    const auto decoded = codec::decode_stream(run.trace.cores[0].packet_stream());
    ASSERT_EQ(decoded.records.size(), 10u);
    for (std::size_t k = 0; k < 10; ++k) {
        const auto& r = decoded.records[k];
        EXPECT_EQ(r.timestamp, 10 * (k + 1));
        EXPECT_EQ(r.virtual_address, stream.at(0, r.timestamp - 1).address);
        EXPECT_EQ(r.op_kind, stream.at(0, r.timestamp - 1).kind);
    }
}

TEST(Sampler, MatchesOpByOpReference) {
    struct Case {
        std::uint64_t period;
        std::optional<std::uint64_t> jitter;
        bool disable;
        bool latency_heavy;
        FilterSpec filter;
    };
    FilterSpec slow_only;
    slow_only.min_latency = 40;
    const std::vector<Case> cases{
        {100, std::nullopt, true, false, FilterSpec::all()},
        {100, std::nullopt, false, false, FilterSpec::all()},
        {37, 5, false, true, FilterSpec::all()},
        {250, std::nullopt, true, true, FilterSpec::only(OpKind::Store)},
        {60, 0, false, true, slow_only},
        {1000, std::nullopt, true, true, FilterSpec::all()},
    };
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        const auto& c = cases[ci];
        SamplerConfig cfg = small_buffer_config(c.period);
        cfg.jitter_max = c.jitter;
        cfg.disable_on_truncation = c.disable;
        cfg.filter = c.filter;
        const MemoryModel model = c.latency_heavy ? MemoryModel::typical() : MemoryModel::negligible_latency();
        for (auto kind : {WorkloadKind::StreamTriad, WorkloadKind::Mixed}) {
            auto spec = triad_spec(600'000, 3, 11);
            spec.kind = kind;
            const auto stream = gen_workload(spec);
            const auto run = run_sampling(stream, cfg, model, 1000 + ci, false);
            ASSERT_EQ(run.outcome.per_core.size(), 3u);
            for (std::uint32_t core = 0; core < 3; ++core) {
                auto ref = reference_core(stream, core, cfg, model, 1000 + ci);
                ref.ground_truth_by_kind = stream.count_kinds(core);
                EXPECT_EQ(run.outcome.per_core[core], ref) << "case " << ci << " core " << core;
            }
        }
    }
}

TEST(Sampler, AccountingIdentityAndPacketCount) {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        SamplerConfig cfg = small_buffer_config(20 + uniform_below(rng, 2000));
        cfg.disable_on_truncation = (trial % 2) == 0;
        cfg.filter.min_latency = static_cast<std::uint32_t>(uniform_below(rng, 50));
        cfg.filter.op_kinds = {true, (trial % 3) != 0};
        auto spec = triad_spec(100'000 + uniform_below(rng, 300'000), 1 + static_cast<std::uint32_t>(uniform_below(rng, 4)),
                               rng());
        spec.kind = static_cast<WorkloadKind>(uniform_below(rng, 3));
        const auto stream = gen_workload(spec);
        const auto run = run_sampling(stream, cfg, MemoryModel::typical(), rng());

        EXPECT_EQ(identity_gap(run.outcome), 0u);
        std::uint64_t packets = 0;
        for (std::size_t c = 0; c < run.outcome.per_core.size(); ++c) {
            const auto& pc = run.outcome.per_core[c];
            EXPECT_EQ(identity_gap(pc), 0u);
            const auto& core = run.trace.cores[c];
            const auto bytes = core.packet_stream().size();
            ASSERT_EQ(bytes % codec::kPacketSize, 0u);
            EXPECT_EQ(bytes / codec::kPacketSize, pc.delivered);
            packets += bytes / codec::kPacketSize;
        }
        EXPECT_EQ(packets, run.outcome.delivered);
        EXPECT_EQ(run.outcome.ground_truth_ops, spec.total_ops);
    }
}

TEST(Sampler, DeterministicOutcomeAndTraceBytes) {
    auto spec = triad_spec(2'000'000, 4, 5);
    spec.kind = WorkloadKind::Mixed;
    const auto stream = gen_workload(spec);
    SamplerConfig cfg;
    cfg.period = 1500;
    const auto a = run_sampling(stream, cfg, MemoryModel::typical(), 77);
    const auto b = run_sampling(stream, cfg, MemoryModel::typical(), 77);
    EXPECT_EQ(a.outcome, b.outcome);
    EXPECT_EQ(transport::serialize_trace(a.trace), transport::serialize_trace(b.trace));

    const auto c = run_sampling(stream, cfg, MemoryModel::typical(), 78);
    EXPECT_NE(transport::serialize_trace(a.trace), transport::serialize_trace(c.trace));
}

TEST(Sampler, CoreResultsIndependentOfThreadCount) {
    // Core 0 of a 1-thread run and core 0 of a 2-thread run see different streams,
    // but the same core of the same stream must not depend on the sibling cores.
    const auto stream = gen_workload(triad_spec(1'000'000, 3, 2));
    SamplerConfig cfg;
    cfg.period = 2000;
    const auto run = run_sampling(stream, cfg, MemoryModel::typical(), 3);
    for (std::uint32_t c = 0; c < 3; ++c) {
        auto ref = reference_core(stream, c, cfg, MemoryModel::typical(), 3);
        ref.ground_truth_by_kind = stream.count_kinds(c);
        EXPECT_EQ(run.outcome.per_core[c], ref);
    }
}

TEST(Sampler, CollisionsDecreaseWithPeriod) {
    const auto stream = gen_workload(triad_spec(10'000'000, 1, 0));
    double c1000 = 0, c10000 = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SamplerConfig cfg;
        cfg.period = 1000;
        c1000 += static_cast<double>(run_sampling(stream, cfg, MemoryModel::typical(), seed, false).outcome.collided);
        cfg.period = 10000;
        c10000 += static_cast<double>(run_sampling(stream, cfg, MemoryModel::typical(), seed, false).outcome.collided);
    }
    EXPECT_GT(c1000, 0.0);
    EXPECT_GT(c1000, c10000);
}

TEST(Sampler, CollisionFlagMarksFollowingRecord) {
    const auto stream = gen_workload(triad_spec(3'000'000));
    SamplerConfig cfg;
    cfg.period = 500;
    const auto run = run_sampling(stream, cfg, MemoryModel::typical(), 4);
    ASSERT_GT(run.outcome.collided, 0u);
    std::uint64_t flagged = 0;
    for (const auto& rec : run.trace.cores[0].records) flagged += rec.flags.has(transport::AuxFlag::Collision);
    EXPECT_GT(flagged, 0u);
    EXPECT_LE(flagged, run.outcome.collided);
}

TEST(Sampler, LoadOnlyFilterIsBinomial) {
    WorkloadSpec spec = triad_spec(2'000'000, 1, 8);
    spec.kind = WorkloadKind::RandomGraph;
    spec.load_fraction = 0.5;
    const auto stream = gen_workload(spec);
    SamplerConfig cfg;
    cfg.period = 97;
    cfg.jitter_max = 16;
    cfg.filter = FilterSpec::only(OpKind::Load);
    cfg.buffers.aux_pages = 512;
    const auto run = run_sampling(stream, cfg, MemoryModel::negligible_latency(), 8, false);
    const auto& o = run.outcome;
    ASSERT_EQ(o.collided + o.truncated_dropped, 0u);
    const double n = static_cast<double>(o.selected);
    const double sigma = std::sqrt(n * 0.25);
    EXPECT_NEAR(static_cast<double>(o.filtered_out), 0.5 * n, 3 * sigma);
}

TEST(Sampler, FilterPredicate) {
    codec::SampleRecord r;
    r.latency_cycles = 10;
    for (auto k : codec::kAllOpKinds)
        for (auto l : codec::kAllLevels) {
            r.op_kind = k;
            r.memory_level = l;
            EXPECT_TRUE(apply_filter(r, FilterSpec::all()));
            EXPECT_FALSE(apply_filter(r, FilterSpec::none()));
        }
    FilterSpec f;
    f.min_latency = 11;
    EXPECT_FALSE(apply_filter(r, f));
    f.min_latency = 10;
    EXPECT_TRUE(apply_filter(r, f));
    f.levels = {false, false, false, true};
    r.memory_level = codec::MemoryLevel::SLC;
    EXPECT_FALSE(apply_filter(r, f));
    r.memory_level = codec::MemoryLevel::DRAM;
    EXPECT_TRUE(apply_filter(r, f));
}

TEST(Sampler, InterruptsTrackWatermarkCrossings) {
    for (std::uint64_t pages : {4u, 8u, 16u, 64u}) {
        SamplerConfig cfg;
        cfg.period = 4000;
        cfg.buffers.aux_pages = pages;
        const auto stream = gen_workload(triad_spec(400'000'000, 2, 1));
        const auto run = run_sampling(stream, cfg, MemoryModel::typical(), 21, false);
        const double wm = static_cast<double>(cfg.buffers.watermark());
        for (const auto& pc : run.outcome.per_core) {
            const double expected = std::ceil(static_cast<double>(pc.delivered) * 64.0 / wm);
            EXPECT_LE(std::abs(static_cast<double>(pc.interrupts) - expected), 1.0) << "pages " << pages;
        }
    }
}

TEST(Sampler, SmallAuxBufferTruncatesAndDisables) {
    SamplerConfig cfg;
    cfg.period = 4000;
    cfg.buffers.aux_pages = 2;
    const auto stream = gen_workload(triad_spec(400'000'000, 1, 1));
    const auto run = run_sampling(stream, cfg, MemoryModel::typical(), 5, false);
    // Fills the whole 2048-packet buffer once, then the core is disabled.
    EXPECT_EQ(run.outcome.truncated_dropped, 1u);
    EXPECT_EQ(run.outcome.delivered, cfg.buffers.aux_bytes() / 64);
    EXPECT_LT(static_cast<double>(run.outcome.delivered) * 4000.0 / 400e6, 0.05);

    cfg.buffers.aux_pages = 16;
    const auto big = run_sampling(stream, cfg, MemoryModel::typical(), 5, false);
    EXPECT_EQ(big.outcome.truncated_dropped, 0u);
    EXPECT_GT(big.outcome.delivered, 40 * run.outcome.delivered);
}

TEST(Sampler, TimeModel) {
    const auto stream = gen_workload(triad_spec(50'000'000, 1, 1));
    SamplerConfig cfg;
    cfg.period = 4000;
    cfg.buffers.aux_pages = 4;
    const auto run = run_sampling(stream, cfg, MemoryModel::typical(), 6, false);
    const auto& o = run.outcome;
    ASSERT_GT(o.interrupts, 0u);
    EXPECT_EQ(o.baseline_time_ops, 50'000'000u);
    EXPECT_EQ(o.instrumented_time_ops, 50'000'000u + o.interrupts * 5000 + o.delivered * 50);
}

TEST(Sampler, DisabledSamplingSelectsNothing) {
    const auto stream = gen_workload(triad_spec(100'000, 2));
    SamplerConfig cfg;
    cfg.sampling_enabled = false;
    cfg.period = 0;
    const auto run = run_sampling(stream, cfg, MemoryModel::typical(), 1);
    EXPECT_EQ(run.outcome.selected, 0u);
    EXPECT_EQ(run.outcome.ground_truth_ops, 100'000u);
    EXPECT_EQ(run.outcome.instrumented_time_ops, run.outcome.baseline_time_ops);
    EXPECT_EQ(run.trace.cores.size(), 2u);
}

TEST(Sampler, ConfigValidation) {
    const auto stream = gen_workload(triad_spec(100));
    SamplerConfig cfg;
    cfg.period = 0;
    EXPECT_THROW(run_sampling(stream, cfg, MemoryModel::typical(), 1), ConfigError);
    cfg.period = 10;
    cfg.jitter_max = 10;
    EXPECT_THROW(run_sampling(stream, cfg, MemoryModel::typical(), 1), ConfigError);
    cfg.jitter_max = 9;
    EXPECT_NO_THROW(run_sampling(stream, cfg, MemoryModel::typical(), 1));

    MemoryModel m;
    m.level_probabilities = {0.5, 0.5, 0.5, 0.0};
    EXPECT_THROW(m.validate(), ConfigError);
    m = MemoryModel::typical();
    m.level_latency_cycles = {4, 4, 40, 300};
    EXPECT_THROW(m.validate(), ConfigError);
    EXPECT_DOUBLE_EQ(MemoryModel::typical().mean_latency(), 300.0);
    EXPECT_EQ(SamplerConfig{}.jitter(), 255u);
    SamplerConfig tiny;
    tiny.period = 100;
    EXPECT_EQ(tiny.jitter(), 99u);
}
