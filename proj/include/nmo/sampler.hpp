#pragma once

// Simulated SPE sampling pipeline.
//
// Per core: the interval counter is loaded with period + U[-jitter, +jitter] and
// decremented once per operation. The operation on which it reaches zero is
// selected. If the tracking unit is still busy with an earlier sample the new one
// collides and is dropped before filtering. Otherwise its memory level and latency
// are drawn, the filter is applied, and survivors are encoded and appended to the
// core's aux buffer. Every `watermark` bytes written raise an interrupt; the
// consumer drains the buffers `drain_latency_ops` later.
//
// Time is counted in operations of the core's own stream (1 op == 1 cycle).

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

#include "nmo/error.hpp"
#include "nmo/rng.hpp"
#include "nmo/spe_codec.hpp"
#include "nmo/trace_file.hpp"
#include "nmo/transport.hpp"
#include "nmo/workload.hpp"

namespace nmo::sim {

using codec::MemoryLevel;
using codec::SampleRecord;

struct MemoryModel {
    std::array<double, 4> level_probabilities{0.70, 0.15, 0.05, 0.10};
    std::array<std::uint32_t, 4> level_latency_cycles{4, 12, 40, 2934};

    void validate() const {
        double sum = 0.0;
        for (double p : level_probabilities) {
            if (!(p >= 0.0)) throw ConfigError("level_probabilities", "must be non-negative");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("level_probabilities", "must sum to 1");
        if (level_latency_cycles[0] == 0) throw ConfigError("level_latency_cycles", "must be positive");
        for (std::size_t i = 1; i < 4; ++i)
            if (level_latency_cycles[i] <= level_latency_cycles[i - 1])
                throw ConfigError("level_latency_cycles", "must increase strictly from L1 to DRAM");
    }

    double mean_latency() const {
        double m = 0.0;
        for (std::size_t i = 0; i < 4; ++i) m += level_probabilities[i] * level_latency_cycles[i];
        return m;
    }

    MemoryLevel draw(std::mt19937_64& rng) const {
        const double u = unit_double(rng());
        double acc = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            acc += level_probabilities[i];
            if (u < acc) return static_cast<MemoryLevel>(i);
        }
        return MemoryLevel::DRAM;
    }

    std::uint32_t latency(MemoryLevel l) const { return level_latency_cycles[static_cast<std::size_t>(l)]; }

    // Mean latency 300 cycles, DRAM tail at 2934.
    static MemoryModel typical() { return {}; }

    // Latencies small enough that no selection can collide at realistic periods.
    static MemoryModel negligible_latency() {
        MemoryModel m;
        m.level_latency_cycles = {1, 2, 3, 4};
        return m;
    }
};

struct FilterSpec {
    std::array<bool, 2> op_kinds{true, true};  // indexed by OpKind
    std::uint32_t min_latency = 0;
    std::array<bool, 4> levels{true, true, true, true};  // indexed by MemoryLevel

    bool accepts(OpKind k) const { return op_kinds[static_cast<std::size_t>(k)]; }
    bool accepts(MemoryLevel l) const { return levels[static_cast<std::size_t>(l)]; }

    static FilterSpec all() { return {}; }
    static FilterSpec only(OpKind k) {
        FilterSpec f;
        f.op_kinds = {k == OpKind::Load, k == OpKind::Store};
        return f;
    }
    static FilterSpec none() {
        FilterSpec f;
        f.op_kinds = {false, false};
        return f;
    }

    friend bool operator==(const FilterSpec&, const FilterSpec&) = default;
};

inline bool apply_filter(const SampleRecord& r, const FilterSpec& f) {
    return f.accepts(r.op_kind) && r.latency_cycles >= f.min_latency && f.accepts(r.memory_level);
}

struct SamplerConfig {
    std::uint64_t period = 4000;
    std::optional<std::uint64_t> jitter_max;  // unset: min(255, period - 1)
    FilterSpec filter;
    transport::BufferConfig buffers;
    transport::TimescaleParams time{0, 31, 715827883};  // 3 GHz op clock
    std::uint64_t interrupt_cost_ops = 5000;
    std::uint64_t per_sample_cost_ops = 50;
    std::uint64_t drain_latency_ops = 6'000'000;
    std::uint64_t collection_pause_ops = 500'000;
    bool disable_on_truncation = true;
    bool sampling_enabled = true;

    std::uint64_t jitter() const { return jitter_max.value_or(std::min<std::uint64_t>(255, period ? period - 1 : 0)); }

    void validate() const {
        if (sampling_enabled) {
            if (period == 0) throw ConfigError("period", "must be at least 1");
            if (jitter() >= period) throw ConfigError("jitter_max", "must be smaller than the period");
        }
        buffers.validate();
        time.validate();
    }
};

struct CoreOutcome {
    std::uint64_t ground_truth_ops = 0;
    std::array<std::uint64_t, 2> ground_truth_by_kind{};  // loads, stores
    std::uint64_t selected = 0;
    std::uint64_t collided = 0;
    std::uint64_t filtered_out = 0;
    std::uint64_t delivered = 0;
    std::uint64_t truncated_dropped = 0;
    std::uint64_t interrupts = 0;
    std::uint64_t baseline_time_ops = 0;
    std::uint64_t instrumented_time_ops = 0;

    CoreOutcome& operator+=(const CoreOutcome& o) {
        ground_truth_ops += o.ground_truth_ops;
        ground_truth_by_kind[0] += o.ground_truth_by_kind[0];
        ground_truth_by_kind[1] += o.ground_truth_by_kind[1];
        selected += o.selected;
        collided += o.collided;
        filtered_out += o.filtered_out;
        delivered += o.delivered;
        truncated_dropped += o.truncated_dropped;
        interrupts += o.interrupts;
        baseline_time_ops += o.baseline_time_ops;
        instrumented_time_ops += o.instrumented_time_ops;
        return *this;
    }

    friend bool operator==(const CoreOutcome&, const CoreOutcome&) = default;
};

// Totals are sums over cores, except the two time fields, which are the
// maximum over cores (cores run in parallel, so the slowest one sets wall time).
struct SimOutcome : CoreOutcome {
    std::vector<CoreOutcome> per_core;

    friend bool operator==(const SimOutcome&, const SimOutcome&) = default;
};

struct SimRun {
    SimOutcome outcome;
    transport::TraceFile trace;
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to hardware_concurrency threads. Each index is
// processed exactly once; results must be written to per-index slots.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    if (!failed.exchange(true)) failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

struct CoreResult {
    CoreOutcome outcome;
    transport::CoreTrace trace;
};

inline CoreResult simulate_core(const OpStream& stream, std::uint32_t core, const SamplerConfig& cfg,
                                const MemoryModel& model, std::uint64_t rng_seed, bool keep_trace) {
    CoreResult res;
    CoreOutcome& out = res.outcome;
    res.trace.core_id = static_cast<std::uint16_t>(core);

    const std::uint64_t n = stream.core_ops(core);
    out.ground_truth_ops = n;
    out.ground_truth_by_kind = stream.count_kinds(core);
    out.baseline_time_ops = n;
    out.instrumented_time_ops = n;
    if (!cfg.sampling_enabled) return res;

    std::mt19937_64 rng(mix64(rng_seed ^ core));
    transport::BufferPair buffers(cfg.buffers, cfg.time);
    const std::uint64_t watermark = cfg.buffers.watermark();
    const std::uint64_t period = cfg.period;
    const std::uint64_t jitter = cfg.jitter();

    auto reload = [&]() -> std::uint64_t {
        if (jitter == 0) return period;
        return period - jitter + uniform_below(rng, 2 * jitter + 1);
    };
    auto drain = [&] {
        auto d = buffers.consumer_drain();
        if (keep_trace) res.trace.append(d);
    };

    std::uint64_t busy_until = 0;     // first op index at which the tracking unit is free
    std::uint64_t since_wakeup = 0;   // bytes written since the last interrupt
    constexpr std::uint64_t kNoDrain = ~std::uint64_t{0};
    std::uint64_t drain_at = kNoDrain;
    bool collision_pending = false;
    bool disabled = false;

    for (std::uint64_t sel = reload() - 1; sel < n && !disabled; sel += reload()) {
        if (drain_at <= sel) {
            drain();
            drain_at = kNoDrain;
        }
        ++out.selected;
        if (sel < busy_until) {
            ++out.collided;
            collision_pending = true;
            continue;
        }

        const Op op = stream.at(core, sel);
        SampleRecord rec;
        rec.virtual_address = op.address;
        rec.timestamp = sel + 1;
        rec.op_kind = op.kind;
        rec.memory_level = model.draw(rng);
        rec.latency_cycles = model.latency(rec.memory_level);
        rec.core_id = static_cast<std::uint16_t>(core);
        busy_until = sel + rec.latency_cycles;

        if (!apply_filter(rec, cfg.filter)) {
            ++out.filtered_out;
            continue;
        }

        const auto packet = codec::encode_record(rec);
        const auto appended = buffers.producer_append(
            packet, collision_pending ? transport::AuxFlags(transport::AuxFlag::Collision) : transport::AuxFlags{});
        collision_pending = false;
        if (appended.truncated()) {
            ++out.truncated_dropped;
            disabled = cfg.disable_on_truncation;
            continue;
        }
        ++out.delivered;
        since_wakeup += codec::kPacketSize;
        if (since_wakeup >= watermark) {
            since_wakeup -= watermark;
            ++out.interrupts;
            if (drain_at == kNoDrain) drain_at = sel + cfg.drain_latency_ops;
            busy_until = std::max(busy_until, sel + 1 + cfg.collection_pause_ops);
        }
    }

    // Session end: drain what is left, publish anything still undescribed.
    drain();
    buffers.producer_flush();
    drain();

    out.instrumented_time_ops =
        n + out.interrupts * cfg.interrupt_cost_ops + out.delivered * cfg.per_sample_cost_ops;
    return res;
}

} // namespace detail

// Simulates every core of the stream. Results are independent of how cores are
// scheduled onto threads. With keep_trace false the drained payloads are discarded
// and the returned trace has no records.
inline SimRun run_sampling(const OpStream& stream, const SamplerConfig& config, const MemoryModel& model,
                           std::uint64_t rng_seed, bool keep_trace = true) {
    config.validate();
    model.validate();

    const std::uint32_t cores = stream.cores();
    std::vector<detail::CoreResult> results(cores);
    detail::parallel_for(cores, [&](std::size_t c) {
        results[c] = detail::simulate_core(stream, static_cast<std::uint32_t>(c), config, model, rng_seed,
                                           keep_trace);
    });

    SimRun run;
    run.trace.page_size = static_cast<std::uint32_t>(config.buffers.page_size_bytes);
    for (auto& r : results) {
        const auto baseline = std::max(run.outcome.baseline_time_ops, r.outcome.baseline_time_ops);
        const auto instrumented = std::max(run.outcome.instrumented_time_ops, r.outcome.instrumented_time_ops);
        run.outcome += r.outcome;
        run.outcome.baseline_time_ops = baseline;
        run.outcome.instrumented_time_ops = instrumented;
        run.outcome.per_core.push_back(r.outcome);
        run.trace.cores.push_back(std::move(r.trace));
    }
    return run;
}

} // namespace nmo::sim
