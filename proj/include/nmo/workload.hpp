#pragma once

// Synthetic memory-operation streams with exact ground truth.
//
// An OpStream is random-access: the j-th operation of any core is a pure function
// of (spec, core, j), so the sampler only materialises the operations it selects.

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nmo/error.hpp"
#include "nmo/rng.hpp"
#include "nmo/spe_codec.hpp"

namespace nmo::sim {

using codec::OpKind;

enum class WorkloadKind { StreamTriad, RandomGraph, Mixed };

inline std::string_view to_string(WorkloadKind k) {
    switch (k) {
    case WorkloadKind::StreamTriad: return "stream_triad";
    case WorkloadKind::RandomGraph: return "random_graph";
    case WorkloadKind::Mixed: return "mixed";
    }
    return "?";
}

inline WorkloadKind parse_workload_kind(std::string_view s) {
    if (s == "stream_triad" || s == "StreamTriad") return WorkloadKind::StreamTriad;
    if (s == "random_graph" || s == "RandomGraph") return WorkloadKind::RandomGraph;
    if (s == "mixed" || s == "Mixed") return WorkloadKind::Mixed;
    throw ConfigError("kind", "unknown workload kind '" + std::string(s) + "'");
}

struct Region {
    std::string name;
    std::uint64_t base_address = 0;
    std::uint64_t length_bytes = 0;

    std::uint64_t end() const { return base_address + length_bytes; }
    friend bool operator==(const Region&, const Region&) = default;
};

struct WorkloadSpec {
    WorkloadKind kind = WorkloadKind::StreamTriad;
    std::uint64_t total_ops = 1;
    std::uint32_t threads = 1;
    std::vector<Region> region_layout;
    double load_fraction = 0.5;  // ignored by StreamTriad, which is fixed by the region count
    std::uint64_t stride_bytes = 8;
    std::uint64_t seed = 0;

    void validate() const {
        if (region_layout.empty()) throw ConfigError("region_layout", "at least one region is required");
        if (total_ops == 0) throw ConfigError("total_ops", "must be at least 1");
        if (threads == 0) throw ConfigError("threads", "must be positive");
        if (threads > 65535) throw ConfigError("threads", "at most 65535 cores");
        if (stride_bytes == 0) throw ConfigError("stride_bytes", "must be positive");
        if (!(load_fraction >= 0.0 && load_fraction <= 1.0))
            throw ConfigError("load_fraction", "must be in [0, 1]");
        for (const auto& r : region_layout) {
            if (r.base_address == 0)
                throw ConfigError("region_layout", "region '" + r.name + "' starts at address 0");
            if (r.length_bytes < stride_bytes)
                throw ConfigError("region_layout", "region '" + r.name + "' is shorter than one stride");
            if (r.end() < r.base_address)
                throw ConfigError("region_layout", "region '" + r.name + "' wraps the address space");
        }
        auto sorted = region_layout;
        std::sort(sorted.begin(), sorted.end(),
                  [](const Region& a, const Region& b) { return a.base_address < b.base_address; });
        for (std::size_t i = 1; i < sorted.size(); ++i)
            if (sorted[i].base_address < sorted[i - 1].end())
                throw ConfigError("region_layout",
                                  "regions '" + sorted[i - 1].name + "' and '" + sorted[i].name + "' overlap");
        if (kind != WorkloadKind::RandomGraph && elements_per_region() < threads)
            throw ConfigError("threads", "more threads than array elements");
    }

    // Elements every triad region offers (the shortest region bounds the loop).
    std::uint64_t elements_per_region() const {
        std::uint64_t n = ~std::uint64_t{0};
        for (const auto& r : region_layout) n = std::min(n, r.length_bytes / stride_bytes);
        return n;
    }
};

struct Op {
    std::uint64_t address = 0;
    OpKind kind = OpKind::Load;
    std::uint16_t core = 0;

    friend bool operator==(const Op&, const Op&) = default;
};

// Contiguous element range a thread owns in every triad region.
struct ThreadSlice {
    std::uint64_t first = 0;
    std::uint64_t count = 0;
};

class OpStream {
public:
    explicit OpStream(WorkloadSpec spec) : _spec((spec.validate(), std::move(spec))) {
        _elements = _spec.elements_per_region();
        std::uint64_t cum = 0;
        for (const auto& r : _spec.region_layout) {
            cum += r.length_bytes;
            _cumulative.push_back(cum);
        }
    }

    const WorkloadSpec& spec() const { return _spec; }
    std::uint64_t size() const { return _spec.total_ops; }
    std::uint32_t cores() const { return _spec.threads; }

    // Ops are dealt round-robin over cores, so the first total_ops % threads cores
    // run one extra op.
    std::uint64_t core_ops(std::uint32_t core) const {
        const std::uint64_t t = _spec.threads;
        return _spec.total_ops / t + (core < _spec.total_ops % t ? 1 : 0);
    }

    ThreadSlice slice(std::uint32_t core) const {
        const std::uint64_t t = _spec.threads;
        const std::uint64_t first = core * _elements / t;
        const std::uint64_t last = (core + 1) * _elements / t;
        return {first, last - first};
    }

    // Global view: op i belongs to core i % threads.
    Op operator[](std::uint64_t i) const {
        return at(static_cast<std::uint32_t>(i % _spec.threads), i / _spec.threads);
    }

    Op at(std::uint32_t core, std::uint64_t j) const {
        switch (_spec.kind) {
        case WorkloadKind::StreamTriad: return triad_op(core, j);
        case WorkloadKind::RandomGraph: return random_op(core, j);
        case WorkloadKind::Mixed:
            return (mix64(_spec.seed ^ 0x6d69786564ULL ^ (std::uint64_t{core} << 48) ^ j) & 1)
                       ? random_op(core, j)
                       : triad_op(core, j);
        }
        return {};
    }

    // Exact load/store counts of one core.
    std::array<std::uint64_t, 2> count_kinds(std::uint32_t core) const {
        const std::uint64_t n = core_ops(core);
        std::array<std::uint64_t, 2> out{};
        if (_spec.kind == WorkloadKind::StreamTriad) {
            const std::uint64_t per = _spec.region_layout.size();
            const std::uint64_t loads_per = per - 1;
            const std::uint64_t loads = (n / per) * loads_per + std::min(n % per, loads_per);
            out[0] = loads;
            out[1] = n - loads;
            return out;
        }
        for (std::uint64_t j = 0; j < n; ++j) ++out[static_cast<std::size_t>(at(core, j).kind)];
        return out;
    }

private:
    // Regions after the first are loaded in order, then the first is stored:
    // with layout [a, b, c] every element yields load b, load c, store a.
    Op triad_op(std::uint32_t core, std::uint64_t j) const {
        const std::uint64_t per = _spec.region_layout.size();
        const ThreadSlice s = slice(core);
        const std::uint64_t element = s.first + (j / per) % s.count;
        const std::uint64_t q = j % per;
        const bool store = (q + 1 == per);
        const Region& r = _spec.region_layout[store ? 0 : q + 1];
        return {r.base_address + element * _spec.stride_bytes, store ? OpKind::Store : OpKind::Load,
                static_cast<std::uint16_t>(core)};
    }

    Op random_op(std::uint32_t core, std::uint64_t j) const {
        const std::uint64_t h1 = mix64(_spec.seed ^ mix64((std::uint64_t{core} << 40) ^ j));
        const std::uint64_t h2 = mix64(h1);
        const std::uint64_t pos = h1 % _cumulative.back();
        const auto idx = static_cast<std::size_t>(
            std::upper_bound(_cumulative.begin(), _cumulative.end(), pos) - _cumulative.begin());
        const Region& r = _spec.region_layout[idx];
        const std::uint64_t region_start = idx == 0 ? 0 : _cumulative[idx - 1];
        const std::uint64_t slots = r.length_bytes / _spec.stride_bytes;
        const std::uint64_t slot = (pos - region_start) / _spec.stride_bytes;
        const OpKind kind = unit_double(h2) < _spec.load_fraction ? OpKind::Load : OpKind::Store;
        return {r.base_address + std::min(slot, slots - 1) * _spec.stride_bytes, kind,
                static_cast<std::uint16_t>(core)};
    }

    WorkloadSpec _spec;
    std::uint64_t _elements = 0;
    std::vector<std::uint64_t> _cumulative;
};

inline OpStream gen_workload(WorkloadSpec spec) { return OpStream(std::move(spec)); }

// STREAM-like layout: arrays a, b, c of `bytes` each, back to back from `base`.
inline std::vector<Region> triad_regions(std::uint64_t bytes, std::uint64_t base = 0x10000000) {
    return {{"a", base, bytes}, {"b", base + bytes, bytes}, {"c", base + 2 * bytes, bytes}};
}

} // namespace nmo::sim
