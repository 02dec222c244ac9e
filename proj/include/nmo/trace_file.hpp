#pragma once

// Persisted session: per-core AUX descriptors with their payload bytes.
//
//   "NMO1" | version u16 | page_size u32 | core_count u16
//   per core:   core_id u16 | record_count u32
//     per record: aux_offset u64 | aux_size u64 | flags u32 | aux_size payload bytes
//   trailer:    FNV-1a 64 of every preceding byte, u64
//
// All integers little-endian.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "nmo/bytes.hpp"
#include "nmo/error.hpp"
#include "nmo/transport.hpp"

namespace nmo::transport {

inline constexpr std::array<std::uint8_t, 4> kTraceMagic{'N', 'M', 'O', '1'};
inline constexpr std::uint16_t kTraceVersion = 1;

struct CoreTrace {
    std::uint16_t core_id = 0;
    std::vector<AuxRecord> records;
    std::vector<Bytes> payloads;  // payloads[i].size() == records[i].aux_size

    void append(const DrainResult& drained) {
        records.insert(records.end(), drained.records.begin(), drained.records.end());
        payloads.insert(payloads.end(), drained.payloads.begin(), drained.payloads.end());
    }

    // All payloads back to back, in record order.
    Bytes packet_stream() const {
        Bytes out;
        for (const auto& p : payloads) out.insert(out.end(), p.begin(), p.end());
        return out;
    }

    friend bool operator==(const CoreTrace&, const CoreTrace&) = default;
};

struct TraceFile {
    std::uint16_t version = kTraceVersion;
    std::uint32_t page_size = static_cast<std::uint32_t>(kDefaultPageSize);
    std::vector<CoreTrace> cores;

    friend bool operator==(const TraceFile&, const TraceFile&) = default;
};

inline Bytes serialize_trace(const TraceFile& trace) {
    Bytes out(kTraceMagic.begin(), kTraceMagic.end());
    append_le<std::uint16_t>(out, trace.version);
    append_le<std::uint32_t>(out, trace.page_size);
    append_le<std::uint16_t>(out, static_cast<std::uint16_t>(trace.cores.size()));
    for (const auto& core : trace.cores) {
        if (core.records.size() != core.payloads.size())
            throw FormatError("core " + std::to_string(core.core_id) +
                              ": record and payload counts differ");
        append_le<std::uint16_t>(out, core.core_id);
        append_le<std::uint32_t>(out, static_cast<std::uint32_t>(core.records.size()));
        for (std::size_t i = 0; i < core.records.size(); ++i) {
            const auto& rec = core.records[i];
            if (core.payloads[i].size() != rec.aux_size)
                throw FormatError("payload size does not match aux_size");
            append_le<std::uint64_t>(out, rec.aux_offset);
            append_le<std::uint64_t>(out, rec.aux_size);
            append_le<std::uint32_t>(out, rec.flags.bits);
            out.insert(out.end(), core.payloads[i].begin(), core.payloads[i].end());
        }
    }
    append_le<std::uint64_t>(out, fnv1a64(out));
    return out;
}

// Verifies the trailer digest before looking at anything else.
inline TraceFile parse_trace(std::span<const std::uint8_t> bytes) {
    constexpr std::size_t kHeader = 4 + 2 + 4 + 2;
    if (bytes.size() < kHeader + 8) throw FormatError("trace file too short");

    const auto body = bytes.first(bytes.size() - 8);
    const std::uint64_t stored = load_le<std::uint64_t>(bytes, bytes.size() - 8);
    if (fnv1a64(body) != stored) throw IntegrityError("trace digest mismatch");

    ByteReader in(body);
    auto magic = in.read_bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kTraceMagic.begin()))
        throw FormatError("bad trace magic");

    TraceFile trace;
    trace.version = in.read<std::uint16_t>();
    if (trace.version != kTraceVersion)
        throw FormatError("unsupported trace version " + std::to_string(trace.version));
    trace.page_size = in.read<std::uint32_t>();
    const auto core_count = in.read<std::uint16_t>();
    trace.cores.resize(core_count);
    for (auto& core : trace.cores) {
        core.core_id = in.read<std::uint16_t>();
        const auto n = in.read<std::uint32_t>();
        for (std::uint32_t i = 0; i < n; ++i) {
            AuxRecord rec;
            rec.aux_offset = in.read<std::uint64_t>();
            rec.aux_size = in.read<std::uint64_t>();
            rec.flags = AuxFlags(in.read<std::uint32_t>());
            if (rec.aux_size > in.remaining()) throw FormatError("record payload overruns file");
            auto payload = in.read_bytes(static_cast<std::size_t>(rec.aux_size));
            core.records.push_back(rec);
            core.payloads.emplace_back(payload.begin(), payload.end());
        }
    }
    if (in.remaining() != 0) throw FormatError("trailing bytes after last core");
    return trace;
}

inline Bytes read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::ios_base::failure("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!f) throw std::ios_base::failure("write failed: " + path.string());
}

inline void write_trace_file(const std::filesystem::path& path, const TraceFile& trace) {
    write_file_bytes(path, serialize_trace(trace));
}

inline TraceFile read_trace_file(const std::filesystem::path& path) {
    return parse_trace(read_file_bytes(path));
}

} // namespace nmo::transport
