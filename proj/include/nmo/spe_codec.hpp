#pragma once

// Fixed 64-byte SPE sample packet codec.
//
// Wire layout (all multi-byte fields little-endian):
//
//   [0]       op kind (0 = load, 1 = store)
//   [1]       memory level (0 = L1, 1 = L2, 2 = SLC, 3 = DRAM)
//   [2..5]    latency in cycles
//   [6..7]    core id
//   [8..29]   reserved, zero
//   [30]      0xb2, virtual address header
//   [31..38]  virtual address
//   [39..54]  reserved, zero
//   [55]      0x71, timestamp header
//   [56..63]  timestamp
//
// Example from a real trace:
//   b2 e0 53 47 61 ae aa 00 00  -> VA 0xaaae614753e0
//   71 f0 f1 3e f1 e7 51 00 00  -> timestamp 90056626729456

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "nmo/bytes.hpp"
#include "nmo/error.hpp"

namespace nmo::codec {

inline constexpr std::size_t kPacketSize = 64;

inline constexpr std::size_t kOpKindOffset = 0;
inline constexpr std::size_t kLevelOffset = 1;
inline constexpr std::size_t kLatencyOffset = 2;
inline constexpr std::size_t kCoreOffset = 6;
inline constexpr std::size_t kAddressMarkerOffset = 30;
inline constexpr std::size_t kAddressOffset = 31;
inline constexpr std::size_t kTimestampMarkerOffset = 55;
inline constexpr std::size_t kTimestampOffset = 56;

inline constexpr std::uint8_t kAddressMarker = 0xb2;
inline constexpr std::uint8_t kTimestampMarker = 0x71;

enum class OpKind : std::uint8_t { Load = 0, Store = 1 };
enum class MemoryLevel : std::uint8_t { L1 = 0, L2 = 1, SLC = 2, DRAM = 3 };

inline constexpr std::array<OpKind, 2> kAllOpKinds{OpKind::Load, OpKind::Store};
inline constexpr std::array<MemoryLevel, 4> kAllLevels{MemoryLevel::L1, MemoryLevel::L2,
                                                       MemoryLevel::SLC, MemoryLevel::DRAM};

inline std::string_view to_string(OpKind k) { return k == OpKind::Load ? "load" : "store"; }

inline std::string_view to_string(MemoryLevel l) {
    switch (l) {
    case MemoryLevel::L1: return "L1";
    case MemoryLevel::L2: return "L2";
    case MemoryLevel::SLC: return "SLC";
    case MemoryLevel::DRAM: return "DRAM";
    }
    return "?";
}

struct SampleRecord {
    std::uint64_t virtual_address = 0;
    std::uint64_t timestamp = 0;
    OpKind op_kind = OpKind::Load;
    MemoryLevel memory_level = MemoryLevel::L1;
    std::uint32_t latency_cycles = 0;
    std::uint16_t core_id = 0;

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

using PacketBytes = std::array<std::uint8_t, kPacketSize>;

// Checked in this order; the first failing check is reported.
enum class SkipReason : std::uint8_t {
    BadAddressMarker = 0,
    BadTimestampMarker = 1,
    ZeroAddress = 2,
    ZeroTimestamp = 3,
};

inline constexpr std::size_t kSkipReasonCount = 4;

inline std::string_view to_string(SkipReason r) {
    switch (r) {
    case SkipReason::BadAddressMarker: return "bad_address_marker";
    case SkipReason::BadTimestampMarker: return "bad_timestamp_marker";
    case SkipReason::ZeroAddress: return "zero_address";
    case SkipReason::ZeroTimestamp: return "zero_timestamp";
    }
    return "?";
}

using DecodeOutcome = std::variant<SampleRecord, SkipReason>;

inline PacketBytes encode_record(const SampleRecord& r) {
    PacketBytes p{};
    p[kOpKindOffset] = static_cast<std::uint8_t>(r.op_kind);
    p[kLevelOffset] = static_cast<std::uint8_t>(r.memory_level);
    store_le<std::uint32_t>(p, kLatencyOffset, r.latency_cycles);
    store_le<std::uint16_t>(p, kCoreOffset, r.core_id);
    p[kAddressMarkerOffset] = kAddressMarker;
    store_le<std::uint64_t>(p, kAddressOffset, r.virtual_address);
    p[kTimestampMarkerOffset] = kTimestampMarker;
    store_le<std::uint64_t>(p, kTimestampOffset, r.timestamp);
    return p;
}

// Total over every 64-byte input: yields a record or the reason it was skipped.
// Out-of-range kind/level octets are folded into the enumerations (low bits), so a
// record decoded from arbitrary bytes still holds valid enum values.
inline DecodeOutcome decode_packet(std::span<const std::uint8_t, kPacketSize> p) {
    if (p[kAddressMarkerOffset] != kAddressMarker) return SkipReason::BadAddressMarker;
    if (p[kTimestampMarkerOffset] != kTimestampMarker) return SkipReason::BadTimestampMarker;

    SampleRecord r;
    r.virtual_address = load_le<std::uint64_t>(p, kAddressOffset);
    if (r.virtual_address == 0) return SkipReason::ZeroAddress;
    r.timestamp = load_le<std::uint64_t>(p, kTimestampOffset);
    if (r.timestamp == 0) return SkipReason::ZeroTimestamp;

    r.op_kind = static_cast<OpKind>(p[kOpKindOffset] & 0x1);
    r.memory_level = static_cast<MemoryLevel>(p[kLevelOffset] & 0x3);
    r.latency_cycles = load_le<std::uint32_t>(p, kLatencyOffset);
    r.core_id = load_le<std::uint16_t>(p, kCoreOffset);
    return r;
}

inline DecodeOutcome decode_packet(const PacketBytes& p) {
    return decode_packet(std::span<const std::uint8_t, kPacketSize>(p));
}

// Dynamic-extent overload; rejects anything that is not exactly one packet.
inline DecodeOutcome decode_packet(std::span<const std::uint8_t> p) {
    if (p.size() != kPacketSize)
        throw FormatError("packet must be 64 bytes, got " + std::to_string(p.size()));
    return decode_packet(p.first<kPacketSize>());
}

struct SkipStats {
    std::array<std::uint64_t, kSkipReasonCount> counts{};

    std::uint64_t& operator[](SkipReason r) { return counts[static_cast<std::size_t>(r)]; }
    std::uint64_t operator[](SkipReason r) const { return counts[static_cast<std::size_t>(r)]; }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto c : counts) t += c;
        return t;
    }

    SkipStats& operator+=(const SkipStats& o) {
        for (std::size_t i = 0; i < kSkipReasonCount; ++i) counts[i] += o.counts[i];
        return *this;
    }

    friend bool operator==(const SkipStats&, const SkipStats&) = default;
};

struct StreamDecode {
    std::vector<SampleRecord> records;
    SkipStats stats;
};

// Appends accepted records to `out` in stream order. Throws TruncatedStream if the
// input is not a whole number of packets.
inline void decode_stream_into(std::span<const std::uint8_t> bytes, StreamDecode& out) {
    if (auto residual = bytes.size() % kPacketSize; residual != 0) throw TruncatedStream(residual);
    for (std::size_t off = 0; off < bytes.size(); off += kPacketSize) {
        auto outcome = decode_packet(bytes.subspan(off).first<kPacketSize>());
        if (auto* rec = std::get_if<SampleRecord>(&outcome))
            out.records.push_back(*rec);
        else
            ++out.stats[std::get<SkipReason>(outcome)];
    }
}

inline StreamDecode decode_stream(std::span<const std::uint8_t> bytes) {
    StreamDecode out;
    out.records.reserve(bytes.size() / kPacketSize);
    decode_stream_into(bytes, out);
    return out;
}

} // namespace nmo::codec
