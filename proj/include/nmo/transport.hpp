#pragma once

// Ring buffer + aux buffer pair modelled on the perf AUX area protocol.
//
// The producer copies sample packets into the aux buffer and publishes a
// PERF_RECORD_AUX-style descriptor (offset, size, flags) into the ring buffer.
// The consumer reads descriptors from the ring, copies the referenced payload out
// of the aux buffer and releases both. One producer and one consumer may run
// concurrently on a pair: the producer publishes a head only after the bytes it
// covers are written, the consumer publishes a tail only after copying out.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "nmo/bytes.hpp"
#include "nmo/error.hpp"
#include "nmo/spe_codec.hpp"

namespace nmo::transport {

// Same bit values as PERF_AUX_FLAG_TRUNCATED / PERF_AUX_FLAG_COLLISION.
enum class AuxFlag : std::uint32_t {
    Truncated = 0x01,
    Collision = 0x08,
};

struct AuxFlags {
    std::uint32_t bits = 0;

    constexpr AuxFlags() = default;
    constexpr explicit AuxFlags(std::uint32_t b) : bits(b) {}
    constexpr AuxFlags(AuxFlag f) : bits(static_cast<std::uint32_t>(f)) {}

    constexpr bool has(AuxFlag f) const { return (bits & static_cast<std::uint32_t>(f)) != 0; }
    constexpr bool empty() const { return bits == 0; }
    constexpr AuxFlags& operator|=(AuxFlags o) {
        bits |= o.bits;
        return *this;
    }
    friend constexpr AuxFlags operator|(AuxFlags a, AuxFlags b) { return AuxFlags(a.bits | b.bits); }
    friend constexpr bool operator==(AuxFlags, AuxFlags) = default;
};

inline constexpr std::uint64_t kDefaultPageSize = 65536;

struct BufferConfig {
    std::uint64_t page_size_bytes = kDefaultPageSize;
    std::uint64_t ring_pages = 8;  // data pages; one metadata page comes on top
    std::uint64_t aux_pages = 16;
    // Unset means half the aux capacity.
    std::optional<std::uint64_t> aux_watermark_bytes;

    std::uint64_t ring_data_bytes() const { return ring_pages * page_size_bytes; }
    std::uint64_t ring_total_bytes() const { return (ring_pages + 1) * page_size_bytes; }
    std::uint64_t aux_bytes() const { return aux_pages * page_size_bytes; }
    std::uint64_t watermark() const { return aux_watermark_bytes.value_or(aux_bytes() / 2); }

    void validate() const;
};

struct AuxRecord {
    std::uint64_t aux_offset = 0;  // position inside the aux buffer, < capacity
    std::uint64_t aux_size = 0;
    AuxFlags flags;

    friend bool operator==(const AuxRecord&, const AuxRecord&) = default;
};

// perf_event_header (8) + aux_offset + aux_size + flags (8 each).
inline constexpr std::uint64_t kRingRecordBytes = 32;
inline constexpr std::uint32_t kPerfRecordAux = 11;

struct TimescaleParams {
    std::uint64_t time_zero = 0;
    std::uint32_t time_shift = 0;
    std::uint32_t time_mult = 1;

    void validate() const {
        if (time_shift > 63) throw ConfigError("time_shift", "must be in [0, 63]");
        if (time_mult == 0) throw ConfigError("time_mult", "must be positive");
    }

    friend bool operator==(const TimescaleParams&, const TimescaleParams&) = default;
};

// Raw SPE timer ticks to perf nanoseconds, as documented for the
// perf_event_mmap_page time_zero/time_shift/time_mult fields. Arithmetic wraps
// modulo 2^64 if ts * time_mult does not fit; with time_shift <= 32 the
// remainder product never overflows.
inline std::uint64_t convert_timestamp(std::uint64_t ts, const TimescaleParams& p) {
    const std::uint64_t quot = ts >> p.time_shift;
    const std::uint64_t rem = ts & ((std::uint64_t{1} << p.time_shift) - 1);
    return p.time_zero + quot * p.time_mult + ((rem * p.time_mult) >> p.time_shift);
}

inline void BufferConfig::validate() const {
    if (page_size_bytes == 0) throw ConfigError("page_size_bytes", "must be positive");
    if (ring_pages == 0) throw ConfigError("ring_pages", "must be positive");
    if (aux_pages == 0) throw ConfigError("aux_pages", "must be positive");
    if (ring_data_bytes() < kRingRecordBytes)
        throw ConfigError("ring_pages", "ring data area cannot hold a single record");
    if (watermark() == 0) throw ConfigError("aux_watermark_bytes", "must be positive");
    if (watermark() > aux_bytes())
        throw ConfigError("aux_watermark_bytes", "exceeds aux buffer capacity");
}

struct Truncated {
    std::uint64_t dropped_bytes = 0;
    friend bool operator==(const Truncated&, const Truncated&) = default;
};

struct AppendResult {
    std::variant<AuxRecord, Truncated> written;
    // The descriptor reached the ring. False when the ring was full.
    bool record_published = false;
    bool watermark_crossed = false;

    bool truncated() const { return std::holds_alternative<Truncated>(written); }
};

struct DrainResult {
    std::vector<AuxRecord> records;
    std::vector<Bytes> payloads;

    std::uint64_t payload_bytes() const {
        std::uint64_t n = 0;
        for (const auto& p : payloads) n += p.size();
        return n;
    }
};

// Contents of the metadata page: timescale fields plus a cursor snapshot.
struct MetadataPage {
    TimescaleParams time;
    std::uint64_t data_head = 0;
    std::uint64_t data_tail = 0;
    std::uint64_t aux_head = 0;
    std::uint64_t aux_tail = 0;
};

namespace detail {

// Zero-initialised heap block. calloc lets large, mostly untouched buffers stay cheap.
class ZeroedBlock {
public:
    explicit ZeroedBlock(std::size_t n)
        : _data(static_cast<std::uint8_t*>(std::calloc(n ? n : 1, 1))), _size(n) {
        if (!_data) throw std::bad_alloc();
    }

    std::span<std::uint8_t> span() { return {_data.get(), _size}; }
    std::span<const std::uint8_t> span() const { return {_data.get(), _size}; }
    std::size_t size() const { return _size; }

private:
    struct Free {
        void operator()(std::uint8_t* p) const { std::free(p); }
    };
    std::unique_ptr<std::uint8_t, Free> _data;
    std::size_t _size;
};

// Copy into / out of a circular region at a free-running position.
inline void copy_in(std::span<std::uint8_t> ring, std::uint64_t pos,
                    std::span<const std::uint8_t> src) {
    const std::uint64_t cap = ring.size();
    std::uint64_t at = pos % cap;
    std::size_t done = 0;
    while (done < src.size()) {
        const std::size_t n = std::min<std::uint64_t>(src.size() - done, cap - at);
        std::copy_n(src.data() + done, n, ring.data() + at);
        done += n;
        at = 0;
    }
}

inline void copy_out(std::span<const std::uint8_t> ring, std::uint64_t pos,
                     std::span<std::uint8_t> dst) {
    const std::uint64_t cap = ring.size();
    std::uint64_t at = pos % cap;
    std::size_t done = 0;
    while (done < dst.size()) {
        const std::size_t n = std::min<std::uint64_t>(dst.size() - done, cap - at);
        std::copy_n(ring.data() + at, n, dst.data() + done);
        done += n;
        at = 0;
    }
}

} // namespace detail

class BufferPair {
public:
    explicit BufferPair(const BufferConfig& config, TimescaleParams time = {})
        : _config((config.validate(), time.validate(), config)),
          _time(time),
          _ring(config.ring_data_bytes()),
          _aux(config.aux_bytes()) {}

    BufferPair(const BufferPair&) = delete;
    BufferPair& operator=(const BufferPair&) = delete;

    const BufferConfig& config() const { return _config; }
    std::uint64_t aux_capacity() const { return _aux.size(); }
    std::uint64_t ring_capacity() const { return _ring.size(); }

    std::uint64_t aux_fill() const {
        return _aux_head.load(std::memory_order_acquire) - _aux_tail.load(std::memory_order_acquire);
    }
    std::uint64_t ring_fill() const {
        return _ring_head.load(std::memory_order_acquire) - _ring_tail.load(std::memory_order_acquire);
    }

    MetadataPage metadata() const {
        MetadataPage m;
        m.time = _time;
        m.data_head = _ring_head.load(std::memory_order_acquire);
        m.data_tail = _ring_tail.load(std::memory_order_acquire);
        m.aux_head = _aux_head.load(std::memory_order_acquire);
        m.aux_tail = _aux_tail.load(std::memory_order_acquire);
        return m;
    }

    // Producer side.
    //
    // Each published descriptor covers every aux byte written since the previous
    // published descriptor, so bytes whose own descriptor was lost to a full ring
    // are still handed to the consumer by the next one.
    AppendResult producer_append(std::span<const std::uint8_t> packets, AuxFlags flags = {}) {
        if (packets.size() % codec::kPacketSize != 0)
            throw FormatError("aux payload must be a multiple of 64 bytes, got " +
                              std::to_string(packets.size()));

        const std::uint64_t head = _aux_head.load(std::memory_order_relaxed);
        const std::uint64_t tail = _aux_tail.load(std::memory_order_acquire);
        const std::uint64_t free_bytes = aux_capacity() - (head - tail);

        AppendResult result;
        if (packets.size() > free_bytes) {
            _pending |= flags;
            _pending |= AuxFlag::Truncated;
            _truncated_bytes += packets.size();
            result.written = Truncated{packets.size()};
            result.watermark_crossed = (head - tail) >= _config.watermark();
            return result;
        }

        detail::copy_in(_aux.span(), head, packets);
        const std::uint64_t new_head = head + packets.size();
        _aux_head.store(new_head, std::memory_order_release);

        AuxRecord rec{_reported % aux_capacity(), new_head - _reported, flags | _pending};
        result.record_published = publish(rec);
        if (result.record_published) {
            _reported = new_head;
            _pending = {};
        } else {
            _pending |= flags;
            _pending |= AuxFlag::Truncated;
        }
        result.written = rec;
        result.watermark_crossed = (new_head - tail) >= _config.watermark();
        return result;
    }

    // Publishes a descriptor for bytes written but not yet described (their
    // descriptor was dropped on a full ring). No-op when nothing is pending.
    std::optional<AuxRecord> producer_flush() {
        const std::uint64_t head = _aux_head.load(std::memory_order_relaxed);
        if (head == _reported && _pending.empty()) return std::nullopt;
        AuxRecord rec{_reported % aux_capacity(), head - _reported, _pending};
        if (!publish(rec)) return std::nullopt;
        _reported = head;
        _pending = {};
        return rec;
    }

    // Bytes refused by producer_append since construction.
    std::uint64_t truncated_bytes() const { return _truncated_bytes; }
    // Descriptors lost to a full ring since construction.
    std::uint64_t dropped_records() const { return _dropped_records; }

    // Consumer side. Returns every published descriptor in FIFO order with its
    // payload and releases the space.
    DrainResult consumer_drain() {
        DrainResult out;
        const std::uint64_t ring_head = _ring_head.load(std::memory_order_acquire);
        std::uint64_t ring_tail = _ring_tail.load(std::memory_order_relaxed);
        std::uint64_t aux_tail = _aux_tail.load(std::memory_order_relaxed);

        std::array<std::uint8_t, kRingRecordBytes> raw{};
        while (ring_tail != ring_head) {
            detail::copy_out(_ring.span(), ring_tail, raw);
            ring_tail += kRingRecordBytes;

            AuxRecord rec;
            rec.aux_offset = load_le<std::uint64_t>(raw, 8);
            rec.aux_size = load_le<std::uint64_t>(raw, 16);
            rec.flags = AuxFlags(static_cast<std::uint32_t>(load_le<std::uint64_t>(raw, 24)));

            Bytes payload(rec.aux_size);
            detail::copy_out(_aux.span(), rec.aux_offset, payload);
            aux_tail += rec.aux_size;
            _aux_tail.store(aux_tail, std::memory_order_release);

            out.records.push_back(rec);
            out.payloads.push_back(std::move(payload));
        }
        _ring_tail.store(ring_tail, std::memory_order_release);
        return out;
    }

private:
    bool publish(const AuxRecord& rec) {
        const std::uint64_t head = _ring_head.load(std::memory_order_relaxed);
        const std::uint64_t tail = _ring_tail.load(std::memory_order_acquire);
        if (ring_capacity() - (head - tail) < kRingRecordBytes) {
            ++_dropped_records;
            return false;
        }
        std::array<std::uint8_t, kRingRecordBytes> raw{};
        store_le<std::uint32_t>(raw, 0, kPerfRecordAux);
        store_le<std::uint16_t>(raw, 6, static_cast<std::uint16_t>(kRingRecordBytes));
        store_le<std::uint64_t>(raw, 8, rec.aux_offset);
        store_le<std::uint64_t>(raw, 16, rec.aux_size);
        store_le<std::uint64_t>(raw, 24, rec.flags.bits);
        detail::copy_in(_ring.span(), head, raw);
        _ring_head.store(head + kRingRecordBytes, std::memory_order_release);
        return true;
    }

    BufferConfig _config;
    TimescaleParams _time;
    detail::ZeroedBlock _ring;
    detail::ZeroedBlock _aux;

    std::atomic<std::uint64_t> _ring_head{0};
    std::atomic<std::uint64_t> _ring_tail{0};
    std::atomic<std::uint64_t> _aux_head{0};
    std::atomic<std::uint64_t> _aux_tail{0};

    // Producer-only state.
    std::uint64_t _reported = 0;
    AuxFlags _pending;
    std::uint64_t _truncated_bytes = 0;
    std::uint64_t _dropped_records = 0;
};

inline std::unique_ptr<BufferPair> create_buffers(const BufferConfig& config,
                                                  TimescaleParams time = {}) {
    return std::make_unique<BufferPair>(config, time);
}

} // namespace nmo::transport
