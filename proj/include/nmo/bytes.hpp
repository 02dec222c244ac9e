#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "nmo/error.hpp"

namespace nmo {

using Bytes = std::vector<std::uint8_t>;

// Little-endian field access. Works on any host byte order.
template <typename T>
inline T load_le(std::span<const std::uint8_t> in, std::size_t offset) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        value |= static_cast<T>(static_cast<T>(in[offset + i]) << (8 * i));
    return value;
}

template <typename T>
inline void store_le(std::span<std::uint8_t> out, std::size_t offset, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out[offset + i] = static_cast<std::uint8_t>(value >> (8 * i));
}

template <typename T>
inline void append_le(Bytes& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

// Sequential little-endian reader over a byte span. Throws FormatError on overrun.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : _data(data) {}

    template <typename T>
    T read() {
        need(sizeof(T));
        T v = load_le<T>(_data, _pos);
        _pos += sizeof(T);
        return v;
    }

    std::span<const std::uint8_t> read_bytes(std::size_t n) {
        need(n);
        auto out = _data.subspan(_pos, n);
        _pos += n;
        return out;
    }

    std::size_t position() const noexcept { return _pos; }
    std::size_t remaining() const noexcept { return _data.size() - _pos; }

private:
    void need(std::size_t n) const {
        if (_data.size() - _pos < n)
            throw FormatError("unexpected end of data at offset " + std::to_string(_pos));
    }

    std::span<const std::uint8_t> _data;
    std::size_t _pos = 0;
};

// 64-bit FNV-1a.
inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> data,
                             std::uint64_t hash = kFnvOffsetBasis) {
    for (std::uint8_t b : data) {
        hash ^= b;
        hash *= kFnvPrime;
    }
    return hash;
}

inline std::uint64_t fnv1a64(std::string_view text) {
    return fnv1a64(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

} // namespace nmo
