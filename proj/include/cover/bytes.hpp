#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace cover {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Raised by every decoder in the library when input bytes are truncated or
/// structurally impossible.
class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Digest {
    static constexpr std::size_t size = 32;
    std::array<std::uint8_t, size> bytes{};

    auto operator<=>(const Digest&) const = default;
    bool operator==(const Digest&) const = default;

    ByteView view() const { return {bytes.data(), bytes.size()}; }
    bool is_zero() const
    {
        return std::all_of(bytes.begin(), bytes.end(), [](std::uint8_t b) { return b == 0; });
    }
};

inline std::string to_hex(ByteView data)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (std::uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

inline std::string to_hex(const Digest& d) { return to_hex(d.view()); }

inline Bytes from_hex(std::string_view hex)
{
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw DecodeError("bad hex digit");
    };
    if (hex.size() % 2 != 0) throw DecodeError("odd hex length");
    Bytes out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    return out;
}

/// dst ^= src, bytewise. Lengths must match.
inline void xor_into(std::span<std::uint8_t> dst, ByteView src)
{
    if (dst.size() != src.size()) throw std::invalid_argument("xor_into: length mismatch");
    std::size_t i = 0;
    const std::size_t words = dst.size() / 8;
    for (std::size_t w = 0; w < words; ++w, i += 8) {
        std::uint64_t a;
        std::uint64_t b;
        std::memcpy(&a, dst.data() + i, 8);
        std::memcpy(&b, src.data() + i, 8);
        a ^= b;
        std::memcpy(dst.data() + i, &a, 8);
    }
    for (; i < dst.size(); ++i) dst[i] ^= src[i];
}

inline bool all_zero(ByteView data)
{
    return std::all_of(data.begin(), data.end(), [](std::uint8_t b) { return b == 0; });
}

// Canonical encoding: little-endian integers, byte strings prefixed with a u32
// length.
class Writer {
public:
    template <typename T>
        requires std::is_unsigned_v<T>
    Writer& uint(T v)
    {
        for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        return *this;
    }
    Writer& u8(std::uint8_t v) { return uint(v); }
    Writer& u16(std::uint16_t v) { return uint(v); }
    Writer& u32(std::uint32_t v) { return uint(v); }
    Writer& u64(std::uint64_t v) { return uint(v); }

    Writer& raw(ByteView data)
    {
        buf_.insert(buf_.end(), data.begin(), data.end());
        return *this;
    }
    Writer& digest(const Digest& d) { return raw(d.view()); }
    Writer& bytes(ByteView data)
    {
        if (data.size() > UINT32_MAX) throw std::length_error("byte string too long");
        u32(static_cast<std::uint32_t>(data.size()));
        return raw(data);
    }

    const Bytes& data() const& { return buf_; }
    Bytes take() && { return std::move(buf_); }
    std::size_t size() const { return buf_.size(); }

private:
    Bytes buf_;
};

class Reader {
public:
    explicit Reader(ByteView data) : data_(data) {}

    template <typename T>
        requires std::is_unsigned_v<T>
    T uint()
    {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }
    std::uint8_t u8() { return uint<std::uint8_t>(); }
    std::uint16_t u16() { return uint<std::uint16_t>(); }
    std::uint32_t u32() { return uint<std::uint32_t>(); }
    std::uint64_t u64() { return uint<std::uint64_t>(); }

    ByteView raw(std::size_t n)
    {
        need(n);
        ByteView out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    Digest digest()
    {
        Digest d;
        auto v = raw(Digest::size);
        std::copy(v.begin(), v.end(), d.bytes.begin());
        return d;
    }
    Bytes bytes()
    {
        auto n = u32();
        auto v = raw(n);
        return {v.begin(), v.end()};
    }

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }
    bool done() const { return pos_ == data_.size(); }
    void expect_done() const
    {
        if (!done()) throw DecodeError("trailing bytes");
    }

private:
    void need(std::size_t n) const
    {
        if (data_.size() - pos_ < n) throw DecodeError("truncated input");
    }

    ByteView data_;
    std::size_t pos_ = 0;
};

} // namespace cover
