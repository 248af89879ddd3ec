#pragma once

#include <sodium.h>

#include <cstdint>
#include <initializer_list>
#include <stdexcept>

#include "cover/bytes.hpp"

namespace cover {

// The one hash function used everywhere. Golden vectors in the test suite
// depend on this choice.
inline constexpr const char* kHashName = "SHA-256";

// Domain-separation prefixes.
enum class HashTag : std::uint8_t {
    Leaf = 0x00,
    Node = 0x01,
    Symbol = 0x02,
    SymbolPart = 0x03,
    Message = 0x04,
    Seed = 0x05,
};

/// Per-thread count of completed digest computations. The simulator reads
/// deltas of this to charge hash work to individual nodes.
inline std::uint64_t& hash_op_counter()
{
    thread_local std::uint64_t count = 0;
    return count;
}

inline void ensure_sodium()
{
    static const bool ok = sodium_init() >= 0;
    if (!ok) throw std::runtime_error("libsodium initialisation failed");
}

class Hasher {
public:
    Hasher() { crypto_hash_sha256_init(&state_); }
    explicit Hasher(HashTag tag) : Hasher() { update_byte(static_cast<std::uint8_t>(tag)); }

    Hasher& update(ByteView data)
    {
        crypto_hash_sha256_update(&state_, data.data(), data.size());
        return *this;
    }
    Hasher& update(const Digest& d) { return update(d.view()); }
    Hasher& update_byte(std::uint8_t b) { return update(ByteView(&b, 1)); }
    Hasher& update_u64(std::uint64_t v)
    {
        std::uint8_t buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
        return update(ByteView(buf, 8));
    }

    Digest finish()
    {
        Digest out;
        crypto_hash_sha256_final(&state_, out.bytes.data());
        ++hash_op_counter();
        return out;
    }

private:
    crypto_hash_sha256_state state_{};
};

inline Digest hash_tagged(HashTag tag, ByteView data) { return Hasher(tag).update(data).finish(); }

inline Digest hash_leaf(ByteView data) { return hash_tagged(HashTag::Leaf, data); }

inline Digest hash_node(const Digest& left, const Digest& right)
{
    return Hasher(HashTag::Node).update(left).update(right).finish();
}

/// Derives a 64-bit sub-seed from a master seed and a list of labels.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> labels)
{
    Hasher h(HashTag::Seed);
    h.update_u64(master);
    for (auto l : labels) h.update_u64(l);
    Digest d = h.finish();
    --hash_op_counter(); // bookkeeping, not protocol work
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(d.bytes[i]) << (8 * i);
    return v;
}

} // namespace cover
