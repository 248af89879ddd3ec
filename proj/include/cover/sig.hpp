#pragma once

#include <sodium.h>

#include <cstdint>
#include <stdexcept>
#include <string>

#include "cover/bytes.hpp"
#include "cover/hash.hpp"

namespace cover {

using AccountId = Digest;

enum class SigScheme : std::uint8_t {
    Ed25519 = 0,
    // Deterministic keyed hash. Anyone holding the public id can sign, so it
    // only suits tests and golden vectors.
    TestKeyed = 1,
};

inline std::string to_string(SigScheme s) { return s == SigScheme::Ed25519 ? "ed25519" : "test-keyed"; }

inline SigScheme sig_scheme_from_string(const std::string& s)
{
    if (s == "ed25519") return SigScheme::Ed25519;
    if (s == "test-keyed") return SigScheme::TestKeyed;
    throw std::invalid_argument("unknown signature scheme: " + s);
}

struct KeyPair {
    SigScheme scheme = SigScheme::Ed25519;
    AccountId public_key;
    Bytes secret;
};

/// Deterministic key derivation from a 64-bit label.
inline KeyPair keypair_from_seed(SigScheme scheme, std::uint64_t seed)
{
    ensure_sodium();
    KeyPair kp;
    kp.scheme = scheme;
    const Digest s = Hasher(HashTag::Seed).update_u64(seed).update_byte(0x6b).finish();
    if (scheme == SigScheme::Ed25519) {
        kp.secret.resize(crypto_sign_SECRETKEYBYTES);
        crypto_sign_seed_keypair(kp.public_key.bytes.data(), kp.secret.data(), s.bytes.data());
    } else {
        kp.public_key = s;
        kp.secret.assign(s.bytes.begin(), s.bytes.end());
    }
    return kp;
}

inline Bytes sign(const KeyPair& kp, ByteView message)
{
    if (kp.scheme == SigScheme::Ed25519) {
        Bytes sig(crypto_sign_BYTES);
        crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), kp.secret.data());
        return sig;
    }
    const Digest d = Hasher(HashTag::Message).update(kp.public_key).update(message).finish();
    return Bytes(d.bytes.begin(), d.bytes.end());
}

inline bool verify_signature(SigScheme scheme, const AccountId& signer, ByteView message, ByteView signature)
{
    if (scheme == SigScheme::Ed25519) {
        if (signature.size() != crypto_sign_BYTES) return false;
        ensure_sodium();
        return crypto_sign_verify_detached(signature.data(), message.data(), message.size(),
                                           signer.bytes.data()) == 0;
    }
    if (signature.size() != Digest::size) return false;
    const Digest d = Hasher(HashTag::Message).update(signer).update(message).finish();
    return std::equal(d.bytes.begin(), d.bytes.end(), signature.begin());
}

} // namespace cover
