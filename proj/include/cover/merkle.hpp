#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cover/bytes.hpp"
#include "cover/hash.hpp"

namespace cover::merkle {

enum class Side : std::uint8_t {
    Right = 0, // sibling sits to the right of the running hash
    Left = 1,
};

struct PathEntry {
    Digest sibling;
    Side side = Side::Right;
    bool operator==(const PathEntry&) const = default;
};

struct MerkleProof {
    std::uint64_t leaf_index = 0;
    std::vector<PathEntry> path;
    Digest root;
    bool operator==(const MerkleProof&) const = default;
};

/// Plain binary Merkle tree over leaf byte strings. Odd layers are padded by
/// duplicating their last digest.
class MerkleTree {
public:
    explicit MerkleTree(const std::vector<Bytes>& leaves)
    {
        if (leaves.empty()) throw std::invalid_argument("empty tree");
        std::vector<Digest> level;
        level.reserve(leaves.size());
        for (const auto& leaf : leaves) level.push_back(hash_leaf(leaf));
        leaf_count_ = leaves.size();
        levels_.push_back(std::move(level));
        while (levels_.back().size() > 1) {
            auto cur = levels_.back();
            if (cur.size() % 2 == 1) cur.push_back(cur.back());
            std::vector<Digest> next;
            next.reserve(cur.size() / 2);
            for (std::size_t i = 0; i < cur.size(); i += 2) next.push_back(hash_node(cur[i], cur[i + 1]));
            levels_.back() = std::move(cur);
            levels_.push_back(std::move(next));
        }
    }

    const Digest& root() const { return levels_.back().front(); }
    std::size_t leaf_count() const { return leaf_count_; }
    std::size_t depth() const { return levels_.size() - 1; }

    MerkleProof prove(std::uint64_t leaf_index) const
    {
        if (leaf_index >= leaf_count_) throw std::out_of_range("leaf index out of range");
        MerkleProof proof;
        proof.leaf_index = leaf_index;
        proof.root = root();
        std::uint64_t idx = leaf_index;
        for (std::size_t lvl = 0; lvl + 1 < levels_.size(); ++lvl) {
            const auto& layer = levels_[lvl];
            if (idx % 2 == 0)
                proof.path.push_back({layer[idx + 1], Side::Right});
            else
                proof.path.push_back({layer[idx - 1], Side::Left});
            idx /= 2;
        }
        return proof;
    }

private:
    std::vector<std::vector<Digest>> levels_;
    std::size_t leaf_count_ = 0;
};

inline MerkleTree build_merkle_tree(const std::vector<Bytes>& leaves) { return MerkleTree(leaves); }

/// True iff hashing `leaf` up the path reproduces proof.root. Side flags must
/// agree with the bits of leaf_index so a proof is bound to one position.
inline bool verify(const MerkleProof& proof, ByteView leaf)
{
    if (proof.path.size() >= 64) return false;
    if (proof.leaf_index >> proof.path.size() != 0) return false;
    Digest acc = hash_leaf(leaf);
    std::uint64_t idx = proof.leaf_index;
    for (const auto& entry : proof.path) {
        const bool is_left_child = idx % 2 == 0;
        if (is_left_child != (entry.side == Side::Right)) return false;
        acc = is_left_child ? hash_node(acc, entry.sibling) : hash_node(entry.sibling, acc);
        idx /= 2;
    }
    return acc == proof.root;
}

// Wire format: leaf_index u64, path length u16, per entry (side u8, digest),
// root digest.
inline void write(Writer& w, const MerkleProof& proof)
{
    w.u64(proof.leaf_index);
    w.u16(static_cast<std::uint16_t>(proof.path.size()));
    for (const auto& e : proof.path) {
        w.u8(static_cast<std::uint8_t>(e.side));
        w.digest(e.sibling);
    }
    w.digest(proof.root);
}

inline MerkleProof read_proof(Reader& r)
{
    MerkleProof proof;
    proof.leaf_index = r.u64();
    const auto n = r.u16();
    proof.path.reserve(n);
    for (std::uint16_t i = 0; i < n; ++i) {
        const auto side = r.u8();
        if (side > 1) throw DecodeError("bad side flag");
        proof.path.push_back({r.digest(), static_cast<Side>(side)});
    }
    proof.root = r.digest();
    return proof;
}

inline Bytes serialize(const MerkleProof& proof)
{
    Writer w;
    write(w, proof);
    return std::move(w).take();
}

inline MerkleProof deserialize_proof(ByteView data)
{
    Reader r(data);
    auto p = read_proof(r);
    r.expect_done();
    return p;
}

} // namespace cover::merkle
