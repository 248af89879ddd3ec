#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

#include "cover/bytes.hpp"
#include "cover/hash.hpp"
#include "cover/ldpc.hpp"
#include "cover/rng.hpp"

namespace cover::cmt {

inline constexpr std::size_t kHashesPerGroup = 4;
inline constexpr std::size_t kUpperSymbolSize = kHashesPerGroup * Digest::size; // 128

/// Layer 1 is the top of the tree; the bottom layer holds the base data.
struct SymbolId {
    std::uint32_t layer = 0;
    std::uint32_t index = 0;
    auto operator<=>(const SymbolId&) const = default;
};

inline std::uint32_t next_pow2(std::uint32_t v)
{
    std::uint32_t p = 1;
    while (p < v) p <<= 1;
    return p;
}

/// Layer widths and the parent/child grouping. Each layer of 2w symbols
/// (w data, w coded) hashes into w/2 parent data symbols of 128 bytes.
/// Parent j holds, in order, the digests of children 2j, 2j+1, w+2j, w+2j+1.
class TreeShape {
public:
    TreeShape() = default;
    TreeShape(std::uint32_t base_count, std::size_t base_symbol_size, std::uint32_t top_max_data = 4)
        : base_symbol_size_(base_symbol_size), top_max_data_(top_max_data)
    {
        if (base_count == 0) throw std::invalid_argument("tree needs at least one base symbol");
        if (top_max_data == 0) throw std::invalid_argument("top width must be positive");
        if (base_symbol_size == 0) throw std::invalid_argument("symbol size must be positive");
        std::uint32_t w = next_pow2(base_count);
        std::vector<std::uint32_t> bottom_up{w};
        while (w > top_max_data) {
            w /= 2;
            bottom_up.push_back(w);
        }
        data_counts_.assign(bottom_up.rbegin(), bottom_up.rend());
    }

    /// Padded base count L.
    std::uint32_t base_count() const { return data_counts_.back(); }
    std::uint32_t depth() const { return static_cast<std::uint32_t>(data_counts_.size()); }
    std::uint32_t top_max_data() const { return top_max_data_; }
    std::uint32_t data_count(std::uint32_t layer) const { return data_counts_.at(layer - 1); }
    std::uint32_t width(std::uint32_t layer) const { return 2 * data_count(layer); }
    std::size_t symbol_size(std::uint32_t layer) const
    {
        return layer == depth() ? base_symbol_size_ : kUpperSymbolSize;
    }
    std::size_t base_symbol_size() const { return base_symbol_size_; }
    std::uint32_t bottom() const { return depth(); }

    bool contains(SymbolId id) const { return id.layer >= 1 && id.layer <= depth() && id.index < width(id.layer); }

    std::size_t total_symbols() const
    {
        std::size_t t = 0;
        for (std::uint32_t l = 1; l <= depth(); ++l) t += width(l);
        return t;
    }

    /// Parent data symbol and the quarter of it holding this symbol's digest.
    std::pair<SymbolId, std::uint32_t> parent(SymbolId id) const
    {
        if (id.layer <= 1) throw std::logic_error("top-layer symbols have no parent");
        const std::uint32_t w = data_count(id.layer);
        if (id.index < w) return {{id.layer - 1, id.index / 2}, id.index % 2};
        const std::uint32_t i = id.index - w;
        return {{id.layer - 1, i / 2}, 2 + i % 2};
    }

    std::array<SymbolId, kHashesPerGroup> children(SymbolId parent_id) const
    {
        const std::uint32_t l = parent_id.layer + 1;
        const std::uint32_t w = data_count(l);
        const std::uint32_t j = parent_id.index;
        return {SymbolId{l, 2 * j}, SymbolId{l, 2 * j + 1}, SymbolId{l, w + 2 * j}, SymbolId{l, w + 2 * j + 1}};
    }

    bool operator==(const TreeShape&) const = default;

private:
    std::size_t base_symbol_size_ = 0;
    std::uint32_t top_max_data_ = 4;
    std::vector<std::uint32_t> data_counts_;
};

// ---------------------------------------------------------------------------
// Symbol hashing

/// Bottom-layer symbols hash as H(tag | H(head) | H(tail)) where head is a
/// u32 length prefix plus that many bytes. A transaction's core fields go in
/// the head, so an inclusion proof can carry the core plus a tail digest
/// instead of the whole symbol.
struct SplitSymbol {
    Bytes head;
    Digest tail_digest;
    bool operator==(const SplitSymbol&) const = default;
};

inline std::size_t head_length(ByteView bytes)
{
    if (bytes.size() < 4) return bytes.size();
    const std::uint32_t declared = static_cast<std::uint32_t>(bytes[0]) | static_cast<std::uint32_t>(bytes[1]) << 8 |
                                   static_cast<std::uint32_t>(bytes[2]) << 16 |
                                   static_cast<std::uint32_t>(bytes[3]) << 24;
    return 4 + std::min<std::size_t>(declared, bytes.size() - 4);
}

inline SplitSymbol split_symbol(ByteView bytes)
{
    const auto h = head_length(bytes);
    return {Bytes(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(h)),
            hash_tagged(HashTag::SymbolPart, bytes.subspan(h))};
}

inline Digest split_digest(const SplitSymbol& s)
{
    return Hasher(HashTag::Symbol).update(hash_tagged(HashTag::SymbolPart, s.head)).update(s.tail_digest).finish();
}

inline Digest symbol_digest(const TreeShape& shape, std::uint32_t layer, ByteView bytes)
{
    if (layer == shape.bottom()) return split_digest(split_symbol(bytes));
    return hash_tagged(HashTag::Symbol, bytes);
}

inline Digest root_from_top(const std::vector<Digest>& top)
{
    Hasher h(HashTag::Node);
    for (const auto& d : top) h.update(d);
    return h.finish();
}

inline Digest quarter(ByteView parent, std::uint32_t q)
{
    Digest d;
    std::copy_n(parent.begin() + static_cast<std::ptrdiff_t>(q * Digest::size), Digest::size, d.bytes.begin());
    return d;
}

// ---------------------------------------------------------------------------
// Proofs

/// Path from a symbol to the root: every ancestor data symbol, nearest first,
/// then the digest list of the top layer (which the root commits to).
struct SymbolProof {
    std::vector<Bytes> ancestors;
    std::vector<Digest> top_digests;
    bool operator==(const SymbolProof&) const = default;

    std::size_t wire_size() const
    {
        std::size_t n = 2 + 2 + top_digests.size() * Digest::size;
        for (const auto& a : ancestors) n += 4 + a.size();
        return n;
    }
};

inline void write(Writer& w, const SymbolProof& p)
{
    w.u16(static_cast<std::uint16_t>(p.ancestors.size()));
    for (const auto& a : p.ancestors) w.bytes(a);
    w.u16(static_cast<std::uint16_t>(p.top_digests.size()));
    for (const auto& d : p.top_digests) w.digest(d);
}

inline SymbolProof read_symbol_proof(Reader& r)
{
    SymbolProof p;
    const auto na = r.u16();
    for (std::uint16_t i = 0; i < na; ++i) p.ancestors.push_back(r.bytes());
    const auto nt = r.u16();
    for (std::uint16_t i = 0; i < nt; ++i) p.top_digests.push_back(r.digest());
    return p;
}

/// Checks that `digest` is the committed digest at position `id`.
inline bool verify_digest_at(const TreeShape& shape, const Digest& root, SymbolId id, const Digest& digest,
                             const SymbolProof& proof)
{
    if (!shape.contains(id)) return false;
    if (proof.ancestors.size() != id.layer - 1) return false;
    if (proof.top_digests.size() != shape.width(1)) return false;
    Digest h = digest;
    SymbolId cur = id;
    for (const auto& anc : proof.ancestors) {
        auto [p, q] = shape.parent(cur);
        if (anc.size() != shape.symbol_size(p.layer)) return false;
        if (quarter(anc, q) != h) return false;
        h = symbol_digest(shape, p.layer, anc);
        cur = p;
    }
    if (proof.top_digests[cur.index] != h) return false;
    return root_from_top(proof.top_digests) == root;
}

inline bool verify_symbol(const TreeShape& shape, const Digest& root, SymbolId id, ByteView bytes,
                          const SymbolProof& proof)
{
    if (!shape.contains(id) || bytes.size() != shape.symbol_size(id.layer)) return false;
    return verify_digest_at(shape, root, id, symbol_digest(shape, id.layer, bytes), proof);
}

// ---------------------------------------------------------------------------
// Per-layer codes

struct TreeCodes {
    TreeShape shape;
    std::vector<ldpc::LdpcCode> codes; // codes[layer - 1]

    const ldpc::LdpcCode& at(std::uint32_t layer) const { return codes.at(layer - 1); }
};

/// Independent code per layer, seeded from hash(code_seed || layer).
inline std::shared_ptr<const TreeCodes> make_tree_codes(const TreeShape& shape, std::uint64_t code_seed,
                                                        std::uint32_t d_left = 3, std::uint32_t d_right = 6)
{
    auto tc = std::make_shared<TreeCodes>();
    tc->shape = shape;
    for (std::uint32_t l = 1; l <= shape.depth(); ++l) {
        const std::uint32_t n = shape.data_count(l);
        const std::uint32_t dl = n == 1 ? 1 : std::min(d_left, n); // tiny top layers
        tc->codes.push_back(ldpc::construct_code(n, dl, d_right, derive_seed(code_seed, {l})));
    }
    return tc;
}

// ---------------------------------------------------------------------------
// Tree

/// Hook applied to each freshly encoded layer before it is hashed upward.
/// Used to build deliberately mis-encoded trees.
using LayerTamper = std::function<void(std::uint32_t layer, std::vector<Bytes>& symbols)>;

class CodedMerkleTree {
public:
    CodedMerkleTree() = default;

    const TreeShape& shape() const { return codes_->shape; }
    const TreeCodes& codes() const { return *codes_; }
    std::shared_ptr<const TreeCodes> codes_ptr() const { return codes_; }
    const Digest& root() const { return root_; }
    std::uint32_t depth() const { return shape().depth(); }

    const Bytes& symbol(SymbolId id) const { return layers_.at(id.layer - 1).at(id.index); }
    const std::vector<Bytes>& layer(std::uint32_t l) const { return layers_.at(l - 1); }
    const Digest& digest(SymbolId id) const { return digests_.at(id.layer - 1).at(id.index); }
    const std::vector<Digest>& top_digests() const { return digests_.front(); }

    SymbolProof symbol_proof(SymbolId id) const
    {
        if (!shape().contains(id)) throw std::out_of_range("symbol id out of range");
        SymbolProof p;
        SymbolId cur = id;
        while (cur.layer > 1) {
            cur = shape().parent(cur).first;
            p.ancestors.push_back(symbol(cur));
        }
        p.top_digests = top_digests();
        return p;
    }

    friend CodedMerkleTree build_tree(const std::vector<Bytes>&, std::shared_ptr<const TreeCodes>, const LayerTamper&);

private:
    std::shared_ptr<const TreeCodes> codes_;
    std::vector<std::vector<Bytes>> layers_;   // [layer - 1][index]
    std::vector<std::vector<Digest>> digests_; // [layer - 1][index]
    Digest root_;
};

/// Encodes base symbols bottom-up. Fewer than L symbols are padded with zero
/// symbols.
inline CodedMerkleTree build_tree(const std::vector<Bytes>& base_symbols, std::shared_ptr<const TreeCodes> codes,
                                  const LayerTamper& tamper = {})
{
    const TreeShape& shape = codes->shape;
    if (base_symbols.size() > shape.base_count()) throw std::invalid_argument("too many base symbols");
    for (const auto& s : base_symbols)
        if (s.size() != shape.base_symbol_size()) throw std::invalid_argument("base symbol has wrong size");

    CodedMerkleTree tree;
    tree.codes_ = codes;
    const std::uint32_t depth = shape.depth();
    tree.layers_.resize(depth);
    tree.digests_.resize(depth);

    std::vector<Bytes> data(base_symbols);
    data.resize(shape.base_count(), Bytes(shape.base_symbol_size(), 0));
    for (std::uint32_t l = depth; l >= 1; --l) {
        auto symbols = codes->at(l).encode(data);
        if (tamper) tamper(l, symbols);
        std::vector<Digest> digests;
        digests.reserve(symbols.size());
        for (const auto& s : symbols) digests.push_back(symbol_digest(shape, l, s));
        if (l > 1) {
            std::vector<Bytes> parents(shape.data_count(l - 1));
            for (std::uint32_t j = 0; j < parents.size(); ++j) {
                auto& p = parents[j];
                p.reserve(kUpperSymbolSize);
                for (const auto& child : shape.children({l - 1, j})) {
                    const auto& d = digests[child.index];
                    p.insert(p.end(), d.bytes.begin(), d.bytes.end());
                }
            }
            data = std::move(parents);
        }
        tree.layers_[l - 1] = std::move(symbols);
        tree.digests_[l - 1] = std::move(digests);
    }
    tree.root_ = root_from_top(tree.digests_.front());
    return tree;
}

// ---------------------------------------------------------------------------
// Subtree sampling

struct SampledSubtree {
    std::uint32_t c = 0;
    std::vector<std::uint32_t> bottom_choices;
    std::vector<std::vector<std::uint32_t>> symbols_by_layer; // [layer - 1], sorted

    bool contains(SymbolId id) const
    {
        if (id.layer == 0 || id.layer > symbols_by_layer.size()) return false;
        const auto& v = symbols_by_layer[id.layer - 1];
        return std::binary_search(v.begin(), v.end(), id.index);
    }
    std::size_t size() const
    {
        std::size_t n = 0;
        for (const auto& v : symbols_by_layer) n += v.size();
        return n;
    }
    std::vector<SymbolId> ids() const
    {
        std::vector<SymbolId> out;
        for (std::uint32_t l = 0; l < symbols_by_layer.size(); ++l)
            for (auto i : symbols_by_layer[l]) out.push_back({l + 1, i});
        return out;
    }
};

/// Root paths of the given symbols, optionally with every sibling of each path
/// symbol (all four children of each path parent, and the whole top layer).
inline SampledSubtree subtree_closure(const TreeShape& shape, const std::vector<SymbolId>& starts, bool with_siblings)
{
    std::vector<std::set<std::uint32_t>> sets(shape.depth());
    for (auto id : starts) {
        if (!shape.contains(id)) throw std::out_of_range("subtree start out of range");
        SymbolId cur = id;
        sets[cur.layer - 1].insert(cur.index);
        while (cur.layer > 1) {
            auto p = shape.parent(cur).first;
            if (with_siblings)
                for (auto ch : shape.children(p)) sets[ch.layer - 1].insert(ch.index);
            sets[p.layer - 1].insert(p.index);
            cur = p;
        }
        if (with_siblings)
            for (std::uint32_t i = 0; i < shape.width(1); ++i) sets[0].insert(i);
    }
    SampledSubtree t;
    for (auto& s : sets) t.symbols_by_layer.emplace_back(s.begin(), s.end());
    return t;
}

/// c distinct uniform bottom symbols plus their root paths and path siblings.
inline SampledSubtree sample_subtree(const TreeShape& shape, std::uint32_t c, std::uint64_t seed)
{
    const std::uint32_t bottom_width = shape.width(shape.bottom());
    if (c < 1 || c > bottom_width) throw std::invalid_argument("sample count out of range");
    Rng rng(seed);
    auto picks = rng.sample_distinct(bottom_width, c);
    std::vector<SymbolId> starts;
    std::vector<std::uint32_t> choices;
    for (auto p : picks) {
        starts.push_back({shape.bottom(), static_cast<std::uint32_t>(p)});
        choices.push_back(static_cast<std::uint32_t>(p));
    }
    auto t = subtree_closure(shape, starts, true);
    t.c = c;
    t.bottom_choices = std::move(choices);
    return t;
}

// ---------------------------------------------------------------------------
// Coding fraud proofs

struct CodingFraudProof {
    std::uint32_t layer = 0;
    std::uint32_t check_id = 0;
    std::uint32_t decoded_index = 0;
    Bytes decoded_symbol;        // the newly decoded, inconsistent symbol
    Digest committed_hash;       // its committed digest
    SymbolProof hash_proof;      // ancestors of the decoded position
    std::vector<std::uint32_t> known_indices;
    std::vector<Bytes> known_symbols;
    std::vector<SymbolProof> symbol_proofs;
    bool operator==(const CodingFraudProof&) const = default;
};

inline void write(Writer& w, const CodingFraudProof& p)
{
    w.bytes(p.decoded_symbol);
    w.digest(p.committed_hash);
    write(w, p.hash_proof);
    w.u16(static_cast<std::uint16_t>(p.known_symbols.size()));
    for (std::size_t i = 0; i < p.known_symbols.size(); ++i) {
        w.u32(p.known_indices.at(i));
        w.bytes(p.known_symbols[i]);
    }
    for (const auto& sp : p.symbol_proofs) write(w, sp);
    w.u32(p.check_id);
    w.u16(static_cast<std::uint16_t>(p.layer));
    w.u32(p.decoded_index);
}

inline CodingFraudProof read_coding_fraud_proof(Reader& r)
{
    CodingFraudProof p;
    p.decoded_symbol = r.bytes();
    p.committed_hash = r.digest();
    p.hash_proof = read_symbol_proof(r);
    const auto n = r.u16();
    for (std::uint16_t i = 0; i < n; ++i) {
        p.known_indices.push_back(r.u32());
        p.known_symbols.push_back(r.bytes());
    }
    for (std::uint16_t i = 0; i < n; ++i) p.symbol_proofs.push_back(read_symbol_proof(r));
    p.check_id = r.u32();
    p.layer = r.u16();
    p.decoded_index = r.u32();
    return p;
}

inline Bytes serialize(const CodingFraudProof& p)
{
    Writer w;
    write(w, p);
    return std::move(w).take();
}

inline CodingFraudProof deserialize_coding_fraud_proof(ByteView data)
{
    Reader r(data);
    auto p = read_coding_fraud_proof(r);
    r.expect_done();
    return p;
}

inline bool verify_coding_fraud_proof(const Digest& root, const CodingFraudProof& p, const TreeCodes& codes)
{
    const TreeShape& shape = codes.shape;
    if (p.layer < 1 || p.layer > shape.depth()) return false;
    const SymbolId target{p.layer, p.decoded_index};
    if (!shape.contains(target)) return false;
    const std::size_t size = shape.symbol_size(p.layer);
    if (p.decoded_symbol.size() != size) return false;
    if (p.known_indices.size() != p.known_symbols.size() || p.known_symbols.size() != p.symbol_proofs.size())
        return false;

    // 1. proofs
    if (!verify_digest_at(shape, root, target, p.committed_hash, p.hash_proof)) return false;
    for (std::size_t i = 0; i < p.known_symbols.size(); ++i)
        if (!verify_symbol(shape, root, {p.layer, p.known_indices[i]}, p.known_symbols[i], p.symbol_proofs[i]))
            return false;

    // 2. the check covers exactly these positions
    const auto& code = codes.at(p.layer);
    if (p.check_id >= code.check_count()) return false;
    std::vector<std::uint32_t> claimed = p.known_indices;
    claimed.push_back(p.decoded_index);
    std::sort(claimed.begin(), claimed.end());
    if (std::adjacent_find(claimed.begin(), claimed.end()) != claimed.end()) return false;
    auto members = code.check_symbols(p.check_id);
    std::sort(members.begin(), members.end());
    if (claimed != members) return false;

    // 3. decoded symbol solves the equation
    Bytes sum = p.decoded_symbol;
    for (const auto& s : p.known_symbols) xor_into(sum, s);
    if (!all_zero(sum)) return false;

    // 4. and contradicts the commitment
    return symbol_digest(shape, p.layer, p.decoded_symbol) != p.committed_hash;
}

// ---------------------------------------------------------------------------
// Layer peeling workspace shared by the classical and collaborative decoders

class LayerWorkspace {
public:
    LayerWorkspace(const ldpc::LdpcCode& code, std::size_t symbol_size)
        : code_(&code), size_(symbol_size), symbols_(code.symbol_count()), unknown_count_(code.check_count()),
          unknown_sum_(code.check_count(), 0), acc_(code.check_count(), Bytes(symbol_size, 0))
    {
        for (std::uint32_t c = 0; c < code.check_count(); ++c) {
            unknown_count_[c] = static_cast<std::uint32_t>(code.check_symbols(c).size());
            for (auto s : code.check_symbols(c)) unknown_sum_[c] += s;
        }
    }

    bool known(std::uint32_t s) const { return symbols_.at(s).has_value(); }
    const Bytes& value(std::uint32_t s) const { return *symbols_.at(s); }
    const ldpc::LdpcCode& code() const { return *code_; }

    void learn(std::uint32_t s, Bytes bytes)
    {
        if (known(s)) return;
        if (bytes.size() != size_) throw std::invalid_argument("symbol size mismatch");
        for (auto c : code_->symbol_checks(s)) {
            xor_into(acc_[c], bytes);
            --unknown_count_[c];
            unknown_sum_[c] -= s;
        }
        symbols_[s] = std::move(bytes);
    }

    void forget(std::uint32_t s)
    {
        if (!known(s)) return;
        for (auto c : code_->symbol_checks(s)) {
            xor_into(acc_[c], *symbols_[s]);
            ++unknown_count_[c];
            unknown_sum_[c] += s;
        }
        symbols_[s].reset();
    }

    /// Lowest-id check with exactly one unknown symbol passing both filters.
    template <typename CheckFilter, typename SymbolFilter>
    std::optional<ldpc::PeelStep> find_degree_one(CheckFilter&& check_ok, SymbolFilter&& symbol_ok) const
    {
        for (std::uint32_t c = 0; c < code_->check_count(); ++c) {
            if (unknown_count_[c] != 1 || !check_ok(c)) continue;
            const auto s = static_cast<std::uint32_t>(unknown_sum_[c]);
            if (symbol_ok(s)) return ldpc::PeelStep{c, s};
        }
        return std::nullopt;
    }

    /// Value of the single unknown symbol of a degree-one check.
    Bytes solve(std::uint32_t check) const { return acc_.at(check); }

    std::uint32_t unknown_count(std::uint32_t check) const { return unknown_count_.at(check); }
    /// The unknown member of a check with exactly one unknown.
    std::uint32_t sole_unknown(std::uint32_t check) const { return static_cast<std::uint32_t>(unknown_sum_.at(check)); }
    bool fully_known(std::uint32_t check) const { return unknown_count_.at(check) == 0; }
    bool satisfied(std::uint32_t check) const { return all_zero(acc_.at(check)); }

private:
    const ldpc::LdpcCode* code_;
    std::size_t size_;
    std::vector<std::optional<Bytes>> symbols_;
    std::vector<std::uint32_t> unknown_count_;
    std::vector<std::uint64_t> unknown_sum_;
    std::vector<Bytes> acc_;
};

/// Digest expected at a position, given the decoded parent layer (or the top
/// digest list for layer 1).
inline Digest expected_digest(const TreeShape& shape, SymbolId id, const std::vector<Digest>& top_digests,
                              const std::function<const Bytes*(SymbolId)>& lookup)
{
    if (id.layer == 1) return top_digests.at(id.index);
    auto [p, q] = shape.parent(id);
    const Bytes* parent = lookup(p);
    if (!parent) throw std::logic_error("parent symbol not decoded");
    return quarter(*parent, q);
}

/// Proof for a position built from already-decoded ancestors.
inline SymbolProof proof_from_ancestors(const TreeShape& shape, SymbolId id, const std::vector<Digest>& top_digests,
                                        const std::function<const Bytes*(SymbolId)>& lookup)
{
    SymbolProof p;
    SymbolId cur = id;
    while (cur.layer > 1) {
        cur = shape.parent(cur).first;
        const Bytes* b = lookup(cur);
        if (!b) throw std::logic_error("ancestor not decoded");
        p.ancestors.push_back(*b);
    }
    p.top_digests = top_digests;
    return p;
}

/// Builds a fraud proof for `check`, blaming `target`, from a workspace in
/// which every other member of the check is known.
inline CodingFraudProof make_coding_fraud_proof(const TreeShape& shape, std::uint32_t layer, std::uint32_t check,
                                                std::uint32_t target, const Bytes& decoded,
                                                const Digest& committed, const LayerWorkspace& ws,
                                                const std::vector<Digest>& top_digests,
                                                const std::function<const Bytes*(SymbolId)>& lookup,
                                                const std::function<SymbolProof(SymbolId)>& proof_of)
{
    CodingFraudProof p;
    p.layer = layer;
    p.check_id = check;
    p.decoded_index = target;
    p.decoded_symbol = decoded;
    p.committed_hash = committed;
    p.hash_proof = proof_from_ancestors(shape, {layer, target}, top_digests, lookup);
    for (auto s : ws.code().check_symbols(check)) {
        if (s == target) continue;
        p.known_indices.push_back(s);
        p.known_symbols.push_back(ws.value(s));
        p.symbol_proofs.push_back(proof_of({layer, s}));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Classical (single decoder) tree decoding

struct RevealedSymbol {
    Bytes bytes;
    SymbolProof proof;
};

struct Decoded {
    std::vector<std::vector<Bytes>> layers; // [layer - 1][index]
};
struct Unavailable {
    std::uint32_t layer;
};
struct Fraud {
    CodingFraudProof proof;
};
using DecodeResult = std::variant<Decoded, Unavailable, Fraud>;

/// Decodes the tree layer by layer from the top. Each peeled symbol is checked
/// against the digest committed in its parent; a mismatch yields a coding
/// fraud proof. A completed layer must satisfy every check.
inline DecodeResult decode_tree_classical(const Digest& root, const std::map<SymbolId, RevealedSymbol>& revealed,
                                          const TreeCodes& codes)
{
    const TreeShape& shape = codes.shape;
    std::map<SymbolId, const RevealedSymbol*> valid;
    std::vector<Digest> top;
    for (const auto& [id, rs] : revealed) {
        if (!verify_symbol(shape, root, id, rs.bytes, rs.proof)) continue;
        valid[id] = &rs;
        if (top.empty()) top = rs.proof.top_digests;
    }
    if (top.empty()) return Unavailable{1};

    std::vector<std::vector<Bytes>> layers(shape.depth());
    auto lookup = [&](SymbolId id) -> const Bytes* {
        const auto& l = layers.at(id.layer - 1);
        return id.index < l.size() ? &l[id.index] : nullptr;
    };

    for (std::uint32_t l = 1; l <= shape.depth(); ++l) {
        LayerWorkspace ws(codes.at(l), shape.symbol_size(l));
        std::map<std::uint32_t, SymbolProof> proofs;
        for (auto it = valid.lower_bound({l, 0}); it != valid.end() && it->first.layer == l; ++it) {
            ws.learn(it->first.index, it->second->bytes);
            proofs[it->first.index] = it->second->proof;
        }
        auto proof_of = [&](SymbolId id) -> SymbolProof {
            auto p = proofs.find(id.index);
            if (p != proofs.end()) return p->second;
            return proof_from_ancestors(shape, id, top, lookup);
        };
        const auto all = [](std::uint32_t) { return true; };
        std::uint32_t unknown = 0;
        for (std::uint32_t s = 0; s < shape.width(l); ++s) unknown += ws.known(s) ? 0 : 1;
        while (unknown > 0) {
            auto step = ws.find_degree_one(all, all);
            if (!step) return Unavailable{l};
            Bytes value = ws.solve(step->check);
            const Digest expected = expected_digest(shape, {l, step->symbol}, top, lookup);
            if (symbol_digest(shape, l, value) != expected)
                return Fraud{make_coding_fraud_proof(shape, l, step->check, step->symbol, value, expected, ws, top,
                                                     lookup, proof_of)};
            ws.learn(step->symbol, std::move(value));
            --unknown;
        }
        for (std::uint32_t c = 0; c < codes.at(l).check_count(); ++c) {
            if (ws.satisfied(c)) continue;
            const auto target = codes.at(l).check_symbols(c).front();
            Bytes value = ws.value(target);
            xor_into(value, ws.solve(c)); // XOR of the other members
            const Digest committed = symbol_digest(shape, l, ws.value(target));
            return Fraud{make_coding_fraud_proof(shape, l, c, target, value, committed, ws, top, lookup, proof_of)};
        }
        auto& out = layers[l - 1];
        for (std::uint32_t s = 0; s < shape.width(l); ++s) out.push_back(ws.value(s));
    }
    return Decoded{std::move(layers)};
}

// Symbol wire format: layer u16, index u32, payload, proof.
inline void write_symbol(Writer& w, SymbolId id, ByteView payload, const SymbolProof& proof)
{
    w.u16(static_cast<std::uint16_t>(id.layer));
    w.u32(id.index);
    w.bytes(payload);
    write(w, proof);
}

struct WireSymbol {
    SymbolId id;
    Bytes payload;
    SymbolProof proof;
};

inline WireSymbol read_symbol(Reader& r)
{
    WireSymbol s;
    s.id.layer = r.u16();
    s.id.index = r.u32();
    s.payload = r.bytes();
    s.proof = read_symbol_proof(r);
    return s;
}

} // namespace cover::cmt
