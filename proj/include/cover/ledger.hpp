#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cover/bytes.hpp"
#include "cover/cmt.hpp"
#include "cover/hash.hpp"
#include "cover/sig.hpp"

namespace cover::ledger {

inline constexpr std::size_t kMaxInputs = 16;
inline constexpr std::size_t kMaxOutputs = 16;
inline constexpr std::uint64_t kNoExpiry = std::numeric_limits<std::uint64_t>::max();

class ChainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Output {
    AccountId recipient;
    std::uint64_t amount = 0;
    bool operator==(const Output&) const = default;
};

/// Reference to output `output_index` (numbered from 1) of transaction `txid`.
struct Input {
    Digest txid;
    std::uint16_t output_index = 1;
    auto operator<=>(const Input&) const = default;
};

/// Shows that a funding transaction sits at (height, position). Only the
/// funding transaction's core bytes travel; the rest of its symbol is
/// represented by the digest of its tail.
struct FundingProof {
    std::uint64_t height = 0;
    std::uint32_t position = 0;
    Bytes core;
    Digest tail_digest;
    cmt::SymbolProof path;
    bool operator==(const FundingProof&) const = default;
};

/// Location of a full transaction in a block.
struct TxnInclusion {
    std::uint64_t height = 0;
    std::uint32_t position = 0;
    cmt::SymbolProof path;
    bool operator==(const TxnInclusion&) const = default;
};

struct TxnCore {
    AccountId sender;
    std::vector<Output> outputs;
    std::vector<Input> inputs;
};

inline void write_core(Writer& w, const AccountId& sender, const std::vector<Output>& outputs,
                       const std::vector<Input>& inputs)
{
    w.digest(sender);
    w.u16(static_cast<std::uint16_t>(outputs.size()));
    for (const auto& o : outputs) {
        w.digest(o.recipient);
        w.u64(o.amount);
    }
    w.u16(static_cast<std::uint16_t>(inputs.size()));
    for (const auto& in : inputs) {
        w.digest(in.txid);
        w.u16(in.output_index);
    }
}

inline TxnCore parse_core(ByteView bytes)
{
    Reader r(bytes);
    TxnCore c;
    c.sender = r.digest();
    const auto no = r.u16();
    for (std::uint16_t i = 0; i < no; ++i) {
        Output o;
        o.recipient = r.digest();
        o.amount = r.u64();
        c.outputs.push_back(o);
    }
    const auto ni = r.u16();
    for (std::uint16_t i = 0; i < ni; ++i) {
        Input in;
        in.txid = r.digest();
        in.output_index = r.u16();
        c.inputs.push_back(in);
    }
    r.expect_done();
    return c;
}

inline Digest txid_of_core(ByteView core) { return hash_tagged(HashTag::Message, core); }

struct Transaction {
    AccountId sender;
    std::vector<Output> outputs;
    std::vector<Input> inputs;
    Bytes signature;
    std::vector<FundingProof> input_proofs;

    bool operator==(const Transaction&) const = default;

    Bytes core() const
    {
        Writer w;
        write_core(w, sender, outputs, inputs);
        return std::move(w).take();
    }
    /// Hash of the canonical serialization without the signature.
    Digest txid() const { return txid_of_core(core()); }
};

inline void write(Writer& w, const FundingProof& p)
{
    w.u64(p.height);
    w.u32(p.position);
    w.bytes(p.core);
    w.digest(p.tail_digest);
    cmt::write(w, p.path);
}

inline FundingProof read_funding_proof(Reader& r)
{
    FundingProof p;
    p.height = r.u64();
    p.position = r.u32();
    p.core = r.bytes();
    p.tail_digest = r.digest();
    p.path = cmt::read_symbol_proof(r);
    return p;
}

inline void write(Writer& w, const TxnInclusion& p)
{
    w.u64(p.height);
    w.u32(p.position);
    cmt::write(w, p.path);
}

inline TxnInclusion read_inclusion(Reader& r)
{
    TxnInclusion p;
    p.height = r.u64();
    p.position = r.u32();
    p.path = cmt::read_symbol_proof(r);
    return p;
}

// Transaction layout: core (length-prefixed), signature, input proofs. The
// length prefix of the core doubles as the head length of the symbol digest.
inline void write(Writer& w, const Transaction& t)
{
    w.bytes(t.core());
    w.bytes(t.signature);
    w.u16(static_cast<std::uint16_t>(t.input_proofs.size()));
    for (const auto& p : t.input_proofs) write(w, p);
}

inline Transaction read_transaction(Reader& r)
{
    Transaction t;
    const Bytes core = r.bytes();
    if (core.empty()) throw DecodeError("empty transaction core");
    auto c = parse_core(core);
    t.sender = c.sender;
    t.outputs = std::move(c.outputs);
    t.inputs = std::move(c.inputs);
    t.signature = r.bytes();
    const auto np = r.u16();
    for (std::uint16_t i = 0; i < np; ++i) t.input_proofs.push_back(read_funding_proof(r));
    return t;
}

inline Bytes serialize(const Transaction& t)
{
    Writer w;
    write(w, t);
    return std::move(w).take();
}

/// Base symbol: serialized transaction padded with zeros.
inline Bytes to_symbol(const Transaction& t, std::size_t symbol_size)
{
    Bytes b = serialize(t);
    if (b.size() > symbol_size) throw std::length_error("transaction exceeds symbol size");
    b.resize(symbol_size, 0);
    return b;
}

/// Parses a base symbol. An all-zero symbol is padding (nullopt). Anything
/// that is not exactly one canonical transaction followed by zeros throws.
inline std::optional<Transaction> from_symbol(ByteView symbol)
{
    if (all_zero(symbol)) return std::nullopt;
    Reader r(symbol);
    auto t = read_transaction(r);
    if (!all_zero(symbol.subspan(r.position()))) throw DecodeError("non-zero symbol padding");
    return t;
}

// ---------------------------------------------------------------------------
// Headers and sections

struct Header {
    Digest prev_hash;
    Digest root;
    std::uint32_t len = 0;
    std::uint64_t height = 0;
    Bytes other;

    bool operator==(const Header&) const = default;
    Digest hash() const;
};

inline void write(Writer& w, const Header& h)
{
    w.digest(h.prev_hash);
    w.digest(h.root);
    w.u32(h.len);
    w.u64(h.height);
    w.bytes(h.other);
}

inline Header read_header(Reader& r)
{
    Header h;
    h.prev_hash = r.digest();
    h.root = r.digest();
    h.len = r.u32();
    h.height = r.u64();
    h.other = r.bytes();
    return h;
}

inline Digest Header::hash() const
{
    Writer w;
    write(w, *this);
    return hash_tagged(HashTag::Message, w.data());
}

/// Section of a sender: the 256-bit id space split into k equal contiguous
/// ranges, decided by the leading 64 bits.
inline std::uint32_t section_of(const AccountId& sender, std::uint32_t k)
{
    if (k == 0) throw std::invalid_argument("k must be positive");
    std::uint64_t lead = 0;
    for (int i = 0; i < 8; ++i) lead = lead << 8 | sender.bytes[i];
    return static_cast<std::uint32_t>((static_cast<unsigned __int128>(lead) * k) >> 64);
}

/// Header `other` field: k followed by the k+1 section start offsets.
inline Bytes encode_layout(const std::vector<std::uint32_t>& boundaries)
{
    Writer w;
    w.u16(static_cast<std::uint16_t>(boundaries.size() - 1));
    for (auto b : boundaries) w.u32(b);
    return std::move(w).take();
}

/// Boundaries for k sections, or nullopt if the field is malformed.
inline std::optional<std::vector<std::uint32_t>> decode_layout(const Header& h, std::uint32_t k)
{
    try {
        Reader r(h.other);
        if (r.u16() != k) return std::nullopt;
        std::vector<std::uint32_t> b;
        for (std::uint32_t i = 0; i <= k; ++i) b.push_back(r.u32());
        r.expect_done();
        if (b.front() != 0 || b.back() != h.len) return std::nullopt;
        if (!std::is_sorted(b.begin(), b.end())) return std::nullopt;
        return b;
    } catch (const DecodeError&) {
        return std::nullopt;
    }
}

inline std::vector<std::uint32_t> compute_layout(const std::vector<Transaction>& sorted, std::uint32_t k)
{
    std::vector<std::uint32_t> b(k + 1, static_cast<std::uint32_t>(sorted.size()));
    b[0] = 0;
    for (std::uint32_t s = 1; s < k; ++s) {
        std::uint32_t pos = 0;
        while (pos < sorted.size() && section_of(sorted[pos].sender, k) < s) ++pos;
        b[s] = pos;
    }
    return b;
}

// ---------------------------------------------------------------------------
// Chain parameters and header storage

struct ChainParams {
    cmt::TreeShape shape;
    std::shared_ptr<const cmt::TreeCodes> codes;
    std::uint32_t k = 1;
    std::uint64_t tau = kNoExpiry;
    SigScheme scheme = SigScheme::Ed25519;
};

inline ChainParams make_chain_params(std::uint32_t block_capacity, std::size_t symbol_size, std::uint32_t k,
                                     std::uint64_t tau, SigScheme scheme, std::uint64_t code_seed,
                                     std::uint32_t top_max_data = 4)
{
    ChainParams p;
    p.shape = cmt::TreeShape(block_capacity, symbol_size, top_max_data);
    p.codes = cmt::make_tree_codes(p.shape, code_seed);
    p.k = k;
    p.tau = tau;
    p.scheme = scheme;
    return p;
}

class HeaderChain {
public:
    void add(const Header& h) { headers_[h.height] = h; }
    bool contains(std::uint64_t height) const { return headers_.count(height) != 0; }
    const Header& at(std::uint64_t height) const
    {
        auto it = headers_.find(height);
        if (it == headers_.end()) throw ChainError("insufficient chain");
        return it->second;
    }
    std::size_t size() const { return headers_.size(); }
    void remove(std::uint64_t height) { headers_.erase(height); }

private:
    std::map<std::uint64_t, Header> headers_;
};

inline bool verify_inclusion(const ChainParams& params, const HeaderChain& chain, const Transaction& txn,
                             const TxnInclusion& inc)
{
    if (!chain.contains(inc.height)) return false;
    const Header& h = chain.at(inc.height);
    if (inc.position >= h.len) return false;
    Bytes symbol;
    try {
        symbol = to_symbol(txn, params.shape.base_symbol_size());
    } catch (const std::length_error&) {
        return false;
    }
    return cmt::verify_symbol(params.shape, h.root, {params.shape.bottom(), inc.position}, symbol, inc.path);
}

inline bool verify_funding(const ChainParams& params, const Header& h, const FundingProof& fp)
{
    if (fp.position >= h.len) return false;
    Writer head;
    head.bytes(fp.core);
    const cmt::SplitSymbol split{std::move(head).take(), fp.tail_digest};
    return cmt::verify_digest_at(params.shape, h.root, {params.shape.bottom(), fp.position}, cmt::split_digest(split),
                                 fp.path);
}

// ---------------------------------------------------------------------------
// Spent-TXO state

struct SpentEntry {
    Transaction spender;
    TxnInclusion proof;
    std::uint64_t height = 0;
    bool operator==(const SpentEntry&) const = default;
};

class SpentTxoTable {
public:
    const SpentEntry* find(const Input& in) const
    {
        auto it = entries_.find(in);
        return it == entries_.end() ? nullptr : &it->second;
    }
    std::size_t size() const { return entries_.size(); }
    const std::map<Input, SpentEntry>& entries() const { return entries_; }

    void insert(const Input& in, SpentEntry e)
    {
        auto [it, fresh] = entries_.emplace(in, e);
        if (!fresh && !(it->second == e)) throw std::logic_error("conflicting state");
    }

    std::size_t prune_before(std::uint64_t height)
    {
        return std::erase_if(entries_, [&](const auto& kv) { return kv.second.height < height; });
    }

    bool operator==(const SpentTxoTable&) const = default;

private:
    std::map<Input, SpentEntry> entries_;
};

/// Records every input of an accepted transaction.
inline void update_state(SpentTxoTable& table, const Transaction& txn, const TxnInclusion& inc)
{
    for (const auto& in : txn.inputs) table.insert(in, {txn, inc, inc.height});
}

/// Drops entries spent before current - tau.
inline std::size_t prune_expired(SpentTxoTable& table, std::uint64_t current, std::uint64_t tau)
{
    if (tau == 0) throw std::invalid_argument("tau must be positive");
    if (tau == kNoExpiry || current <= tau) return 0;
    return table.prune_before(current - tau);
}

// ---------------------------------------------------------------------------
// Validation

enum class Violation { None, Signature, Sums, InputProof, Expired, DoubleSpend };

inline std::string to_string(Violation v)
{
    switch (v) {
    case Violation::None: return "none";
    case Violation::Signature: return "bad signature";
    case Violation::Sums: return "bad sums";
    case Violation::InputProof: return "bad input proof";
    case Violation::Expired: return "expired input";
    case Violation::DoubleSpend: return "double spend";
    }
    return "?";
}

/// Checks 1-3 (signature, sums, input proofs including expiry), which need
/// only the header chain. Throws ChainError if a referenced header is absent.
inline Violation check_stateless(const ChainParams& params, const HeaderChain& chain, const Transaction& txn,
                                 std::uint64_t height)
{
    const Bytes core = txn.core();
    const Digest id = txid_of_core(core);
    if (!verify_signature(params.scheme, txn.sender, id.view(), txn.signature)) return Violation::Signature;

    if (txn.inputs.empty() || txn.outputs.empty() || txn.inputs.size() > kMaxInputs ||
        txn.outputs.size() > kMaxOutputs)
        return Violation::Sums;
    if (txn.input_proofs.size() != txn.inputs.size()) return Violation::InputProof;

    std::vector<TxnCore> funding;
    std::uint64_t in_sum = 0, out_sum = 0;
    for (std::size_t j = 0; j < txn.inputs.size(); ++j) {
        try {
            funding.push_back(parse_core(txn.input_proofs[j].core));
        } catch (const DecodeError&) {
            return Violation::InputProof;
        }
        const auto idx = txn.inputs[j].output_index;
        if (idx == 0 || idx > funding.back().outputs.size()) return Violation::InputProof;
        const auto amount = funding.back().outputs[idx - 1].amount;
        if (in_sum > std::numeric_limits<std::uint64_t>::max() - amount) return Violation::Sums;
        in_sum += amount;
    }
    for (const auto& o : txn.outputs) {
        if (out_sum > std::numeric_limits<std::uint64_t>::max() - o.amount) return Violation::Sums;
        out_sum += o.amount;
    }
    if (in_sum != out_sum) return Violation::Sums;

    std::vector<Input> seen(txn.inputs);
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) return Violation::InputProof;
    bool expired = false;
    for (std::size_t j = 0; j < txn.inputs.size(); ++j) {
        const auto& fp = txn.input_proofs[j];
        const auto& in = txn.inputs[j];
        if (txid_of_core(fp.core) != in.txid) return Violation::InputProof;
        if (funding[j].outputs[in.output_index - 1].recipient != txn.sender) return Violation::InputProof;
        if (fp.height >= height) return Violation::InputProof;
        if (!verify_funding(params, chain.at(fp.height), fp)) return Violation::InputProof;
        if (params.tau != kNoExpiry && height - fp.height > params.tau) expired = true;
    }
    return expired ? Violation::Expired : Violation::None;
}

struct ValidationResult {
    Violation violation = Violation::None;
    const SpentEntry* conflict = nullptr;
    bool ok() const { return violation == Violation::None; }
};

/// All four checks. `pending` holds spends from earlier transactions of the
/// block being validated.
inline ValidationResult validate_txn(const ChainParams& params, const HeaderChain& chain, const SpentTxoTable& table,
                                     const Transaction& txn, std::uint64_t height,
                                     const SpentTxoTable* pending = nullptr)
{
    ValidationResult r;
    r.violation = check_stateless(params, chain, txn, height);
    if (!r.ok()) return r;
    for (const auto& in : txn.inputs) {
        const SpentEntry* e = table.find(in);
        if (!e && pending) e = pending->find(in);
        if (e) {
            r.violation = Violation::DoubleSpend;
            r.conflict = e;
            return r;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Fraud proofs

struct FraudProof {
    Transaction invalid_txn;
    TxnInclusion invalid_proof;
    std::optional<Transaction> past_txn;
    std::optional<TxnInclusion> past_proof;
    bool operator==(const FraudProof&) const = default;
};

inline FraudProof make_fraud_proof(const Transaction& txn, const TxnInclusion& inc, const ValidationResult& r)
{
    FraudProof fp{txn, inc, std::nullopt, std::nullopt};
    if (r.violation == Violation::DoubleSpend && r.conflict) {
        fp.past_txn = r.conflict->spender;
        fp.past_proof = r.conflict->proof;
    }
    return fp;
}

/// Validates a transaction and, on failure, fills `proof`.
inline bool is_valid_txn(const ChainParams& params, const HeaderChain& chain, const SpentTxoTable& table,
                         const Transaction& txn, const TxnInclusion& inc, FraudProof* proof = nullptr,
                         const SpentTxoTable* pending = nullptr)
{
    auto r = validate_txn(params, chain, table, txn, inc.height, pending);
    if (!r.ok() && proof) *proof = make_fraud_proof(txn, inc, r);
    return r.ok();
}

inline bool inputs_intersect(const Transaction& a, const Transaction& b)
{
    for (const auto& x : a.inputs)
        for (const auto& y : b.inputs)
            if (x == y) return true;
    return false;
}

inline bool is_valid_fraud_proof(const ChainParams& params, const HeaderChain& chain, const FraudProof& fp)
{
    try {
        if (fp.past_txn.has_value() != fp.past_proof.has_value()) return false;
        if (!verify_inclusion(params, chain, fp.invalid_txn, fp.invalid_proof)) return false;
        if (fp.past_txn) {
            const auto& pp = *fp.past_proof;
            if (pp.height > fp.invalid_proof.height) return false;
            if (pp.height == fp.invalid_proof.height && pp.position == fp.invalid_proof.position) return false;
            if (!verify_inclusion(params, chain, *fp.past_txn, pp)) return false;
        }
        if (check_stateless(params, chain, fp.invalid_txn, fp.invalid_proof.height) != Violation::None) return true;
        if (fp.past_txn && inputs_intersect(fp.invalid_txn, *fp.past_txn)) return true;
        return false;
    } catch (const ChainError&) {
        return false;
    }
}

/// Two transactions of one block whose order contradicts sender order.
struct SortingFraudProof {
    Transaction first;
    TxnInclusion first_proof;
    Transaction second;
    TxnInclusion second_proof;
    bool operator==(const SortingFraudProof&) const = default;
};

inline bool is_valid_sorting_proof(const ChainParams& params, const HeaderChain& chain, const SortingFraudProof& p)
{
    if (p.first_proof.height != p.second_proof.height) return false;
    if (p.first_proof.position >= p.second_proof.position) return false;
    if (!verify_inclusion(params, chain, p.first, p.first_proof)) return false;
    if (!verify_inclusion(params, chain, p.second, p.second_proof)) return false;
    return p.second.sender < p.first.sender;
}

/// A transaction inside the range the header assigns to one section whose
/// sender belongs to another.
struct BoundaryFraudProof {
    Transaction txn;
    TxnInclusion proof;
    bool operator==(const BoundaryFraudProof&) const = default;
};

inline std::uint32_t section_at(const std::vector<std::uint32_t>& boundaries, std::uint32_t position)
{
    const auto it = std::upper_bound(boundaries.begin(), boundaries.end(), position);
    return static_cast<std::uint32_t>(it - boundaries.begin()) - 1;
}

inline bool is_valid_boundary_proof(const ChainParams& params, const HeaderChain& chain, const BoundaryFraudProof& p)
{
    if (!verify_inclusion(params, chain, p.txn, p.proof)) return false;
    const auto layout = decode_layout(chain.at(p.proof.height), params.k);
    if (!layout) return false;
    return section_at(*layout, p.proof.position) != section_of(p.txn.sender, params.k);
}

/// A committed symbol inside the block's length that is not a transaction.
struct MalformedFraudProof {
    Bytes symbol;
    TxnInclusion proof;
    bool operator==(const MalformedFraudProof&) const = default;
};

inline bool is_malformed_symbol(ByteView symbol)
{
    try {
        return !from_symbol(symbol).has_value();
    } catch (const DecodeError&) {
        return true;
    }
}

inline bool is_valid_malformed_proof(const ChainParams& params, const HeaderChain& chain, const MalformedFraudProof& p)
{
    if (!chain.contains(p.proof.height)) return false;
    const Header& h = chain.at(p.proof.height);
    if (p.proof.position >= h.len) return false;
    if (!cmt::verify_symbol(params.shape, h.root, {params.shape.bottom(), p.proof.position}, p.symbol, p.proof.path))
        return false;
    return is_malformed_symbol(p.symbol);
}

/// First adjacent pair out of sender order, if any.
inline std::optional<std::pair<std::uint32_t, std::uint32_t>> find_inversion(const std::vector<Transaction>& txns)
{
    for (std::uint32_t i = 1; i < txns.size(); ++i)
        if (txns[i].sender < txns[i - 1].sender) return std::make_pair(i - 1, i);
    return std::nullopt;
}

// Wire formats for fraud proofs.
inline void write(Writer& w, const FraudProof& p)
{
    write(w, p.invalid_txn);
    write(w, p.invalid_proof);
    w.u8(p.past_txn ? 1 : 0);
    if (p.past_txn) {
        write(w, *p.past_txn);
        write(w, *p.past_proof);
    }
}

inline FraudProof read_fraud_proof(Reader& r)
{
    FraudProof p;
    p.invalid_txn = read_transaction(r);
    p.invalid_proof = read_inclusion(r);
    const auto flag = r.u8();
    if (flag > 1) throw DecodeError("bad flag");
    if (flag) {
        p.past_txn = read_transaction(r);
        p.past_proof = read_inclusion(r);
    }
    return p;
}

inline void write(Writer& w, const SortingFraudProof& p)
{
    write(w, p.first);
    write(w, p.first_proof);
    write(w, p.second);
    write(w, p.second_proof);
}

inline SortingFraudProof read_sorting_proof(Reader& r)
{
    SortingFraudProof p;
    p.first = read_transaction(r);
    p.first_proof = read_inclusion(r);
    p.second = read_transaction(r);
    p.second_proof = read_inclusion(r);
    return p;
}

inline void write(Writer& w, const BoundaryFraudProof& p)
{
    write(w, p.txn);
    write(w, p.proof);
}

inline BoundaryFraudProof read_boundary_proof(Reader& r)
{
    BoundaryFraudProof p;
    p.txn = read_transaction(r);
    p.proof = read_inclusion(r);
    return p;
}

inline void write(Writer& w, const MalformedFraudProof& p)
{
    w.bytes(p.symbol);
    write(w, p.proof);
}

inline MalformedFraudProof read_malformed_proof(Reader& r)
{
    MalformedFraudProof p;
    p.symbol = r.bytes();
    p.proof = read_inclusion(r);
    return p;
}

template <typename T>
Bytes to_bytes(const T& v)
{
    Writer w;
    write(w, v);
    return std::move(w).take();
}

// ---------------------------------------------------------------------------
// Blocks

struct Block {
    Header header;
    std::vector<Transaction> txns;
    cmt::CodedMerkleTree tree;

    std::uint64_t height() const { return header.height; }

    TxnInclusion inclusion(std::uint32_t position) const
    {
        return {header.height, position, tree.symbol_proof({tree.shape().bottom(), position})};
    }

    FundingProof funding_proof(std::uint32_t position) const
    {
        const auto& symbol = tree.symbol({tree.shape().bottom(), position});
        auto split = cmt::split_symbol(symbol);
        Reader r(split.head);
        return {header.height, position, r.bytes(), split.tail_digest,
                tree.symbol_proof({tree.shape().bottom(), position})};
    }
};

struct BlockOptions {
    bool keep_order = false;                                 // skip sorting by sender
    std::optional<std::vector<std::uint32_t>> boundaries;    // override the header layout
    std::map<std::uint32_t, Bytes> raw_symbols;              // replace base symbols
    cmt::LayerTamper tamper;                                 // corrupt the encoding
};

inline void sort_by_sender(std::vector<Transaction>& txns)
{
    std::stable_sort(txns.begin(), txns.end(),
                     [](const Transaction& a, const Transaction& b) { return a.sender < b.sender; });
}

inline Block assemble_block(const ChainParams& params, const Digest& prev_hash, std::uint64_t height,
                            std::vector<Transaction> txns, const BlockOptions& opt = {})
{
    if (txns.size() > params.shape.base_count()) throw std::length_error("too many transactions for block");
    if (!opt.keep_order) sort_by_sender(txns);
    std::vector<Bytes> symbols;
    symbols.reserve(txns.size());
    for (const auto& t : txns) symbols.push_back(to_symbol(t, params.shape.base_symbol_size()));
    for (const auto& [pos, bytes] : opt.raw_symbols) {
        if (pos >= params.shape.base_count()) throw std::out_of_range("raw symbol position");
        if (symbols.size() <= pos) symbols.resize(pos + 1, Bytes(params.shape.base_symbol_size(), 0));
        symbols[pos] = bytes;
    }
    Block b;
    b.txns = std::move(txns);
    b.tree = cmt::build_tree(symbols, params.codes, opt.tamper);
    b.header.prev_hash = prev_hash;
    b.header.root = b.tree.root();
    b.header.len = static_cast<std::uint32_t>(std::max(b.txns.size(), symbols.size()));
    b.header.height = height;
    b.header.other = encode_layout(opt.boundaries ? *opt.boundaries : compute_layout(b.txns, params.k));
    return b;
}

// Block file: header, transaction count, transactions.
inline Bytes export_block(const Block& b)
{
    Writer w;
    write(w, b.header);
    w.u32(static_cast<std::uint32_t>(b.txns.size()));
    for (const auto& t : b.txns) write(w, t);
    return std::move(w).take();
}

/// Rebuilds the tree and insists it matches the stored header.
inline Block import_block(const ChainParams& params, ByteView data)
{
    Reader r(data);
    Header h = read_header(r);
    const auto n = r.u32();
    std::vector<Transaction> txns;
    for (std::uint32_t i = 0; i < n; ++i) txns.push_back(read_transaction(r));
    r.expect_done();
    BlockOptions opt;
    opt.keep_order = true;
    opt.boundaries = decode_layout(h, params.k);
    if (!opt.boundaries) throw DecodeError("block layout malformed");
    Block b = assemble_block(params, h.prev_hash, h.height, std::move(txns), opt);
    b.header.other = h.other;
    if (!(b.header == h)) throw DecodeError("block does not match its header");
    return b;
}

// ---------------------------------------------------------------------------
// Chain construction for tests and simulations

/// Builds a chain while remembering where every output lives, so new
/// transactions can cite their funding. It does not refuse double spends.
class ChainBuilder {
public:
    struct OutputRecord {
        Output out;
        FundingProof proof;
        bool spent = false;
    };

    explicit ChainBuilder(ChainParams params) : params_(std::move(params)) {}

    const ChainParams& params() const { return params_; }
    const std::vector<Block>& blocks() const { return blocks_; }
    const Block& block(std::uint64_t h) const { return blocks_.at(h); }
    std::uint64_t next_height() const { return blocks_.size(); }
    Digest tip_hash() const { return blocks_.empty() ? Digest{} : blocks_.back().header.hash(); }

    KeyPair account(std::uint64_t label) const { return keypair_from_seed(params_.scheme, label); }

    HeaderChain headers() const
    {
        HeaderChain c;
        for (const auto& b : blocks_) c.add(b.header);
        return c;
    }

    /// Height-0 block; trusted, never validated. Each recipient gets one
    /// output, up to kMaxOutputs per transaction.
    const Block& genesis(const std::vector<Output>& allocations)
    {
        if (!blocks_.empty()) throw std::logic_error("genesis already built");
        std::vector<Transaction> txns;
        for (std::size_t i = 0; i < allocations.size(); i += kMaxOutputs) {
            Transaction t;
            t.sender = hash_tagged(HashTag::Seed, Bytes{static_cast<std::uint8_t>(i >> 8), static_cast<std::uint8_t>(i)});
            const auto end = std::min(allocations.size(), i + kMaxOutputs);
            t.outputs.assign(allocations.begin() + static_cast<std::ptrdiff_t>(i),
                             allocations.begin() + static_cast<std::ptrdiff_t>(end));
            txns.push_back(std::move(t));
        }
        return append(std::move(txns));
    }

    const OutputRecord& output(const Input& in) const
    {
        auto it = outputs_.find(in);
        if (it == outputs_.end()) throw std::out_of_range("unknown output");
        return it->second;
    }

    std::vector<Input> unspent_of(const AccountId& owner) const
    {
        std::vector<Input> v;
        for (const auto& [in, rec] : outputs_)
            if (!rec.spent && rec.out.recipient == owner) v.push_back(in);
        return v;
    }

    /// Signed transaction spending `inputs`, with funding proofs attached.
    Transaction pay(const KeyPair& from, const std::vector<Input>& inputs, const std::vector<Output>& outputs) const
    {
        Transaction t;
        t.sender = from.public_key;
        t.inputs = inputs;
        t.outputs = outputs;
        for (const auto& in : inputs) t.input_proofs.push_back(output(in).proof);
        t.signature = sign(from, t.txid().view());
        return t;
    }

    const Block& append(std::vector<Transaction> txns, const BlockOptions& opt = {})
    {
        Block b = assemble_block(params_, tip_hash(), next_height(), std::move(txns), opt);
        for (std::uint32_t pos = 0; pos < b.txns.size(); ++pos) {
            const auto& t = b.txns[pos];
            if (opt.raw_symbols.count(pos)) continue;
            for (const auto& in : t.inputs)
                if (auto it = outputs_.find(in); it != outputs_.end()) it->second.spent = true;
            const Digest id = t.txid();
            const auto fp = b.funding_proof(pos);
            for (std::size_t j = 0; j < t.outputs.size(); ++j)
                outputs_[Input{id, static_cast<std::uint16_t>(j + 1)}] = {t.outputs[j], fp, false};
        }
        blocks_.push_back(std::move(b));
        return blocks_.back();
    }

    /// Position of a transaction in a block.
    std::uint32_t position_of(std::uint64_t height, const Digest& txid) const
    {
        const auto& txns = blocks_.at(height).txns;
        for (std::uint32_t i = 0; i < txns.size(); ++i)
            if (txns[i].txid() == txid) return i;
        throw std::out_of_range("transaction not in block");
    }

private:
    ChainParams params_;
    std::vector<Block> blocks_;
    std::map<Input, OutputRecord> outputs_;
};

} // namespace cover::ledger
