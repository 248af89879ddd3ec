#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "cover/cmt.hpp"
#include "cover/ledger.hpp"
#include "cover/netsim.hpp"

namespace cover::protocol {

using netsim::Message;
using netsim::MsgType;
using netsim::NodeId;
using netsim::Tick;

enum class Decision { Pending, Accept, Reject };
enum class Reason { None, Valid, FraudProof, CodingFraud, Unavailable, SamplingTimeout, InvalidHeader };

inline const char* to_string(Decision d)
{
    switch (d) {
    case Decision::Pending: return "pending";
    case Decision::Accept: return "accept";
    case Decision::Reject: return "reject";
    }
    return "?";
}

inline const char* to_string(Reason r)
{
    switch (r) {
    case Reason::None: return "none";
    case Reason::Valid: return "valid";
    case Reason::FraudProof: return "fraud_proof";
    case Reason::CodingFraud: return "coding_fraud";
    case Reason::Unavailable: return "unavailable";
    case Reason::SamplingTimeout: return "sampling_timeout";
    case Reason::InvalidHeader: return "invalid_header";
    }
    return "?";
}

struct Verdict {
    Decision decision = Decision::Pending;
    Reason reason = Reason::None;
    std::uint32_t layer = 0; // stalled layer for Unavailable
    Tick tick = 0;
    bool pending() const { return decision == Decision::Pending; }
};

// ---------------------------------------------------------------------------
// Wire messages

inline netsim::InterestKey symbol_key(cmt::SymbolId id) { return std::uint64_t{id.layer} << 32 | id.index; }
inline cmt::SymbolId symbol_of_key(netsim::InterestKey k)
{
    return {static_cast<std::uint32_t>(k >> 32), static_cast<std::uint32_t>(k)};
}

inline Message symbol_message(cmt::SymbolId id, ByteView bytes, const cmt::SymbolProof& proof)
{
    Writer w;
    w.u64(symbol_key(id));
    cmt::write_symbol(w, id, bytes, proof);
    return {MsgType::Symbol, std::move(w).take()};
}

inline std::optional<cmt::WireSymbol> parse_symbol_message(const Message& m)
{
    if (m.type != MsgType::Symbol) return std::nullopt;
    try {
        Reader r(m.payload());
        const auto key = r.u64();
        auto s = cmt::read_symbol(r);
        r.expect_done();
        if (symbol_key(s.id) != key) return std::nullopt;
        return s;
    } catch (const DecodeError&) {
        return std::nullopt;
    }
}

using TxnFraud = std::variant<ledger::FraudProof, ledger::SortingFraudProof, ledger::BoundaryFraudProof,
                              ledger::MalformedFraudProof>;

inline Message fraud_message(const TxnFraud& p)
{
    Writer w;
    w.u8(static_cast<std::uint8_t>(p.index()));
    std::visit([&](const auto& v) { ledger::write(w, v); }, p);
    return {MsgType::FraudProof, std::move(w).take()};
}

inline std::optional<TxnFraud> parse_fraud_message(const Message& m)
{
    if (m.type != MsgType::FraudProof) return std::nullopt;
    try {
        Reader r(m.payload());
        std::optional<TxnFraud> out;
        switch (r.u8()) {
        case 0: out = ledger::read_fraud_proof(r); break;
        case 1: out = ledger::read_sorting_proof(r); break;
        case 2: out = ledger::read_boundary_proof(r); break;
        case 3: out = ledger::read_malformed_proof(r); break;
        default: return std::nullopt;
        }
        r.expect_done();
        return out;
    } catch (const DecodeError&) {
        return std::nullopt;
    }
}

inline bool verify_txn_fraud(const ledger::ChainParams& params, const ledger::HeaderChain& chain, const TxnFraud& p)
{
    try {
        return std::visit(
            [&](const auto& v) {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, ledger::FraudProof>) return ledger::is_valid_fraud_proof(params, chain, v);
                else if constexpr (std::is_same_v<T, ledger::SortingFraudProof>)
                    return ledger::is_valid_sorting_proof(params, chain, v);
                else if constexpr (std::is_same_v<T, ledger::BoundaryFraudProof>)
                    return ledger::is_valid_boundary_proof(params, chain, v);
                else return ledger::is_valid_malformed_proof(params, chain, v);
            },
            p);
    } catch (const ledger::ChainError&) {
        return false;
    }
}

inline Message coding_fraud_message(std::uint64_t height, const cmt::CodingFraudProof& p)
{
    Writer w;
    w.u64(height);
    cmt::write(w, p);
    return {MsgType::CodingFraudProof, std::move(w).take()};
}

inline std::optional<std::pair<std::uint64_t, cmt::CodingFraudProof>> parse_coding_fraud_message(const Message& m)
{
    if (m.type != MsgType::CodingFraudProof) return std::nullopt;
    try {
        Reader r(m.payload());
        const auto h = r.u64();
        auto p = cmt::read_coding_fraud_proof(r);
        r.expect_done();
        return std::make_pair(h, std::move(p));
    } catch (const DecodeError&) {
        return std::nullopt;
    }
}

// ---------------------------------------------------------------------------
// Round timing and publication

struct Timing {
    Tick delta = 2;
    Tick t_pub = 4;    // miner publication
    Tick t_stall = 0;  // fixed delay before giving up on a layer
    Tick deadline = 0; // verdicts are final here
};

/// Publication after the interest exchange; stall delay long enough for a
/// message to cross any path of the graph; deadline leaves one stall delay
/// per layer plus two more for validation and the fraud window.
inline Timing default_timing(Tick delta, std::uint32_t nodes, std::uint32_t depth)
{
    Timing t;
    t.delta = delta;
    t.t_pub = delta + 2;
    t.t_stall = delta * (nodes + 1);
    t.deadline = t.t_pub + (depth + 2) * t.t_stall;
    return t;
}

/// What the miner releases: the header and a set of symbols with proofs.
struct Publication {
    ledger::Header header;
    std::vector<std::pair<cmt::SymbolId, cmt::RevealedSymbol>> symbols;
};

inline Publication publish_tree(const ledger::Header& header, const cmt::CodedMerkleTree& tree,
                                const std::set<cmt::SymbolId>& withheld = {})
{
    Publication p{header, {}};
    for (std::uint32_t l = 1; l <= tree.depth(); ++l)
        for (std::uint32_t i = 0; i < tree.shape().width(l); ++i) {
            const cmt::SymbolId id{l, i};
            if (withheld.count(id)) continue;
            p.symbols.push_back({id, {tree.symbol(id), tree.symbol_proof(id)}});
        }
    return p;
}

// ---------------------------------------------------------------------------
// Validator

struct ProtocolConfig {
    std::uint32_t c = 0;                // bottom samples; 0 means L/k
    bool validate_transactions = true;  // false: availability and decoding only
};

struct NodeStats {
    std::uint64_t hash_ops = 0;
    std::uint64_t symbols_stored = 0;
    std::uint64_t rejected_symbols = 0; // failed proof checks
    std::uint64_t rejected_proofs = 0;  // fraud proofs that did not verify
};

class ValidatorNode {
public:
    ValidatorNode(NodeId id, ledger::ChainParams params, std::uint32_t section, std::uint64_t seed,
                  ProtocolConfig cfg = {})
        : id_(id), params_(std::move(params)), section_(section), seed_(seed), cfg_(cfg)
    {
        if (section >= params_.k) throw std::invalid_argument("section out of range");
        if (cfg_.c == 0) cfg_.c = std::max<std::uint32_t>(1, params_.shape.base_count() / params_.k);
    }

    /// Uniform section in [0, k) from a node seed.
    static std::uint32_t draw_section(std::uint64_t seed, std::uint32_t k)
    {
        return static_cast<std::uint32_t>(Rng(derive_seed(seed, {0x5ec7})).below(k));
    }

    NodeId id() const { return id_; }
    std::uint32_t section() const { return section_; }
    const ledger::ChainParams& params() const { return params_; }
    const ProtocolConfig& config() const { return cfg_; }
    const ledger::HeaderChain& chain() const { return chain_; }
    const ledger::SpentTxoTable& table() const { return table_; }
    std::uint64_t next_height() const { return next_height_; }
    std::optional<std::uint32_t> warm_section() const { return warm_section_; }
    const ledger::SpentTxoTable& warm_table() const { return warm_table_; }

    /// Adopts an already agreed history: all headers, plus the spends of
    /// this node's section that have not expired.
    void sync(const ledger::ChainBuilder& history, std::optional<std::uint64_t> until = std::nullopt)
    {
        const std::uint64_t end = until ? std::min<std::uint64_t>(*until, history.next_height()) : history.next_height();
        for (std::uint64_t h = 0; h < end; ++h) {
            const auto& b = history.block(h);
            chain_.add(b.header);
            if (b.height() == 0) continue;
            for (std::uint32_t i = 0; i < b.txns.size(); ++i)
                if (ledger::section_of(b.txns[i].sender, params_.k) == section_)
                    ledger::update_state(table_, b.txns[i], b.inclusion(i));
        }
        next_height_ = end;
        tip_hash_ = end == 0 ? Digest{} : history.block(end - 1).header.hash();
        if (params_.tau != ledger::kNoExpiry) ledger::prune_expired(table_, next_height_, params_.tau);
    }

    /// From `start_height` the node also downloads the new section; after tau
    /// blocks it validates the new section and forgets the old one.
    void switch_section(std::uint32_t new_section, std::uint64_t start_height)
    {
        if (params_.tau == ledger::kNoExpiry) throw std::logic_error("section switching needs a finite tau");
        if (new_section >= params_.k) throw std::invalid_argument("section out of range");
        warm_section_ = new_section;
        warm_start_ = start_height;
        warm_table_ = {};
    }

    /// Replaces the sampled subtree for the next header only.
    void set_subtree_override(cmt::SampledSubtree t) { override_ = std::move(t); }

    // -- round interface ---------------------------------------------------

    /// Registers interests and starts the round. Returns false if the
    /// header does not extend this node's chain.
    bool on_new_header(netsim::Simulator& sim, const ledger::Header& h, const Timing& timing)
    {
        if (h.height != next_height_ || h.prev_hash != tip_hash_) return false;
        round_ = Round{};
        stats_ = {};
        round_.active = true;
        round_.header = h;
        round_.timing = timing;
        round_.id = ++round_counter_;
        chain_.add(h);

        if (warm_section_ && h.height >= warm_start_ + params_.tau) {
            section_ = *warm_section_;
            table_ = std::move(warm_table_);
            warm_table_ = {};
            warm_section_.reset();
        }
        if (params_.tau != ledger::kNoExpiry) {
            ledger::prune_expired(table_, h.height, params_.tau);
            ledger::prune_expired(warm_table_, h.height, params_.tau);
        }

        const auto& shape = params_.shape;
        std::vector<cmt::SymbolId> starts;
        if (override_) {
            round_.sample = std::move(*override_);
            override_.reset();
        } else {
            round_.sample = cmt::sample_subtree(shape, cfg_.c, derive_seed(seed_, {h.height, 0x5a}));
        }

        if (cfg_.validate_transactions) {
            auto layout = ledger::decode_layout(h, params_.k);
            if (!layout || h.len > shape.base_count()) {
                decide(sim, Decision::Reject, Reason::InvalidHeader);
                return true;
            }
            round_.layout = *layout;
            round_.range = {(*layout)[section_], (*layout)[section_ + 1]};
            if (warm_section_ && h.height >= warm_start_)
                round_.warm_range = {(*layout)[*warm_section_], (*layout)[*warm_section_ + 1]};
            for (auto [lo, hi] : {round_.range, round_.warm_range})
                for (auto p = lo; p < hi; ++p) starts.push_back({shape.bottom(), p});
        }
        round_.desired = round_.sample;
        if (!starts.empty()) {
            auto section = cmt::subtree_closure(shape, starts, true);
            for (std::uint32_t l = 0; l < shape.depth(); ++l) {
                auto& mine = round_.desired.symbols_by_layer[l];
                const auto& more = section.symbols_by_layer[l];
                std::vector<std::uint32_t> merged;
                std::set_union(mine.begin(), mine.end(), more.begin(), more.end(), std::back_inserter(merged));
                mine = std::move(merged);
            }
        }
        build_layers();

        std::vector<netsim::InterestKey> keys;
        for (std::uint32_t l = 1; l <= shape.depth(); ++l) {
            const auto& L = round_.layers[l - 1];
            for (std::uint32_t s = 0; s < shape.width(l); ++s)
                if (L.is_needed[s]) keys.push_back(symbol_key({l, s}));
        }
        interests_ = netsim::SelectiveState{};
        interests_.add_interests(keys);
        sim.send_to_neighbors(id_, netsim::interest_message(keys));

        round_.last_progress = sim.now() + timing.t_pub;
        arm_stall(sim);
        sim.set_timer(id_, sim.now() + timing.deadline, token(kDeadline));
        return true;
    }

    void on_message(netsim::Simulator& sim, NodeId from, const Message& m)
    {
        switch (m.type) {
        case MsgType::Interest:
            try {
                for (auto* backlog : interests_.on_neighbor_interest(from, netsim::read_interest(m)))
                    sim.send(id_, from, *backlog);
            } catch (const DecodeError&) {
            }
            return;
        case MsgType::Symbol: on_symbol(sim, from, m); return;
        case MsgType::FraudProof: on_fraud(sim, from, m); return;
        case MsgType::CodingFraudProof: on_coding_fraud(sim, from, m); return;
        default: return;
        }
    }

    void on_timer(netsim::Simulator& sim, std::uint64_t tok)
    {
        if (!round_.active || (tok & 0xffffffffu) != round_.id) return;
        const auto kind = tok >> 56;
        if (kind == kDeadline) finalize(sim);
        else if (kind == kStall) on_stall(sim);
    }

    /// Verdict at the deadline if nothing decided it earlier.
    void finalize(netsim::Simulator& sim)
    {
        if (!verdict_pending()) return;
        if (round_.decoded && round_.validated) decide(sim, Decision::Accept, Reason::Valid);
        else decide(sim, Decision::Reject, Reason::SamplingTimeout);
    }

    /// Applies an accepted block to the node's state, or forgets a rejected one.
    void finish_round()
    {
        if (!round_.active) return;
        if (round_.verdict.decision == Decision::Accept) {
            for (const auto& [in, e] : round_.pending.entries()) table_.insert(in, e);
            for (const auto& [in, e] : round_.warm_pending.entries())
                if (!warm_table_.find(in)) warm_table_.insert(in, e);
            next_height_ = round_.header.height + 1;
            tip_hash_ = round_.header.hash();
        } else {
            chain_.remove(round_.header.height);
        }
        round_.active = false;
    }

    // -- observation -------------------------------------------------------

    const Verdict& verdict() const { return round_.verdict; }
    bool verdict_pending() const { return round_.verdict.pending(); }
    const NodeStats& stats() const { return stats_; }
    void add_hash_ops(std::uint64_t n) { stats_.hash_ops += n; }
    bool wants(cmt::SymbolId id) const { return interests_.wants(symbol_key(id)); }
    const std::set<netsim::InterestKey>& interests() const { return interests_.interests(); }
    const cmt::SampledSubtree& sample() const { return round_.sample; }
    bool decoded() const { return round_.decoded; }
    bool validated() const { return round_.validated; }
    bool coding_fraud_seen() const { return round_.cfp_seen; }
    bool fraud_seen() const { return round_.fraud_seen; }
    const std::optional<cmt::CodingFraudProof>& emitted_coding_fraud() const { return round_.emitted_cfp; }
    const std::optional<TxnFraud>& emitted_fraud() const { return round_.emitted_fraud; }
    std::uint32_t current_layer() const { return round_.layer; }

    std::vector<std::uint32_t> desired_symbols(std::uint32_t l) const { return round_.layers.at(l - 1).desired; }
    std::vector<std::uint32_t> needed_parities(std::uint32_t l) const { return round_.layers.at(l - 1).needed_checks; }
    std::vector<std::uint32_t> needed_symbols(std::uint32_t l) const
    {
        return indices(round_.layers.at(l - 1).is_needed);
    }
    std::vector<std::uint32_t> known_desired_symbols(std::uint32_t l) const
    {
        const auto& L = round_.layers.at(l - 1);
        std::vector<std::uint32_t> v;
        for (auto s : L.desired)
            if (L.ws->known(s)) v.push_back(s);
        return v;
    }
    /// Needed symbols received from the network with a stored proof.
    std::vector<std::uint32_t> known_needed_symbols(std::uint32_t l) const
    {
        std::vector<std::uint32_t> v;
        for (const auto& [s, p] : round_.layers.at(l - 1).proofs) v.push_back(s);
        return v;
    }
    const Bytes* symbol(cmt::SymbolId id) const
    {
        const auto& L = round_.layers.at(id.layer - 1);
        return L.ws->known(id.index) ? &L.ws->value(id.index) : nullptr;
    }

private:
    static constexpr std::uint64_t kStall = 1;
    static constexpr std::uint64_t kDeadline = 2;

    struct Layer {
        std::vector<std::uint32_t> desired;
        std::vector<bool> is_desired;
        std::vector<bool> is_needed;       // symbols attached to a needed parity (desired included)
        std::vector<bool> is_needed_check;
        std::vector<std::uint32_t> needed_checks;
        std::unique_ptr<cmt::LayerWorkspace> ws;
        std::map<std::uint32_t, cmt::SymbolProof> proofs; // symbols received with proofs
        std::deque<std::uint32_t> candidates;
        std::size_t known_desired = 0;
    };

    struct Round {
        bool active = false;
        std::uint64_t id = 0;
        ledger::Header header;
        Timing timing;
        std::vector<std::uint32_t> layout;
        std::pair<std::uint32_t, std::uint32_t> range{0, 0};
        std::pair<std::uint32_t, std::uint32_t> warm_range{0, 0};
        cmt::SampledSubtree sample;
        cmt::SampledSubtree desired;
        std::vector<Layer> layers;
        std::optional<std::vector<Digest>> top;
        std::uint32_t layer = 1;
        bool decoded = false;
        bool validated = false;
        bool stopped = false;
        bool stall_armed = false;
        Tick last_progress = 0;
        Verdict verdict;
        bool cfp_seen = false;
        bool fraud_seen = false;
        std::optional<cmt::CodingFraudProof> emitted_cfp;
        std::optional<TxnFraud> emitted_fraud;
        std::set<Digest> seen;
        ledger::SpentTxoTable pending;
        ledger::SpentTxoTable warm_pending;
    };

    static std::vector<std::uint32_t> indices(const std::vector<bool>& v)
    {
        std::vector<std::uint32_t> out;
        for (std::uint32_t i = 0; i < v.size(); ++i)
            if (v[i]) out.push_back(i);
        return out;
    }

    std::uint64_t token(std::uint64_t kind) const { return kind << 56 | (round_.id & 0xffffffffu); }

    void decide(netsim::Simulator& sim, Decision d, Reason r, std::uint32_t layer = 0)
    {
        if (!round_.verdict.pending()) return;
        round_.verdict = {d, r, layer, sim.now()};
    }

    void build_layers()
    {
        const auto& shape = params_.shape;
        round_.layers.clear();
        round_.layers.resize(shape.depth());
        for (std::uint32_t l = 1; l <= shape.depth(); ++l) {
            auto& L = round_.layers[l - 1];
            const auto& code = params_.codes->at(l);
            const auto w = shape.width(l);
            L.desired = round_.desired.symbols_by_layer[l - 1];
            L.is_desired.assign(w, false);
            L.is_needed.assign(w, false);
            L.is_needed_check.assign(code.check_count(), false);
            for (auto s : L.desired) {
                L.is_desired[s] = true;
                L.is_needed[s] = true;
                for (auto c : code.symbol_checks(s)) L.is_needed_check[c] = true;
            }
            L.needed_checks = indices(L.is_needed_check);
            for (auto c : L.needed_checks)
                for (auto s : code.check_symbols(c)) L.is_needed[s] = true;
            L.ws = std::make_unique<cmt::LayerWorkspace>(code, shape.symbol_size(l));
        }
        for (auto c : round_.layers[0].needed_checks) round_.layers[0].candidates.push_back(c);
    }

    // -- symbols -----------------------------------------------------------

    void learn(std::uint32_t l, std::uint32_t s, Bytes bytes, Tick now)
    {
        auto& L = round_.layers[l - 1];
        L.ws->learn(s, std::move(bytes));
        if (L.is_desired[s]) ++L.known_desired;
        for (auto c : params_.codes->at(l).symbol_checks(s)) L.candidates.push_back(c);
        round_.last_progress = now;
        ++stats_.symbols_stored;
    }

    void on_symbol(netsim::Simulator& sim, NodeId from, const Message& m)
    {
        if (!round_.active) return;
        const auto& shape = params_.shape;
        if (m.payload().size() >= 8) {
            const auto seen = symbol_of_key(netsim::symbol_key_of(m));
            if (shape.contains(seen) && interests_.wants(symbol_key(seen)) &&
                round_.layers[seen.layer - 1].ws->known(seen.index))
                return;
        }
        auto ws = parse_symbol_message(m);
        if (!ws || !shape.contains(ws->id) || !interests_.wants(symbol_key(ws->id))) {
            ++stats_.rejected_symbols;
            return;
        }
        auto& L = round_.layers[ws->id.layer - 1];
        if (L.ws->known(ws->id.index)) return;
        if (!cmt::verify_symbol(shape, round_.header.root, ws->id, ws->payload, ws->proof)) {
            ++stats_.rejected_symbols;
            return;
        }
        if (!round_.top) round_.top = ws->proof.top_digests;
        L.proofs[ws->id.index] = std::move(ws->proof);
        learn(ws->id.layer, ws->id.index, std::move(ws->payload), sim.now());
        const auto key = symbol_key(ws->id);
        interests_.hold(key, m);
        interests_.forward(sim, id_, key, m, from == id_ ? std::nullopt : std::optional<NodeId>(from));
        progress(sim);
    }

    const Bytes* lookup(cmt::SymbolId id) const
    {
        const auto& L = round_.layers.at(id.layer - 1);
        return L.ws->known(id.index) ? &L.ws->value(id.index) : nullptr;
    }

    cmt::SymbolProof proof_for(cmt::SymbolId id) const
    {
        const auto& L = round_.layers.at(id.layer - 1);
        if (auto it = L.proofs.find(id.index); it != L.proofs.end()) return it->second;
        return cmt::proof_from_ancestors(params_.shape, id, *round_.top,
                                         [this](cmt::SymbolId a) { return lookup(a); });
    }

    Digest expected(cmt::SymbolId id) const
    {
        return cmt::expected_digest(params_.shape, id, *round_.top, [this](cmt::SymbolId a) { return lookup(a); });
    }

    void emit_coding_fraud(netsim::Simulator& sim, std::uint32_t l, std::uint32_t check, std::uint32_t target,
                           Bytes decoded, const Digest& committed)
    {
        const auto& L = round_.layers[l - 1];
        cmt::CodingFraudProof p;
        p.layer = l;
        p.check_id = check;
        p.decoded_index = target;
        p.decoded_symbol = std::move(decoded);
        p.committed_hash = committed;
        p.hash_proof = proof_for({l, target});
        for (auto s : params_.codes->at(l).check_symbols(check)) {
            if (s == target) continue;
            p.known_indices.push_back(s);
            p.known_symbols.push_back(L.ws->value(s));
            p.symbol_proofs.push_back(proof_for({l, s}));
        }
        auto m = coding_fraud_message(round_.header.height, p);
        round_.seen.insert(m.key());
        round_.emitted_cfp = std::move(p);
        round_.cfp_seen = true;
        round_.stopped = true;
        decide(sim, Decision::Reject, Reason::CodingFraud);
        sim.send_to_neighbors(id_, m);
    }

    /// Layer-by-layer peeling over needed parities, as far as known symbols allow.
    void progress(netsim::Simulator& sim)
    {
        const auto& shape = params_.shape;
        while (!round_.stopped && !round_.decoded) {
            if (!round_.top) return;
            const std::uint32_t l = round_.layer;
            auto& L = round_.layers[l - 1];
            const auto& code = params_.codes->at(l);
            while (!L.candidates.empty()) {
                const auto c = L.candidates.front();
                L.candidates.pop_front();
                if (!L.is_needed_check[c] || L.ws->unknown_count(c) != 1) continue;
                const auto s = L.ws->sole_unknown(c);
                if (!L.is_desired[s]) continue;
                Bytes value = L.ws->solve(c);
                const Digest want = expected({l, s});
                if (cmt::symbol_digest(shape, l, value) != want) {
                    emit_coding_fraud(sim, l, c, s, std::move(value), want);
                    return;
                }
                learn(l, s, value, sim.now());
                // share what we decoded
                auto m = symbol_message({l, s}, value, proof_for({l, s}));
                const auto key = symbol_key({l, s});
                interests_.hold(key, m);
                interests_.forward(sim, id_, key, m, std::nullopt);
            }
            if (L.known_desired < L.desired.size()) return;
            for (auto c : L.needed_checks) {
                if (!L.ws->fully_known(c) || L.ws->satisfied(c)) continue;
                const auto members = code.check_symbols(c);
                const auto target = members.front();
                Bytes value = L.ws->value(target);
                xor_into(value, L.ws->solve(c));
                const Digest committed = cmt::symbol_digest(shape, l, L.ws->value(target));
                emit_coding_fraud(sim, l, c, target, std::move(value), committed);
                return;
            }
            if (l == shape.depth()) {
                round_.decoded = true;
                validate_section(sim);
                return;
            }
            round_.layer = l + 1;
            auto& next = round_.layers[l];
            for (auto c : next.needed_checks) next.candidates.push_back(c);
            round_.last_progress = sim.now();
        }
    }

    void arm_stall(netsim::Simulator& sim)
    {
        if (round_.stall_armed) return;
        round_.stall_armed = true;
        sim.set_timer(id_, round_.last_progress + round_.timing.t_stall, token(kStall));
    }

    void on_stall(netsim::Simulator& sim)
    {
        round_.stall_armed = false;
        if (round_.stopped || round_.decoded) return;
        if (sim.now() >= round_.last_progress + round_.timing.t_stall) {
            round_.stopped = true;
            decide(sim, Decision::Reject, Reason::Unavailable, round_.layer);
            return;
        }
        arm_stall(sim);
    }

    // -- transactions --------------------------------------------------------

    ledger::TxnInclusion inclusion(std::uint32_t pos) const
    {
        return {round_.header.height, pos, proof_for({params_.shape.bottom(), pos})};
    }

    void emit_fraud(netsim::Simulator& sim, TxnFraud p)
    {
        auto m = fraud_message(p);
        round_.seen.insert(m.key());
        round_.emitted_fraud = std::move(p);
        round_.fraud_seen = true;
        decide(sim, Decision::Reject, Reason::FraudProof);
        sim.send_to_neighbors(id_, m);
    }

    void validate_section(netsim::Simulator& sim)
    {
        if (!cfg_.validate_transactions) {
            round_.validated = true;
            return;
        }
        const auto bottom = params_.shape.bottom();
        const auto h = round_.header.height;
        std::optional<std::pair<ledger::Transaction, std::uint32_t>> prev;
        std::vector<std::pair<ledger::Transaction, std::uint32_t>> txns;
        for (auto pos = round_.range.first; pos < round_.range.second; ++pos) {
            const Bytes& bytes = *lookup({bottom, pos});
            if (ledger::is_malformed_symbol(bytes)) {
                emit_fraud(sim, ledger::MalformedFraudProof{bytes, inclusion(pos)});
                return;
            }
            auto t = *ledger::from_symbol(bytes);
            if (ledger::section_of(t.sender, params_.k) != section_) {
                emit_fraud(sim, ledger::BoundaryFraudProof{t, inclusion(pos)});
                return;
            }
            if (prev && t.sender < prev->first.sender) {
                emit_fraud(sim, ledger::SortingFraudProof{prev->first, inclusion(prev->second), t, inclusion(pos)});
                return;
            }
            prev = std::make_pair(t, pos);
            txns.push_back({std::move(t), pos});
        }
        for (const auto& [t, pos] : txns) {
            ledger::FraudProof fp;
            const auto inc = inclusion(pos);
            if (!ledger::is_valid_txn(params_, chain_, table_, t, inc, &fp, &round_.pending)) {
                emit_fraud(sim, std::move(fp));
                return;
            }
            ledger::update_state(round_.pending, t, inc);
        }
        // new section during warm-up: record without judging
        for (auto pos = round_.warm_range.first; pos < round_.warm_range.second; ++pos) {
            const Bytes& bytes = *lookup({bottom, pos});
            if (ledger::is_malformed_symbol(bytes)) continue;
            auto t = *ledger::from_symbol(bytes);
            for (const auto& in : t.inputs)
                if (!round_.warm_pending.find(in)) round_.warm_pending.insert(in, {t, inclusion(pos), h});
        }
        round_.validated = true;
    }

    // -- fraud proofs --------------------------------------------------------

    void on_fraud(netsim::Simulator& sim, NodeId from, const Message& m)
    {
        if (!round_.active || !round_.seen.insert(m.key()).second) return;
        auto p = parse_fraud_message(m);
        if (!p || !verify_txn_fraud(params_, chain_, *p)) {
            ++stats_.rejected_proofs;
            return;
        }
        round_.fraud_seen = true;
        decide(sim, Decision::Reject, Reason::FraudProof);
        sim.send_to_neighbors(id_, m, from);
    }

    void on_coding_fraud(netsim::Simulator& sim, NodeId from, const Message& m)
    {
        if (!round_.active || !round_.seen.insert(m.key()).second) return;
        auto p = parse_coding_fraud_message(m);
        if (!p || p->first != round_.header.height ||
            !cmt::verify_coding_fraud_proof(round_.header.root, p->second, *params_.codes)) {
            ++stats_.rejected_proofs;
            return;
        }
        round_.cfp_seen = true;
        round_.stopped = true;
        decide(sim, Decision::Reject, Reason::CodingFraud);
        sim.send_to_neighbors(id_, m, from);
    }

    NodeId id_;
    ledger::ChainParams params_;
    std::uint32_t section_;
    std::uint64_t seed_;
    ProtocolConfig cfg_;

    ledger::HeaderChain chain_;
    ledger::SpentTxoTable table_;
    std::uint64_t next_height_ = 0;
    Digest tip_hash_;
    std::optional<std::uint32_t> warm_section_;
    std::uint64_t warm_start_ = 0;
    ledger::SpentTxoTable warm_table_;

    std::optional<cmt::SampledSubtree> override_;
    netsim::SelectiveState interests_;
    Round round_;
    std::uint64_t round_counter_ = 0;
    NodeStats stats_;
};

// ---------------------------------------------------------------------------
// One block round over a network

/// Behaviour of a dishonest node. The default does nothing (silent).
class DishonestAgent {
public:
    virtual ~DishonestAgent() = default;
    virtual void on_header(netsim::Simulator&, NodeId, const Publication&) {}
    virtual void on_message(netsim::Simulator&, NodeId, NodeId, const Message&) {}
};

using AgentFactory = std::function<std::unique_ptr<DishonestAgent>(NodeId)>;

struct RoundOptions {
    Tick delta = 2;
    std::optional<Tick> stall_delay;
    std::optional<Tick> deadline;
    std::uint64_t seed = 0;
    bool record_trace = false;
    AgentFactory agents;
};

struct NodeReport {
    NodeId id = 0;
    bool honest = true;
    Verdict verdict;
    std::uint64_t bytes_down = 0;
    std::uint64_t bytes_up = 0;
    std::uint64_t symbol_bytes_down = 0;
    std::uint64_t interest_bytes_down = 0;
    std::uint64_t hash_ops = 0;
    std::uint64_t symbols_stored = 0;
    std::uint64_t rejected_symbols = 0;
    std::uint64_t rejected_proofs = 0;
    bool coding_fraud_seen = false;
    bool fraud_seen = false;
    std::size_t neighbors = 0;
};

struct RoundResult {
    std::uint64_t height = 0;
    Timing timing;
    std::vector<NodeReport> nodes;
    std::vector<netsim::Delivery> trace;

    std::size_t count(Decision d) const
    {
        return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [&](const NodeReport& r) {
            return r.honest && r.verdict.decision == d;
        }));
    }
    std::size_t honest_count() const
    {
        return static_cast<std::size_t>(
            std::count_if(nodes.begin(), nodes.end(), [](const NodeReport& r) { return r.honest; }));
    }
    bool unanimous(Decision d) const { return honest_count() > 0 && count(d) == honest_count(); }
    /// Largest decision tick among honest nodes.
    Tick ticks_to_unanimity() const
    {
        Tick t = 0;
        for (const auto& r : nodes)
            if (r.honest) t = std::max(t, r.verdict.tick);
        return t;
    }
};

/// Delivers the header to every honest node, lets them register interests,
/// hands each published symbol to one random honest node that wants it, and
/// runs the network until it is quiet. `nodes[v]` is null for dishonest v.
inline RoundResult run_round(const netsim::NetworkGraph& g, const std::vector<ValidatorNode*>& nodes,
                             const Publication& pub, const RoundOptions& opt = {})
{
    if (nodes.size() != g.n) throw std::invalid_argument("one slot per graph node required");
    std::uint32_t depth = 1;
    for (auto* n : nodes)
        if (n) depth = n->params().shape.depth();
    Timing timing = default_timing(opt.delta, g.n, depth);
    if (opt.stall_delay) timing.t_stall = *opt.stall_delay;
    if (opt.deadline) timing.deadline = *opt.deadline;
    else if (opt.stall_delay) timing.deadline = timing.t_pub + (depth + 2) * timing.t_stall;

    std::vector<std::unique_ptr<DishonestAgent>> agents(g.n);
    for (NodeId v = 0; v < g.n; ++v)
        if (!nodes[v] && opt.agents) agents[v] = opt.agents(v);

    struct Dispatch : netsim::Handler {
        const std::vector<ValidatorNode*>& nodes;
        std::vector<std::unique_ptr<DishonestAgent>>& agents;
        Dispatch(const std::vector<ValidatorNode*>& n, std::vector<std::unique_ptr<DishonestAgent>>& a)
            : nodes(n), agents(a)
        {
        }
        void on_message(netsim::Simulator& sim, NodeId to, NodeId from, const Message& m) override
        {
            if (auto* n = nodes[to]) {
                const auto before = hash_op_counter();
                n->on_message(sim, from, m);
                n->add_hash_ops(hash_op_counter() - before);
            } else if (agents[to]) {
                agents[to]->on_message(sim, to, from, m);
            }
        }
        void on_timer(netsim::Simulator& sim, NodeId node, std::uint64_t token) override
        {
            if (auto* n = nodes[node]) {
                const auto before = hash_op_counter();
                n->on_timer(sim, token);
                n->add_hash_ops(hash_op_counter() - before);
            }
        }
    } dispatch(nodes, agents);

    netsim::Simulator sim(g, timing.delta, derive_seed(opt.seed, {1}), opt.record_trace);
    std::vector<bool> joined(g.n, false);
    for (NodeId v = 0; v < g.n; ++v) {
        if (auto* n = nodes[v]) {
            const auto before = hash_op_counter();
            joined[v] = n->on_new_header(sim, pub.header, timing);
            n->add_hash_ops(hash_op_counter() - before);
        } else if (agents[v]) {
            agents[v]->on_header(sim, v, pub);
        }
    }

    Rng pick(derive_seed(opt.seed, {2}));
    for (const auto& [id, rs] : pub.symbols) {
        std::vector<NodeId> takers;
        for (NodeId v = 0; v < g.n; ++v)
            if (nodes[v] && joined[v] && nodes[v]->wants(id)) takers.push_back(v);
        if (takers.empty()) continue;
        sim.deliver_at(takers[pick.below(takers.size())], timing.t_pub, symbol_message(id, rs.bytes, rs.proof));
    }
    sim.run(dispatch);

    RoundResult res;
    res.height = pub.header.height;
    res.timing = timing;
    for (NodeId v = 0; v < g.n; ++v) {
        NodeReport r;
        r.id = v;
        r.honest = nodes[v] != nullptr;
        r.neighbors = g.adj[v].size();
        const auto& c = sim.counters(v);
        r.bytes_down = c.bytes_received;
        r.bytes_up = c.bytes_sent;
        if (auto it = c.bytes_received_by_type.find(MsgType::Symbol); it != c.bytes_received_by_type.end())
            r.symbol_bytes_down = it->second;
        if (auto it = c.bytes_received_by_type.find(MsgType::Interest); it != c.bytes_received_by_type.end())
            r.interest_bytes_down = it->second;
        if (auto* n = nodes[v]) {
            r.verdict = n->verdict();
            r.hash_ops = n->stats().hash_ops;
            r.symbols_stored = n->stats().symbols_stored;
            r.rejected_symbols = n->stats().rejected_symbols;
            r.rejected_proofs = n->stats().rejected_proofs;
            r.coding_fraud_seen = n->coding_fraud_seen();
            r.fraud_seen = n->fraud_seen();
        }
        res.nodes.push_back(r);
    }
    res.trace = sim.trace();
    return res;
}

/// Closes the round on every honest node (state updates for accepted blocks).
inline void finish_round(const std::vector<ValidatorNode*>& nodes)
{
    for (auto* n : nodes)
        if (n) n->finish_round();
}

} // namespace cover::protocol
