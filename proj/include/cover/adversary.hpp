#pragma once

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "cover/ledger.hpp"
#include "cover/ldpc.hpp"
#include "cover/protocol.hpp"

namespace cover::adversary {

using cmt::SymbolId;
using ledger::Transaction;
using netsim::NodeId;

// ---------------------------------------------------------------------------
// Miner strategies

enum class InvalidClass { BadSig, BadSum, BadInputProof, DoubleSpend, Expired, Unsorted };

inline const char* to_string(InvalidClass c)
{
    switch (c) {
    case InvalidClass::BadSig: return "bad_sig";
    case InvalidClass::BadSum: return "bad_sum";
    case InvalidClass::BadInputProof: return "bad_input_proof";
    case InvalidClass::DoubleSpend: return "double_spend";
    case InvalidClass::Expired: return "expired";
    case InvalidClass::Unsorted: return "unsorted";
    }
    return "?";
}

inline InvalidClass invalid_class_from_string(const std::string& s)
{
    for (auto c : {InvalidClass::BadSig, InvalidClass::BadSum, InvalidClass::BadInputProof, InvalidClass::DoubleSpend,
                   InvalidClass::Expired, InvalidClass::Unsorted})
        if (s == to_string(c)) return c;
    throw std::invalid_argument("unknown invalid transaction class: " + s);
}

struct Honest {};
/// Withholds a stopping set of one layer.
struct HideStoppingSet {
    std::uint32_t layer = 0;
    std::vector<std::uint32_t> set;
};
/// XORs `corruption` into the lowest coded member of a check after encoding,
/// commits to the result, and withholds that symbol.
struct CodingFraud {
    std::uint32_t layer = 0;
    std::uint32_t check_id = 0;
    Bytes corruption{0x01};
};
struct InvalidTxn {
    InvalidClass cls = InvalidClass::BadSig;
};
/// Omits every symbol independently with probability `fraction`.
struct WithholdRandom {
    double fraction = 0;
    std::uint64_t seed = 0;
};

using MinerStrategy = std::variant<Honest, HideStoppingSet, CodingFraud, InvalidTxn, WithholdRandom>;

inline std::string strategy_name(const MinerStrategy& s)
{
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Honest>) return "honest";
            else if constexpr (std::is_same_v<T, HideStoppingSet>) return "hide_stopping_set";
            else if constexpr (std::is_same_v<T, CodingFraud>) return "coding_fraud";
            else if constexpr (std::is_same_v<T, InvalidTxn>) return std::string("invalid_txn:") + to_string(v.cls);
            else return "withhold_random";
        },
        s);
}

/// Coded symbol that CodingFraud alters for a check: its lowest member in
/// the coded half, or its lowest member if all are data symbols.
inline std::uint32_t fraud_target(const cmt::TreeShape& shape, const ldpc::LdpcCode& code, std::uint32_t layer,
                                  std::uint32_t check)
{
    const auto members = code.check_symbols(check);
    for (auto s : members)
        if (s >= shape.data_count(layer)) return s;
    return members.front();
}

struct TreeAttack {
    cmt::LayerTamper tamper;
    std::set<SymbolId> withheld;
};

/// Tree-level part of a strategy: how to encode and what to withhold.
inline TreeAttack tree_attack(const MinerStrategy& strategy, const cmt::TreeCodes& codes)
{
    const auto& shape = codes.shape;
    TreeAttack a;
    if (auto* h = std::get_if<HideStoppingSet>(&strategy)) {
        if (h->layer < 1 || h->layer > shape.depth()) throw std::invalid_argument("layer out of range");
        const auto& code = codes.at(h->layer);
        for (auto s : h->set)
            if (s >= code.symbol_count()) throw std::invalid_argument("symbol out of range");
        if (!ldpc::is_stopping_set(code, h->set) || ldpc::peel_residue(code, h->set).empty())
            throw std::invalid_argument("not a stopping set");
        for (auto s : h->set) a.withheld.insert({h->layer, s});
    } else if (auto* f = std::get_if<CodingFraud>(&strategy)) {
        if (f->layer < 1 || f->layer > shape.depth()) throw std::invalid_argument("layer out of range");
        const auto& code = codes.at(f->layer);
        if (f->check_id >= code.check_count()) throw std::invalid_argument("check out of range");
        if (f->corruption.empty() || all_zero(f->corruption)) throw std::invalid_argument("corruption must be nonzero");
        if (f->corruption.size() > shape.symbol_size(f->layer)) throw std::invalid_argument("corruption too long");
        const auto target = fraud_target(shape, code, f->layer, f->check_id);
        const auto layer = f->layer;
        const Bytes corruption = f->corruption;
        a.tamper = [=](std::uint32_t l, std::vector<Bytes>& symbols) {
            if (l != layer) return;
            for (std::size_t i = 0; i < corruption.size(); ++i) symbols[target][i] ^= corruption[i];
        };
        a.withheld.insert({f->layer, target});
    } else if (auto* w = std::get_if<WithholdRandom>(&strategy)) {
        if (w->fraction < 0 || w->fraction > 1) throw std::invalid_argument("fraction out of range");
        Rng rng(w->seed);
        for (std::uint32_t l = 1; l <= shape.depth(); ++l)
            for (std::uint32_t i = 0; i < shape.width(l); ++i)
                if (rng.chance(w->fraction)) a.withheld.insert({l, i});
    }
    return a;
}

struct ProducedTree {
    cmt::CodedMerkleTree tree;
    protocol::Publication publication;
    std::set<SymbolId> withheld;
};

/// Tree-only production for availability experiments (no transactions).
inline ProducedTree produce_tree(const MinerStrategy& strategy, const std::vector<Bytes>& data,
                                 std::shared_ptr<const cmt::TreeCodes> codes, std::uint64_t height = 0)
{
    if (std::holds_alternative<InvalidTxn>(strategy)) throw std::invalid_argument("tree-only blocks carry no transactions");
    auto attack = tree_attack(strategy, *codes);
    ProducedTree out;
    out.tree = cmt::build_tree(data, std::move(codes), attack.tamper);
    ledger::Header h;
    h.root = out.tree.root();
    h.len = out.tree.shape().base_count();
    h.height = height;
    out.publication = protocol::publish_tree(h, out.tree, attack.withheld);
    out.withheld = std::move(attack.withheld);
    return out;
}

// ---------------------------------------------------------------------------
// Transaction workload

/// A chain with funded accounts and a few blocks of ordinary payments, able
/// to hand out fresh valid transactions for the next height. Some accounts
/// never move their genesis funds, which gives expired outputs once the
/// chain is longer than tau.
class Workload {
public:
    struct Options {
        std::uint32_t accounts = 24;
        std::uint32_t dormant = 4;
        std::uint32_t outputs_per_account = 4;
        std::uint32_t history_blocks = 6;
        std::uint32_t txns_per_block = 8;
        std::uint64_t seed = 1;
    };

    Workload(ledger::ChainParams params, Options opt) : chain_(std::move(params)), opt_(opt)
    {
        const auto& p = chain_.params();
        if (opt.accounts <= opt.dormant + 1) throw std::invalid_argument("workload needs active accounts");
        for (std::uint32_t i = 0; i < opt.accounts; ++i) {
            auto kp = keypair_from_seed(p.scheme, derive_seed(opt.seed, {0xacc, i}));
            keys_[kp.public_key] = kp;
            (i < opt.dormant ? dormant_ : active_).push_back(kp.public_key);
        }
        std::vector<ledger::Output> alloc;
        for (const auto& id : active_)
            for (std::uint32_t j = 0; j < opt.outputs_per_account; ++j) alloc.push_back({id, 1000});
        for (const auto& id : dormant_) alloc.push_back({id, 1000});
        chain_.genesis(alloc);
        Rng rng(derive_seed(opt.seed, {0xb10c}));
        for (std::uint32_t b = 0; b < opt.history_blocks; ++b) chain_.append(transactions(opt.txns_per_block, rng));
    }

    const ledger::ChainBuilder& chain() const { return chain_; }
    const ledger::ChainParams& params() const { return chain_.params(); }
    const KeyPair& key(const AccountId& id) const { return keys_.at(id); }
    const std::vector<AccountId>& dormant() const { return dormant_; }

    /// Appends a block of (valid) transactions to the underlying chain.
    void extend(std::vector<Transaction> txns) { chain_.append(std::move(txns)); }

    /// Valid payments for the next height with distinct senders, each
    /// spending one unexpired output, newest first.
    std::vector<Transaction> transactions(std::uint32_t count, Rng& rng) const
    {
        const auto& p = chain_.params();
        const std::uint64_t next = chain_.next_height();
        std::vector<AccountId> senders = active_;
        rng.shuffle(senders);
        std::vector<Transaction> out;
        for (const auto& s : senders) {
            if (out.size() == count) break;
            std::optional<ledger::Input> best;
            std::uint64_t best_height = 0;
            for (const auto& in : chain_.unspent_of(s)) {
                const auto h = chain_.output(in).proof.height;
                if (p.tau != ledger::kNoExpiry && next - h > p.tau) continue;
                if (!best || h > best_height) best = in, best_height = h;
            }
            if (!best) continue;
            const auto amount = chain_.output(*best).out.amount;
            AccountId to = active_[rng.below(active_.size())];
            std::vector<ledger::Output> outs{{to, amount / 2}};
            if (amount - amount / 2 > 0) outs.push_back({s, amount - amount / 2});
            out.push_back(chain_.pay(keys_.at(s), {*best}, outs));
        }
        if (out.size() < count) throw std::runtime_error("workload ran out of spendable outputs");
        return out;
    }

    /// One invalid transaction of the given class for the next height.
    Transaction invalid(InvalidClass cls, Rng& rng) const
    {
        const auto& p = chain_.params();
        const std::uint64_t next = chain_.next_height();
        switch (cls) {
        case InvalidClass::BadSig: {
            auto t = transactions(1, rng).front();
            t.signature[rng.below(t.signature.size())] ^= 0x01;
            return t;
        }
        case InvalidClass::BadSum: {
            auto t = transactions(1, rng).front();
            t.outputs.front().amount += 1;
            t.signature = sign(keys_.at(t.sender), t.txid().view());
            return t;
        }
        case InvalidClass::BadInputProof: {
            auto t = transactions(1, rng).front();
            t.input_proofs.front().tail_digest.bytes[0] ^= 0x01;
            return t;
        }
        case InvalidClass::DoubleSpend: {
            // respend an input already spent by the previous block
            const auto& last = chain_.block(next - 1);
            std::vector<const Transaction*> options;
            for (const auto& t : last.txns)
                if (!t.inputs.empty() && keys_.count(t.sender) &&
                    (p.tau == ledger::kNoExpiry || next - t.input_proofs.front().height <= p.tau))
                    options.push_back(&t);
            if (options.empty()) throw std::runtime_error("no recent spend to repeat");
            const auto& prev = *options[rng.below(options.size())];
            const auto& in = prev.inputs.front();
            const auto amount = chain_.output(in).out.amount;
            return chain_.pay(keys_.at(prev.sender), {in}, {{prev.sender, amount}});
        }
        case InvalidClass::Expired: {
            if (p.tau == ledger::kNoExpiry || next <= p.tau) throw std::runtime_error("chain too short for expiry");
            const auto& s = dormant_.at(rng.below(dormant_.size()));
            const auto in = chain_.unspent_of(s).at(0);
            return chain_.pay(keys_.at(s), {in}, {{s, chain_.output(in).out.amount}});
        }
        case InvalidClass::Unsorted: break;
        }
        throw std::invalid_argument("unsorted is a block property, not a transaction");
    }

private:
    ledger::ChainBuilder chain_;
    Options opt_;
    std::map<AccountId, KeyPair> keys_;
    std::vector<AccountId> active_;
    std::vector<AccountId> dormant_;
};

struct ProducedBlock {
    ledger::Block block;
    protocol::Publication publication;
    std::set<SymbolId> withheld;
    std::optional<Digest> invalid_txid; // the embedded invalid transaction, if any
};

/// Builds the next block over `chain` from `pending` (not appended).
inline ProducedBlock produce_block(const MinerStrategy& strategy, std::vector<Transaction> pending,
                                   const Workload& work, Rng& rng)
{
    const auto& params = work.params();
    const auto& chain = work.chain();
    ledger::BlockOptions opt;
    ProducedBlock out;
    auto attack = std::holds_alternative<InvalidTxn>(strategy) ? TreeAttack{} : tree_attack(strategy, *params.codes);
    opt.tamper = attack.tamper;

    if (auto* inv = std::get_if<InvalidTxn>(&strategy)) {
        if (inv->cls == InvalidClass::Unsorted) {
            // swap two transactions of one section
            ledger::sort_by_sender(pending);
            bool swapped = false;
            for (std::size_t i = 1; i < pending.size() && !swapped; ++i)
                if (ledger::section_of(pending[i - 1].sender, params.k) ==
                        ledger::section_of(pending[i].sender, params.k) &&
                    pending[i - 1].sender != pending[i].sender) {
                    std::swap(pending[i - 1], pending[i]);
                    swapped = true;
                }
            if (!swapped) throw std::runtime_error("no same-section pair to swap");
            opt.keep_order = true;
            std::vector<Transaction> sorted = pending;
            ledger::sort_by_sender(sorted);
            opt.boundaries = ledger::compute_layout(sorted, params.k);
        } else {
            auto bad = work.invalid(inv->cls, rng);
            std::erase_if(pending, [&](const Transaction& t) { return t.sender == bad.sender; });
            if (pending.size() >= params.shape.base_count()) pending.pop_back();
            out.invalid_txid = bad.txid();
            pending.push_back(std::move(bad));
        }
    }
    out.block = ledger::assemble_block(params, chain.tip_hash(), chain.next_height(), std::move(pending), opt);
    out.publication = protocol::publish_tree(out.block.header, out.block.tree, attack.withheld);
    out.withheld = std::move(attack.withheld);
    return out;
}

// ---------------------------------------------------------------------------
// Byzantine validators

struct Silent {};
struct DropSelective {
    std::function<bool(SymbolId)> drop;
};
struct FakeSymbolSpam {
    std::uint32_t rate = 1;
};
struct FakeFraudProofSpam {
    std::uint32_t rate = 1;
};

using ByzantineStrategy = std::variant<Silent, DropSelective, FakeSymbolSpam, FakeFraudProofSpam>;

inline std::string strategy_name(const ByzantineStrategy& s)
{
    static const char* names[] = {"silent", "drop_selective", "fake_symbol_spam", "fake_fraud_proof_spam"};
    return names[s.index()];
}

struct Outgoing {
    NodeId to;
    netsim::Message msg;
};

/// What a Byzantine node knows: the graph, the block it colludes with and
/// its own relay state.
struct ByzantineContext {
    const netsim::NetworkGraph* graph = nullptr;
    NodeId self = 0;
    const ledger::ChainParams* params = nullptr;
    const protocol::Publication* publication = nullptr;
    netsim::SelectiveState relay;
    Rng rng{0};
};

/// Well-formed symbol bytes whose proof cannot verify.
inline netsim::Message fake_symbol(const ByzantineContext& ctx, Rng& rng)
{
    const auto& shape = ctx.params->shape;
    const auto layer = static_cast<std::uint32_t>(rng.between(1, shape.depth()));
    const SymbolId id{layer, static_cast<std::uint32_t>(rng.below(shape.width(layer)))};
    Bytes payload(shape.symbol_size(layer));
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng.next());
    cmt::SymbolProof proof;
    for (std::uint32_t l = 1; l < layer; ++l) {
        Bytes anc(cmt::kUpperSymbolSize);
        for (auto& b : anc) b = static_cast<std::uint8_t>(rng.next());
        proof.ancestors.push_back(std::move(anc));
    }
    for (std::uint32_t i = 0; i < shape.width(1); ++i) {
        Digest d;
        for (auto& b : d.bytes) b = static_cast<std::uint8_t>(rng.next());
        proof.top_digests.push_back(d);
    }
    return protocol::symbol_message(id, payload, proof);
}

/// A fraud proof built from real, correctly committed data that nonetheless
/// shows nothing wrong: a valid transaction with its true inclusion proof,
/// or a parity whose decoded member matches its commitment.
inline netsim::Message fake_fraud_proof(const ByzantineContext& ctx, Rng& rng)
{
    const auto& pub = *ctx.publication;
    const auto& shape = ctx.params->shape;
    std::map<SymbolId, const cmt::RevealedSymbol*> have;
    for (const auto& [id, rs] : pub.symbols) have[id] = &rs;

    if (rng.chance(0.5) && pub.header.len > 0) {
        const auto pos = static_cast<std::uint32_t>(rng.below(pub.header.len));
        auto it = have.find({shape.bottom(), pos});
        if (it != have.end()) {
            try {
                if (auto t = ledger::from_symbol(it->second->bytes)) {
                    ledger::FraudProof fp{*t, {pub.header.height, pos, it->second->proof}, std::nullopt, std::nullopt};
                    return protocol::fraud_message(fp);
                }
            } catch (const DecodeError&) {
            }
        }
    }
    // parity "fraud" with a correct decoded symbol
    const auto layer = static_cast<std::uint32_t>(rng.between(1, shape.depth()));
    const auto& code = ctx.params->codes->at(layer);
    const auto check = static_cast<std::uint32_t>(rng.below(code.check_count()));
    cmt::CodingFraudProof p;
    p.layer = layer;
    p.check_id = check;
    bool first = true;
    for (auto s : code.check_symbols(check)) {
        auto it = have.find({layer, s});
        Bytes bytes = it != have.end() ? it->second->bytes : Bytes(shape.symbol_size(layer), 0);
        cmt::SymbolProof proof = it != have.end() ? it->second->proof : cmt::SymbolProof{};
        if (first) {
            p.decoded_index = s;
            p.decoded_symbol = bytes;
            p.committed_hash = cmt::symbol_digest(shape, layer, bytes);
            p.hash_proof = proof;
            first = false;
        } else {
            p.known_indices.push_back(s);
            p.known_symbols.push_back(std::move(bytes));
            p.symbol_proofs.push_back(std::move(proof));
        }
    }
    return protocol::coding_fraud_message(pub.header.height, p);
}

/// Messages a Byzantine node sends at the start of a round.
inline std::vector<Outgoing> byzantine_start(const ByzantineStrategy& s, ByzantineContext& ctx)
{
    std::vector<Outgoing> out;
    const auto& nbrs = ctx.graph->adj[ctx.self];
    if (std::holds_alternative<DropSelective>(s)) {
        // ask for everything so honest neighbours route symbols through us
        std::vector<netsim::InterestKey> keys;
        const auto& shape = ctx.params->shape;
        for (std::uint32_t l = 1; l <= shape.depth(); ++l)
            for (std::uint32_t i = 0; i < shape.width(l); ++i) keys.push_back(protocol::symbol_key({l, i}));
        ctx.relay.add_interests(keys);
        for (auto nb : nbrs) out.push_back({nb, netsim::interest_message(keys)});
    } else if (auto* f = std::get_if<FakeSymbolSpam>(&s)) {
        for (auto nb : nbrs)
            for (std::uint32_t i = 0; i < f->rate; ++i) out.push_back({nb, fake_symbol(ctx, ctx.rng)});
    } else if (auto* f = std::get_if<FakeFraudProofSpam>(&s)) {
        for (auto nb : nbrs)
            for (std::uint32_t i = 0; i < f->rate; ++i) out.push_back({nb, fake_fraud_proof(ctx, ctx.rng)});
    }
    return out;
}

/// Reaction to one incoming message.
inline std::vector<Outgoing> byzantine_behavior(const ByzantineStrategy& s, ByzantineContext& ctx, NodeId from,
                                                const netsim::Message& in)
{
    std::vector<Outgoing> out;
    const auto& nbrs = ctx.graph->adj[ctx.self];
    if (std::holds_alternative<Silent>(s)) return out;
    if (auto* d = std::get_if<DropSelective>(&s)) {
        if (in.type == netsim::MsgType::Interest) {
            try {
                for (auto* m : ctx.relay.on_neighbor_interest(from, netsim::read_interest(in))) out.push_back({from, *m});
            } catch (const DecodeError&) {
            }
        } else if (in.type == netsim::MsgType::Symbol) {
            auto sym = protocol::parse_symbol_message(in);
            if (!sym || (d->drop && d->drop(sym->id))) return out;
            const auto key = protocol::symbol_key(sym->id);
            if (!ctx.relay.hold(key, in)) return out;
            for (auto nb : nbrs)
                if (nb != from && ctx.relay.neighbor_wants(nb, key)) out.push_back({nb, in});
        } else {
            for (auto nb : nbrs)
                if (nb != from) out.push_back({nb, in});
        }
        return out;
    }
    // spammers answer honest traffic only, so two spammers cannot feed each other
    if (!ctx.graph->honest[from]) return out;
    if (auto* f = std::get_if<FakeSymbolSpam>(&s)) {
        for (std::uint32_t i = 0; i < f->rate; ++i) out.push_back({from, fake_symbol(ctx, ctx.rng)});
    } else if (auto* f = std::get_if<FakeFraudProofSpam>(&s)) {
        if (in.type == netsim::MsgType::Interest)
            for (std::uint32_t i = 0; i < f->rate; ++i) out.push_back({from, fake_fraud_proof(ctx, ctx.rng)});
    }
    return out;
}

class ByzantineAgent : public protocol::DishonestAgent {
public:
    ByzantineAgent(ByzantineStrategy s, const netsim::NetworkGraph& g, const ledger::ChainParams& params, NodeId self,
                   std::uint64_t seed)
        : strategy_(std::move(s))
    {
        ctx_.graph = &g;
        ctx_.self = self;
        ctx_.params = &params;
        ctx_.rng = Rng(seed);
    }

    void on_header(netsim::Simulator& sim, NodeId self, const protocol::Publication& pub) override
    {
        publication_ = pub;
        ctx_.publication = &publication_;
        ctx_.relay = {};
        for (auto& o : byzantine_start(strategy_, ctx_)) sim.send(self, o.to, std::move(o.msg));
    }

    void on_message(netsim::Simulator& sim, NodeId self, NodeId from, const netsim::Message& m) override
    {
        if (!ctx_.publication) return;
        for (auto& o : byzantine_behavior(strategy_, ctx_, from, m)) sim.send(self, o.to, std::move(o.msg));
    }

private:
    ByzantineStrategy strategy_;
    ByzantineContext ctx_;
    protocol::Publication publication_;
};

inline protocol::AgentFactory byzantine_agents(ByzantineStrategy s, const netsim::NetworkGraph& g,
                                               const ledger::ChainParams& params, std::uint64_t seed)
{
    return [s = std::move(s), &g, &params, seed](NodeId v) -> std::unique_ptr<protocol::DishonestAgent> {
        return std::make_unique<ByzantineAgent>(s, g, params, v, derive_seed(seed, {v}));
    };
}

} // namespace cover::adversary
