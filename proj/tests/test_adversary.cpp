#include <catch_amalgamated.hpp>

#include "cover/adversary.hpp"
#include "fixtures.hpp"

using namespace cover;
using namespace cover::adversary;
using protocol::Decision;
using protocol::Reason;
using protocol::ValidatorNode;

namespace {

ledger::ChainParams tree_params(std::shared_ptr<const cmt::TreeCodes> codes, std::uint32_t k = 1)
{
    ledger::ChainParams p;
    p.shape = codes->shape;
    p.codes = std::move(codes);
    p.k = k;
    p.scheme = SigScheme::TestKeyed;
    return p;
}

struct Network {
    netsim::NetworkGraph g;
    std::vector<std::unique_ptr<ValidatorNode>> owned;
    std::vector<ValidatorNode*> slots;

    explicit Network(netsim::NetworkGraph graph) : g(std::move(graph)), owned(g.n), slots(g.n, nullptr) {}

    ValidatorNode& add(NodeId v, const ledger::ChainParams& params, std::uint32_t section, std::uint64_t seed,
                       protocol::ProtocolConfig cfg = {})
    {
        owned[v] = std::make_unique<ValidatorNode>(v, params, section, seed, cfg);
        slots[v] = owned[v].get();
        return *owned[v];
    }
    protocol::RoundResult round(const protocol::Publication& pub, protocol::RoundOptions opt = {})
    {
        auto r = protocol::run_round(g, slots, pub, opt);
        protocol::finish_round(slots);
        return r;
    }
};

const protocol::ProtocolConfig kTreeOnly{0, false};

std::map<SymbolId, cmt::RevealedSymbol> revealed(const protocol::Publication& p)
{
    return {p.symbols.begin(), p.symbols.end()};
}

const Workload& shared_workload()
{
    static const Workload w(ledger::make_chain_params(64, 2048, 4, 5, SigScheme::TestKeyed, 21),
                            {24, 4, 4, 7, 8, 3});
    return w;
}

} // namespace

TEST_CASE("hiding requires a genuine stopping set")
{
    auto codes = cmt::make_tree_codes(cmt::TreeShape(64, 64), 17);
    const auto bottom = codes->shape.bottom();
    auto data = fixtures::random_symbols(64, 64, 2);
    CHECK_THROWS(produce_tree(HideStoppingSet{bottom, {0}}, data, codes));
    CHECK_THROWS(produce_tree(HideStoppingSet{bottom + 1, {0}}, data, codes));

    auto stop = ldpc::find_small_stopping_set(codes->at(bottom), 9);
    auto made = produce_tree(HideStoppingSet{bottom, stop}, data, codes);
    CHECK(made.withheld.size() == stop.size());
    auto res = cmt::decode_tree_classical(made.tree.root(), revealed(made.publication), *codes);
    REQUIRE(std::holds_alternative<cmt::Unavailable>(res));
    CHECK(std::get<cmt::Unavailable>(res).layer == bottom);
}

TEST_CASE("coding fraud commits to a bad parity and hides the altered symbol")
{
    auto codes = cmt::make_tree_codes(cmt::TreeShape(64, 64), 5);
    const auto& shape = codes->shape;
    auto data = fixtures::random_symbols(64, 64, 8);
    for (std::uint32_t layer : {shape.bottom(), shape.bottom() - 1}) {
        CodingFraud f{layer, 3, Bytes{0x5a, 0x01}};
        auto made = produce_tree(f, data, codes);
        const auto target = fraud_target(shape, codes->at(layer), layer, 3);
        CHECK(made.withheld == std::set<SymbolId>{{layer, target}});
        // every published symbol still verifies against the root
        for (const auto& [id, rs] : made.publication.symbols)
            CHECK(cmt::verify_symbol(shape, made.tree.root(), id, rs.bytes, rs.proof));
        auto res = cmt::decode_tree_classical(made.tree.root(), revealed(made.publication), *codes);
        REQUIRE(std::holds_alternative<cmt::Fraud>(res));
        CHECK(std::get<cmt::Fraud>(res).proof.layer == layer);
        CHECK(cmt::verify_coding_fraud_proof(made.tree.root(), std::get<cmt::Fraud>(res).proof, *codes));
    }
    CHECK_THROWS(produce_tree(CodingFraud{shape.bottom(), 0, Bytes{0}}, data, codes));
    CHECK_THROWS(produce_tree(CodingFraud{shape.bottom(), 100000, Bytes{1}}, data, codes));
}

TEST_CASE("coding fraud is rejected by the whole network")
{
    auto codes = cmt::make_tree_codes(cmt::TreeShape(64, 64), 5);
    auto params = tree_params(codes);
    auto made = produce_tree(CodingFraud{codes->shape.bottom(), 7, Bytes{0xff}},
                             fixtures::random_symbols(64, 64, 9), codes);
    Network net(netsim::generate_graph(12, 0.4, 3));
    for (NodeId v = 0; v < 12; ++v) net.add(v, params, 0, 500 + v, {codes->shape.width(codes->shape.bottom()), false});
    auto r = net.round(made.publication);
    CHECK(r.unanimous(Decision::Reject));
    for (const auto& n : r.nodes) CHECK(n.verdict.reason == Reason::CodingFraud);
}

TEST_CASE("random withholding at the extremes")
{
    auto codes = cmt::make_tree_codes(cmt::TreeShape(16, 32), 1);
    auto data = fixtures::random_symbols(16, 32, 1);
    CHECK(produce_tree(WithholdRandom{0.0, 4}, data, codes).withheld.empty());
    auto all = produce_tree(WithholdRandom{1.0, 4}, data, codes);
    CHECK(all.withheld.size() == codes->shape.total_symbols());
    CHECK(all.publication.symbols.empty());
    auto half = produce_tree(WithholdRandom{0.5, 4}, data, codes);
    CHECK(half.withheld == produce_tree(WithholdRandom{0.5, 4}, data, codes).withheld);
    CHECK(half.withheld.size() > 0);
    CHECK(half.withheld.size() < codes->shape.total_symbols());
    CHECK_THROWS(produce_tree(WithholdRandom{1.5, 4}, data, codes));
    CHECK_THROWS(produce_tree(InvalidTxn{}, data, codes));
}

TEST_CASE("workload transactions are valid for the next height")
{
    const auto& w = shared_workload();
    const auto& params = w.params();
    const auto headers = w.chain().headers();
    Rng rng(1);
    auto txns = w.transactions(8, rng);
    std::set<AccountId> senders;
    for (const auto& t : txns) {
        CHECK(ledger::check_stateless(params, headers, t, w.chain().next_height()) == ledger::Violation::None);
        senders.insert(t.sender);
    }
    CHECK(senders.size() == txns.size());
}

TEST_CASE("each invalid class is the violation it claims to be")
{
    const auto& w = shared_workload();
    const auto& params = w.params();
    const auto headers = w.chain().headers();
    const auto next = w.chain().next_height();
    Rng rng(2);
    CHECK(ledger::check_stateless(params, headers, w.invalid(InvalidClass::BadSig, rng), next) ==
          ledger::Violation::Signature);
    CHECK(ledger::check_stateless(params, headers, w.invalid(InvalidClass::BadSum, rng), next) ==
          ledger::Violation::Sums);
    CHECK(ledger::check_stateless(params, headers, w.invalid(InvalidClass::BadInputProof, rng), next) ==
          ledger::Violation::InputProof);
    CHECK(ledger::check_stateless(params, headers, w.invalid(InvalidClass::Expired, rng), next) ==
          ledger::Violation::Expired);
    auto ds = w.invalid(InvalidClass::DoubleSpend, rng);
    CHECK(ledger::check_stateless(params, headers, ds, next) == ledger::Violation::None);
    CHECK(w.chain().output(ds.inputs.front()).spent);
    CHECK_THROWS(w.invalid(InvalidClass::Unsorted, rng));
}

TEST_CASE("invalid blocks are rejected when every section is watched")
{
    const auto& w = shared_workload();
    const auto& params = w.params();
    for (auto cls : {InvalidClass::BadSig, InvalidClass::BadSum, InvalidClass::BadInputProof, InvalidClass::DoubleSpend,
                     InvalidClass::Expired, InvalidClass::Unsorted}) {
        CAPTURE(to_string(cls));
        Rng rng(static_cast<std::uint64_t>(cls) + 10);
        auto made = produce_block(InvalidTxn{cls}, w.transactions(8, rng), w, rng);
        Network net(netsim::generate_graph(8, 0.6, 4));
        for (NodeId v = 0; v < 8; ++v) net.add(v, params, v % params.k, 700 + v).sync(w.chain());
        auto r = net.round(made.publication);
        CHECK(r.unanimous(Decision::Reject));
        CHECK(r.nodes[0].verdict.reason == Reason::FraudProof);
        if (made.invalid_txid) {
            bool found = false;
            for (auto* n : net.slots)
                if (n->emitted_fraud())
                    if (auto* fp = std::get_if<ledger::FraudProof>(&*n->emitted_fraud()))
                        found |= fp->invalid_txn.txid() == *made.invalid_txid;
            CHECK(found);
        }
    }
}

TEST_CASE("honest workload blocks are accepted")
{
    const auto& w = shared_workload();
    Rng rng(3);
    auto made = produce_block(Honest{}, w.transactions(8, rng), w, rng);
    CHECK(ledger::find_inversion(made.block.txns) == std::nullopt);
    Network net(netsim::generate_graph(8, 0.6, 4));
    for (NodeId v = 0; v < 8; ++v) net.add(v, w.params(), v % w.params().k, 800 + v).sync(w.chain());
    CHECK(net.round(made.publication).unanimous(Decision::Accept));
}

TEST_CASE("spammers cannot make honest nodes reject or store junk")
{
    const auto& w = shared_workload();
    const auto& params = w.params();
    Rng rng(4);
    auto made = produce_block(Honest{}, w.transactions(8, rng), w, rng);
    auto g = netsim::generate_graph(12, 0.6, 6, 0.25, 2);

    for (ByzantineStrategy s : {ByzantineStrategy{FakeSymbolSpam{3}}, ByzantineStrategy{FakeFraudProofSpam{3}}}) {
        CAPTURE(strategy_name(s));
        Network net(g);
        for (NodeId v = 0; v < g.n; ++v)
            if (g.honest[v]) net.add(v, params, v % params.k, 900 + v).sync(w.chain());
        protocol::RoundOptions opt;
        opt.agents = byzantine_agents(s, net.g, params, 11);
        auto r = net.round(made.publication, opt);
        CHECK(r.unanimous(Decision::Accept));
        std::uint64_t rejected_symbols = 0, rejected_proofs = 0;
        for (const auto& n : r.nodes)
            if (n.honest) {
                rejected_symbols += n.rejected_symbols;
                rejected_proofs += n.rejected_proofs;
                CHECK_FALSE(n.coding_fraud_seen);
                CHECK_FALSE(n.fraud_seen);
            }
        if (s.index() == 2) CHECK(rejected_symbols > 0);
        else CHECK(rejected_proofs > 0);
    }
}

TEST_CASE("fake fraud proofs never verify")
{
    const auto& w = shared_workload();
    const auto& params = w.params();
    Rng rng(5);
    auto made = produce_block(Honest{}, w.transactions(8, rng), w, rng);
    auto headers = w.chain().headers();
    headers.add(made.block.header);
    auto g = netsim::generate_graph(2, 1.0, 0);
    ByzantineContext ctx;
    ctx.graph = &g;
    ctx.params = &params;
    ctx.publication = &made.publication;
    Rng r(6);
    int txn_proofs = 0, parity_proofs = 0;
    for (int i = 0; i < 200; ++i) {
        auto m = fake_fraud_proof(ctx, r);
        if (m.type == netsim::MsgType::FraudProof) {
            auto p = protocol::parse_fraud_message(m);
            REQUIRE(p);
            CHECK_FALSE(protocol::verify_txn_fraud(params, headers, *p));
            ++txn_proofs;
        } else {
            auto p = protocol::parse_coding_fraud_message(m);
            REQUIRE(p);
            CHECK_FALSE(cmt::verify_coding_fraud_proof(made.block.header.root, p->second, *params.codes));
            ++parity_proofs;
        }
        auto s = fake_symbol(ctx, r);
        auto sym = protocol::parse_symbol_message(s);
        REQUIRE(sym);
        CHECK_FALSE(cmt::verify_symbol(params.shape, made.block.header.root, sym->id, sym->payload, sym->proof));
    }
    CHECK(txn_proofs > 20);
    CHECK(parity_proofs > 20);
}

TEST_CASE("byzantine reactions")
{
    auto codes = cmt::make_tree_codes(cmt::TreeShape(16, 32), 1);
    auto params = tree_params(codes);
    auto made = produce_tree(Honest{}, fixtures::random_symbols(16, 32, 3), codes);
    auto g = netsim::generate_graph(4, 1.0, 0);
    g.honest = {true, false, false, true};
    auto ctx_for = [&](NodeId self) {
        ByzantineContext c;
        c.graph = &g;
        c.self = self;
        c.params = &params;
        c.publication = &made.publication;
        return c;
    };
    const auto& [id, rs] = made.publication.symbols.front();
    auto sym = protocol::symbol_message(id, rs.bytes, rs.proof);

    auto ctx = ctx_for(1);
    CHECK(byzantine_start(Silent{}, ctx).empty());
    CHECK(byzantine_behavior(Silent{}, ctx, 0, sym).empty());

    ctx = ctx_for(1);
    CHECK(byzantine_start(FakeSymbolSpam{2}, ctx).size() == 6);
    CHECK(byzantine_behavior(FakeSymbolSpam{2}, ctx, 0, sym).size() == 2);
    CHECK(byzantine_behavior(FakeSymbolSpam{2}, ctx, 2, sym).empty());

    // the relay forwards only what it does not drop, and only to askers
    ctx = ctx_for(1);
    DropSelective drop{[&](SymbolId s) { return s == id; }};
    auto start = byzantine_start(drop, ctx);
    CHECK(start.size() == 3);
    CHECK(byzantine_behavior(drop, ctx, 3, netsim::interest_message({protocol::symbol_key(id)})).empty());
    CHECK(byzantine_behavior(drop, ctx, 0, sym).empty());
    DropSelective keep{[](SymbolId) { return false; }};
    auto out = byzantine_behavior(keep, ctx, 0, sym);
    REQUIRE(out.size() == 1);
    CHECK(out[0].to == 3);
}

TEST_CASE("selective droppers are routed around on a dense honest graph")
{
    auto codes = cmt::make_tree_codes(cmt::TreeShape(64, 64), 4);
    auto params = tree_params(codes);
    auto made = produce_tree(Honest{}, fixtures::random_symbols(64, 64, 12), codes);
    auto g = netsim::generate_graph(20, 0.5, 8, 0.3, 1);
    Network net(g);
    for (NodeId v = 0; v < g.n; ++v)
        if (g.honest[v]) net.add(v, params, 0, 1000 + v, kTreeOnly);
    protocol::RoundOptions opt;
    opt.agents = byzantine_agents(DropSelective{[](SymbolId) { return true; }}, net.g, params, 3);
    auto r = net.round(made.publication, opt);
    CHECK(r.unanimous(Decision::Accept));
}
