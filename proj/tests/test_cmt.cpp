#include <catch_amalgamated.hpp>

#include <sodium.h>

#include <cmath>

#include "cover/cmt.hpp"
#include "fixtures.hpp"

using namespace cover;
using namespace cover::cmt;
using fixtures::random_symbols;

namespace {

Digest sha256(ByteView a)
{
    Digest d;
    crypto_hash_sha256(d.bytes.data(), a.data(), a.size());
    return d;
}

Bytes cat(std::initializer_list<ByteView> parts)
{
    Bytes out;
    for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

// Bottom digest recomputed from raw SHA-256 calls.
Digest bottom_digest_oracle(const Bytes& s)
{
    std::size_t head = s.size();
    if (s.size() >= 4) {
        const std::size_t declared = s[0] | s[1] << 8 | s[2] << 16 | static_cast<std::size_t>(s[3]) << 24;
        head = 4 + std::min(declared, s.size() - 4);
    }
    const std::uint8_t part = 0x03, sym = 0x02;
    auto h1 = sha256(cat({{&part, 1}, ByteView(s.data(), head)}));
    auto h2 = sha256(cat({{&part, 1}, ByteView(s.data() + head, s.size() - head)}));
    return sha256(cat({{&sym, 1}, h1.view(), h2.view()}));
}

std::map<SymbolId, RevealedSymbol> reveal_all_except(const CodedMerkleTree& t, const std::set<SymbolId>& hidden)
{
    std::map<SymbolId, RevealedSymbol> out;
    for (std::uint32_t l = 1; l <= t.depth(); ++l)
        for (std::uint32_t i = 0; i < t.shape().width(l); ++i) {
            SymbolId id{l, i};
            if (!hidden.count(id)) out[id] = {t.symbol(id), t.symbol_proof(id)};
        }
    return out;
}

// Number of bottom symbols whose path passes through `id`.
std::size_t bottom_descendants(const TreeShape& shape, SymbolId id)
{
    std::size_t n = 0;
    for (std::uint32_t i = 0; i < shape.width(shape.bottom()); ++i) {
        SymbolId cur{shape.bottom(), i};
        while (true) {
            if (cur == id) {
                ++n;
                break;
            }
            if (cur.layer == 1) break;
            cur = shape.parent(cur).first;
        }
    }
    return n;
}

double choose_ratio(std::size_t total, std::size_t avoid, std::size_t c)
{
    // C(total - avoid, c) / C(total, c)
    double r = 1.0;
    for (std::size_t i = 0; i < c; ++i) r *= double(total - avoid - i) / double(total - i);
    return total - avoid < c ? 0.0 : r;
}

} // namespace

TEST_CASE("shape arithmetic")
{
    TreeShape s(64, 256);
    CHECK(s.depth() == 5);
    CHECK(s.width(5) == 128);
    CHECK(s.width(1) == 8);
    for (std::uint32_t l = 2; l <= s.depth(); ++l) CHECK(s.width(l - 1) * 4 == s.width(l) * 2);
    CHECK(TreeShape(50, 8).base_count() == 64);
    CHECK(TreeShape(4, 8).depth() == 1);
    CHECK(s.symbol_size(5) == 256);
    CHECK(s.symbol_size(2) == 128);
    CHECK_THROWS(TreeShape(0, 8));
}

TEST_CASE("zero data gives zero coded symbols and a stable root")
{
    auto codes = make_tree_codes(TreeShape(16, 64), 7);
    auto t = build_tree(std::vector<Bytes>(16, Bytes(64, 0)), codes);
    for (const auto& s : t.layer(t.depth())) CHECK(all_zero(s));

    // independent recomputation of the bottom layer and its parents
    const auto d0 = bottom_digest_oracle(Bytes(64, 0));
    for (std::uint32_t i = 0; i < 32; ++i) CHECK(t.digest({3, i}) == d0);
    Bytes parent = cat({d0.view(), d0.view(), d0.view(), d0.view()});
    for (std::uint32_t j = 0; j < 8; ++j) CHECK(t.symbol({2, j}) == parent);

    // recorded at first build
    CHECK(to_hex(t.root()) == "63052b3e596a06501474437c9b1235b04bf584f0a3e95c599812acd92e1ba780");
    CHECK(build_tree(std::vector<Bytes>(16, Bytes(64, 0)), codes).root() == t.root());
}

TEST_CASE("digests appear in their parents")
{
    auto codes = make_tree_codes(TreeShape(16, 96), 3);
    auto data = random_symbols(16, 96, 1);
    auto t = build_tree(data, codes);
    const auto& shape = t.shape();
    for (std::uint32_t i = 0; i < 16; ++i) CHECK(t.symbol({3, i}) == data[i]);
    for (std::uint32_t i = 0; i < shape.width(3); ++i) CHECK(t.digest({3, i}) == bottom_digest_oracle(t.symbol({3, i})));
    for (std::uint32_t l = 2; l <= shape.depth(); ++l) {
        const std::uint32_t w = shape.data_count(l);
        for (std::uint32_t i = 0; i < shape.width(l); ++i) {
            // grouping rule written out independently
            const std::uint32_t j = i < w ? i / 2 : (i - w) / 2;
            const std::uint32_t q = i < w ? i % 2 : 2 + (i - w) % 2;
            const auto& p = t.symbol({l - 1, j});
            CHECK(std::equal(p.begin() + q * 32, p.begin() + q * 32 + 32, t.digest({l, i}).bytes.begin()));
        }
    }
    for (std::uint32_t l = 1; l < shape.depth(); ++l)
        for (std::uint32_t i = 0; i < shape.width(l); ++i) {
            const std::uint8_t tag = 0x02;
            CHECK(t.digest({l, i}) == sha256(cat({{&tag, 1}, t.symbol({l, i})})));
        }
    for (std::uint32_t l = 1; l <= shape.depth(); ++l) {
        const auto& code = codes->at(l);
        for (std::uint32_t c = 0; c < code.check_count(); ++c) {
            Bytes acc(shape.symbol_size(l), 0);
            for (auto s : code.check_symbols(c)) xor_into(acc, t.symbol({l, s}));
            CHECK(all_zero(acc));
        }
    }
    CHECK(build_tree(data, codes).root() == t.root());
    CHECK_THROWS_AS(build_tree({Bytes(95)}, codes), std::invalid_argument);
    CHECK_THROWS_AS(build_tree(random_symbols(17, 96, 1), codes), std::invalid_argument);
}

TEST_CASE("symbol proofs")
{
    auto codes = make_tree_codes(TreeShape(64, 80), 5);
    auto t = build_tree(random_symbols(64, 80, 2), codes);
    const auto& shape = t.shape();
    for (std::uint32_t l = 1; l <= shape.depth(); ++l)
        for (std::uint32_t i = 0; i < shape.width(l); ++i) {
            SymbolId id{l, i};
            auto p = t.symbol_proof(id);
            REQUIRE(verify_symbol(shape, t.root(), id, t.symbol(id), p));
            auto flipped = t.symbol(id);
            flipped[i % flipped.size()] ^= 0x10;
            CHECK_FALSE(verify_symbol(shape, t.root(), id, flipped, p));
            CHECK_FALSE(verify_symbol(shape, t.root(), {l, (i + 1) % shape.width(l)}, t.symbol(id), p));
        }
    SymbolId id{5, 77};
    auto p = t.symbol_proof(id);
    auto q = p;
    q.ancestors.pop_back();
    CHECK_FALSE(verify_symbol(shape, t.root(), id, t.symbol(id), q));
    q = p;
    q.top_digests[0].bytes[3] ^= 1;
    CHECK_FALSE(verify_symbol(shape, t.root(), id, t.symbol(id), q));
    q = p;
    q.ancestors[1][40] ^= 1;
    CHECK_FALSE(verify_symbol(shape, t.root(), id, t.symbol(id), q));
    CHECK_FALSE(verify_symbol(shape, t.root(), {6, 0}, t.symbol(id), p));
    CHECK_THROWS_AS(t.symbol_proof({5, 128}), std::out_of_range);

    Writer w;
    write_symbol(w, id, t.symbol(id), p);
    auto bytes = std::move(w).take();
    Reader r(bytes);
    auto ws = read_symbol(r);
    CHECK(r.done());
    CHECK(ws.id == id);
    CHECK(ws.payload == t.symbol(id));
    CHECK(ws.proof == p);
    CHECK(bytes.size() == 2 + 4 + 4 + 80 + p.wire_size());
}

TEST_CASE("subtree sampling structure")
{
    TreeShape shape(64, 64);
    auto all = sample_subtree(shape, shape.width(shape.bottom()), 1);
    CHECK(all.size() == shape.total_symbols());

    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto one = sample_subtree(shape, 1, seed);
        for (std::uint32_t l = 2; l <= shape.depth(); ++l) CHECK(one.symbols_by_layer[l - 1].size() == 4);
        CHECK(one.symbols_by_layer[0].size() == shape.width(1));
        CHECK(one.contains({shape.bottom(), one.bottom_choices[0]}));
    }

    auto a = sample_subtree(shape, 9, 77);
    auto b = sample_subtree(shape, 9, 77);
    CHECK(a.symbols_by_layer == b.symbols_by_layer);
    for (std::uint32_t l = 1; l <= shape.depth(); ++l)
        CHECK(a.symbols_by_layer[l - 1].size() >= std::min<std::size_t>(9, shape.width(l)));
    // closure: every included non-top symbol's parent and siblings are included
    for (auto id : a.ids()) {
        if (id.layer == 1) continue;
        auto parent = shape.parent(id).first;
        CHECK(a.contains(parent));
        for (auto sib : shape.children(parent)) CHECK(a.contains(sib));
    }
    CHECK_THROWS(sample_subtree(shape, 0, 1));
    CHECK_THROWS(sample_subtree(shape, 129, 1));
}

TEST_CASE("subtree inclusion frequencies match the exact marginal")
{
    TreeShape shape(16, 64);
    const std::uint32_t c = 4;
    const int trials = 10000;
    const std::size_t bottom = shape.width(shape.bottom());
    std::map<SymbolId, int> hits;
    for (int s = 0; s < trials; ++s)
        for (auto id : sample_subtree(shape, c, static_cast<std::uint64_t>(s)).ids()) ++hits[id];
    for (std::uint32_t l = 1; l <= shape.depth(); ++l)
        for (std::uint32_t i = 0; i < shape.width(l); ++i) {
            SymbolId id{l, i};
            double p = 1.0;
            if (l > 1) p = 1.0 - choose_ratio(bottom, bottom_descendants(shape, shape.parent(id).first), c);
            const double sigma = std::sqrt(trials * p * (1 - p));
            INFO("layer " << l << " index " << i << " p " << p);
            CHECK(std::abs(hits[id] - trials * p) <= 3 * sigma + 1e-9);
        }
}

TEST_CASE("classical decoding of an honest tree")
{
    auto codes = make_tree_codes(TreeShape(64, 64), 11);
    auto t = build_tree(random_symbols(64, 64, 3), codes);

    auto full = decode_tree_classical(t.root(), reveal_all_except(t, {}), *codes);
    REQUIRE(std::holds_alternative<Decoded>(full));
    for (std::uint32_t l = 1; l <= t.depth(); ++l) CHECK(std::get<Decoded>(full).layers[l - 1] == t.layer(l));

    // invalid proofs are ignored rather than fatal
    auto revealed = reveal_all_except(t, {});
    revealed[{5, 3}].bytes[0] ^= 1;
    CHECK(std::holds_alternative<Decoded>(decode_tree_classical(t.root(), revealed, *codes)));

    CHECK(std::holds_alternative<Unavailable>(decode_tree_classical(t.root(), {}, *codes)));
}

TEST_CASE("hiding a minimum stopping set stalls that layer")
{
    auto codes = make_tree_codes(TreeShape(64, 64), 11);
    auto t = build_tree(random_symbols(64, 64, 4), codes);
    for (std::uint32_t l = 1; l <= t.depth(); ++l) {
        const auto& code = codes->at(l);
        if (code.symbol_count() > 16) continue;
        auto rep = ldpc::stopping_sets_exhaustive(code);
        REQUIRE_FALSE(rep.minimum_sets.empty());
        std::set<SymbolId> hidden;
        for (auto s : rep.minimum_sets.front()) hidden.insert({l, s});
        auto res = decode_tree_classical(t.root(), reveal_all_except(t, hidden), *codes);
        REQUIRE(std::holds_alternative<Unavailable>(res));
        CHECK(std::get<Unavailable>(res).layer == l);
    }
}

TEST_CASE("worked example: bad parity over #6, #8, #10")
{
    auto ex = fixtures::worked_example();
    const auto& t = ex.corrupted;
    const auto& codes = t.codes();
    using fixtures::label;
    CHECK(codes.at(3).check_symbols(0) == std::vector<std::uint32_t>{label(6).index, label(8).index, label(10).index});
    CHECK(t.shape().parent(label(10)) == std::pair<SymbolId, std::uint32_t>{label(2), 2});
    CHECK(t.shape().parent(label(6)) == std::pair<SymbolId, std::uint32_t>{label(2), 0});
    CHECK(t.shape().parent(label(8)) == std::pair<SymbolId, std::uint32_t>{label(3), 2});

    auto res = decode_tree_classical(t.root(), reveal_all_except(t, {label(6), label(10)}), codes);
    REQUIRE(std::holds_alternative<Fraud>(res));
    const auto& p = std::get<Fraud>(res).proof;
    CHECK(p.layer == 3);
    CHECK(p.check_id == 0);
    CHECK(p.decoded_index == label(6).index);
    CHECK(p.known_indices == std::vector<std::uint32_t>{label(8).index, label(10).index});
    CHECK(p.committed_hash == quarter(t.symbol(label(2)), 0));
    // hash proof: symbols 2 and 1
    CHECK(p.hash_proof.ancestors == std::vector<Bytes>{t.symbol(label(2)), t.symbol(label(1))});
    // symbol proofs: 8 via 3 and 1, 10 via 2 and 1
    CHECK(p.symbol_proofs[0].ancestors == std::vector<Bytes>{t.symbol(label(3)), t.symbol(label(1))});
    CHECK(p.symbol_proofs[1].ancestors == std::vector<Bytes>{t.symbol(label(2)), t.symbol(label(1))});
    Bytes sum = p.decoded_symbol;
    xor_into(sum, t.symbol(label(8)));
    xor_into(sum, t.symbol(label(10)));
    CHECK(all_zero(sum));
    CHECK(verify_coding_fraud_proof(t.root(), p, codes));

    CHECK(deserialize_coding_fraud_proof(serialize(p)) == p);

    auto honest_sym = p;
    honest_sym.decoded_symbol = t.symbol(label(6));
    CHECK_FALSE(verify_coding_fraud_proof(t.root(), honest_sym, codes));
    auto bad_path = p;
    bad_path.symbol_proofs[0].ancestors[0][5] ^= 1;
    CHECK_FALSE(verify_coding_fraud_proof(t.root(), bad_path, codes));
    CHECK_FALSE(verify_coding_fraud_proof(ex.honest.root(), p, codes));

    auto honest = decode_tree_classical(ex.honest.root(),
                                        reveal_all_except(ex.honest, {label(6), label(10)}), codes);
    CHECK(std::holds_alternative<Decoded>(honest));
}

TEST_CASE("every single-symbol mis-encoding yields an accepted fraud proof")
{
    auto codes = make_tree_codes(TreeShape(16, 48), 21);
    auto data = random_symbols(16, 48, 5);
    const auto& shape = codes->shape;
    int count = 0;
    for (std::uint32_t l = 1; l <= shape.depth(); ++l)
        for (std::uint32_t i = 0; i < shape.width(l); ++i) {
            auto t = build_tree(data, codes, [&](std::uint32_t layer, std::vector<Bytes>& s) {
                if (layer == l) s[i][1] ^= 0xff;
            });
            auto res = decode_tree_classical(t.root(), reveal_all_except(t, {{l, i}}), *codes);
            INFO("layer " << l << " index " << i);
            REQUIRE(std::holds_alternative<Fraud>(res));
            const auto& p = std::get<Fraud>(res).proof;
            CHECK(p.layer == l);
            CHECK(p.decoded_index == i);
            CHECK(verify_coding_fraud_proof(t.root(), p, *codes));
            ++count;
        }
    CHECK(count == static_cast<int>(shape.total_symbols()));
}

TEST_CASE("a completed layer with a violated check is caught")
{
    auto codes = make_tree_codes(TreeShape(16, 48), 21);
    auto t = build_tree(random_symbols(16, 48, 6), codes, [](std::uint32_t layer, std::vector<Bytes>& s) {
        if (layer == 3) s[20][0] ^= 1;
    });
    auto res = decode_tree_classical(t.root(), reveal_all_except(t, {}), *codes);
    REQUIRE(std::holds_alternative<Fraud>(res));
    CHECK(verify_coding_fraud_proof(t.root(), std::get<Fraud>(res).proof, *codes));
}

TEST_CASE("fraud proofs against honest trees never verify")
{
    auto codes = make_tree_codes(TreeShape(16, 48), 31);
    auto t = build_tree(random_symbols(16, 48, 7), codes);
    auto bad = build_tree(random_symbols(16, 48, 7), codes, [](std::uint32_t layer, std::vector<Bytes>& s) {
        if (layer == 3) s[17][2] ^= 4;
    });
    auto res = decode_tree_classical(bad.root(), reveal_all_except(bad, {{3, 17}}), *codes);
    REQUIRE(std::holds_alternative<Fraud>(res));
    const auto base = std::get<Fraud>(res).proof;

    Rng rng(99);
    for (int trial = 0; trial < 2000; ++trial) {
        // honest material for a random check, then a random mutation
        const std::uint32_t l = 1 + static_cast<std::uint32_t>(rng.below(t.depth()));
        const auto& code = codes->at(l);
        const auto c = static_cast<std::uint32_t>(rng.below(code.check_count()));
        const auto& members = code.check_symbols(c);
        const auto d = members[rng.below(members.size())];
        CodingFraudProof p;
        p.layer = l;
        p.check_id = c;
        p.decoded_index = d;
        p.decoded_symbol = t.symbol({l, d});
        p.committed_hash = t.digest({l, d});
        p.hash_proof = t.symbol_proof({l, d});
        for (auto s : members)
            if (s != d) {
                p.known_indices.push_back(s);
                p.known_symbols.push_back(t.symbol({l, s}));
                p.symbol_proofs.push_back(t.symbol_proof({l, s}));
            }
        switch (rng.below(6)) {
        case 0: p.decoded_symbol[rng.below(p.decoded_symbol.size())] ^= 1; break;
        case 1: p.committed_hash.bytes[rng.below(32)] ^= 1; break;
        case 2: p.check_id = static_cast<std::uint32_t>(rng.below(code.check_count())); break;
        case 3:
            if (!p.known_symbols.empty()) p.known_symbols[0][0] ^= 1;
            break;
        case 4: p = base; p.decoded_symbol = t.symbol({3, 17}); break;
        default: p.layer = 1 + static_cast<std::uint32_t>(rng.below(t.depth())); break;
        }
        CHECK_FALSE(verify_coding_fraud_proof(t.root(), p, *codes));
    }
}

TEST_CASE("fraud proof decoding rejects malformed bytes")
{
    auto ex = fixtures::worked_example();
    auto res = decode_tree_classical(ex.corrupted.root(),
                                     reveal_all_except(ex.corrupted, {fixtures::label(6), fixtures::label(10)}),
                                     ex.corrupted.codes());
    auto bytes = serialize(std::get<Fraud>(res).proof);
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, bytes.size() - 1}) {
        Bytes b(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        CHECK_THROWS_AS(deserialize_coding_fraud_proof(b), DecodeError);
    }
}
