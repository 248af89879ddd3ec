#pragma once

// Hand-built trees shared by the unit and acceptance tests.

#include <memory>
#include <vector>

#include "cover/cmt.hpp"
#include "cover/ledger.hpp"
#include "cover/rng.hpp"

namespace fixtures {

using namespace cover;

inline std::vector<Bytes> random_symbols(std::size_t count, std::size_t size, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<Bytes> out(count, Bytes(size));
    for (auto& b : out)
        for (auto& x : b) x = static_cast<std::uint8_t>(rng.next());
    return out;
}

// Three-layer tree of 2, 4 and 8 symbols. Figure labels map as
//   #1 = (1,0)   #2 = (2,1)   #3 = (2,0)   #4..#11 = (3,0)..(3,7)
// so #6, #8, #10 are bottom indices 2, 4, 6.
inline cmt::SymbolId label(int n)
{
    if (n == 1) return {1, 0};
    if (n == 2) return {2, 1};
    if (n == 3) return {2, 0};
    return {3, static_cast<std::uint32_t>(n - 4)};
}

// Bottom checks: c0 = {#6, #8, #10} (the bad one), c1 = {#4, #10},
// c2 = {#5, #7, #9}, c3 = {#4, #5, #11}.
inline std::shared_ptr<const cmt::TreeCodes> worked_example_codes(std::size_t base_size)
{
    auto tc = std::make_shared<cmt::TreeCodes>();
    tc->shape = cmt::TreeShape(4, base_size, 1);
    tc->codes.push_back(ldpc::LdpcCode::from_edges(1, 1, 2, 0, {{0, 0}, {0, 1}}));
    tc->codes.push_back(ldpc::LdpcCode::from_edges(2, 2, 3, 0, {{0, 0}, {0, 2}, {1, 0}, {1, 1}, {1, 3}}));
    tc->codes.push_back(ldpc::LdpcCode::from_edges(
        4, 2, 3, 0, {{0, 2}, {0, 4}, {0, 6}, {1, 0}, {1, 6}, {2, 1}, {2, 3}, {2, 5}, {3, 0}, {3, 1}, {3, 7}}));
    return tc;
}

struct WorkedExample {
    cmt::CodedMerkleTree honest;
    cmt::CodedMerkleTree corrupted; // #8 altered after encoding
};

inline WorkedExample worked_example(std::size_t base_size = 64, std::uint64_t seed = 2024)
{
    auto codes = worked_example_codes(base_size);
    auto data = random_symbols(4, base_size, seed);
    WorkedExample ex;
    ex.honest = cmt::build_tree(data, codes);
    ex.corrupted = cmt::build_tree(data, codes, [](std::uint32_t layer, std::vector<Bytes>& symbols) {
        if (layer == 3) symbols[4][0] ^= 0x5a;
    });
    return ex;
}

// Double-spend example. Named accounts sort after the fillers, so each
// named transaction lands at the position used in the figure labels:
//   5:2   faucet pays $18 to account 10 (output 3)
//   8:5   account 10 pays $10 to 8 (output 1) and $8 to 3
//   9:3   account 8 spends 8:5/1: $5 to 4, $5 to itself
//   10:2  account 8 spends 8:5/1 again: $10 to 3
struct DoubleSpendExample {
    ledger::ChainBuilder chain;
    KeyPair faucet, a10, a8, a3, a4;
    std::vector<KeyPair> fillers;
    Digest tx_5_2, tx_8_5, tx_9_3, tx_10_2;
};

inline KeyPair pick_account(SigScheme scheme, std::uint64_t& seed, bool high)
{
    while (true) {
        auto kp = keypair_from_seed(scheme, seed++);
        if (high ? kp.public_key.bytes[0] >= 0x80 : kp.public_key.bytes[0] < 0x40) return kp;
    }
}

inline ledger::ChainParams example_params(SigScheme scheme = SigScheme::Ed25519, std::uint32_t k = 4,
                                          std::uint64_t tau = 20)
{
    return ledger::make_chain_params(16, 2048, k, tau, scheme, 4242);
}

inline DoubleSpendExample double_spend_example(ledger::ChainParams params = example_params())
{
    using ledger::Input;
    using ledger::Output;
    DoubleSpendExample ex{ledger::ChainBuilder(params), {}, {}, {}, {}, {}, {}, {}, {}, {}, {}};
    std::uint64_t seed = 1000;
    const auto scheme = params.scheme;
    ex.faucet = pick_account(scheme, seed, true);
    ex.a10 = pick_account(scheme, seed, true);
    ex.a8 = pick_account(scheme, seed, true);
    ex.a3 = pick_account(scheme, seed, true);
    ex.a4 = pick_account(scheme, seed, true);
    for (int i = 0; i < 5; ++i) ex.fillers.push_back(pick_account(scheme, seed, false));

    auto& c = ex.chain;
    std::vector<Output> alloc{{ex.faucet.public_key, 28}};
    for (const auto& f : ex.fillers) alloc.push_back({f.public_key, 100});
    c.genesis(alloc);

    // each filler moves its whole balance to itself
    auto filler_txns = [&](std::size_t count) {
        std::vector<ledger::Transaction> v;
        for (std::size_t i = 0; i < count; ++i) {
            auto in = c.unspent_of(ex.fillers[i].public_key).at(0);
            v.push_back(c.pay(ex.fillers[i], {in}, {{ex.fillers[i].public_key, 100}}));
        }
        return v;
    };
    auto empty_until = [&](std::uint64_t h) {
        while (c.next_height() < h) c.append({});
    };

    empty_until(5);
    auto t52 = c.pay(ex.faucet, {c.unspent_of(ex.faucet.public_key).at(0)},
                     {{ex.faucet.public_key, 5}, {ex.faucet.public_key, 5}, {ex.a10.public_key, 18}});
    auto b5 = filler_txns(2);
    b5.push_back(t52);
    c.append(b5);
    ex.tx_5_2 = t52.txid();

    empty_until(8);
    auto t85 = c.pay(ex.a10, {Input{ex.tx_5_2, 3}}, {{ex.a8.public_key, 10}, {ex.a3.public_key, 8}});
    auto b8 = filler_txns(5);
    b8.push_back(t85);
    c.append(b8);
    ex.tx_8_5 = t85.txid();

    auto t93 = c.pay(ex.a8, {Input{ex.tx_8_5, 1}}, {{ex.a4.public_key, 5}, {ex.a8.public_key, 5}});
    auto b9 = filler_txns(3);
    b9.push_back(t93);
    c.append(b9);
    ex.tx_9_3 = t93.txid();

    auto t102 = c.pay(ex.a8, {Input{ex.tx_8_5, 1}}, {{ex.a3.public_key, 10}});
    auto b10 = filler_txns(2);
    b10.push_back(t102);
    c.append(b10);
    ex.tx_10_2 = t102.txid();
    return ex;
}

} // namespace fixtures
