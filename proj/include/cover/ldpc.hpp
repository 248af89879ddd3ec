#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cover/bytes.hpp"
#include "cover/rng.hpp"

namespace cover::ldpc {

class CodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense GF(2) row over `cols` columns.
class BitRow {
public:
    BitRow() = default;
    explicit BitRow(std::size_t cols) : words_((cols + 63) / 64, 0) {}

    bool get(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1u; }
    void set(std::size_t i) { words_[i / 64] |= std::uint64_t{1} << (i % 64); }
    void flip(std::size_t i) { words_[i / 64] ^= std::uint64_t{1} << (i % 64); }
    void xor_with(const BitRow& o)
    {
        for (std::size_t w = 0; w < words_.size(); ++w) words_[w] ^= o.words_[w];
    }
    template <typename F>
    void for_each_set(F&& f) const
    {
        for (std::size_t w = 0; w < words_.size(); ++w) {
            std::uint64_t bits = words_[w];
            while (bits) {
                const int b = std::countr_zero(bits);
                f(w * 64 + static_cast<std::size_t>(b));
                bits &= bits - 1;
            }
        }
    }

private:
    std::vector<std::uint64_t> words_;
};

struct Edge {
    std::uint32_t check;
    std::uint32_t symbol;
    auto operator<=>(const Edge&) const = default;
};

/// Rate-1/2 erasure code: symbols [0, n) are data, [n, 2n) are coded, and n
/// parity checks each require the XOR of their attached symbols to be zero.
class LdpcCode {
public:
    LdpcCode() = default;

    /// Builds from an explicit edge list. The coded half of the parity matrix
    /// must be invertible.
    static LdpcCode from_edges(std::uint32_t n, std::uint32_t d_left, std::uint32_t d_right, std::uint64_t seed,
                               std::vector<Edge> edges)
    {
        LdpcCode code;
        code.n_ = n;
        code.d_left_ = d_left;
        code.d_right_ = d_right;
        code.seed_ = seed;
        code.set_edges(std::move(edges));
        if (!code.build_encoder()) throw CodeError("code not systematically encodable");
        if (2 * n <= 16) code.f_min_ = code.exhaustive_min_fraction();
        return code;
    }

    std::uint32_t n() const { return n_; }
    std::uint32_t symbol_count() const { return 2 * n_; }
    std::uint32_t check_count() const { return static_cast<std::uint32_t>(checks_.size()); }
    std::uint32_t d_left() const { return d_left_; }
    std::uint32_t d_right() const { return d_right_; }
    std::uint64_t seed() const { return seed_; }
    std::optional<double> f_min() const { return f_min_; }

    const std::vector<std::uint32_t>& check_symbols(std::uint32_t c) const { return checks_.at(c); }
    const std::vector<std::uint32_t>& symbol_checks(std::uint32_t s) const { return symbols_.at(s); }
    bool is_coded(std::uint32_t s) const { return s >= n_; }

    std::vector<Edge> edges() const
    {
        std::vector<Edge> out;
        for (std::uint32_t c = 0; c < checks_.size(); ++c)
            for (auto s : checks_[c]) out.push_back({c, s});
        return out;
    }

    /// Records an externally measured (or declared) minimum stopping fraction.
    LdpcCode with_f_min(double f) const
    {
        LdpcCode c = *this;
        c.f_min_ = f;
        return c;
    }

    /// output[0..n) = data, output[n..2n) satisfies every parity check.
    std::vector<Bytes> encode(const std::vector<Bytes>& data) const
    {
        if (data.size() != n_) throw std::invalid_argument("encode: expected n data symbols");
        const std::size_t len = data.empty() ? 0 : data.front().size();
        for (const auto& d : data)
            if (d.size() != len) throw std::invalid_argument("encode: unequal symbol lengths");
        std::vector<Bytes> out(data.begin(), data.end());
        out.resize(2 * n_, Bytes(len, 0));
        for (std::uint32_t j = 0; j < n_; ++j) {
            auto& coded = out[n_ + j];
            encoder_[j].for_each_set([&](std::size_t i) { xor_into(coded, data[i]); });
        }
        return out;
    }

    bool operator==(const LdpcCode& o) const
    {
        return n_ == o.n_ && d_left_ == o.d_left_ && d_right_ == o.d_right_ && seed_ == o.seed_ &&
               checks_ == o.checks_;
    }

private:
    friend LdpcCode construct_code(std::uint32_t, std::uint32_t, std::uint32_t, std::uint64_t);

    void set_edges(std::vector<Edge> edges)
    {
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        checks_.assign(n_, {});
        symbols_.assign(2 * n_, {});
        for (const auto& e : edges) {
            if (e.check >= n_ || e.symbol >= 2 * n_) throw CodeError("edge out of range");
            checks_[e.check].push_back(e.symbol);
            symbols_[e.symbol].push_back(e.check);
        }
        for (const auto& c : checks_)
            if (c.size() < 2) throw CodeError("check of degree < 2");
    }

    // Gauss-Jordan on [H_c | H_d]; leaves encoder_[j] = row j of H_c^{-1} H_d.
    bool build_encoder()
    {
        std::vector<BitRow> rows(n_, BitRow(2 * n_));
        for (std::uint32_t c = 0; c < n_; ++c)
            for (auto s : checks_[c]) rows[c].set(s >= n_ ? s - n_ : n_ + s);
        for (std::uint32_t col = 0; col < n_; ++col) {
            std::uint32_t pivot = col;
            while (pivot < n_ && !rows[pivot].get(col)) ++pivot;
            if (pivot == n_) return false;
            std::swap(rows[pivot], rows[col]);
            for (std::uint32_t r = 0; r < n_; ++r)
                if (r != col && rows[r].get(col)) rows[r].xor_with(rows[col]);
        }
        encoder_.assign(n_, BitRow(n_));
        for (std::uint32_t j = 0; j < n_; ++j)
            rows[j].for_each_set([&](std::size_t i) {
                if (i >= n_) encoder_[j].set(i - n_);
            });
        return true;
    }

    double exhaustive_min_fraction() const;

    std::uint32_t n_ = 0;
    std::uint32_t d_left_ = 0;
    std::uint32_t d_right_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<std::vector<std::uint32_t>> checks_;
    std::vector<std::vector<std::uint32_t>> symbols_;
    std::vector<BitRow> encoder_;
    std::optional<double> f_min_;
};

namespace detail {

// Seeded socket pairing followed by repair passes. Returns the edge set before
// systematic relabelling.
inline std::vector<Edge> sample_edges(std::uint32_t n, std::uint32_t d_left, std::uint32_t d_right, Rng& rng)
{
    const std::uint32_t symbols = 2 * n;
    std::vector<std::uint32_t> symbol_sockets;
    symbol_sockets.reserve(static_cast<std::size_t>(symbols) * d_left);
    for (std::uint32_t s = 0; s < symbols; ++s)
        for (std::uint32_t k = 0; k < d_left; ++k) symbol_sockets.push_back(s);
    rng.shuffle(symbol_sockets);

    // Check sockets: spread the edges as evenly as the degree targets allow.
    std::vector<std::uint32_t> check_of_socket;
    check_of_socket.reserve(symbol_sockets.size());
    for (std::size_t i = 0; i < symbol_sockets.size(); ++i) check_of_socket.push_back(static_cast<std::uint32_t>(i % n));

    std::vector<std::vector<std::uint32_t>> adj(n);
    for (std::size_t i = 0; i < symbol_sockets.size(); ++i) adj[check_of_socket[i]].push_back(symbol_sockets[i]);

    std::vector<std::uint32_t> sym_degree(symbols, 0);
    for (auto& a : adj) {
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
        // Cap at d_R + 1 to stay near-regular.
        while (a.size() > d_right + 1) a.erase(a.begin() + static_cast<std::ptrdiff_t>(rng.below(a.size())));
        for (auto s : a) ++sym_degree[s];
    }
    // Repair: checks below degree 2 get random fresh symbols.
    for (auto& a : adj) {
        while (a.size() < 2) {
            const auto s = static_cast<std::uint32_t>(rng.below(symbols));
            if (std::find(a.begin(), a.end(), s) == a.end()) {
                a.push_back(s);
                ++sym_degree[s];
            }
        }
    }
    // Repair: isolated symbols join the lowest-degree check not already full.
    for (std::uint32_t s = 0; s < symbols; ++s) {
        if (sym_degree[s] > 0) continue;
        std::uint32_t best = static_cast<std::uint32_t>(rng.below(n));
        for (std::uint32_t c = 0; c < n; ++c)
            if (adj[c].size() < adj[best].size()) best = c;
        adj[best].push_back(s);
        ++sym_degree[s];
    }
    std::vector<Edge> edges;
    for (std::uint32_t c = 0; c < n; ++c)
        for (auto s : adj[c]) edges.push_back({c, s});
    return edges;
}

// Finds n independent columns of H, preferring the coded half, and relabels
// so they occupy [n, 2n). Returns nullopt when H is rank deficient.
inline std::optional<std::vector<Edge>> relabel_systematic(std::uint32_t n, const std::vector<Edge>& edges)
{
    std::vector<BitRow> rows(n, BitRow(2 * n));
    for (const auto& e : edges) rows[e.check].set(e.symbol);
    std::vector<std::uint32_t> order;
    for (std::uint32_t s = n; s < 2 * n; ++s) order.push_back(s);
    for (std::uint32_t s = 0; s < n; ++s) order.push_back(s);

    std::vector<bool> pivot_col(2 * n, false);
    std::uint32_t rank = 0;
    for (auto col : order) {
        if (rank == n) break;
        std::uint32_t p = rank;
        while (p < n && !rows[p].get(col)) ++p;
        if (p == n) continue;
        std::swap(rows[p], rows[rank]);
        for (std::uint32_t r = 0; r < n; ++r)
            if (r != rank && rows[r].get(col)) rows[r].xor_with(rows[rank]);
        pivot_col[col] = true;
        ++rank;
    }
    if (rank < n) return std::nullopt;

    std::vector<std::uint32_t> relabel(2 * n);
    std::uint32_t next_data = 0;
    std::uint32_t next_coded = n;
    for (std::uint32_t s = 0; s < 2 * n; ++s) relabel[s] = pivot_col[s] ? next_coded++ : next_data++;
    std::vector<Edge> out;
    out.reserve(edges.size());
    for (const auto& e : edges) out.push_back({e.check, relabel[e.symbol]});
    return out;
}

} // namespace detail

/// Seeded near-(d_L, d_R)-regular code. Deterministic in its arguments. If the
/// sampled parity matrix is rank deficient, retries with seed+1 (16 attempts).
inline LdpcCode construct_code(std::uint32_t n, std::uint32_t d_left, std::uint32_t d_right, std::uint64_t seed)
{
    if (n < 1 || d_left < 1 || d_right < 2) throw CodeError("degree sequence infeasible");
    if (n == 1) {
        if (d_left > 1) throw CodeError("degree sequence infeasible");
        // The only rate-1/2 code on two symbols: a repetition check.
        return LdpcCode::from_edges(n, d_left, d_right, seed, {{0, 0}, {0, 1}});
    }
    if (d_left > n) throw CodeError("degree sequence infeasible");
    for (std::uint64_t attempt = 0; attempt < 16; ++attempt) {
        Rng rng(seed + attempt);
        auto edges = detail::sample_edges(n, d_left, d_right, rng);
        auto relabelled = detail::relabel_systematic(n, edges);
        if (!relabelled) continue;
        auto code = LdpcCode::from_edges(n, d_left, d_right, seed, std::move(*relabelled));
        return code;
    }
    throw CodeError("code not systematically encodable");
}

// ---------------------------------------------------------------------------
// Peeling decoder

enum class PeelStatus { Success, Stuck, ParityViolated };

struct PeelStep {
    std::uint32_t check;
    std::uint32_t symbol;
    bool operator==(const PeelStep&) const = default;
};

struct PeelResult {
    PeelStatus status = PeelStatus::Stuck;
    std::vector<std::optional<Bytes>> symbols; // size 2n; nullopt where unknown
    std::vector<PeelStep> log;
    std::vector<std::uint32_t> unknown;        // on Stuck
    std::optional<std::uint32_t> violated_check;
};

/// Iteratively solves degree-one checks, lowest check id first. After peeling,
/// any fully known check whose XOR is nonzero is reported as ParityViolated.
inline PeelResult peel_decode(const LdpcCode& code, const std::map<std::uint32_t, Bytes>& known)
{
    const std::uint32_t total = code.symbol_count();
    PeelResult res;
    res.symbols.assign(total, std::nullopt);
    std::size_t len = 0;
    bool have_len = false;
    for (const auto& [idx, bytes] : known) {
        if (idx >= total) throw std::out_of_range("peel_decode: symbol index");
        if (have_len && bytes.size() != len) throw std::invalid_argument("peel_decode: inconsistent lengths");
        len = bytes.size();
        have_len = true;
        res.symbols[idx] = bytes;
    }

    const std::uint32_t checks = code.check_count();
    std::vector<std::uint32_t> unknown_count(checks, 0);
    std::vector<std::uint64_t> unknown_sum(checks, 0);
    std::vector<Bytes> acc(checks, Bytes(len, 0));
    for (std::uint32_t c = 0; c < checks; ++c) {
        for (auto s : code.check_symbols(c)) {
            if (res.symbols[s])
                xor_into(acc[c], *res.symbols[s]);
            else {
                ++unknown_count[c];
                unknown_sum[c] += s;
            }
        }
    }
    std::priority_queue<std::uint32_t, std::vector<std::uint32_t>, std::greater<>> ready;
    for (std::uint32_t c = 0; c < checks; ++c)
        if (unknown_count[c] == 1) ready.push(c);

    while (!ready.empty()) {
        const auto c = ready.top();
        ready.pop();
        if (unknown_count[c] != 1) continue;
        const auto s = static_cast<std::uint32_t>(unknown_sum[c]);
        Bytes value = acc[c];
        res.log.push_back({c, s});
        for (auto c2 : code.symbol_checks(s)) {
            xor_into(acc[c2], value);
            --unknown_count[c2];
            unknown_sum[c2] -= s;
            if (unknown_count[c2] == 1) ready.push(c2);
        }
        res.symbols[s] = std::move(value);
    }

    for (std::uint32_t c = 0; c < checks; ++c) {
        if (unknown_count[c] == 0 && !all_zero(acc[c])) {
            res.status = PeelStatus::ParityViolated;
            res.violated_check = c;
            break;
        }
    }
    for (std::uint32_t s = 0; s < total; ++s)
        if (!res.symbols[s]) res.unknown.push_back(s);
    if (res.status != PeelStatus::ParityViolated) res.status = res.unknown.empty() ? PeelStatus::Success : PeelStatus::Stuck;
    return res;
}

/// Value-free peeling: the set of hidden symbols left after peeling. Empty iff
/// the pattern is recoverable; otherwise it is the largest stopping set inside
/// `hidden`.
inline std::vector<std::uint32_t> peel_residue(const LdpcCode& code, const std::vector<std::uint32_t>& hidden)
{
    std::vector<bool> unknown(code.symbol_count(), false);
    for (auto s : hidden) unknown.at(s) = true;
    std::vector<std::uint32_t> cnt(code.check_count(), 0);
    std::vector<std::uint64_t> sum(code.check_count(), 0);
    for (std::uint32_t c = 0; c < code.check_count(); ++c)
        for (auto s : code.check_symbols(c))
            if (unknown[s]) {
                ++cnt[c];
                sum[c] += s;
            }
    std::vector<std::uint32_t> stack;
    for (std::uint32_t c = 0; c < code.check_count(); ++c)
        if (cnt[c] == 1) stack.push_back(c);
    while (!stack.empty()) {
        auto c = stack.back();
        stack.pop_back();
        if (cnt[c] != 1) continue;
        auto s = static_cast<std::uint32_t>(sum[c]);
        unknown[s] = false;
        for (auto c2 : code.symbol_checks(s)) {
            --cnt[c2];
            sum[c2] -= s;
            if (cnt[c2] == 1) stack.push_back(c2);
        }
    }
    std::vector<std::uint32_t> out;
    for (std::uint32_t s = 0; s < code.symbol_count(); ++s)
        if (unknown[s]) out.push_back(s);
    return out;
}

// ---------------------------------------------------------------------------
// Stopping sets

/// Definitional test: nonempty, and no check touches the set exactly once.
inline bool is_stopping_set(const LdpcCode& code, const std::vector<std::uint32_t>& set)
{
    if (set.empty()) return false;
    std::vector<std::uint32_t> touches(code.check_count(), 0);
    for (auto s : set)
        for (auto c : code.symbol_checks(s)) ++touches[c];
    return std::none_of(touches.begin(), touches.end(), [](std::uint32_t t) { return t == 1; });
}

/// Per-check symbol bitmasks for codes with at most 64 symbols.
inline std::vector<std::uint64_t> check_masks(const LdpcCode& code)
{
    if (code.symbol_count() > 64) throw std::invalid_argument("check_masks: more than 64 symbols");
    std::vector<std::uint64_t> masks(code.check_count(), 0);
    for (std::uint32_t c = 0; c < code.check_count(); ++c)
        for (auto s : code.check_symbols(c)) masks[c] |= std::uint64_t{1} << s;
    return masks;
}

inline bool is_stopping_mask(const std::vector<std::uint64_t>& masks, std::uint64_t set)
{
    if (set == 0) return false;
    for (auto m : masks)
        if (std::popcount(m & set) == 1) return false;
    return true;
}

struct StoppingSetReport {
    double f_min = 1.0;
    std::size_t min_size = 0;
    std::vector<std::vector<std::uint32_t>> minimum_sets; // every set of size min_size
};

inline constexpr std::uint32_t kMaxExhaustiveSymbols = 24;

/// Scans every subset of the 2n symbols. Only for 2n <= 24.
inline StoppingSetReport stopping_sets_exhaustive(const LdpcCode& code)
{
    const std::uint32_t total = code.symbol_count();
    if (total > kMaxExhaustiveSymbols) throw CodeError("use sampled estimate");
    const auto masks = check_masks(code);
    StoppingSetReport rep;
    rep.min_size = total + 1;
    std::vector<std::uint64_t> best;
    const std::uint64_t limit = std::uint64_t{1} << total;
    for (std::uint64_t set = 1; set < limit; ++set) {
        const auto size = static_cast<std::size_t>(std::popcount(set));
        if (size > rep.min_size) continue;
        if (!is_stopping_mask(masks, set)) continue;
        if (size < rep.min_size) {
            rep.min_size = size;
            best.clear();
        }
        best.push_back(set);
    }
    for (auto set : best) {
        std::vector<std::uint32_t> v;
        for (std::uint32_t s = 0; s < total; ++s)
            if (set >> s & 1) v.push_back(s);
        rep.minimum_sets.push_back(std::move(v));
    }
    rep.f_min = static_cast<double>(rep.min_size) / total;
    return rep;
}

inline double LdpcCode::exhaustive_min_fraction() const { return stopping_sets_exhaustive(*this).f_min; }

/// Randomised search for a small stopping set in codes too large to scan:
/// grow a closure from a random symbol, then shrink it with peeling. The
/// result always satisfies the definition; its size upper-bounds the minimum.
inline std::vector<std::uint32_t> find_small_stopping_set(const LdpcCode& code, std::uint64_t seed,
                                                          std::uint32_t attempts = 64)
{
    Rng rng(seed);
    std::vector<std::uint32_t> best;
    for (std::uint32_t a = 0; a < attempts; ++a) {
        std::vector<bool> in(code.symbol_count(), false);
        std::vector<std::uint32_t> set{static_cast<std::uint32_t>(rng.below(code.symbol_count()))};
        in[set.front()] = true;
        for (bool changed = true; changed;) {
            changed = false;
            std::vector<std::uint32_t> touches(code.check_count(), 0);
            for (auto s : set)
                for (auto c : code.symbol_checks(s)) ++touches[c];
            for (std::uint32_t c = 0; c < code.check_count() && !changed; ++c) {
                if (touches[c] != 1) continue;
                std::vector<std::uint32_t> options;
                for (auto s : code.check_symbols(c))
                    if (!in[s]) options.push_back(s);
                auto pick = options[rng.below(options.size())];
                in[pick] = true;
                set.push_back(pick);
                changed = true;
            }
        }
        std::sort(set.begin(), set.end());
        // Shrink: drop members while the peeling residue stays nonempty.
        for (std::size_t i = 0; i < set.size();) {
            auto trial = set;
            trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(i));
            auto residue = peel_residue(code, trial);
            if (!residue.empty() && residue.size() < set.size()) {
                set = residue;
                i = 0;
            } else {
                ++i;
            }
        }
        if (best.empty() || set.size() < best.size()) best = set;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Code descriptor files (text): a header line "n d_L d_R seed" followed by
// one "check symbol" pair per line. '#' starts a comment.

inline std::string write_descriptor(const LdpcCode& code)
{
    std::ostringstream out;
    out << code.n() << ' ' << code.d_left() << ' ' << code.d_right() << ' ' << code.seed() << '\n';
    for (const auto& e : code.edges()) out << e.check << ' ' << e.symbol << '\n';
    return out.str();
}

inline LdpcCode read_descriptor(std::istream& in)
{
    std::vector<std::uint64_t> nums;
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::uint64_t v;
        while (ls >> v) nums.push_back(v);
        if (!ls.eof()) throw DecodeError("code descriptor: bad token");
    }
    if (nums.size() < 4 || (nums.size() - 4) % 2 != 0) throw DecodeError("code descriptor: malformed");
    std::vector<Edge> edges;
    for (std::size_t i = 4; i < nums.size(); i += 2)
        edges.push_back({static_cast<std::uint32_t>(nums[i]), static_cast<std::uint32_t>(nums[i + 1])});
    return LdpcCode::from_edges(static_cast<std::uint32_t>(nums[0]), static_cast<std::uint32_t>(nums[1]),
                                static_cast<std::uint32_t>(nums[2]), nums[3], std::move(edges));
}

inline LdpcCode load_descriptor(const std::string& path)
{
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open code descriptor: " + path);
    return read_descriptor(f);
}

} // namespace cover::ldpc
