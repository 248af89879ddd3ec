#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cover/adversary.hpp"

namespace cover::harness {

using json = nlohmann::json;
using netsim::NodeId;
using protocol::Decision;
using protocol::Reason;

// ---------------------------------------------------------------------------
// Interval estimates

inline constexpr double kZ95 = 1.959963984540054;

struct Estimate {
    std::uint64_t successes = 0;
    std::uint64_t trials = 0;

    double rate() const { return trials ? static_cast<double>(successes) / static_cast<double>(trials) : 0.0; }

    /// Wilson score interval at 95%.
    std::pair<double, double> interval() const
    {
        if (trials == 0) return {0.0, 1.0};
        const double n = static_cast<double>(trials);
        const double p = rate();
        const double z2 = kZ95 * kZ95;
        const double denom = 1 + z2 / n;
        const double centre = (p + z2 / (2 * n)) / denom;
        const double half = kZ95 * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom;
        return {successes == 0 ? 0.0 : std::max(0.0, centre - half),
                successes == trials ? 1.0 : std::min(1.0, centre + half)};
    }
    double lower() const { return interval().first; }
    double upper() const { return interval().second; }
};

inline Estimate wilson(std::uint64_t successes, std::uint64_t trials)
{
    if (successes > trials) throw std::invalid_argument("more successes than trials");
    return {successes, trials};
}

// ---------------------------------------------------------------------------
// Closed-form bounds

/// Honest nodes needed so all k sections are covered w.p. 1 - e^-lambda.
inline std::uint32_t coverage_bound(std::uint32_t k, double lambda)
{
    if (k < 1) throw std::invalid_argument("k must be positive");
    return static_cast<std::uint32_t>(std::ceil(k * (std::log(static_cast<double>(k)) + lambda)));
}

/// The stricter requirement k(ln L + lambda) used by the end-to-end result.
inline std::uint32_t coverage_bound_log_l(std::uint32_t k, std::uint32_t L, double lambda)
{
    if (k < 1 || L < 1) throw std::invalid_argument("k and L must be positive");
    return static_cast<std::uint32_t>(std::ceil(k * (std::log(static_cast<double>(L)) + lambda)));
}

/// Union bound 1 - k (1 - 1/k)^N_h on full coverage.
inline double coverage_union_bound(std::uint32_t k, std::uint32_t nh)
{
    return 1.0 - k * std::pow(1.0 - 1.0 / k, static_cast<double>(nh));
}

inline Estimate mc_coverage(std::uint32_t k, std::uint32_t nh, std::uint64_t trials, std::uint64_t seed)
{
    if (k < 1 || trials < 1) throw std::invalid_argument("k and trials must be positive");
    Rng rng(seed);
    Estimate e{0, trials};
    std::vector<char> hit(k);
    for (std::uint64_t t = 0; t < trials; ++t) {
        std::fill(hit.begin(), hit.end(), 0);
        std::uint32_t covered = 0;
        for (std::uint32_t i = 0; i < nh; ++i) {
            auto s = rng.below(k);
            if (!hit[s]) hit[s] = 1, ++covered;
        }
        e.successes += covered == k;
    }
    return e;
}

inline double detection_probability(double f, std::uint32_t c)
{
    if (f < 0 || f > 1) throw std::invalid_argument("f out of range");
    if (c < 1) throw std::invalid_argument("c must be positive");
    return 1.0 - std::pow(1.0 - f, static_cast<double>(c));
}

/// Per-layer rate at which a node's sampled subtree touches a hidden symbol
/// of that layer. Layers without hidden symbols report zero trials.
inline std::vector<Estimate> mc_detection(const cmt::TreeShape& shape, const std::set<cmt::SymbolId>& hidden,
                                          std::uint32_t c, std::uint64_t trials, std::uint64_t seed)
{
    std::vector<std::vector<std::uint32_t>> by_layer(shape.depth());
    for (auto id : hidden) {
        if (!shape.contains(id)) throw std::out_of_range("hidden symbol out of range");
        by_layer[id.layer - 1].push_back(id.index);
    }
    std::vector<Estimate> out(shape.depth());
    for (std::uint64_t t = 0; t < trials; ++t) {
        auto sub = cmt::sample_subtree(shape, c, derive_seed(seed, {t}));
        for (std::uint32_t l = 1; l <= shape.depth(); ++l) {
            if (by_layer[l - 1].empty()) continue;
            ++out[l - 1].trials;
            for (auto i : by_layer[l - 1])
                if (sub.contains({l, i})) {
                    ++out[l - 1].successes;
                    break;
                }
        }
    }
    return out;
}

struct ConnectivityPlan {
    double r = 0;           // fraction of symbols each node wants
    double p = 0;           // edge probability
    double total_nodes = 0; // N_h / (1 - alpha)
    double neighbors = 0;   // p * N
};

inline ConnectivityPlan connectivity_requirement(std::uint32_t nh, std::uint32_t k, std::uint32_t L, double lambda,
                                                 double alpha)
{
    if (nh < 1 || k < 1 || L < 1) throw std::invalid_argument("N_h, k and L must be positive");
    if (alpha < 0 || alpha >= 1) throw std::invalid_argument("alpha out of range");
    ConnectivityPlan c;
    const double Ld = L;
    c.r = (Ld / k) * std::log(Ld) / (4 * Ld);
    const double half = c.r * nh / 2;
    if (!(half > 1)) throw std::domain_error("regime below theorem's validity");
    c.p = 2 * lambda * std::log(half) / (c.r * nh);
    c.total_nodes = nh / (1 - alpha);
    c.neighbors = c.p * c.total_nodes;
    return c;
}

/// Probability that every one of M color subgraphs is connected.
inline double connectivity_bound(double r, std::uint32_t nh, std::uint64_t M, double lambda)
{
    const double x = r * nh / 2;
    return 1.0 - M * std::pow(x, 1 - lambda) - M * std::exp(-r * nh / (8 * (1 - r)));
}

/// Valid-and-available and invalid-but-available cases of the end-to-end result.
inline double theorem_valid_bound(std::uint32_t L, std::uint32_t k, std::uint32_t nh, double lambda)
{
    const double fourL = 4.0 * L;
    return 1.0 - std::exp(-lambda) - fourL * std::pow(nh / (8.0 * k), 1 - lambda) -
           fourL * std::exp(-static_cast<double>(nh) / (8.0 * (4.0 * k - 1)));
}

/// Unavailable case: every honest node hits the hidden fraction f.
inline double theorem_unavailable_bound(std::uint32_t nh, double f, std::uint32_t c)
{
    return 1.0 - nh * std::pow(1.0 - f, static_cast<double>(c));
}

/// Checks every color's honest subgraph at once with word bitsets.
/// colors[v] lists the colors node v holds; dishonest nodes are ignored.
inline std::vector<bool> color_subgraphs_connected(const netsim::NetworkGraph& g,
                                                   const std::vector<std::vector<std::uint32_t>>& colors,
                                                   std::uint32_t M)
{
    const std::size_t W = (g.n + 63) / 64;
    std::vector<std::uint64_t> adj(static_cast<std::size_t>(g.n) * W, 0);
    for (NodeId v = 0; v < g.n; ++v)
        for (auto u : g.adj[v]) adj[v * W + u / 64] |= std::uint64_t{1} << (u % 64);
    std::vector<std::uint64_t> members(static_cast<std::size_t>(M) * W, 0);
    for (NodeId v = 0; v < g.n; ++v) {
        if (!g.honest[v]) continue;
        for (auto c : colors[v]) {
            if (c >= M) throw std::out_of_range("color out of range");
            members[c * W + v / 64] |= std::uint64_t{1} << (v % 64);
        }
    }
    std::vector<bool> out(M, true);
    std::vector<std::uint64_t> seen(W), todo(W);
    for (std::uint32_t c = 0; c < M; ++c) {
        const std::uint64_t* mem = &members[c * W];
        std::fill(seen.begin(), seen.end(), 0);
        std::fill(todo.begin(), todo.end(), 0);
        std::size_t first = W;
        for (std::size_t w = 0; w < W; ++w)
            if (mem[w]) {
                first = w;
                break;
            }
        if (first == W) continue;
        const auto bit = mem[first] & (~mem[first] + 1);
        seen[first] = todo[first] = bit;
        bool any = true;
        while (any) {
            any = false;
            for (std::size_t w = 0; w < W; ++w) {
                while (todo[w]) {
                    const int b = __builtin_ctzll(todo[w]);
                    todo[w] &= todo[w] - 1;
                    const std::uint64_t* row = &adj[(w * 64 + b) * W];
                    for (std::size_t x = 0; x < W; ++x) {
                        const auto fresh = row[x] & mem[x] & ~seen[x];
                        if (fresh) {
                            seen[x] |= fresh;
                            todo[x] |= fresh;
                            any = true;
                        }
                    }
                }
            }
        }
        for (std::size_t w = 0; w < W; ++w)
            if (seen[w] != mem[w]) {
                out[c] = false;
                break;
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scenario configuration

class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : std::invalid_argument(join(problems)), problems_(std::move(problems))
    {
    }
    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& v)
    {
        std::string s = "invalid scenario:";
        for (const auto& p : v) s += "\n  " + p;
        return s;
    }
    std::vector<std::string> problems_;
};

struct ScenarioConfig {
    std::uint32_t L = 64;
    std::uint32_t k = 4;
    std::uint32_t c = 0; // bottom samples per node; 0 means L/k
    std::uint32_t nh = 32;
    double alpha = 0;
    double p = 0; // edge probability; 0 means the prescribed value
    std::uint64_t delta = 2;
    std::uint64_t tau = 8;
    double lambda = 2;
    std::uint32_t d_left = 3;
    std::uint32_t d_right = 6;
    std::uint32_t symbol_size = 2048;
    std::uint32_t rounds = 1;
    std::uint64_t seed = 1;
    std::string miner = "honest";
    double hide_fraction = 0.5;
    std::vector<std::string> byzantine{"silent"};
    std::uint32_t trials = 500;
    bool transactions = true;
    std::string signature = "test-keyed";

    bool operator==(const ScenarioConfig&) const = default;

    std::uint32_t samples() const { return c ? c : std::max<std::uint32_t>(1, L / std::max<std::uint32_t>(1, k)); }
    std::uint32_t total_nodes() const
    {
        return static_cast<std::uint32_t>(std::llround(std::ceil(nh / (1 - alpha) - 1e-9)));
    }
};

inline const std::vector<std::string>& miner_kinds()
{
    static const std::vector<std::string> v{"honest", "unavailable", "coding_fraud", "withhold_random", "invalid_txn"};
    return v;
}

inline const std::vector<std::string>& byzantine_kinds()
{
    static const std::vector<std::string> v{"silent", "drop_selective", "fake_symbol_spam", "fake_fraud_proof_spam"};
    return v;
}

inline bool miner_needs_transactions(const std::string& m) { return m.rfind("invalid_txn", 0) == 0; }
inline bool miner_needs_expiry(const std::string& m) { return m == "invalid_txn" || m == "invalid_txn:expired"; }

/// Upper estimate of a one-input, two-output transaction with its funding proof.
inline std::size_t transaction_size_estimate(const cmt::TreeShape& shape)
{
    const std::size_t path = 4 + (shape.depth() - 1) * (4 + cmt::kUpperSymbolSize) + shape.width(1) * Digest::size;
    const std::size_t core = 2 + 32 + 2 + 2 * 40 + 2 + 34;
    return 64 + core + 2 + 64 + (8 + 4 + 4 + core + 32 + path);
}

inline std::vector<std::string> validate(const ScenarioConfig& c)
{
    std::vector<std::string> e;
    if (c.L < 2 || c.L > 4096) e.push_back("L must be in [2, 4096]");
    if (c.k < 1 || c.k > std::max<std::uint32_t>(1, c.L)) e.push_back("k must be in [1, L]");
    if (c.nh < 1) e.push_back("N_h must be positive");
    if (!(c.alpha >= 0 && c.alpha < 1)) e.push_back("alpha must be in [0, 1)");
    if (!(c.p >= 0 && c.p <= 1)) e.push_back("p must be in [0, 1]");
    if (c.delta < 1) e.push_back("delta must be positive");
    if (c.tau < 1) e.push_back("tau must be positive");
    if (!(c.lambda > 0)) e.push_back("lambda must be positive");
    if (c.d_left < 1 || c.d_right < 2) e.push_back("degrees must satisfy d_L >= 1 and d_R >= 2");
    if (c.symbol_size < 1) e.push_back("symbol_size must be positive");
    if (c.rounds < 1) e.push_back("rounds must be positive");
    if (c.trials < 1) e.push_back("trials must be positive");
    if (!(c.hide_fraction > 0 && c.hide_fraction <= 1)) e.push_back("hide_fraction must be in (0, 1]");
    if (c.signature != "ed25519" && c.signature != "test-keyed") e.push_back("signature must be ed25519 or test-keyed");

    const auto& mk = miner_kinds();
    bool miner_ok = std::find(mk.begin(), mk.end(), c.miner) != mk.end();
    if (!miner_ok && c.miner.rfind("invalid_txn:", 0) == 0) {
        try {
            adversary::invalid_class_from_string(c.miner.substr(12));
            miner_ok = true;
        } catch (const std::invalid_argument&) {
        }
    }
    if (!miner_ok) e.push_back("unknown miner strategy: " + c.miner);
    for (const auto& b : c.byzantine)
        if (std::find(byzantine_kinds().begin(), byzantine_kinds().end(), b) == byzantine_kinds().end())
            e.push_back("unknown byzantine strategy: " + b);
    if (c.alpha > 0 && c.byzantine.empty()) e.push_back("alpha > 0 needs at least one byzantine strategy");
    if (miner_ok && miner_needs_transactions(c.miner) && !c.transactions)
        e.push_back("invalid transaction miners need transactions enabled");

    if (c.L >= 2 && c.L <= 4096 && c.symbol_size >= 1) {
        cmt::TreeShape shape(c.L, c.symbol_size);
        const auto bottom_width = shape.width(shape.bottom());
        if (c.c > bottom_width) e.push_back("c exceeds the bottom layer width");
        if (c.d_left >= 1 && c.d_right >= 2)
            for (std::uint32_t l = 1; l <= shape.depth(); ++l)
                if (shape.data_count(l) > 1 && c.d_left > shape.data_count(l)) {
                    e.push_back("d_L exceeds the data width of layer " + std::to_string(l));
                    break;
                }
        if (c.transactions) {
            const auto need = transaction_size_estimate(shape);
            if (c.symbol_size < need)
                e.push_back("symbol_size must be at least " + std::to_string(need) + " to hold transactions");
            if (c.tau < 4) e.push_back("tau must be at least 4 when transactions are enabled");
            if (miner_ok && miner_needs_expiry(c.miner) && c.tau > 64)
                e.push_back("tau must be at most 64 for expired-input scenarios");
        }
    }
    return e;
}

inline void to_json(json& j, const ScenarioConfig& c)
{
    j = json{{"L", c.L},
             {"k", c.k},
             {"c", c.c},
             {"N_h", c.nh},
             {"alpha", c.alpha},
             {"p", c.p},
             {"delta", c.delta},
             {"tau", c.tau},
             {"lambda", c.lambda},
             {"d_L", c.d_left},
             {"d_R", c.d_right},
             {"symbol_size", c.symbol_size},
             {"rounds", c.rounds},
             {"seed", c.seed},
             {"miner", c.miner},
             {"hide_fraction", c.hide_fraction},
             {"byzantine", c.byzantine},
             {"trials", c.trials},
             {"transactions", c.transactions},
             {"signature", c.signature}};
}

/// Reads keys present in `j` over `base`; unknown keys and type mismatches
/// are collected and reported together.
inline ScenarioConfig config_from_json(const json& j, ScenarioConfig base = {})
{
    if (!j.is_object()) throw ConfigError({"scenario must be a JSON object"});
    std::vector<std::string> e;
    auto take = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const json::exception&) {
            e.push_back(std::string("bad value for ") + key);
        }
    };
    static const std::set<std::string> known{"L",       "k",     "c",           "N_h",    "alpha",         "p",
                                             "delta",   "tau",   "lambda",      "d_L",    "d_R",           "symbol_size",
                                             "rounds",  "seed",  "miner",       "hide_fraction", "byzantine", "trials",
                                             "transactions", "signature"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) e.push_back("unknown key: " + key);
    take("L", base.L);
    take("k", base.k);
    take("c", base.c);
    take("N_h", base.nh);
    take("alpha", base.alpha);
    take("p", base.p);
    take("delta", base.delta);
    take("tau", base.tau);
    take("lambda", base.lambda);
    take("d_L", base.d_left);
    take("d_R", base.d_right);
    take("symbol_size", base.symbol_size);
    take("rounds", base.rounds);
    take("seed", base.seed);
    take("miner", base.miner);
    take("hide_fraction", base.hide_fraction);
    take("byzantine", base.byzantine);
    take("trials", base.trials);
    take("transactions", base.transactions);
    take("signature", base.signature);
    if (!e.empty()) throw ConfigError(e);
    return base;
}

inline std::string config_to_string(const ScenarioConfig& c) { return json(c).dump(2) + "\n"; }

inline ScenarioConfig load_config(const std::string& path, ScenarioConfig base = {})
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& ex) {
        throw ConfigError({std::string("not valid JSON: ") + ex.what()});
    }
    return config_from_json(j, std::move(base));
}

// ---------------------------------------------------------------------------
// Bound report for a configuration

struct BoundReport {
    std::uint32_t nh_coverage_required = 0; // k(ln k + lambda)
    std::uint32_t nh_log_l_required = 0;    // k(ln L + lambda)
    bool meets_coverage = false;
    bool meets_log_l = false;
    double coverage_target = 0;      // 1 - e^-lambda
    double coverage_union = 0;       // 1 - k(1 - 1/k)^N_h
    std::optional<ConnectivityPlan> connectivity;
    std::string connectivity_error;
    double connectivity_probability = 0;
    double p_used = 0;
    bool meets_connectivity = false;
    double theorem_valid = 0; // valid or invalid-but-available cases
    std::uint32_t samples = 0;
};

inline BoundReport bound_report(const ScenarioConfig& c)
{
    BoundReport b;
    b.nh_coverage_required = coverage_bound(c.k, c.lambda);
    b.nh_log_l_required = coverage_bound_log_l(c.k, c.L, c.lambda);
    b.meets_coverage = c.nh >= b.nh_coverage_required;
    b.meets_log_l = c.nh >= b.nh_log_l_required;
    b.coverage_target = 1 - std::exp(-c.lambda);
    b.coverage_union = coverage_union_bound(c.k, c.nh);
    b.samples = c.samples();
    try {
        b.connectivity = connectivity_requirement(c.nh, c.k, c.L, c.lambda, c.alpha);
        const auto M = cmt::TreeShape(c.L, c.symbol_size).total_symbols();
        b.connectivity_probability = connectivity_bound(b.connectivity->r, c.nh, M, c.lambda);
    } catch (const std::domain_error& ex) {
        b.connectivity_error = ex.what();
    }
    b.p_used = c.p > 0 ? c.p : (b.connectivity ? std::min(1.0, b.connectivity->p) : 1.0);
    b.meets_connectivity = b.connectivity && b.p_used >= std::min(1.0, b.connectivity->p);
    b.theorem_valid = theorem_valid_bound(c.L, c.k, c.nh, c.lambda);
    return b;
}

inline json bounds_json(const BoundReport& b)
{
    json j{{"N_h_required_k_ln_k", b.nh_coverage_required},
           {"N_h_required_k_ln_L", b.nh_log_l_required},
           {"meets_k_ln_k", b.meets_coverage},
           {"meets_k_ln_L", b.meets_log_l},
           {"coverage_target", b.coverage_target},
           {"coverage_union_bound", b.coverage_union},
           {"p_used", b.p_used},
           {"meets_connectivity", b.meets_connectivity},
           {"theorem_valid_or_invalid_available", b.theorem_valid},
           {"samples", b.samples}};
    if (b.connectivity) {
        j["connectivity"] = {{"r", b.connectivity->r},
                             {"p", b.connectivity->p},
                             {"total_nodes", b.connectivity->total_nodes},
                             {"neighbors", b.connectivity->neighbors},
                             {"probability_bound", b.connectivity_probability}};
    } else {
        j["connectivity"] = {{"error", b.connectivity_error}};
    }
    return j;
}

/// Colors of the connectivity model: each honest node holds round(rM) of M.
inline Estimate mc_connectivity(const ScenarioConfig& cfg, std::uint64_t trials)
{
    if (auto e = validate(cfg); !e.empty()) throw ConfigError(e);
    const auto plan = connectivity_requirement(cfg.nh, cfg.k, cfg.L, cfg.lambda, cfg.alpha);
    const double p = cfg.p > 0 ? cfg.p : std::min(1.0, plan.p);
    const auto M = static_cast<std::uint32_t>(cmt::TreeShape(cfg.L, cfg.symbol_size).total_symbols());
    const auto per_node = static_cast<std::uint32_t>(std::clamp<double>(std::round(plan.r * M), 1.0, M));
    const auto N = cfg.total_nodes();
    const double alpha_eff = N > cfg.nh ? (N - cfg.nh + 0.5) / N : 0.0;
    Estimate e{0, trials};
    for (std::uint64_t t = 0; t < trials; ++t) {
        auto g = netsim::generate_graph(N, p, derive_seed(cfg.seed, {t, 1}), alpha_eff, derive_seed(cfg.seed, {t, 2}));
        Rng rng(derive_seed(cfg.seed, {t, 3}));
        std::vector<std::vector<std::uint32_t>> colors(N);
        for (NodeId v = 0; v < N; ++v)
            if (g.honest[v])
                for (auto x : rng.sample_distinct(M, per_node)) colors[v].push_back(static_cast<std::uint32_t>(x));
        auto ok = color_subgraphs_connected(g, colors, M);
        e.successes += std::all_of(ok.begin(), ok.end(), [](bool b) { return b; });
    }
    return e;
}

// ---------------------------------------------------------------------------
// Full protocol scenarios

struct NodeMetrics {
    NodeId id = 0;
    bool honest = true;
    std::uint32_t section = 0;
    protocol::Verdict verdict;
    std::uint64_t bytes_down = 0;
    std::uint64_t bytes_up = 0;
    std::uint64_t symbol_bytes_down = 0;
    std::uint64_t interest_bytes_down = 0;
    std::uint64_t hash_ops = 0;
    std::uint64_t symbols_stored = 0;
    std::uint64_t rejected_symbols = 0;
    std::uint64_t rejected_proofs = 0;
    std::size_t neighbors = 0;
};

struct TrialMetrics {
    std::uint32_t trial = 0;
    std::uint32_t round = 0;
    std::uint64_t height = 0;
    std::string miner;
    int theorem_case = 1; // 1 valid and available, 2 unavailable, 3 invalid but available
    Decision expected = Decision::Accept;
    double hidden_fraction = 0; // unavailable case only
    bool sections_covered = false;
    bool symbols_covered = false;
    bool connected = false;
    bool unanimous_correct = false;
    std::uint64_t ticks_to_unanimity = 0;
    std::vector<NodeMetrics> nodes;
};

struct CaseSummary {
    int theorem_case = 0;
    Estimate correct;
    Estimate preconditions; // sections covered, symbols covered and connected
    double bound = 0;
    bool pass = false;
};

struct Summary {
    ScenarioConfig config;
    BoundReport bounds;
    std::vector<CaseSummary> cases;
    double mean_bytes_down = 0;
    double mean_symbol_bytes_down = 0;
    double mean_interest_bytes_down = 0;
    double mean_hash_ops = 0;
    double mean_symbols_stored = 0;
    double mean_neighbors = 0;
    std::uint64_t max_bytes_down = 0;
    std::uint64_t honest_rejects_of_valid = 0;
    bool all_pass = false;
};

struct ScenarioResult {
    std::vector<TrialMetrics> rows;
    Summary summary;
};

inline ledger::ChainParams scenario_params(const ScenarioConfig& c)
{
    ledger::ChainParams p;
    p.shape = cmt::TreeShape(c.L, c.symbol_size);
    p.codes = cmt::make_tree_codes(p.shape, derive_seed(c.seed, {0xc0de}), c.d_left, c.d_right);
    p.k = c.k;
    p.tau = c.tau;
    p.scheme = sig_scheme_from_string(c.signature);
    return p;
}

inline adversary::ByzantineStrategy byzantine_from_string(const std::string& s)
{
    if (s == "silent") return adversary::Silent{};
    if (s == "drop_selective") return adversary::DropSelective{[](cmt::SymbolId) { return true; }};
    if (s == "fake_symbol_spam") return adversary::FakeSymbolSpam{1};
    if (s == "fake_fraud_proof_spam") return adversary::FakeFraudProofSpam{1};
    throw std::invalid_argument("unknown byzantine strategy: " + s);
}

namespace detail {

inline const std::array<adversary::InvalidClass, 6> kClasses{
    adversary::InvalidClass::BadSig,      adversary::InvalidClass::BadSum,  adversary::InvalidClass::BadInputProof,
    adversary::InvalidClass::DoubleSpend, adversary::InvalidClass::Expired, adversary::InvalidClass::Unsorted};

struct MinerDraw {
    adversary::MinerStrategy strategy;
    int theorem_case = 1;
    Decision expected = Decision::Accept;
    double hidden_fraction = 0;
};

inline MinerDraw draw_miner(const ScenarioConfig& cfg, const ledger::ChainParams& params, std::uint64_t index,
                            Rng& rng)
{
    const auto& shape = params.shape;
    MinerDraw d;
    if (cfg.miner == "honest") return d;
    if (cfg.miner == "unavailable") {
        // the stuck part of a random erasure of the bottom layer
        const auto bottom = shape.bottom();
        const auto& code = params.codes->at(bottom);
        const auto width = shape.width(bottom);
        const auto count = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::lround(cfg.hide_fraction * width)));
        for (int attempt = 0; attempt < 1000; ++attempt) {
            std::vector<std::uint32_t> erased;
            for (auto x : rng.sample_distinct(width, count)) erased.push_back(static_cast<std::uint32_t>(x));
            auto residue = ldpc::peel_residue(code, erased);
            if (residue.empty()) continue;
            d.hidden_fraction = static_cast<double>(residue.size()) / width;
            d.strategy = adversary::HideStoppingSet{bottom, std::move(residue)};
            d.theorem_case = 2;
            d.expected = Decision::Reject;
            return d;
        }
        throw std::runtime_error("hide_fraction too small to leave a stopping set");
    }
    if (cfg.miner == "coding_fraud") {
        const auto layer = static_cast<std::uint32_t>(rng.between(1, shape.depth()));
        const auto check = static_cast<std::uint32_t>(rng.below(params.codes->at(layer).check_count()));
        d.strategy = adversary::CodingFraud{layer, check, Bytes{static_cast<std::uint8_t>(1 + rng.below(255))}};
        d.theorem_case = 3;
        d.expected = Decision::Reject;
        return d;
    }
    if (cfg.miner == "withhold_random") {
        d.strategy = adversary::WithholdRandom{cfg.hide_fraction, rng.next()};
        return d; // the outcome is settled by decoding the publication
    }
    adversary::InvalidClass cls = cfg.miner == "invalid_txn" ? kClasses[index % kClasses.size()]
                                                              : adversary::invalid_class_from_string(cfg.miner.substr(12));
    d.strategy = adversary::InvalidTxn{cls};
    d.theorem_case = 3;
    d.expected = Decision::Reject;
    return d;
}

/// Whether an honestly encoded publication decodes; fills in case 2 if not.
inline void settle_withholding(const ledger::ChainParams& params, const protocol::Publication& pub,
                               const std::set<cmt::SymbolId>& withheld, MinerDraw& d)
{
    std::map<cmt::SymbolId, cmt::RevealedSymbol> rev(pub.symbols.begin(), pub.symbols.end());
    auto res = cmt::decode_tree_classical(pub.header.root, rev, *params.codes);
    if (!std::holds_alternative<cmt::Unavailable>(res)) return;
    const auto layer = std::get<cmt::Unavailable>(res).layer;
    std::vector<std::uint32_t> hidden;
    for (auto id : withheld)
        if (id.layer == layer) hidden.push_back(id.index);
    d.theorem_case = 2;
    d.expected = Decision::Reject;
    d.hidden_fraction = static_cast<double>(ldpc::peel_residue(params.codes->at(layer), hidden).size()) /
                        params.shape.width(layer);
}

} // namespace detail

inline Summary summarize(const ScenarioConfig& cfg, const std::vector<TrialMetrics>& rows)
{
    Summary s;
    s.config = cfg;
    s.bounds = bound_report(cfg);
    std::map<int, CaseSummary> cases;
    std::map<int, double> f_sum;
    std::uint64_t honest_nodes = 0;
    for (const auto& r : rows) {
        auto& cs = cases[r.theorem_case];
        cs.theorem_case = r.theorem_case;
        ++cs.correct.trials;
        cs.correct.successes += r.unanimous_correct;
        ++cs.preconditions.trials;
        cs.preconditions.successes += r.sections_covered && r.symbols_covered && r.connected;
        f_sum[r.theorem_case] += theorem_unavailable_bound(cfg.nh, r.hidden_fraction, cfg.samples());
        for (const auto& n : r.nodes) {
            if (!n.honest) continue;
            ++honest_nodes;
            s.mean_bytes_down += static_cast<double>(n.bytes_down);
            s.mean_symbol_bytes_down += static_cast<double>(n.symbol_bytes_down);
            s.mean_interest_bytes_down += static_cast<double>(n.interest_bytes_down);
            s.mean_hash_ops += static_cast<double>(n.hash_ops);
            s.mean_symbols_stored += static_cast<double>(n.symbols_stored);
            s.mean_neighbors += static_cast<double>(n.neighbors);
            s.max_bytes_down = std::max(s.max_bytes_down, n.bytes_down);
            if (r.expected == Decision::Accept && n.verdict.decision == Decision::Reject) ++s.honest_rejects_of_valid;
        }
    }
    if (honest_nodes) {
        const double h = static_cast<double>(honest_nodes);
        s.mean_bytes_down /= h;
        s.mean_symbol_bytes_down /= h;
        s.mean_interest_bytes_down /= h;
        s.mean_hash_ops /= h;
        s.mean_symbols_stored /= h;
        s.mean_neighbors /= h;
    }
    s.all_pass = true;
    for (auto& [c, cs] : cases) {
        // each trial succeeds with at least its own bound, so the mean bound applies
        cs.bound = c == 2 ? f_sum[c] / static_cast<double>(cs.correct.trials) : s.bounds.theorem_valid;
        cs.pass = cs.correct.upper() >= cs.bound;
        s.all_pass = s.all_pass && cs.pass;
        s.cases.push_back(cs);
    }
    return s;
}

inline ScenarioResult run_scenario(const ScenarioConfig& cfg)
{
    if (auto e = validate(cfg); !e.empty()) throw ConfigError(e);
    const auto params = scenario_params(cfg);
    const auto& shape = params.shape;
    const auto bounds = bound_report(cfg);
    const auto N = cfg.total_nodes();
    const double alpha_eff = N > cfg.nh ? (N - cfg.nh + 0.5) / N : 0.0;

    std::optional<adversary::Workload> base_work;
    if (cfg.transactions) {
        adversary::Workload::Options wo;
        wo.accounts = 2 * cfg.L + 4;
        wo.dormant = 4;
        wo.outputs_per_account = 2;
        wo.history_blocks = static_cast<std::uint32_t>(miner_needs_expiry(cfg.miner) ? cfg.tau + 1 : 3);
        wo.txns_per_block = cfg.L;
        wo.seed = derive_seed(cfg.seed, {0x3011});
        base_work.emplace(params, wo);
    }
    const protocol::ProtocolConfig pcfg{cfg.samples(), cfg.transactions};

    std::vector<TrialMetrics> rows;
    for (std::uint32_t trial = 0; trial < cfg.trials; ++trial) {
        auto seed = [&](std::initializer_list<std::uint64_t> labels) {
            std::uint64_t s = derive_seed(cfg.seed, {0x7a1, trial});
            for (auto l : labels) s = derive_seed(s, {l});
            return s;
        };
        auto g = netsim::generate_graph(N, bounds.p_used, seed({1}), alpha_eff, seed({2}));
        std::vector<std::unique_ptr<protocol::ValidatorNode>> owned(N);
        std::vector<protocol::ValidatorNode*> slots(N, nullptr);
        std::optional<adversary::Workload> work;
        if (cfg.transactions) {
            if (cfg.rounds > 1) work = *base_work;
        }
        const adversary::Workload* wp = work ? &*work : (base_work ? &*base_work : nullptr);
        for (NodeId v = 0; v < N; ++v) {
            if (!g.honest[v]) continue;
            const auto section = protocol::ValidatorNode::draw_section(seed({3, v}), cfg.k);
            owned[v] = std::make_unique<protocol::ValidatorNode>(v, params, section, seed({4, v}), pcfg);
            if (wp) owned[v]->sync(wp->chain());
            slots[v] = owned[v].get();
        }
        std::map<NodeId, adversary::ByzantineStrategy> roles;
        {
            std::size_t j = 0;
            for (NodeId v = 0; v < N; ++v)
                if (!g.honest[v] && !cfg.byzantine.empty())
                    roles[v] = byzantine_from_string(cfg.byzantine[j++ % cfg.byzantine.size()]);
        }
        protocol::AgentFactory agents = [&, agent_seed = seed({5})](NodeId v) -> std::unique_ptr<protocol::DishonestAgent> {
            auto it = roles.find(v);
            if (it == roles.end()) return nullptr;
            return std::make_unique<adversary::ByzantineAgent>(it->second, g, params, v, derive_seed(agent_seed, {v}));
        };

        Digest tree_tip{};
        std::uint64_t tree_height = 0;
        for (std::uint32_t round = 0; round < cfg.rounds; ++round) {
            Rng rng(seed({6, round}));
            auto draw = detail::draw_miner(cfg, params, static_cast<std::uint64_t>(trial) * cfg.rounds + round, rng);
            protocol::Publication pub;
            std::set<cmt::SymbolId> withheld;
            std::vector<ledger::Transaction> block_txns;
            if (wp) {
                auto made = adversary::produce_block(draw.strategy, wp->transactions(cfg.L, rng), *wp, rng);
                pub = std::move(made.publication);
                withheld = std::move(made.withheld);
                block_txns = made.block.txns;
            } else {
                std::vector<Bytes> data(cfg.L, Bytes(cfg.symbol_size));
                for (auto& d : data)
                    for (auto& b : d) b = static_cast<std::uint8_t>(rng.next());
                auto made = adversary::produce_tree(draw.strategy, data, params.codes, tree_height);
                made.publication.header.prev_hash = tree_tip;
                pub = std::move(made.publication);
                withheld = std::move(made.withheld);
            }
            if (std::holds_alternative<adversary::WithholdRandom>(draw.strategy))
                detail::settle_withholding(params, pub, withheld, draw);

            protocol::RoundOptions ropt;
            ropt.delta = cfg.delta;
            ropt.seed = seed({7, round});
            ropt.agents = agents;
            auto result = protocol::run_round(g, slots, pub, ropt);

            TrialMetrics m;
            m.trial = trial;
            m.round = round;
            m.height = pub.header.height;
            m.miner = cfg.miner;
            m.theorem_case = draw.theorem_case;
            m.expected = draw.expected;
            m.hidden_fraction = draw.hidden_fraction;
            m.ticks_to_unanimity = result.ticks_to_unanimity();
            m.unanimous_correct = result.unanimous(draw.expected);

            std::set<std::uint32_t> sections;
            std::vector<std::set<std::uint32_t>> desired(shape.depth());
            std::map<netsim::InterestKey, std::uint32_t> dense;
            std::vector<std::vector<std::uint32_t>> colors(N);
            for (NodeId v = 0; v < N; ++v) {
                const auto& rep = result.nodes[v];
                NodeMetrics nm;
                nm.id = v;
                nm.honest = rep.honest;
                nm.verdict = rep.verdict;
                nm.bytes_down = rep.bytes_down;
                nm.bytes_up = rep.bytes_up;
                nm.symbol_bytes_down = rep.symbol_bytes_down;
                nm.interest_bytes_down = rep.interest_bytes_down;
                nm.hash_ops = rep.hash_ops;
                nm.symbols_stored = rep.symbols_stored;
                nm.rejected_symbols = rep.rejected_symbols;
                nm.rejected_proofs = rep.rejected_proofs;
                nm.neighbors = rep.neighbors;
                if (auto* n = slots[v]) {
                    nm.section = n->section();
                    sections.insert(n->section());
                    for (std::uint32_t l = 1; l <= shape.depth(); ++l)
                        for (auto i : n->desired_symbols(l)) desired[l - 1].insert(i);
                    for (auto key : n->interests()) {
                        auto [it, fresh] = dense.try_emplace(key, static_cast<std::uint32_t>(dense.size()));
                        colors[v].push_back(it->second);
                    }
                }
                m.nodes.push_back(nm);
            }
            m.sections_covered = sections.size() == cfg.k;
            m.symbols_covered = true;
            for (std::uint32_t l = 1; l <= shape.depth(); ++l)
                m.symbols_covered = m.symbols_covered && desired[l - 1].size() == shape.width(l);
            auto conn = color_subgraphs_connected(g, colors, static_cast<std::uint32_t>(dense.size()));
            m.connected = std::all_of(conn.begin(), conn.end(), [](bool b) { return b; });
            rows.push_back(std::move(m));

            protocol::finish_round(slots);
            if (draw.expected == Decision::Accept) {
                if (work) work->extend(std::move(block_txns));
                tree_tip = pub.header.hash();
                ++tree_height;
            }
        }
    }
    ScenarioResult out;
    out.summary = summarize(cfg, rows);
    out.rows = std::move(rows);
    return out;
}

// ---------------------------------------------------------------------------
// Export

inline void export_rows(std::ostream& os, const std::vector<TrialMetrics>& rows)
{
    if (rows.empty()) throw std::invalid_argument("no trials to export");
    os << "trial,round,height,miner,case,expected,sections_covered,symbols_covered,connected,unanimous_correct,"
          "ticks_to_unanimity,node,honest,section,decision,reason,layer,tick,bytes_down,bytes_up,symbol_bytes_down,"
          "interest_bytes_down,hash_ops,symbols_stored,rejected_symbols,rejected_proofs,neighbors\n";
    for (const auto& r : rows)
        for (const auto& n : r.nodes) {
            os << r.trial << ',' << r.round << ',' << r.height << ',' << r.miner << ',' << r.theorem_case << ','
               << protocol::to_string(r.expected) << ',' << r.sections_covered << ',' << r.symbols_covered << ','
               << r.connected << ',' << r.unanimous_correct << ',' << r.ticks_to_unanimity << ',' << n.id << ','
               << n.honest << ',' << n.section << ',' << protocol::to_string(n.verdict.decision) << ','
               << protocol::to_string(n.verdict.reason) << ',' << n.verdict.layer << ',' << n.verdict.tick << ','
               << n.bytes_down << ',' << n.bytes_up << ',' << n.symbol_bytes_down << ',' << n.interest_bytes_down
               << ',' << n.hash_ops << ',' << n.symbols_stored << ',' << n.rejected_symbols << ','
               << n.rejected_proofs << ',' << n.neighbors << '\n';
        }
}

inline json summary_json(const Summary& s)
{
    json cases = json::array();
    for (const auto& c : s.cases)
        cases.push_back({{"case", c.theorem_case},
                         {"trials", c.correct.trials},
                         {"unanimous_correct", c.correct.successes},
                         {"rate", c.correct.rate()},
                         {"wilson_lower", c.correct.lower()},
                         {"wilson_upper", c.correct.upper()},
                         {"bound", c.bound},
                         {"pass", c.pass},
                         {"preconditions_rate", c.preconditions.rate()}});
    return {{"config", s.config},
            {"bounds", bounds_json(s.bounds)},
            {"cases", cases},
            {"per_node",
             {{"mean_bytes_down", s.mean_bytes_down},
              {"mean_symbol_bytes_down", s.mean_symbol_bytes_down},
              {"mean_interest_bytes_down", s.mean_interest_bytes_down},
              {"max_bytes_down", s.max_bytes_down},
              {"mean_hash_ops", s.mean_hash_ops},
              {"mean_symbols_stored", s.mean_symbols_stored},
              {"mean_neighbors", s.mean_neighbors}}},
            {"honest_rejects_of_valid_blocks", s.honest_rejects_of_valid},
            {"all_pass", s.all_pass}};
}

inline void export_summary(std::ostream& os, const Summary& s, std::size_t row_count)
{
    if (row_count == 0) throw std::invalid_argument("no trials to export");
    os << summary_json(s).dump(2) << '\n';
}

inline void export_files(const ScenarioResult& r, const std::string& rows_path, const std::string& summary_path)
{
    if (r.rows.empty()) throw std::invalid_argument("no trials to export");
    auto open = [](const std::string& path) {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + path);
        return f;
    };
    if (!rows_path.empty()) {
        auto f = open(rows_path);
        export_rows(f, r.rows);
        if (!f) throw std::runtime_error("cannot write " + rows_path);
    }
    if (!summary_path.empty()) {
        auto f = open(summary_path);
        export_summary(f, r.summary, r.rows.size());
        if (!f) throw std::runtime_error("cannot write " + summary_path);
    }
}

} // namespace cover::harness
