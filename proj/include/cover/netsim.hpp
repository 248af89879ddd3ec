#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "cover/bytes.hpp"
#include "cover/hash.hpp"
#include "cover/rng.hpp"

namespace cover::netsim {

using NodeId = std::uint32_t;
using Tick = std::uint64_t;

struct NetworkGraph {
    std::uint32_t n = 0;
    double p = 0;
    std::uint64_t seed = 0;
    double alpha = 0;
    std::vector<std::vector<NodeId>> adj; // sorted
    std::vector<bool> honest;

    std::size_t edge_count() const
    {
        std::size_t e = 0;
        for (const auto& a : adj) e += a.size();
        return e / 2;
    }
    bool has_edge(NodeId a, NodeId b) const { return std::binary_search(adj[a].begin(), adj[a].end(), b); }
    std::uint32_t honest_count() const
    {
        return static_cast<std::uint32_t>(std::count(honest.begin(), honest.end(), true));
    }
    std::vector<NodeId> honest_nodes() const
    {
        std::vector<NodeId> v;
        for (NodeId i = 0; i < n; ++i)
            if (honest[i]) v.push_back(i);
        return v;
    }
};

/// Erdos-Renyi G(n, p) with floor(alpha * n) nodes marked dishonest.
inline NetworkGraph generate_graph(std::uint32_t n, double p, std::uint64_t seed, double alpha = 0,
                                   std::uint64_t placement_seed = 0)
{
    if (p < 0 || p > 1) throw std::invalid_argument("edge probability out of range");
    if (alpha < 0 || alpha >= 1) throw std::invalid_argument("dishonest fraction out of range");
    NetworkGraph g;
    g.n = n;
    g.p = p;
    g.seed = seed;
    g.alpha = alpha;
    g.adj.assign(n, {});
    Rng rng(seed);
    for (NodeId i = 0; i < n; ++i)
        for (NodeId j = i + 1; j < n; ++j)
            if (rng.unit() < p) {
                g.adj[i].push_back(j);
                g.adj[j].push_back(i);
            }
    for (auto& a : g.adj) std::sort(a.begin(), a.end());
    g.honest.assign(n, true);
    const auto bad = static_cast<std::uint64_t>(std::floor(alpha * n));
    Rng place(placement_seed);
    for (auto v : place.sample_distinct(n, bad)) g.honest[v] = false;
    return g;
}

// ---------------------------------------------------------------------------
// Messages and the event loop

enum class MsgType : std::uint8_t {
    Header = 0,
    Symbol = 1,
    FraudProof = 2,
    CodingFraudProof = 3,
    Interest = 4,
    Other = 5,
};

inline const char* to_string(MsgType t)
{
    switch (t) {
    case MsgType::Header: return "header";
    case MsgType::Symbol: return "symbol";
    case MsgType::FraudProof: return "fraud_proof";
    case MsgType::CodingFraudProof: return "coding_fraud_proof";
    case MsgType::Interest: return "interest";
    case MsgType::Other: return "other";
    }
    return "?";
}

struct Message {
    MsgType type = MsgType::Other;
    std::shared_ptr<const Bytes> body; // shared between hops

    Message() = default;
    Message(MsgType t, Bytes payload) : type(t), body(std::make_shared<const Bytes>(std::move(payload))) {}

    const Bytes& payload() const
    {
        static const Bytes empty;
        return body ? *body : empty;
    }
    std::size_t size() const { return 1 + payload().size(); }
    /// De-duplication key: hash of the canonical bytes. Not counted as work.
    Digest key() const
    {
        auto d = Hasher(HashTag::Message).update_byte(static_cast<std::uint8_t>(type)).update(payload()).finish();
        --hash_op_counter();
        return d;
    }
};

struct Delivery {
    Tick sent = 0;
    Tick tick = 0;
    NodeId from = 0;
    NodeId to = 0;
    MsgType type = MsgType::Other;
    std::size_t size = 0;
};

struct NodeCounters {
    std::uint64_t bytes_received = 0;
    std::uint64_t bytes_sent = 0;
    std::uint64_t messages_received = 0;
    std::map<MsgType, std::uint64_t> bytes_received_by_type;
};

class Simulator;

/// Callbacks driven by the event loop.
class Handler {
public:
    virtual ~Handler() = default;
    virtual void on_message(Simulator& sim, NodeId to, NodeId from, const Message& msg) = 0;
    virtual void on_timer(Simulator&, NodeId, std::uint64_t) {}
};

/// Deterministic discrete-event loop. Each hop takes a seeded delay in
/// [1, delta] ticks; ties are broken by send order.
class Simulator {
public:
    Simulator(const NetworkGraph& g, Tick delta, std::uint64_t seed, bool record_trace = false)
        : graph_(&g), delta_(delta), rng_(seed), record_(record_trace), counters_(g.n)
    {
        if (delta < 1) throw std::invalid_argument("delta must be at least 1");
    }

    const NetworkGraph& graph() const { return *graph_; }
    Tick now() const { return now_; }
    Tick delta() const { return delta_; }
    const std::vector<Delivery>& trace() const { return trace_; }
    const NodeCounters& counters(NodeId v) const { return counters_.at(v); }

    void send(NodeId from, NodeId to, Message msg)
    {
        const Tick at = now_ + rng_.between(1, delta_);
        counters_[from].bytes_sent += msg.size();
        queue_.push(Event{at, seq_++, from, to, now_, std::move(msg), false, 0});
    }

    void send_to_neighbors(NodeId from, const Message& msg, std::optional<NodeId> except = std::nullopt)
    {
        for (auto nb : graph_->adj[from])
            if (!except || nb != *except) send(from, nb, msg);
    }

    /// Delivery from outside the graph (from == to), e.g. a miner.
    void deliver_at(NodeId to, Tick at, Message msg)
    {
        queue_.push(Event{std::max(at, now_), seq_++, to, to, now_, std::move(msg), false, 0});
    }

    void set_timer(NodeId node, Tick at, std::uint64_t token)
    {
        queue_.push(Event{std::max(at, now_), seq_++, node, node, now_, {}, true, token});
    }

    /// Processes events up to and including tick `until`.
    void run(Handler& h, Tick until = ~Tick{0})
    {
        while (!queue_.empty() && queue_.top().at <= until) {
            Event e = queue_.top();
            queue_.pop();
            now_ = e.at;
            if (e.timer) {
                h.on_timer(*this, e.to, e.token);
                continue;
            }
            auto& c = counters_[e.to];
            c.bytes_received += e.msg.size();
            c.bytes_received_by_type[e.msg.type] += e.msg.size();
            ++c.messages_received;
            if (record_) trace_.push_back({e.sent, e.at, e.from, e.to, e.msg.type, e.msg.size()});
            h.on_message(*this, e.to, e.from, e.msg);
        }
        if (queue_.empty() && until != ~Tick{0}) now_ = std::max(now_, until);
    }

    bool idle() const { return queue_.empty(); }

private:
    struct Event {
        Tick at;
        std::uint64_t seq;
        NodeId from;
        NodeId to;
        Tick sent;
        Message msg;
        bool timer;
        std::uint64_t token;
        bool operator>(const Event& o) const { return at != o.at ? at > o.at : seq > o.seq; }
    };

    const NetworkGraph* graph_;
    Tick delta_;
    Rng rng_;
    bool record_;
    Tick now_ = 0;
    std::uint64_t seq_ = 0;
    std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
    std::vector<NodeCounters> counters_;
    std::vector<Delivery> trace_;
};

/// One line per delivery: tick from to type size.
inline void export_trace(std::ostream& out, const std::vector<Delivery>& trace)
{
    for (const auto& d : trace) out << d.tick << ' ' << d.from << ' ' << d.to << ' ' << to_string(d.type) << ' ' << d.size << '\n';
}

// ---------------------------------------------------------------------------
// Classic gossip

struct GossipOptions {
    std::function<bool(NodeId, const Message&)> validate = [](NodeId, const Message&) { return true; };
    bool dishonest_forward = false;
    Tick delta = 2;
    std::uint64_t seed = 0;
    bool record_trace = false;
};

struct GossipResult {
    std::vector<std::optional<Tick>> first_receipt; // origin at tick 0
    std::vector<Delivery> trace;
};

/// Flood from `origin` with seen-set suppression. Honest nodes forward a
/// message once, and only if it validates.
inline GossipResult gossip(const NetworkGraph& g, NodeId origin, const Message& msg, const GossipOptions& opt = {})
{
    struct Flood : Handler {
        const NetworkGraph& g;
        const GossipOptions& opt;
        std::vector<std::optional<Tick>> seen;
        Flood(const NetworkGraph& g_, const GossipOptions& o) : g(g_), opt(o), seen(g_.n) {}
        void on_message(Simulator& sim, NodeId to, NodeId, const Message& m) override
        {
            if (seen[to]) return;
            seen[to] = sim.now();
            const bool forward = g.honest[to] ? opt.validate(to, m) : opt.dishonest_forward;
            if (forward) sim.send_to_neighbors(to, m);
        }
    } flood(g, opt);
    Simulator sim(g, opt.delta, opt.seed, opt.record_trace);
    flood.seen[origin] = 0;
    sim.send_to_neighbors(origin, msg);
    sim.run(flood);
    return {std::move(flood.seen), sim.trace()};
}

// ---------------------------------------------------------------------------
// Selective broadcast

using InterestKey = std::uint64_t;

inline Message interest_message(const std::vector<InterestKey>& keys)
{
    Writer w;
    w.u32(static_cast<std::uint32_t>(keys.size()));
    for (auto k : keys) w.u64(k);
    return {MsgType::Interest, std::move(w).take()};
}

inline std::vector<InterestKey> read_interest(const Message& m)
{
    Reader r(m.payload());
    std::vector<InterestKey> keys(r.u32());
    for (auto& k : keys) k = r.u64();
    r.expect_done();
    return keys;
}

/// Per-node selective forwarding state: what the node wants, what each
/// neighbour has asked for, and what the node holds. A neighbour that
/// registers interest late is offered any matching symbol already held.
class SelectiveState {
public:
    bool wants(InterestKey k) const { return own_.count(k) != 0; }
    const std::set<InterestKey>& interests() const { return own_; }

    /// Returns the keys that were not already registered.
    std::vector<InterestKey> add_interests(const std::vector<InterestKey>& keys)
    {
        std::vector<InterestKey> fresh;
        for (auto k : keys)
            if (own_.insert(k).second) fresh.push_back(k);
        return fresh;
    }

    bool neighbor_wants(NodeId nb, InterestKey k) const
    {
        auto it = neighbor_.find(nb);
        return it != neighbor_.end() && it->second.count(k) != 0;
    }

    /// Records a neighbour's interests; returns held messages it now wants.
    std::vector<const Message*> on_neighbor_interest(NodeId nb, const std::vector<InterestKey>& keys)
    {
        std::vector<const Message*> backlog;
        auto& set = neighbor_[nb];
        for (auto k : keys) {
            if (!set.insert(k).second) continue;
            auto h = held_.find(k);
            if (h != held_.end()) backlog.push_back(&h->second);
        }
        return backlog;
    }

    bool holds(InterestKey k) const { return held_.count(k) != 0; }
    const Message* held(InterestKey k) const
    {
        auto it = held_.find(k);
        return it == held_.end() ? nullptr : &it->second;
    }
    /// Returns false if already held.
    bool hold(InterestKey k, const Message& m) { return held_.emplace(k, m).second; }
    void release(InterestKey k) { held_.erase(k); }

    /// Sends `m` to every neighbour that asked for `k`.
    void forward(Simulator& sim, NodeId self, InterestKey k, const Message& m, std::optional<NodeId> except) const
    {
        for (auto nb : sim.graph().adj[self])
            if ((!except || nb != *except) && neighbor_wants(nb, k)) sim.send(self, nb, m);
    }

private:
    std::set<InterestKey> own_;
    std::map<NodeId, std::set<InterestKey>> neighbor_;
    std::map<InterestKey, Message> held_;
};

inline Message keyed_symbol_message(InterestKey k, ByteView body)
{
    Writer w;
    w.u64(k);
    w.raw(body);
    return {MsgType::Symbol, std::move(w).take()};
}

inline InterestKey symbol_key_of(const Message& m)
{
    Reader r(m.payload());
    return r.u64();
}

struct Publication {
    NodeId node;
    InterestKey key;
    Bytes body;
};

struct SelectiveOptions {
    Tick delta = 2;
    std::uint64_t seed = 0;
    bool record_trace = false;
};

struct SelectiveResult {
    std::map<InterestKey, std::vector<std::optional<Tick>>> receipt; // per key, per node
    std::vector<NodeCounters> counters;
    std::vector<Delivery> trace;

    /// Every honest node interested in `k` got it.
    bool delivered_to_all(const NetworkGraph& g, const std::vector<std::set<InterestKey>>& interests,
                          InterestKey k) const
    {
        auto it = receipt.find(k);
        for (NodeId v = 0; v < g.n; ++v) {
            if (!g.honest[v] || !interests[v].count(k)) continue;
            if (it == receipt.end() || !it->second[v]) return false;
        }
        return true;
    }
};

/// Interest exchange at tick 0, publications at tick delta, then forwarding
/// only to interested neighbours. Dishonest nodes drop everything.
inline SelectiveResult selective_broadcast_round(const NetworkGraph& g,
                                                 const std::vector<std::set<InterestKey>>& interests,
                                                 const std::vector<Publication>& pubs,
                                                 const SelectiveOptions& opt = {})
{
    constexpr std::uint64_t kPublishToken = 1;
    struct Node : Handler {
        const NetworkGraph& g;
        const std::vector<Publication>& pubs;
        std::vector<SelectiveState> state;
        std::map<InterestKey, std::vector<std::optional<Tick>>> receipt;
        Node(const NetworkGraph& g_, const std::vector<Publication>& p) : g(g_), pubs(p), state(g_.n) {}

        void mark(InterestKey k, NodeId v, Tick t)
        {
            auto& r = receipt[k];
            if (r.empty()) r.resize(g.n);
            if (!r[v]) r[v] = t;
        }
        void on_message(Simulator& sim, NodeId to, NodeId from, const Message& m) override
        {
            if (!g.honest[to]) return;
            auto& s = state[to];
            if (m.type == MsgType::Interest) {
                for (auto* backlog : s.on_neighbor_interest(from, read_interest(m))) sim.send(to, from, *backlog);
                return;
            }
            const auto k = symbol_key_of(m);
            if (!s.wants(k) || !s.hold(k, m)) return;
            mark(k, to, sim.now());
            s.forward(sim, to, k, m, from);
        }
        void on_timer(Simulator& sim, NodeId, std::uint64_t) override
        {
            for (const auto& p : pubs) {
                if (!g.honest[p.node]) continue;
                auto m = keyed_symbol_message(p.key, p.body);
                auto& s = state[p.node];
                if (!s.hold(p.key, m)) continue;
                mark(p.key, p.node, sim.now());
                s.forward(sim, p.node, p.key, m, std::nullopt);
            }
        }
    } node(g, pubs);

    Simulator sim(g, opt.delta, opt.seed, opt.record_trace);
    for (NodeId v = 0; v < g.n; ++v) {
        if (!g.honest[v]) continue;
        std::vector<InterestKey> keys(interests[v].begin(), interests[v].end());
        node.state[v].add_interests(keys);
        sim.send_to_neighbors(v, interest_message(keys));
    }
    sim.set_timer(0, opt.delta, kPublishToken);
    sim.run(node);

    SelectiveResult res;
    res.receipt = std::move(node.receipt);
    for (NodeId v = 0; v < g.n; ++v) res.counters.push_back(sim.counters(v));
    res.trace = sim.trace();
    return res;
}

/// Union-find over honest nodes interested in `k`: true iff they form one
/// connected component (vacuously true for zero or one node).
inline bool interest_subgraph_connected(const NetworkGraph& g, const std::vector<std::set<InterestKey>>& interests,
                                        InterestKey k)
{
    std::vector<NodeId> parent(g.n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<NodeId(NodeId)> find = [&](NodeId x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    auto member = [&](NodeId v) { return g.honest[v] && interests[v].count(k) != 0; };
    for (NodeId v = 0; v < g.n; ++v) {
        if (!member(v)) continue;
        for (auto u : g.adj[v])
            if (u > v && member(u)) parent[find(u)] = find(v);
    }
    std::optional<NodeId> root;
    for (NodeId v = 0; v < g.n; ++v) {
        if (!member(v)) continue;
        if (!root) root = find(v);
        else if (find(v) != *root) return false;
    }
    return true;
}

} // namespace cover::netsim
