#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "codecircuit/errors.hpp"

namespace codecircuit {

using NodeId = std::int64_t;

inline constexpr int kGraphSchemaVersion = 1;

enum class NodeKind { Feature, Error, Token, Logit };

inline const char* to_string(NodeKind k) {
    switch (k) {
        case NodeKind::Feature: return "feature";
        case NodeKind::Error: return "error";
        case NodeKind::Token: return "token";
        case NodeKind::Logit: return "logit";
    }
    return "?";
}

inline std::optional<NodeKind> node_kind_from_string(const std::string& s) {
    if (s == "feature") return NodeKind::Feature;
    if (s == "error") return NodeKind::Error;
    if (s == "token") return NodeKind::Token;
    if (s == "logit") return NodeKind::Logit;
    return std::nullopt;
}

// Order of kinds within one layer: inputs (token, error) feed features, which
// feed logits.
inline int kind_rank(NodeKind k) {
    switch (k) {
        case NodeKind::Token:
        case NodeKind::Error: return 0;
        case NodeKind::Feature: return 1;
        case NodeKind::Logit: return 2;
    }
    return 0;
}

struct Node {
    NodeId id = 0;
    NodeKind kind = NodeKind::Feature;
    int layer = 0;
    int position = 0;
    std::optional<std::int64_t> feature_index;  // Feature only
    std::optional<double> activation;           // Feature only, > 0
    std::optional<std::int64_t> token_id;       // Token and Logit only

    friend bool operator==(const Node&, const Node&) = default;
};

struct Edge {
    NodeId src = 0;
    NodeId dst = 0;
    double weight = 0.0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

struct TracedLogit {
    std::int64_t token_id = 0;
    double probability = 0.0;

    friend bool operator==(const TracedLogit&, const TracedLogit&) = default;
};

struct AttributionGraph {
    int schema_version = kGraphSchemaVersion;
    int num_layers = 1;
    std::vector<Node> nodes;
    std::vector<Edge> edges;
    std::vector<TracedLogit> traced_logits;
    std::int64_t total_active_features = 0;

    friend bool operator==(const AttributionGraph&, const AttributionGraph&) = default;
};

struct Violation {
    std::string invariant;  // short stable tag, e.g. "activation-positive"
    std::string message;
    std::vector<NodeId> ids;
};

// Sorts nodes by id, edges by (src, dst) and traced logits by token id.
inline AttributionGraph canonicalize(AttributionGraph g) {
    std::sort(g.nodes.begin(), g.nodes.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) {
        return std::pair(a.src, a.dst) < std::pair(b.src, b.dst);
    });
    std::sort(g.traced_logits.begin(), g.traced_logits.end(),
              [](const TracedLogit& a, const TracedLogit& b) { return a.token_id < b.token_id; });
    return g;
}

inline std::unordered_map<NodeId, std::size_t> node_index(const AttributionGraph& g) {
    std::unordered_map<NodeId, std::size_t> idx;
    idx.reserve(g.nodes.size());
    for (std::size_t i = 0; i < g.nodes.size(); ++i) idx.emplace(g.nodes[i].id, i);
    return idx;
}

// Whether an edge src -> dst respects the computational order of the
// replacement model.
inline bool edge_order_ok(const Node& src, const Node& dst) {
    if (src.layer < dst.layer) return true;
    if (src.layer > dst.layer) return false;
    return src.position <= dst.position && kind_rank(src.kind) < kind_rank(dst.kind);
}

// Kahn's algorithm over node indices. Ties resolve by ascending index so the
// order is deterministic. Returns nullopt when the edge set has a cycle.
inline std::optional<std::vector<std::size_t>> topological_order(const AttributionGraph& g) {
    const auto idx = node_index(g);
    const std::size_t n = g.nodes.size();
    std::vector<std::vector<std::size_t>> out(n);
    std::vector<std::size_t> indeg(n, 0);
    for (const auto& e : g.edges) {
        auto s = idx.find(e.src);
        auto d = idx.find(e.dst);
        if (s == idx.end() || d == idx.end()) continue;
        out[s->second].push_back(d->second);
        ++indeg[d->second];
    }
    std::set<std::size_t> ready;
    for (std::size_t i = 0; i < n; ++i)
        if (indeg[i] == 0) ready.insert(i);
    std::vector<std::size_t> order;
    order.reserve(n);
    while (!ready.empty()) {
        const std::size_t u = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(u);
        for (std::size_t v : out[u])
            if (--indeg[v] == 0) ready.insert(v);
    }
    if (order.size() != n) return std::nullopt;
    return order;
}

// Checks every structural invariant of an attribution graph. Violations are
// data: an empty result means the graph is valid.
inline std::vector<Violation> validate_graph(const AttributionGraph& g) {
    std::vector<Violation> out;
    auto add = [&](std::string inv, std::string msg, std::vector<NodeId> ids = {}) {
        out.push_back({std::move(inv), std::move(msg), std::move(ids)});
    };

    if (g.schema_version != kGraphSchemaVersion)
        add("schema-version", "unsupported schema_version " + std::to_string(g.schema_version));
    if (g.num_layers < 1) add("num-layers", "num_layers must be >= 1");
    if (g.total_active_features < 0) add("total-active-features", "total_active_features must be >= 0");

    std::map<NodeId, const Node*> by_id;
    std::map<std::pair<int, int>, NodeId> error_slots;
    std::int64_t feature_count = 0;
    bool has_logit = false;
    for (const auto& n : g.nodes) {
        const std::string tag = "node " + std::to_string(n.id);
        if (n.id < 0) add("node-id", tag + ": id must be non-negative", {n.id});
        if (!by_id.emplace(n.id, &n).second) add("node-id-unique", tag + ": duplicate id", {n.id});
        if (n.position < 0) add("position", tag + ": position must be >= 0", {n.id});

        switch (n.kind) {
            case NodeKind::Feature:
            case NodeKind::Error:
                if (n.layer < 0 || n.layer >= g.num_layers)
                    add("layer-range", tag + ": layer " + std::to_string(n.layer) + " outside [0, num_layers)", {n.id});
                break;
            case NodeKind::Token:
                if (n.layer != -1) add("layer-range", tag + ": token nodes must have layer -1", {n.id});
                break;
            case NodeKind::Logit:
                if (n.layer != g.num_layers) add("layer-range", tag + ": logit nodes must have layer num_layers", {n.id});
                has_logit = true;
                break;
        }

        const bool is_feature = n.kind == NodeKind::Feature;
        if (is_feature) {
            ++feature_count;
            if (!n.activation) {
                add("activation-present", tag + ": feature node missing activation", {n.id});
            } else if (!std::isfinite(*n.activation) || !(*n.activation > 0.0)) {
                add("activation-positive", tag + ": activation must be > 0", {n.id});
            }
            if (!n.feature_index) add("feature-index-present", tag + ": feature node missing feature_index", {n.id});
            else if (*n.feature_index < 0) add("feature-index-range", tag + ": feature_index must be >= 0", {n.id});
        } else {
            if (n.activation) add("activation-present", tag + ": activation only allowed on feature nodes", {n.id});
            if (n.feature_index) add("feature-index-present", tag + ": feature_index only allowed on feature nodes", {n.id});
        }

        const bool wants_token = n.kind == NodeKind::Token || n.kind == NodeKind::Logit;
        if (wants_token && !n.token_id) add("token-id-present", tag + ": missing token_id", {n.id});
        if (!wants_token && n.token_id) add("token-id-present", tag + ": token_id only allowed on token/logit nodes", {n.id});

        if (n.kind == NodeKind::Error) {
            auto [it, fresh] = error_slots.emplace(std::pair(n.layer, n.position), n.id);
            if (!fresh)
                add("error-slot-unique",
                    "duplicate error node at (layer " + std::to_string(n.layer) + ", position " +
                        std::to_string(n.position) + ")",
                    {it->second, n.id});
        }
    }
    if (!has_logit) add("logit-present", "graph has no logit node");
    if (g.total_active_features < feature_count)
        add("total-active-features", "total_active_features " + std::to_string(g.total_active_features) +
                                         " is below the feature node count " + std::to_string(feature_count));

    std::set<std::pair<NodeId, NodeId>> seen_edges;
    bool endpoints_ok = true;
    for (const auto& e : g.edges) {
        const std::string tag = "edge " + std::to_string(e.src) + "->" + std::to_string(e.dst);
        if (!seen_edges.emplace(e.src, e.dst).second) add("edge-unique", tag + ": duplicate edge", {e.src, e.dst});
        if (!std::isfinite(e.weight) || e.weight == 0.0)
            add("edge-weight", tag + ": weight must be finite and nonzero", {e.src, e.dst});
        if (e.src == e.dst) {
            add("acyclic", tag + ": self-loop on node " + std::to_string(e.src), {e.src});
            continue;
        }
        auto s = by_id.find(e.src);
        auto d = by_id.find(e.dst);
        if (s == by_id.end() || d == by_id.end()) {
            endpoints_ok = false;
            add("edge-endpoint", tag + ": endpoint does not resolve to a node", {e.src, e.dst});
            continue;
        }
        if (!edge_order_ok(*s->second, *d->second))
            add("edge-order", tag + ": edge violates computational order", {e.src, e.dst});
    }
    if (endpoints_ok && !topological_order(g)) add("acyclic", "edge set contains a cycle");

    double mass = 0.0;
    std::set<std::int64_t> traced_tokens;
    for (const auto& t : g.traced_logits) {
        if (!std::isfinite(t.probability) || !(t.probability > 0.0) || t.probability > 1.0)
            add("traced-probability", "traced probability for token " + std::to_string(t.token_id) + " outside (0, 1]");
        else
            mass += t.probability;
        if (!traced_tokens.insert(t.token_id).second)
            add("traced-unique", "token " + std::to_string(t.token_id) + " traced twice");
    }
    if (g.traced_logits.empty()) add("traced-present", "traced_logits is empty");
    // Slack absorbs rounding in the exporter's top-k accumulation.
    if (mass > 1.0 + 1e-9) add("traced-mass", "probability mass exceeds 1");
    for (const auto& n : g.nodes)
        if (n.kind == NodeKind::Logit && n.token_id && !traced_tokens.count(*n.token_id))
            add("logit-traced", "logit node " + std::to_string(n.id) + " has untraced token " +
                                    std::to_string(*n.token_id), {n.id});
    return out;
}

inline std::string describe(const std::vector<Violation>& vs) {
    std::string s;
    for (const auto& v : vs) {
        if (!s.empty()) s += "; ";
        s += "[" + v.invariant + "] " + v.message;
    }
    return s;
}

class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<Violation> violations)
        : Error("ValidationError", describe(violations)), violations_(std::move(violations)) {}

    const std::vector<Violation>& violations() const noexcept { return violations_; }

private:
    std::vector<Violation> violations_;
};

inline const TracedLogit* find_traced(const AttributionGraph& g, std::int64_t token_id) {
    for (const auto& t : g.traced_logits)
        if (t.token_id == token_id) return &t;
    return nullptr;
}

}  // namespace codecircuit
