#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

#include "codecircuit/graph.hpp"

namespace codecircuit {

struct PrunerConfig {
    double node_threshold = 0.8;
    double edge_threshold = 0.98;
    // Truncates the path-sum series after this many hops. Unset means exact
    // propagation over the whole DAG.
    std::optional<int> max_iterations;
    double epsilon = 1e-12;

    void check() const {
        if (!(node_threshold > 0.0 && node_threshold <= 1.0))
            throw InvalidConfigError("node_threshold must lie in (0, 1]");
        if (!(edge_threshold > 0.0 && edge_threshold <= 1.0))
            throw InvalidConfigError("edge_threshold must lie in (0, 1]");
        if (!(epsilon > 0.0)) throw InvalidConfigError("epsilon must be > 0");
        if (max_iterations && *max_iterations < 0) throw InvalidConfigError("max_iterations must be >= 0");
    }
};

using InfluenceMap = std::map<NodeId, double>;

struct PrunedGraph {
    AttributionGraph graph;
    InfluenceMap influence;  // retained nodes only
    std::int64_t retained_feature_count = 0;
    std::int64_t retained_error_count = 0;
};

// Influence of every node on the traced output:
//
//   influence = sum_k (A^T)^k p,
//
// where A[u][v] = |w_uv| / (sum_u' |w_u'v| + epsilon) normalizes each node's
// incoming attribution and p seeds each logit with its traced probability.
// On a DAG the series is finite and one reverse-topological sweep sums it.
inline InfluenceMap compute_influence(const AttributionGraph& g, const PrunerConfig& cfg = {}) {
    const std::size_t n = g.nodes.size();
    const auto idx = node_index(g);

    std::vector<double> seed(n, 0.0);
    bool has_logit = false;
    for (std::size_t i = 0; i < n; ++i) {
        const Node& node = g.nodes[i];
        if (node.kind != NodeKind::Logit) continue;
        has_logit = true;
        if (node.token_id)
            if (const auto* t = find_traced(g, *node.token_id)) seed[i] = t->probability;
    }
    if (!has_logit) throw EmptyLogitError("graph has no logit node");

    auto order = topological_order(g);
    if (!order) throw CyclicGraphError("attribution graph contains a cycle");

    std::vector<double> in_mass(n, 0.0);
    struct Arc {
        std::size_t dst;
        double abs_w;
    };
    std::vector<std::vector<Arc>> out(n);
    for (const auto& e : g.edges) {
        const std::size_t s = idx.at(e.src), d = idx.at(e.dst);
        in_mass[d] += std::abs(e.weight);
        out[s].push_back({d, std::abs(e.weight)});
    }
    auto coeff = [&](const Arc& a) { return a.abs_w / (in_mass[a.dst] + cfg.epsilon); };

    // Longest path length in hops bounds the number of nonzero series terms.
    std::vector<int> height(n, 0);
    for (auto it = order->rbegin(); it != order->rend(); ++it)
        for (const Arc& a : out[*it]) height[*it] = std::max(height[*it], height[a.dst] + 1);
    const int depth = n ? *std::max_element(height.begin(), height.end()) : 0;

    std::vector<double> total(n, 0.0);
    if (!cfg.max_iterations || *cfg.max_iterations >= depth) {
        for (auto it = order->rbegin(); it != order->rend(); ++it) {
            double acc = seed[*it];
            for (const Arc& a : out[*it]) acc += coeff(a) * total[a.dst];
            total[*it] = acc;
        }
    } else {
        std::vector<double> term = seed;
        total = seed;
        for (int k = 0; k < *cfg.max_iterations; ++k) {
            std::vector<double> next(n, 0.0);
            for (std::size_t u = 0; u < n; ++u)
                for (const Arc& a : out[u]) next[u] += coeff(a) * term[a.dst];
            for (std::size_t u = 0; u < n; ++u) total[u] += next[u];
            term = std::move(next);
        }
    }

    InfluenceMap result;
    for (std::size_t i = 0; i < n; ++i) result.emplace(g.nodes[i].id, total[i]);
    return result;
}

// Keeps every logit, then the shortest prefix of non-logit nodes (descending
// influence, ascending id on ties) reaching node_threshold of the total
// non-logit influence. Among surviving edges, the lowest |w| * influence(dst)
// edges are dropped while the kept mass stays >= edge_threshold of the total.
inline PrunedGraph prune_graph(const AttributionGraph& g, const PrunerConfig& cfg = {}) {
    cfg.check();
    const InfluenceMap influence = compute_influence(g, cfg);

    std::vector<const Node*> ranked;
    std::set<NodeId> keep;
    for (const auto& n : g.nodes) {
        if (n.kind == NodeKind::Logit) keep.insert(n.id);
        else ranked.push_back(&n);
    }
    std::sort(ranked.begin(), ranked.end(), [&](const Node* a, const Node* b) {
        const double ia = influence.at(a->id), ib = influence.at(b->id);
        if (ia != ib) return ia > ib;
        return a->id < b->id;
    });
    if (cfg.node_threshold >= 1.0) {
        for (const Node* n : ranked) keep.insert(n->id);
    } else {
        double total = 0.0;
        for (const Node* n : ranked) total += influence.at(n->id);
        const double target = cfg.node_threshold * total;
        double cum = 0.0;
        for (const Node* n : ranked) {
            if (cum >= target) break;
            keep.insert(n->id);
            cum += influence.at(n->id);
        }
    }

    struct Scored {
        double score;
        const Edge* edge;
    };
    std::vector<Scored> edges;
    for (const auto& e : g.edges)
        if (keep.count(e.src) && keep.count(e.dst)) edges.push_back({std::abs(e.weight) * influence.at(e.dst), &e});
    std::sort(edges.begin(), edges.end(), [](const Scored& a, const Scored& b) {
        return std::tuple(a.score, a.edge->src, a.edge->dst) < std::tuple(b.score, b.edge->src, b.edge->dst);
    });
    std::size_t first_kept = 0;
    if (cfg.edge_threshold < 1.0) {
        double mass = 0.0;
        for (const auto& s : edges) mass += s.score;
        const double floor = cfg.edge_threshold * mass;
        double remaining = mass;
        while (first_kept < edges.size() && remaining - edges[first_kept].score >= floor) {
            remaining -= edges[first_kept].score;
            ++first_kept;
        }
    }

    PrunedGraph out;
    out.graph.schema_version = g.schema_version;
    out.graph.num_layers = g.num_layers;
    out.graph.traced_logits = g.traced_logits;
    out.graph.total_active_features = g.total_active_features;
    for (const auto& n : g.nodes) {
        if (!keep.count(n.id)) continue;
        out.graph.nodes.push_back(n);
        out.influence.emplace(n.id, influence.at(n.id));
        if (n.kind == NodeKind::Feature) ++out.retained_feature_count;
        if (n.kind == NodeKind::Error) ++out.retained_error_count;
    }
    for (std::size_t i = first_kept; i < edges.size(); ++i) out.graph.edges.push_back(*edges[i].edge);
    out.graph = canonicalize(std::move(out.graph));
    return out;
}

}  // namespace codecircuit
