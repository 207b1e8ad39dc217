#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "codecircuit/graph.hpp"

namespace codecircuit::topology {

// Index-based weighted digraph. Node i corresponds to AttributionGraph::nodes[i].
struct Digraph {
    struct Arc {
        std::size_t dst;
        double weight;
    };
    std::vector<std::vector<Arc>> out;
    std::size_t edge_count = 0;

    std::size_t size() const { return out.size(); }
};

inline Digraph from_graph(const AttributionGraph& g) {
    Digraph d;
    d.out.resize(g.nodes.size());
    const auto idx = node_index(g);
    for (const auto& e : g.edges) {
        d.out[idx.at(e.src)].push_back({idx.at(e.dst), e.weight});
        ++d.edge_count;
    }
    return d;
}

inline double density(const Digraph& g) {
    const double n = static_cast<double>(g.size());
    if (n < 2) return 0.0;
    return static_cast<double>(g.edge_count) / (n * (n - 1.0));
}

// Weakly connected component label per node; labels are numbered in order of
// each component's smallest node index.
inline std::vector<std::size_t> weak_components(const Digraph& g, std::size_t* count = nullptr) {
    const std::size_t n = g.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t u = 0; u < n; ++u)
        for (const auto& a : g.out[u]) {
            auto ru = find(u), rv = find(a.dst);
            if (ru != rv) parent[std::max(ru, rv)] = std::min(ru, rv);
        }
    std::vector<std::size_t> label(n), root_label(n, std::numeric_limits<std::size_t>::max());
    std::size_t next = 0;
    for (std::size_t u = 0; u < n; ++u) {
        auto r = find(u);
        if (root_label[r] == std::numeric_limits<std::size_t>::max()) root_label[r] = next++;
        label[u] = root_label[r];
    }
    if (count) *count = next;
    return label;
}

// (in + out degree) / (n - 1), the usual digraph normalization.
inline std::vector<double> degree_centrality(const Digraph& g) {
    const std::size_t n = g.size();
    std::vector<double> deg(n, 0.0);
    for (std::size_t u = 0; u < n; ++u)
        for (const auto& a : g.out[u]) {
            deg[u] += 1.0;
            deg[a.dst] += 1.0;
        }
    if (n >= 2)
        for (auto& d : deg) d /= static_cast<double>(n - 1);
    else
        std::fill(deg.begin(), deg.end(), 0.0);
    return deg;
}

// Relative tolerance under which two path lengths count as equally short.
inline constexpr double kPathTieTolerance = 1e-10;

inline bool same_length(double a, double b) {
    return std::abs(a - b) <= kPathTieTolerance * std::max({1.0, std::abs(a), std::abs(b)});
}

// Unnormalized directed betweenness (Brandes). Edge length is
// 1 / (|w| + epsilon), so strong attributions make short paths.
inline std::vector<double> betweenness(const Digraph& g, double epsilon) {
    const std::size_t n = g.size();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> cb(n, 0.0);
    std::vector<double> dist(n), sigma(n), delta(n);
    std::vector<std::vector<std::size_t>> preds(n);
    std::vector<char> settled(n);
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < n; ++s) {
        std::fill(dist.begin(), dist.end(), inf);
        std::fill(sigma.begin(), sigma.end(), 0.0);
        std::fill(delta.begin(), delta.end(), 0.0);
        std::fill(settled.begin(), settled.end(), 0);
        for (auto& p : preds) p.clear();
        stack.clear();
        dist[s] = 0.0;
        sigma[s] = 1.0;
        while (true) {
            std::size_t v = n;
            for (std::size_t i = 0; i < n; ++i)
                if (!settled[i] && dist[i] < inf && (v == n || dist[i] < dist[v])) v = i;
            if (v == n) break;
            settled[v] = 1;
            stack.push_back(v);
            for (const auto& a : g.out[v]) {
                const double nd = dist[v] + 1.0 / (std::abs(a.weight) + epsilon);
                if (settled[a.dst]) continue;
                if (dist[a.dst] == inf || (nd < dist[a.dst] && !same_length(nd, dist[a.dst]))) {
                    dist[a.dst] = nd;
                    sigma[a.dst] = sigma[v];
                    preds[a.dst].assign(1, v);
                } else if (same_length(nd, dist[a.dst])) {
                    sigma[a.dst] += sigma[v];
                    preds[a.dst].push_back(v);
                }
            }
        }
        for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
            const std::size_t w = *it;
            for (std::size_t v : preds[w]) delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            if (w != s) cb[w] += delta[w];
        }
    }
    return cb;
}

// Local clustering on the undirected simple projection; nodes of degree < 2
// contribute 0. Returns the mean over all nodes.
inline double average_clustering(const Digraph& g) {
    const std::size_t n = g.size();
    if (n == 0) return 0.0;
    std::vector<std::set<std::size_t>> nbr(n);
    for (std::size_t u = 0; u < n; ++u)
        for (const auto& a : g.out[u])
            if (a.dst != u) {
                nbr[u].insert(a.dst);
                nbr[a.dst].insert(u);
            }
    double sum = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        const std::size_t k = nbr[v].size();
        if (k < 2) continue;
        std::size_t links = 0;
        for (auto a = nbr[v].begin(); a != nbr[v].end(); ++a)
            for (auto b = std::next(a); b != nbr[v].end(); ++b)
                if (nbr[*a].count(*b)) ++links;
        sum += 2.0 * static_cast<double>(links) / (static_cast<double>(k) * static_cast<double>(k - 1));
    }
    return sum / static_cast<double>(n);
}

// Directed hop distances from a set of sources; -1 where unreachable.
inline std::vector<long> hop_distances(const Digraph& g, const std::vector<std::size_t>& sources) {
    std::vector<long> d(g.size(), -1);
    std::deque<std::size_t> q;
    for (auto s : sources) {
        d[s] = 0;
        q.push_back(s);
    }
    while (!q.empty()) {
        auto u = q.front();
        q.pop_front();
        for (const auto& a : g.out[u])
            if (d[a.dst] < 0) {
                d[a.dst] = d[u] + 1;
                q.push_back(a.dst);
            }
    }
    return d;
}

// Mean directed hop distance over ordered reachable pairs inside the largest
// weakly connected component (ties: the component holding the lowest index).
// Returns -1 when no pair is reachable.
inline double average_shortest_path_length(const Digraph& g) {
    std::size_t count = 0;
    const auto label = weak_components(g, &count);
    if (count == 0) return -1.0;
    std::vector<std::size_t> sizes(count, 0);
    for (auto l : label) ++sizes[l];
    const std::size_t best = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t s = 0; s < g.size(); ++s) {
        if (label[s] != best) continue;
        const auto d = hop_distances(g, {s});
        for (std::size_t t = 0; t < g.size(); ++t)
            if (t != s && d[t] > 0) {
                total += static_cast<double>(d[t]);
                ++pairs;
            }
    }
    return pairs ? total / static_cast<double>(pairs) : -1.0;
}

}  // namespace codecircuit::topology
