#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "codecircuit/pruner.hpp"
#include "codecircuit/topology.hpp"

namespace codecircuit {

// Fixed-order structural descriptor of one pruned attribution graph.
struct FeatureVector {
    std::vector<double> values;
    std::vector<std::string> manifest;
};

// Slot layout for a model with `num_layers` layers. Group sizes are
// 5 + (6 + L) + 12 + 6 = 29 + L.
struct FeatureLayout {
    explicit FeatureLayout(int num_layers) : layers(num_layers) {}

    int layers;

    // statistics
    static constexpr int total_active_features = 0;
    static constexpr int pruned_feature_count = 1;
    static constexpr int pruned_error_count = 2;
    static constexpr int top1_logit_prob = 3;
    static constexpr int logit_entropy = 4;
    // node and activation
    static constexpr int mean_influence_all_pruned = 5;
    static constexpr int total_error_influence = 6;
    static constexpr int mean_error_influence = 7;
    static constexpr int activation_mean = 8;
    static constexpr int activation_max = 9;
    static constexpr int activation_std = 10;
    static constexpr int layer_hist_begin = 11;
    // topology
    int edge_weight_sum() const { return layer_hist_begin + layers; }
    int edge_weight_mean() const { return edge_weight_sum() + 1; }
    int edge_weight_std() const { return edge_weight_sum() + 2; }
    int edge_count() const { return edge_weight_sum() + 3; }
    int density() const { return edge_weight_sum() + 4; }
    int weak_component_count() const { return edge_weight_sum() + 5; }
    int degree_centrality_mean() const { return edge_weight_sum() + 6; }
    int degree_centrality_max() const { return edge_weight_sum() + 7; }
    int betweenness_mean() const { return edge_weight_sum() + 8; }
    int betweenness_max() const { return edge_weight_sum() + 9; }
    int avg_shortest_path_len() const { return edge_weight_sum() + 10; }
    int token_to_logit_path_len() const { return edge_weight_sum() + 11; }
    // pathology
    int error_feature_ratio() const { return edge_weight_sum() + 12; }
    int avg_clustering() const { return edge_weight_sum() + 13; }
    int betweenness_std() const { return edge_weight_sum() + 14; }
    int logit_attr_mean() const { return edge_weight_sum() + 15; }
    int logit_attr_max() const { return edge_weight_sum() + 16; }
    int logit_attr_std() const { return edge_weight_sum() + 17; }

    std::size_t size() const { return static_cast<std::size_t>(29 + layers); }
};

inline std::vector<std::string> feature_manifest(int num_layers) {
    if (num_layers < 1) throw LayerMismatchError("num_layers must be >= 1");
    std::vector<std::string> names = {
        "total_active_features", "pruned_feature_count", "pruned_error_count", "top1_logit_prob", "logit_entropy",
        "mean_influence_all_pruned", "total_error_influence", "mean_error_influence", "activation_mean",
        "activation_max", "activation_std"};
    for (int l = 0; l < num_layers; ++l) names.push_back("layer_hist_" + std::to_string(l));
    for (const char* n : {"edge_weight_sum", "edge_weight_mean", "edge_weight_std", "edge_count", "density",
                          "weak_component_count", "degree_centrality_mean", "degree_centrality_max",
                          "betweenness_mean", "betweenness_max", "avg_shortest_path_len", "token_to_logit_path_len",
                          "error_feature_ratio", "avg_clustering", "betweenness_std", "logit_attr_mean",
                          "logit_attr_max", "logit_attr_std"})
        names.emplace_back(n);
    return names;
}

struct FeatureOptions {
    // Offset in the betweenness edge length 1 / (|w| + epsilon).
    double epsilon = 1e-12;
};

namespace detail {

struct Moments {
    double mean = 0.0, max = 0.0, std = 0.0, sum = 0.0;
};

// Population moments; all zero for an empty sample.
inline Moments moments(const std::vector<double>& xs) {
    Moments m;
    if (xs.empty()) return m;
    m.max = xs.front();
    for (double x : xs) {
        m.sum += x;
        m.max = std::max(m.max, x);
    }
    m.mean = m.sum / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(xs.size()));
    return m;
}

}  // namespace detail

inline FeatureVector extract_features(const PrunedGraph& pruned, const FeatureOptions& opt = {}) {
    const AttributionGraph g = canonicalize(pruned.graph);
    if (g.num_layers < 1) throw LayerMismatchError("num_layers must be >= 1");
    for (const auto& n : g.nodes)
        if ((n.kind == NodeKind::Feature || n.kind == NodeKind::Error) && (n.layer < 0 || n.layer >= g.num_layers))
            throw LayerMismatchError("node " + std::to_string(n.id) + " has layer " + std::to_string(n.layer) +
                                     " but the graph has " + std::to_string(g.num_layers) + " layers");

    const FeatureLayout at(g.num_layers);
    FeatureVector fv;
    fv.manifest = feature_manifest(g.num_layers);
    fv.values.assign(at.size(), 0.0);
    auto& x = fv.values;
    if (g.nodes.size() < 2) {
        x[at.avg_shortest_path_len()] = -1.0;
        x[at.token_to_logit_path_len()] = -1.0;
        return fv;
    }

    auto influence_of = [&](NodeId id) {
        auto it = pruned.influence.find(id);
        return it == pruned.influence.end() ? 0.0 : it->second;
    };

    // Statistics.
    std::vector<double> activations, feature_influence, error_influence, all_influence;
    std::vector<double> hist(static_cast<std::size_t>(g.num_layers), 0.0);
    for (const auto& n : g.nodes) {
        all_influence.push_back(influence_of(n.id));
        if (n.kind == NodeKind::Feature) {
            activations.push_back(n.activation.value_or(0.0));
            feature_influence.push_back(influence_of(n.id));
            hist[static_cast<std::size_t>(n.layer)] += 1.0;
        } else if (n.kind == NodeKind::Error) {
            error_influence.push_back(influence_of(n.id));
        }
    }
    x[at.total_active_features] = static_cast<double>(g.total_active_features);
    x[at.pruned_feature_count] = static_cast<double>(activations.size());
    x[at.pruned_error_count] = static_cast<double>(error_influence.size());
    double top1 = 0.0, entropy = 0.0;
    for (const auto& t : g.traced_logits) {
        top1 = std::max(top1, t.probability);
        if (t.probability > 0.0) entropy -= t.probability * std::log(t.probability);
    }
    x[at.top1_logit_prob] = top1;
    x[at.logit_entropy] = entropy;

    // Node and activation statistics.
    x[at.mean_influence_all_pruned] = detail::moments(all_influence).mean;
    const auto err = detail::moments(error_influence);
    x[at.total_error_influence] = err.sum;
    x[at.mean_error_influence] = err.mean;
    const auto act = detail::moments(activations);
    x[at.activation_mean] = act.mean;
    x[at.activation_max] = act.max;
    x[at.activation_std] = act.std;
    std::copy(hist.begin(), hist.end(), x.begin() + FeatureLayout::layer_hist_begin);

    // Topology.
    const auto dg = topology::from_graph(g);
    std::vector<double> weights;
    double error_out = 0.0, feature_out = 0.0;
    const auto idx = node_index(g);
    for (const auto& e : g.edges) {
        weights.push_back(e.weight);
        const NodeKind k = g.nodes[idx.at(e.src)].kind;
        if (k == NodeKind::Error) error_out += std::abs(e.weight);
        if (k == NodeKind::Feature) feature_out += std::abs(e.weight);
    }
    const auto w = detail::moments(weights);
    x[at.edge_weight_sum()] = w.sum;
    x[at.edge_weight_mean()] = w.mean;
    x[at.edge_weight_std()] = w.std;
    x[at.edge_count()] = static_cast<double>(g.edges.size());
    x[at.density()] = topology::density(dg);
    std::size_t components = 0;
    topology::weak_components(dg, &components);
    x[at.weak_component_count()] = static_cast<double>(components);
    const auto deg = detail::moments(topology::degree_centrality(dg));
    x[at.degree_centrality_mean()] = deg.mean;
    x[at.degree_centrality_max()] = deg.max;
    const auto bc = detail::moments(topology::betweenness(dg, opt.epsilon));
    x[at.betweenness_mean()] = bc.mean;
    x[at.betweenness_max()] = bc.max;
    x[at.betweenness_std()] = bc.std;
    x[at.avg_shortest_path_len()] = topology::average_shortest_path_length(dg);

    std::vector<std::size_t> tokens;
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        if (g.nodes[i].kind == NodeKind::Token) tokens.push_back(i);
    const auto hops = topology::hop_distances(dg, tokens);
    long best = -1;
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        if (g.nodes[i].kind == NodeKind::Logit && hops[i] >= 0 && (best < 0 || hops[i] < best)) best = hops[i];
    x[at.token_to_logit_path_len()] = static_cast<double>(best);

    // Pathology indicators. The ratio is undefined without feature outflow;
    // it then reads 0 like every other undefined statistic.
    x[at.error_feature_ratio()] = feature_out > 0.0 ? error_out / feature_out : 0.0;
    x[at.avg_clustering()] = topology::average_clustering(dg);
    const auto attr = detail::moments(feature_influence);
    x[at.logit_attr_mean()] = attr.mean;
    x[at.logit_attr_max()] = attr.max;
    x[at.logit_attr_std()] = attr.std;
    return fv;
}

}  // namespace codecircuit
