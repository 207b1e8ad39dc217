#include <gtest/gtest.h>

#include "codecircuit/features.hpp"
#include "codecircuit/pruner.hpp"
#include "codecircuit/topology.hpp"
#include "oracles/graph_stats_oracle.hpp"
#include "support/random_graphs.hpp"

using namespace codecircuit;

namespace {

Node feat(NodeId id, int layer, int pos = 0, double act = 1.0) {
    return {id, NodeKind::Feature, layer, pos, id, act, std::nullopt};
}
Node err(NodeId id, int layer, int pos = 0) {
    return {id, NodeKind::Error, layer, pos, std::nullopt, std::nullopt, std::nullopt};
}
Node tok(NodeId id, int pos = 0) { return {id, NodeKind::Token, -1, pos, std::nullopt, std::nullopt, 3}; }
Node logit(NodeId id, int layers, std::int64_t t) {
    return {id, NodeKind::Logit, layers, 0, std::nullopt, std::nullopt, t};
}

// Wraps a graph as an unpruned PrunedGraph with its exact influence.
PrunedGraph whole(const AttributionGraph& g) {
    PrunedGraph pg;
    pg.graph = g;
    pg.influence = compute_influence(g);
    return pg;
}

double at(const FeatureVector& fv, const std::string& name) {
    for (std::size_t i = 0; i < fv.manifest.size(); ++i)
        if (fv.manifest[i] == name) return fv.values[i];
    ADD_FAILURE() << "no feature " << name;
    return 0.0;
}

topology::Digraph digraph(std::size_t n, std::vector<std::pair<std::size_t, std::size_t>> arcs, double w = 1.0) {
    topology::Digraph d;
    d.out.resize(n);
    for (auto [a, b] : arcs) {
        d.out[a].push_back({b, w});
        ++d.edge_count;
    }
    return d;
}

}  // namespace

TEST(FeatureManifest, LayoutRules) {
    EXPECT_EQ(feature_manifest(3).size(), 32u);
    for (int L : {1, 2, 5, 18}) {
        const auto m = feature_manifest(L);
        EXPECT_EQ(m.size(), static_cast<std::size_t>(29 + L));
        EXPECT_EQ(m[4], "logit_entropy");
        for (int i = 0; i < L; ++i) EXPECT_EQ(m[static_cast<std::size_t>(11 + i)], "layer_hist_" + std::to_string(i));
        EXPECT_EQ(m[static_cast<std::size_t>(11 + L)], "edge_weight_sum");
        EXPECT_EQ(m.back(), "logit_attr_std");
    }
    EXPECT_THROW(feature_manifest(0), LayerMismatchError);
}

TEST(Topology, CompleteDigraphHasUnitDensityAndClustering) {
    const auto d = digraph(3, {{0, 1}, {1, 0}, {0, 2}, {2, 0}, {1, 2}, {2, 1}});
    EXPECT_DOUBLE_EQ(topology::density(d), 1.0);
    EXPECT_DOUBLE_EQ(topology::average_clustering(d), 1.0);
}

TEST(Topology, PathBetweenness) {
    const auto d = digraph(3, {{0, 1}, {1, 2}});
    const auto cb = topology::betweenness(d, 1e-12);
    EXPECT_DOUBLE_EQ(cb[0], 0.0);
    EXPECT_DOUBLE_EQ(cb[1], 1.0);
    EXPECT_DOUBLE_EQ(cb[2], 0.0);
}

TEST(Topology, StrongerEdgesMakeShorterPaths) {
    // 0 -> 2 directly (weak) or through 1 (strong): the detour wins.
    topology::Digraph d;
    d.out.resize(3);
    d.out[0] = {{1, 10.0}, {2, 0.1}};
    d.out[1] = {{2, 10.0}};
    d.edge_count = 3;
    EXPECT_DOUBLE_EQ(topology::betweenness(d, 1e-12)[1], 1.0);
}

TEST(Features, ErrorRatioAndPathExample) {
    AttributionGraph g;
    g.num_layers = 2;
    g.nodes = {tok(0), err(1, 0), feat(2, 0), feat(3, 1), logit(4, 2, 8)};
    g.edges = {{0, 2, 1.0}, {1, 2, 2.0}, {2, 3, -5.0}, {3, 4, 3.0}};
    g.traced_logits = {{8, 0.5}};
    g.total_active_features = 2;
    const auto fv = extract_features(whole(g));
    EXPECT_DOUBLE_EQ(at(fv, "error_feature_ratio"), 0.25);
    EXPECT_DOUBLE_EQ(at(fv, "token_to_logit_path_len"), 3.0);
    EXPECT_DOUBLE_EQ(at(fv, "edge_count"), 4.0);
    EXPECT_DOUBLE_EQ(at(fv, "density"), 4.0 / 20.0);
    EXPECT_DOUBLE_EQ(at(fv, "edge_weight_sum"), 1.0);
    EXPECT_DOUBLE_EQ(at(fv, "pruned_feature_count"), 2.0);
    EXPECT_DOUBLE_EQ(at(fv, "pruned_error_count"), 1.0);
    EXPECT_DOUBLE_EQ(at(fv, "layer_hist_0"), 1.0);
    EXPECT_DOUBLE_EQ(at(fv, "layer_hist_1"), 1.0);
    EXPECT_DOUBLE_EQ(at(fv, "top1_logit_prob"), 0.5);
    EXPECT_DOUBLE_EQ(at(fv, "logit_entropy"), -0.5 * std::log(0.5));
    EXPECT_DOUBLE_EQ(at(fv, "weak_component_count"), 1.0);
    EXPECT_NEAR(at(fv, "total_error_influence"), 0.5 * 2.0 / 3.0, 1e-9);
}

TEST(Features, ThreeNodePathBetweennessMean) {
    AttributionGraph g;
    g.num_layers = 1;
    g.nodes = {tok(0), feat(1, 0), logit(2, 1, 4)};
    g.edges = {{0, 1, 1.0}, {1, 2, 1.0}};
    g.traced_logits = {{4, 0.7}};
    g.total_active_features = 1;
    const auto fv = extract_features(whole(g));
    EXPECT_DOUBLE_EQ(at(fv, "betweenness_mean"), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(at(fv, "betweenness_max"), 1.0);
    EXPECT_DOUBLE_EQ(at(fv, "avg_shortest_path_len"), 4.0 / 3.0);
    EXPECT_DOUBLE_EQ(at(fv, "avg_clustering"), 0.0);
}

TEST(Features, SingleNodeGivesZerosAndSentinels) {
    AttributionGraph g;
    g.num_layers = 2;
    g.nodes = {logit(0, 2, 1)};
    g.traced_logits = {{1, 0.4}};
    const auto fv = extract_features(whole(g));
    const FeatureLayout layout(2);
    ASSERT_EQ(fv.values.size(), 31u);
    for (std::size_t i = 0; i < fv.values.size(); ++i) {
        if (i == static_cast<std::size_t>(layout.avg_shortest_path_len()) ||
            i == static_cast<std::size_t>(layout.token_to_logit_path_len()))
            EXPECT_EQ(fv.values[i], -1.0);
        else
            EXPECT_EQ(fv.values[i], 0.0) << fv.manifest[i];
    }
}

TEST(Features, NoErrorNodesMeansZeroErrorStatistics) {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        auto g = testing_support::random_graph(rng);
        std::set<NodeId> errors;
        for (const auto& n : g.nodes)
            if (n.kind == NodeKind::Error) errors.insert(n.id);
        std::erase_if(g.nodes, [&](const Node& n) { return errors.count(n.id) > 0; });
        std::erase_if(g.edges, [&](const Edge& e) { return errors.count(e.src) || errors.count(e.dst); });
        const auto fv = extract_features(prune_graph(g));
        EXPECT_EQ(at(fv, "error_feature_ratio"), 0.0);
        EXPECT_EQ(at(fv, "total_error_influence"), 0.0);
    }
}

TEST(Features, LayerMismatch) {
    AttributionGraph g;
    g.num_layers = 1;
    g.nodes = {tok(0), feat(1, 3), logit(2, 1, 4)};
    g.traced_logits = {{4, 0.7}};
    PrunedGraph pg;
    pg.graph = g;
    EXPECT_THROW(extract_features(pg), LayerMismatchError);
}

TEST(Features, InvariantsOnRandomGraphs) {
    Rng rng(32);
    for (int trial = 0; trial < 200; ++trial) {
        const auto g = testing_support::random_graph(rng);
        const auto pg = prune_graph(g);
        const auto fv = extract_features(pg);
        const FeatureLayout layout(g.num_layers);
        ASSERT_EQ(fv.values.size(), fv.manifest.size());
        ASSERT_EQ(fv.values.size(), static_cast<std::size_t>(29 + g.num_layers));
        double hist = 0.0;
        for (int l = 0; l < g.num_layers; ++l) hist += fv.values[static_cast<std::size_t>(11 + l)];
        EXPECT_EQ(hist, at(fv, "pruned_feature_count"));
        EXPECT_GE(at(fv, "density"), 0.0);
        EXPECT_LE(at(fv, "density"), 1.0);
        EXPECT_GE(at(fv, "avg_clustering"), 0.0);
        EXPECT_LE(at(fv, "avg_clustering"), 1.0);
        EXPECT_GE(at(fv, "error_feature_ratio"), 0.0);
        for (double v : fv.values) EXPECT_TRUE(std::isfinite(v));
        for (const char* name : {"total_active_features", "pruned_error_count", "logit_entropy", "edge_count",
                                 "betweenness_max", "betweenness_std", "degree_centrality_max", "activation_std"})
            EXPECT_GE(at(fv, name), 0.0) << name;
        EXPECT_TRUE(fv.values[static_cast<std::size_t>(layout.avg_shortest_path_len())] == -1.0 ||
                    fv.values[static_cast<std::size_t>(layout.avg_shortest_path_len())] >= 1.0);
    }
}

TEST(Features, PermutationInvariant) {
    Rng rng(33);
    for (int trial = 0; trial < 50; ++trial) {
        const auto g = testing_support::random_graph(rng);
        auto pg = prune_graph(g);
        auto shuffled = pg;
        rng.shuffle(shuffled.graph.nodes);
        rng.shuffle(shuffled.graph.edges);
        EXPECT_EQ(extract_features(pg).values, extract_features(shuffled).values);
    }
}

TEST(Features, AddingAnEdgeRaisesDensity) {
    Rng rng(34);
    for (int trial = 0; trial < 50; ++trial) {
        auto g = testing_support::random_graph(rng);
        const double before = at(extract_features(whole(g)), "density");
        bool added = false;
        for (const auto& a : g.nodes) {
            for (const auto& b : g.nodes) {
                const bool exists = std::any_of(g.edges.begin(), g.edges.end(),
                                                [&](const Edge& e) { return e.src == a.id && e.dst == b.id; });
                if (a.id != b.id && !exists && edge_order_ok(a, b)) {
                    g.edges.push_back({a.id, b.id, 0.7});
                    added = true;
                    break;
                }
            }
            if (added) break;
        }
        if (!added) continue;
        EXPECT_GT(at(extract_features(whole(g)), "density"), before);
    }
}

TEST(Features, TopologyMatchesBruteForce) {
    Rng rng(35);
    testing_support::RandomGraphOptions opt;
    opt.discrete_weights = true;
    for (int trial = 0; trial < 300; ++trial) {
        opt.edge_prob = rng.uniform(0.1, 0.8);
        const auto g = canonicalize(testing_support::random_graph(rng, opt));
        const auto d = oracle::dense(g);
        const auto fv = extract_features(whole(g));
        const auto cb = oracle::betweenness(d, 1e-12);
        double mean = 0.0, mx = 0.0;
        for (double v : cb) {
            mean += v;
            mx = std::max(mx, v);
        }
        mean /= static_cast<double>(cb.size());
        double var = 0.0;
        for (double v : cb) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / static_cast<double>(cb.size()));
        EXPECT_NEAR(at(fv, "betweenness_mean"), mean, 1e-9) << "trial " << trial;
        EXPECT_NEAR(at(fv, "betweenness_max"), mx, 1e-9);
        EXPECT_NEAR(at(fv, "betweenness_std"), sd, 1e-9);
        EXPECT_NEAR(at(fv, "avg_clustering"), oracle::average_clustering(d), 1e-9);
        EXPECT_NEAR(at(fv, "density"), oracle::density(d), 1e-12);
        EXPECT_EQ(at(fv, "weak_component_count"), oracle::component_count(d));
        EXPECT_NEAR(at(fv, "avg_shortest_path_len"), oracle::average_shortest_path(d), 1e-9);
        EXPECT_EQ(at(fv, "token_to_logit_path_len"), oracle::token_to_logit(d));
    }
}
