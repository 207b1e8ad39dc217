#include <algorithm>

#include <gtest/gtest.h>

#include "codecircuit/features.hpp"
#include "codecircuit/gbdt.hpp"
#include "codecircuit/graph_io.hpp"
#include "codecircuit/pruner.hpp"
#include "codecircuit/synth.hpp"
#include "support/scratch.hpp"

using namespace codecircuit;
using namespace codecircuit::synth;

namespace {

SynthConfig small(std::uint64_t seed, int steps = 300) {
    SynthConfig cfg;
    cfg.num_steps = steps;
    cfg.seed = seed;
    return cfg;
}

// Error-to-feature ratio of outgoing |w| mass, read straight off the edges.
double outflow_ratio(const AttributionGraph& g) {
    std::map<NodeId, NodeKind> kind;
    for (const auto& n : g.nodes) kind[n.id] = n.kind;
    double err = 0.0, feat = 0.0;
    for (const auto& e : g.edges) {
        if (kind[e.src] == NodeKind::Error) err += std::abs(e.weight);
        if (kind[e.src] == NodeKind::Feature) feat += std::abs(e.weight);
    }
    return feat > 0.0 ? err / feat : 0.0;
}

double edge_density(const AttributionGraph& g) {
    const double n = static_cast<double>(g.nodes.size());
    return static_cast<double>(g.edges.size()) / (n * (n - 1.0));
}

struct MeanSe {
    double mean = 0.0, se = 0.0;
};

MeanSe mean_se(const std::vector<double>& xs) {
    MeanSe r;
    for (double x : xs) r.mean += x;
    r.mean /= static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(v / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
    return r;
}

}  // namespace

TEST(Synth, DeterministicAcrossRunsAndJobCounts) {
    auto cfg = small(11, 200);
    const auto a = generate_corpus(cfg);
    cfg.jobs = 3;
    const auto b = generate_corpus(cfg);
    EXPECT_EQ(serialize_manifest(a.records), serialize_manifest(b.records));
    ASSERT_EQ(a.graphs.size(), b.graphs.size());
    for (std::size_t i = 0; i < a.graphs.size(); ++i) EXPECT_EQ(serialize_graph(a.graphs[i]), serialize_graph(b.graphs[i]));
    cfg.seed = 12;
    EXPECT_NE(serialize_manifest(generate_corpus(cfg).records), serialize_manifest(a.records));
}

TEST(Synth, EveryGraphAndTraceValidates) {
    const auto c = generate_corpus(small(13, 400));
    ASSERT_EQ(c.records.size(), 400u);
    for (std::size_t i = 0; i < c.graphs.size(); ++i) {
        const auto v = validate_graph(c.graphs[i]);
        EXPECT_TRUE(v.empty()) << c.records[i].graph_path << ": " << describe(v);
        ASSERT_TRUE(c.records[i].trace);
        EXPECT_TRUE(validate_trace(*c.records[i].trace).empty());
        EXPECT_EQ(c.graphs[i].num_layers, 6);
    }
}

TEST(Synth, TaskLayout) {
    const auto c = generate_corpus(small(14, 500));
    std::map<std::string, std::vector<const StepRecord*>> tasks;
    for (const auto& r : c.records) tasks[r.task_id].push_back(&r);
    for (const auto& [id, rs] : tasks) {
        for (std::size_t s = 0; s < rs.size(); ++s) {
            EXPECT_EQ(rs[s]->step_index, static_cast<std::int64_t>(s));
            EXPECT_EQ(rs[s]->total_lines, static_cast<std::int64_t>(rs.size()));
        }
        if (id != tasks.rbegin()->first) {
            EXPECT_GE(rs.size(), 3u);
            EXPECT_LE(rs.size(), 40u);
        }
    }
}

TEST(Synth, ErrorRatioKnobIsHitAndSeparatesClasses) {
    const auto cfg = small(15, 600);
    const auto c = generate_corpus(cfg);
    std::vector<double> eta[2];
    for (std::size_t i = 0; i < c.graphs.size(); ++i) {
        const int label = *c.records[i].label;
        const double r = outflow_ratio(c.graphs[i]);
        eta[label].push_back(r);
        bool has_error = false;
        for (const auto& n : c.graphs[i].nodes) has_error |= n.kind == NodeKind::Error;
        if (has_error && r > 0.0) {
            EXPECT_NEAR(r, cfg.effective(label == 1).error_ratio, 1e-9);
        }
    }
    EXPECT_GT(mean_se(eta[0]).mean, mean_se(eta[1]).mean);
}

TEST(Synth, DensityKnobIsHitInExpectation) {
    const auto cfg = small(16, 600);
    const auto c = generate_corpus(cfg);
    std::vector<double> d[2];
    for (std::size_t i = 0; i < c.graphs.size(); ++i) d[*c.records[i].label].push_back(edge_density(c.graphs[i]));
    for (int label : {0, 1}) EXPECT_NEAR(mean_se(d[label]).mean, cfg.effective(label == 1).density, 0.02) << label;
}

TEST(Synth, ZeroSeparationMakesClassesIdentical) {
    auto cfg = small(17, 50);
    cfg.separation = 0.0;
    const auto a = cfg.effective(true), b = cfg.effective(false);
    EXPECT_EQ(a.error_ratio, b.error_ratio);
    EXPECT_EQ(a.density, b.density);
    EXPECT_EQ(a.components, b.components);
    EXPECT_EQ(a.hub, b.hub);
    EXPECT_EQ(a.confidence, b.confidence);
}

TEST(Synth, ExchangeableAcrossSeeds) {
    std::vector<double> eta[2], dens[2];
    for (int s = 0; s < 2; ++s) {
        const auto c = generate_corpus(small(100 + static_cast<std::uint64_t>(s), 800));
        for (std::size_t i = 0; i < c.graphs.size(); ++i)
            if (*c.records[i].label == 1) {
                eta[s].push_back(outflow_ratio(c.graphs[i]));
                dens[s].push_back(edge_density(c.graphs[i]));
            }
    }
    for (auto* xs : {eta, dens}) {
        const auto a = mean_se(xs[0]), b = mean_se(xs[1]);
        EXPECT_LE(std::abs(a.mean - b.mean), 3.0 * std::hypot(a.se, b.se));
    }
}

TEST(Synth, InfeasibleKnobs) {
    auto cfg = small(1);
    cfg.incorrect.density = 1.0;
    cfg.incorrect.components = 2;
    EXPECT_THROW(generate_corpus(cfg), InfeasibleKnobError);
    cfg = small(1);
    cfg.correct.density = 0.0;
    EXPECT_THROW(generate_corpus(cfg), InfeasibleKnobError);
    cfg = small(1);
    cfg.incorrect.error_ratio = -0.1;
    EXPECT_THROW(generate_corpus(cfg), InfeasibleKnobError);
    cfg = small(1);
    cfg.incorrect.components = 6;
    EXPECT_THROW(generate_corpus(cfg), InfeasibleKnobError);
    cfg = small(1);
    cfg.separation = 1.5;
    EXPECT_THROW(generate_corpus(cfg), InvalidConfigError);
}

TEST(Synth, FullDensitySingleComponentIsFeasible) {
    auto cfg = small(18, 30);
    cfg.correct.density = 1.0;
    cfg.incorrect.density = 1.0;
    cfg.incorrect.components = 1;
    const auto c = generate_corpus(cfg);
    for (const auto& g : c.graphs) EXPECT_TRUE(validate_graph(g).empty());
}

TEST(Synth, WrittenCorpusLoadsBack) {
    const auto dir = testing_support::scratch_dir("synth_write");
    const auto c = generate_corpus(small(19, 60));
    write_corpus(c, dir, 2);
    const auto corpus = load_manifest(dir / "manifest.jsonl");
    ASSERT_EQ(corpus.records.size(), c.records.size());
    for (std::size_t i = 0; i < c.records.size(); ++i) {
        EXPECT_EQ(corpus.records[i], c.records[i]);
        EXPECT_EQ(load_graph(corpus.resolve(corpus.records[i])), c.graphs[i]);
    }
}

TEST(Synth, ConfigFromJson) {
    const auto cfg = config_from_json(nlohmann::json::parse(R"({"num_steps": 12, "seed": 3, "incorrect": {"density": 0.3}})"));
    EXPECT_EQ(cfg.num_steps, 12);
    EXPECT_EQ(cfg.seed, 3u);
    EXPECT_EQ(cfg.incorrect.density, 0.3);
    EXPECT_EQ(cfg.incorrect.error_ratio, SynthConfig{}.incorrect.error_ratio);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"num_steps": "x"})")), SchemaError);
}

TEST(Synth, ErrorRatioAloneSurfacesInImportances) {
    auto cfg = small(20, 600);
    cfg.incorrect = cfg.correct;
    cfg.incorrect.error_ratio = 0.6;
    const auto c = generate_corpus(cfg);
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    std::vector<std::string> manifest;
    for (std::size_t i = 0; i < c.graphs.size(); ++i) {
        const auto fv = extract_features(prune_graph(c.graphs[i]));
        X.push_back(fv.values);
        y.push_back(*c.records[i].label);
        manifest = fv.manifest;
    }
    GbdtConfig gc;
    gc.num_rounds = 60;
    const auto imp = feature_importances(train_gbdt(X, y, manifest, gc));
    std::vector<std::string> top = {imp[0].first, imp[1].first, imp[2].first};
    EXPECT_NE(std::find(top.begin(), top.end(), "error_feature_ratio"), top.end())
        << top[0] << ", " << top[1] << ", " << top[2];
}
