#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "codecircuit/graph_io.hpp"
#include "codecircuit/manifest.hpp"
#include "codecircuit/util.hpp"

namespace codecircuit::synth {

// Class-conditional generator targets. Directions are whatever the caller
// configures; nothing here assumes which class has more of what.
struct ClassKnobs {
    double error_ratio = 0.1;  // error / feature outgoing |w| mass
    double density = 0.12;     // |E| / (|V| (|V| - 1))
    int components = 1;        // weakly connected components
    double hub = 0.5;          // in [0, 1]: pull of edges toward one hub feature
    double confidence = 2.0;   // logit margin of the chosen token in traces

    friend bool operator==(const ClassKnobs&, const ClassKnobs&) = default;
};

struct SynthConfig {
    int num_steps = 2000;
    int num_layers = 6;
    int min_nodes = 14;
    int max_nodes = 32;
    ClassKnobs correct{0.10, 0.14, 1, 0.7, 2.5};
    ClassKnobs incorrect{0.60, 0.08, 2, 0.1, 1.5};
    double separation = 0.9;  // 0: classes identical; 1: full knob gap
    double correct_fraction = 0.7;
    int min_lines = 3;
    int max_lines = 40;
    std::string language = "synth";
    std::uint64_t seed = 7;
    unsigned jobs = 1;

    // Knobs actually used for a class after applying `separation`.
    ClassKnobs effective(bool correct_class) const {
        if (correct_class) return correct;
        auto lerp = [&](double a, double b) { return a + separation * (b - a); };
        ClassKnobs k;
        k.error_ratio = lerp(correct.error_ratio, incorrect.error_ratio);
        k.density = lerp(correct.density, incorrect.density);
        k.components = static_cast<int>(std::lround(lerp(correct.components, incorrect.components)));
        k.hub = lerp(correct.hub, incorrect.hub);
        k.confidence = lerp(correct.confidence, incorrect.confidence);
        return k;
    }

    void check() const {
        if (num_steps < 1) throw InvalidConfigError("num_steps must be >= 1");
        if (num_layers < 1) throw InvalidConfigError("num_layers must be >= 1");
        if (min_nodes < 3 || max_nodes < min_nodes) throw InvalidConfigError("need 3 <= min_nodes <= max_nodes");
        if (!(separation >= 0.0 && separation <= 1.0)) throw InvalidConfigError("separation must lie in [0, 1]");
        if (!(correct_fraction >= 0.0 && correct_fraction <= 1.0))
            throw InvalidConfigError("correct_fraction must lie in [0, 1]");
        if (min_lines < 1 || max_lines < min_lines) throw InvalidConfigError("need 1 <= min_lines <= max_lines");
        for (const auto* k : {&correct, &incorrect}) {
            if (!(k->density > 0.0 && k->density <= 1.0)) throw InfeasibleKnobError("density must lie in (0, 1]");
            if (!(k->error_ratio >= 0.0)) throw InfeasibleKnobError("error_ratio must be >= 0");
            if (!(k->hub >= 0.0 && k->hub <= 1.0)) throw InfeasibleKnobError("hub must lie in [0, 1]");
            if (k->components < 1) throw InfeasibleKnobError("components must be >= 1");
            if (k->components > 10) throw InfeasibleKnobError("at most 10 components (one traced logit each)");
            if (k->density >= 1.0 && k->components > 1)
                throw InfeasibleKnobError("density 1 requires a single connected component");
            if (3 * k->components > min_nodes)
                throw InfeasibleKnobError("each component needs 3 nodes; raise min_nodes or lower components");
            if (!(k->confidence >= 0.0)) throw InfeasibleKnobError("confidence must be >= 0");
        }
    }
};

namespace detail {

inline bool order_ok(const Node& a, const Node& b) { return edge_order_ok(a, b); }

}  // namespace detail

// One labeled random DAG honoring every graph invariant.
inline AttributionGraph generate_graph(const SynthConfig& cfg, const ClassKnobs& k, Rng& rng) {
    const int L = cfg.num_layers;
    const int n = static_cast<int>(rng.uniform_int(cfg.min_nodes, cfg.max_nodes));
    const int C = k.components;
    const int positions = static_cast<int>(rng.uniform_int(2, 6));

    AttributionGraph g;
    g.num_layers = L;
    std::vector<int> comp_of;
    std::set<std::pair<int, int>> used_error_slots;

    // Every component gets a token, a feature and a logit; the rest are spread
    // at random, a fifth of them error nodes.
    auto add_node = [&](NodeKind kind, int comp) {
        Node node;
        node.id = static_cast<NodeId>(g.nodes.size());
        node.kind = kind;
        switch (kind) {
            case NodeKind::Token:
                node.layer = -1;
                node.position = static_cast<int>(rng.uniform_int(0, positions - 1));
                node.token_id = rng.uniform_int(0, 999);
                break;
            case NodeKind::Logit:
                node.layer = L;
                node.position = positions - 1;
                node.token_id = 1000 + comp;
                break;
            case NodeKind::Error:
            case NodeKind::Feature:
                node.layer = static_cast<int>(rng.uniform_int(0, L - 1));
                node.position = static_cast<int>(rng.uniform_int(0, positions - 1));
                // one error node per (layer, position); a taken slot becomes a feature
                if (kind == NodeKind::Error && used_error_slots.emplace(node.layer, node.position).second) break;
                node.kind = NodeKind::Feature;
                node.feature_index = rng.uniform_int(0, 16383);
                node.activation = std::exp(0.5 * rng.normal());
                break;
        }
        g.nodes.push_back(node);
        comp_of.push_back(comp);
    };
    for (int c = 0; c < C; ++c) {
        add_node(NodeKind::Token, c);
        add_node(NodeKind::Feature, c);
        add_node(NodeKind::Logit, c);
    }
    while (static_cast<int>(g.nodes.size()) < n) {
        const int c = static_cast<int>(rng.uniform_int(0, C - 1));
        const double u = rng.uniform();
        add_node(u < 0.1 ? NodeKind::Token : (u < 0.3 ? NodeKind::Error : NodeKind::Feature), c);
    }

    // Per component: nodes in computational order and one hub feature.
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(C));
    for (std::size_t i = 0; i < g.nodes.size(); ++i) members[static_cast<std::size_t>(comp_of[i])].push_back(i);
    auto key = [&](std::size_t i) {
        const Node& nd = g.nodes[i];
        return std::tuple(nd.layer, kind_rank(nd.kind), nd.position, nd.id);
    };
    std::vector<std::size_t> hub(static_cast<std::size_t>(C));
    for (std::size_t c = 0; c < members.size(); ++c) {
        auto& mem = members[c];
        std::sort(mem.begin(), mem.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
        std::vector<std::size_t> feats;
        for (auto i : mem)
            if (g.nodes[i].kind == NodeKind::Feature) feats.push_back(i);
        hub[c] = feats[feats.size() / 2];
    }

    std::set<std::pair<std::size_t, std::size_t>> chosen;
    // Spanning edges: each non-logit node feeds some later node of its
    // component, so every node reaches that component's logit.
    for (std::size_t c = 0; c < members.size(); ++c) {
        const auto& mem = members[c];
        for (std::size_t a = 0; a < mem.size(); ++a) {
            const Node& src = g.nodes[mem[a]];
            if (src.kind == NodeKind::Logit) continue;
            std::vector<std::size_t> succ;
            for (std::size_t b = 0; b < mem.size(); ++b)
                if (b != a && detail::order_ok(src, g.nodes[mem[b]])) succ.push_back(mem[b]);
            std::size_t dst = succ[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(succ.size()) - 1))];
            if (mem[a] != hub[c] && detail::order_ok(src, g.nodes[hub[c]]) && rng.bernoulli(k.hub)) dst = hub[c];
            chosen.emplace(mem[a], dst);
        }
    }
    // Extra edges up to the density target, weighted toward the hub.
    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    std::vector<double> weight;
    for (std::size_t c = 0; c < members.size(); ++c)
        for (auto a : members[c])
            for (auto b : members[c])
                if (a != b && detail::order_ok(g.nodes[a], g.nodes[b]) && !chosen.count({a, b})) {
                    candidates.emplace_back(a, b);
                    weight.push_back(1.0 + 20.0 * k.hub * ((a == hub[c] || b == hub[c]) ? 1.0 : 0.0));
                }
    const double nn = static_cast<double>(g.nodes.size());
    const auto target = static_cast<std::size_t>(std::lround(k.density * nn * (nn - 1.0)));
    while (chosen.size() < target && !candidates.empty()) {
        double total = 0.0;
        for (double w : weight) total += w;
        double u = rng.uniform() * total;
        std::size_t pick = 0;
        while (pick + 1 < weight.size() && u >= weight[pick]) u -= weight[pick++];
        chosen.insert(candidates[pick]);
        candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
        weight.erase(weight.begin() + static_cast<std::ptrdiff_t>(pick));
    }

    // Weights; error outflow is rescaled to hit the target ratio exactly.
    double feature_mass = 0.0, error_mass = 0.0;
    for (const auto& [a, b] : chosen) {
        const double mag = rng.uniform(0.2, 1.0);
        const double sign = rng.bernoulli(0.8) ? 1.0 : -1.0;
        g.edges.push_back({g.nodes[a].id, g.nodes[b].id, sign * mag});
        if (g.nodes[a].kind == NodeKind::Feature) feature_mass += mag;
        if (g.nodes[a].kind == NodeKind::Error) error_mass += mag;
    }
    if (error_mass > 0.0 && feature_mass > 0.0) {
        const double scale = k.error_ratio * feature_mass / error_mass;
        for (auto& e : g.edges)
            if (g.nodes[static_cast<std::size_t>(e.src)].kind == NodeKind::Error) {
                e.weight *= scale;
                if (e.weight == 0.0) e.weight = 1e-300;
            }
    }

    // Traced logits: one per component, total mass in [0.5, 0.95].
    std::vector<double> raw(static_cast<std::size_t>(C));
    double raw_sum = 0.0;
    for (auto& r : raw) raw_sum += (r = rng.uniform(0.1, 1.0));
    const double mass = rng.uniform(0.5, 0.95);
    for (int c = 0; c < C; ++c) g.traced_logits.push_back({1000 + c, mass * raw[static_cast<std::size_t>(c)] / raw_sum});

    std::int64_t features = 0;
    for (const auto& nd : g.nodes) features += nd.kind == NodeKind::Feature;
    g.total_active_features = features + rng.uniform_int(0, 3 * features);
    return canonicalize(std::move(g));
}

// Per-token statistics from random logits whose chosen token carries a
// margin of `confidence`; every grid value is computed exactly.
inline TokenTrace generate_trace(const ClassKnobs& k, Rng& rng) {
    constexpr int kVocab = 16;
    TokenTrace t;
    t.vocab_size = kVocab;
    const int tokens = static_cast<int>(rng.uniform_int(2, 8));
    for (int i = 0; i < tokens; ++i) {
        std::vector<double> z(kVocab);
        for (auto& v : z) v = rng.normal();
        z[0] += k.confidence + 0.5 * rng.normal();
        auto stats = [&](double temp, double& maxprob, double& energy, double& entropy, double& chosen_lp) {
            double zmax = z[0];
            for (double v : z) zmax = std::max(zmax, v / temp);
            zmax = std::max(zmax, z[0] / temp);
            double s = 0.0;
            for (double v : z) s += std::exp(v / temp - zmax);
            const double lse = zmax + std::log(s);
            energy = -temp * lse;
            maxprob = 0.0;
            entropy = 0.0;
            std::size_t argmax = 0;
            for (std::size_t j = 0; j < z.size(); ++j) {
                const double lp = z[j] / temp - lse;
                const double p = std::exp(lp);
                if (p > maxprob) {
                    maxprob = p;
                    argmax = j;
                }
                entropy -= p * lp;
            }
            chosen_lp = z[argmax] / temp - lse;
            entropy = std::clamp(entropy, 0.0, std::log(static_cast<double>(kVocab)));
            maxprob = std::min(maxprob, 1.0);
        };
        double mp, en, h, lp;
        stats(1.0, mp, en, h, lp);
        t.max_prob.push_back(mp);
        t.entropy.push_back(h);
        t.chosen_logprob.push_back(std::min(lp, 0.0));
        for (double temp : kTemperatureGrid) {
            double mpt, ent, ht, lpt;
            stats(temp, mpt, ent, ht, lpt);
            t.maxprob_at_T[temp].push_back(mpt);
            t.energy_at_T[temp].push_back(ent);
        }
    }
    return t;
}

struct SynthCorpus {
    std::vector<StepRecord> records;
    std::vector<AttributionGraph> graphs;  // parallel to records
};

inline SynthCorpus generate_corpus(const SynthConfig& cfg) {
    cfg.check();
    SynthCorpus out;
    // Task layout and labels come from one sequential stream so they do not
    // depend on the number of jobs.
    Rng layout(splitmix64(cfg.seed));
    int task = 0;
    while (static_cast<int>(out.records.size()) < cfg.num_steps) {
        const int remaining = cfg.num_steps - static_cast<int>(out.records.size());
        const int lines = std::min<int>(remaining, static_cast<int>(layout.uniform_int(cfg.min_lines, cfg.max_lines)));
        char name[32];
        std::snprintf(name, sizeof name, "synth-%05d", task++);
        for (int s = 0; s < lines; ++s) {
            StepRecord r;
            r.task_id = name;
            r.step_index = s;
            r.language = cfg.language;
            r.label = layout.bernoulli(cfg.correct_fraction) ? 1 : 0;
            r.total_lines = lines;
            r.graph_path = "graphs/" + r.task_id + "_" + std::to_string(s) + ".json";
            out.records.push_back(std::move(r));
        }
    }
    out.graphs.resize(out.records.size());
    parallel_for(out.records.size(), cfg.jobs, [&](std::size_t i) {
        Rng rng(splitmix64(cfg.seed ^ splitmix64(0x5eed0000ULL + i)));
        const ClassKnobs k = cfg.effective(*out.records[i].label == 1);
        out.graphs[i] = generate_graph(cfg, k, rng);
        out.records[i].trace = generate_trace(k, rng);
    });
    return out;
}

// Writes manifest.jsonl and graphs/ under `dir`.
inline void write_corpus(const SynthCorpus& c, const std::filesystem::path& dir, unsigned jobs = 1) {
    parallel_for(c.records.size(), jobs,
                 [&](std::size_t i) { save_graph(dir / c.records[i].graph_path, c.graphs[i]); });
    write_file_atomic(dir / "manifest.jsonl", serialize_manifest(c.records));
}

namespace detail {

inline void read_knobs(const nlohmann::json& j, ClassKnobs& k) {
    k.error_ratio = j.value("error_ratio", k.error_ratio);
    k.density = j.value("density", k.density);
    k.components = j.value("components", k.components);
    k.hub = j.value("hub", k.hub);
    k.confidence = j.value("confidence", k.confidence);
}

}  // namespace detail

// Missing keys keep their defaults.
inline SynthConfig config_from_json(const nlohmann::json& j) {
    SynthConfig c;
    try {
        c.num_steps = j.value("num_steps", c.num_steps);
        c.num_layers = j.value("num_layers", c.num_layers);
        c.min_nodes = j.value("min_nodes", c.min_nodes);
        c.max_nodes = j.value("max_nodes", c.max_nodes);
        c.separation = j.value("separation", c.separation);
        c.correct_fraction = j.value("correct_fraction", c.correct_fraction);
        c.min_lines = j.value("min_lines", c.min_lines);
        c.max_lines = j.value("max_lines", c.max_lines);
        c.language = j.value("language", c.language);
        c.seed = j.value("seed", c.seed);
        c.jobs = j.value("jobs", c.jobs);
        if (j.contains("correct")) detail::read_knobs(j.at("correct"), c.correct);
        if (j.contains("incorrect")) detail::read_knobs(j.at("incorrect"), c.incorrect);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("synth config: ") + e.what());
    }
    return c;
}

}  // namespace codecircuit::synth
