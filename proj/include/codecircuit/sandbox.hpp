#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "codecircuit/graph.hpp"
#include "codecircuit/util.hpp"

// A desk-scale local replacement model. Each layer adds to the residual
// stream a frozen position-mixing term (standing in for attention), a
// transcoder reconstruction and an optional injected error term:
//
//   f_p      = sigma(W_enc x_p + b_enc)
//   x'_p     = x_p + sum_{q<=p} A_pq x_q + W_dec f_p + b_dec + e_p
//   logits   = U x_last
//
// With gates held fixed everything downstream is linear in feature
// activations, which is what makes attributions exactly checkable.
namespace codecircuit::sandbox {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Nonlinearity { ReLU, TopK };

struct ToyConfig {
    int num_layers = 3;
    int dim = 16;
    int features = 32;
    int vocab = 24;
    int max_positions = 4;
    Nonlinearity nonlinearity = Nonlinearity::ReLU;
    int topk = 8;  // TopK only
    // Scale of the injected true-MLP offsets; 0 gives exact reconstruction.
    double error_scale = 0.0;

    void check() const {
        if (num_layers < 1 || dim < 1 || features < 1 || vocab < 1 || max_positions < 1)
            throw InvalidConfigError("toy model dimensions must all be >= 1");
        if (nonlinearity == Nonlinearity::TopK && (topk < 1 || topk > features))
            throw InvalidConfigError("topk must lie in [1, features]");
        if (!(error_scale >= 0.0) || !std::isfinite(error_scale)) throw InvalidConfigError("error_scale must be >= 0");
    }
};

struct TranscoderLayer {
    MatrixXd enc;    // features x dim
    VectorXd b_enc;  // features
    MatrixXd dec;    // dim x features
    VectorXd b_dec;  // dim
    // mix[p][q] (q <= p) moves x_q into position p.
    std::vector<std::vector<MatrixXd>> mix;
    std::vector<VectorXd> error;  // per position; the reconstruction residual
};

struct ToyReplacementModel {
    ToyConfig config;
    MatrixXd embed;    // vocab x dim
    MatrixXd unembed;  // vocab x dim
    std::vector<TranscoderLayer> layers;
};

// All-zero weights with the right shapes.
inline ToyReplacementModel zero_model(const ToyConfig& cfg) {
    cfg.check();
    ToyReplacementModel m;
    m.config = cfg;
    const int d = cfg.dim, f = cfg.features, P = cfg.max_positions;
    m.embed = MatrixXd::Zero(cfg.vocab, d);
    m.unembed = MatrixXd::Zero(cfg.vocab, d);
    m.layers.resize(static_cast<std::size_t>(cfg.num_layers));
    for (auto& l : m.layers) {
        l.enc = MatrixXd::Zero(f, d);
        l.b_enc = VectorXd::Zero(f);
        l.dec = MatrixXd::Zero(d, f);
        l.b_dec = VectorXd::Zero(d);
        l.mix.resize(static_cast<std::size_t>(P));
        for (int p = 0; p < P; ++p) l.mix[static_cast<std::size_t>(p)].assign(static_cast<std::size_t>(p + 1), MatrixXd::Zero(d, d));
        l.error.assign(static_cast<std::size_t>(P), VectorXd::Zero(d));
    }
    return m;
}

// Deterministic scaled-uniform initialization.
inline ToyReplacementModel build_toy_model(std::uint64_t seed, const ToyConfig& cfg = {}) {
    ToyReplacementModel m = zero_model(cfg);
    Rng rng(seed);
    auto fill = [&](MatrixXd& a, double scale) {
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = scale * rng.uniform(-1.0, 1.0);
    };
    auto fillv = [&](VectorXd& v, double scale) {
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = scale * rng.uniform(-1.0, 1.0);
    };
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    const double inv_sqrt_f = 1.0 / std::sqrt(static_cast<double>(cfg.features));
    fill(m.embed, 1.0);
    fill(m.unembed, inv_sqrt_d);
    for (auto& l : m.layers) {
        fill(l.enc, inv_sqrt_d);
        fillv(l.b_enc, 0.1);
        fill(l.dec, 0.5 * inv_sqrt_f);
        fillv(l.b_dec, 0.05);
        for (auto& row : l.mix)
            for (auto& a : row) fill(a, 0.2 * inv_sqrt_d);
        for (auto& e : l.error) fillv(e, cfg.error_scale);
    }
    return m;
}

inline std::vector<VectorXd> embed_tokens(const ToyReplacementModel& m, const std::vector<int>& tokens) {
    std::vector<VectorXd> out;
    for (int t : tokens) {
        if (t < 0 || t >= m.config.vocab) throw InvalidConfigError("token id " + std::to_string(t) + " outside vocab");
        out.push_back(m.embed.row(t).transpose());
    }
    return out;
}

struct FeatureTarget {
    int layer = 0;
    int position = 0;
    int feature = 0;
};

// Activation clamp applied after the nonlinearity.
struct Intervention {
    enum class Mode { Suppress, Amplify, SetTo };

    std::vector<FeatureTarget> targets;
    Mode mode = Mode::Suppress;
    double value = 0.0;  // Amplify: factor (>= 0); SetTo: the new activation

    static Intervention suppress(std::vector<FeatureTarget> t) { return {std::move(t), Mode::Suppress, 0.0}; }
    static Intervention amplify(std::vector<FeatureTarget> t, double factor) { return {std::move(t), Mode::Amplify, factor}; }
    static Intervention set_to(std::vector<FeatureTarget> t, double v) { return {std::move(t), Mode::SetTo, v}; }

    double apply(double activation) const {
        switch (mode) {
            case Mode::Suppress: return 0.0;
            case Mode::Amplify: return value * activation;
            case Mode::SetTo: return value;
        }
        return activation;
    }
};

// gates[layer][position][feature]: 1 when the feature passes its input.
using GateState = std::vector<std::vector<std::vector<char>>>;

struct ForwardResult {
    int positions = 0;
    std::vector<std::vector<VectorXd>> residual;  // [num_layers + 1][positions]
    std::vector<std::vector<VectorXd>> pre;       // [num_layers][positions]
    std::vector<std::vector<VectorXd>> act;       // post-nonlinearity, after clamps
    GateState gates;                              // computed from pre (before clamps)
    VectorXd logits;                              // at the last position
};

namespace detail {

inline std::vector<char> gate_pattern(const ToyConfig& cfg, const VectorXd& pre) {
    const auto m = static_cast<std::size_t>(pre.size());
    std::vector<char> g(m, 0);
    if (cfg.nonlinearity == Nonlinearity::ReLU) {
        for (std::size_t i = 0; i < m; ++i) g[i] = pre(static_cast<Eigen::Index>(i)) > 0.0;
        return g;
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pre(static_cast<Eigen::Index>(a)) > pre(static_cast<Eigen::Index>(b));
    });
    for (std::size_t k = 0; k < static_cast<std::size_t>(cfg.topk); ++k)
        if (pre(static_cast<Eigen::Index>(order[k])) > 0.0) g[order[k]] = 1;
    return g;
}

}  // namespace detail

// Runs the model. With `frozen` set, each feature passes its pre-activation
// iff its recorded gate is open (slope-1 linear region), whatever the new
// pre-activation is.
inline ForwardResult forward(const ToyReplacementModel& m, const std::vector<VectorXd>& inputs,
                             const Intervention* iv = nullptr, const GateState* frozen = nullptr) {
    const auto& cfg = m.config;
    const int P = static_cast<int>(inputs.size());
    if (P < 1 || P > cfg.max_positions)
        throw InvalidConfigError("input length must lie in [1, " + std::to_string(cfg.max_positions) + "]");
    const auto L = static_cast<std::size_t>(cfg.num_layers);
    const auto PP = static_cast<std::size_t>(P);

    ForwardResult r;
    r.positions = P;
    r.residual.assign(L + 1, std::vector<VectorXd>(PP));
    r.pre.assign(L, std::vector<VectorXd>(PP));
    r.act.assign(L, std::vector<VectorXd>(PP));
    r.gates.assign(L, std::vector<std::vector<char>>(PP));
    for (std::size_t p = 0; p < PP; ++p) r.residual[0][p] = inputs[p];

    for (std::size_t l = 0; l < L; ++l) {
        const auto& layer = m.layers[l];
        for (std::size_t p = 0; p < PP; ++p) {
            const VectorXd& x = r.residual[l][p];
            r.pre[l][p] = layer.enc * x + layer.b_enc;
            r.gates[l][p] = detail::gate_pattern(cfg, r.pre[l][p]);
            const auto& gate = frozen ? (*frozen)[l][p] : r.gates[l][p];
            VectorXd a = VectorXd::Zero(cfg.features);
            for (Eigen::Index i = 0; i < a.size(); ++i)
                if (gate[static_cast<std::size_t>(i)]) a(i) = r.pre[l][p](i);
            if (iv)
                for (const auto& t : iv->targets)
                    if (static_cast<std::size_t>(t.layer) == l && static_cast<std::size_t>(t.position) == p)
                        a(t.feature) = iv->apply(a(t.feature));
            r.act[l][p] = std::move(a);
        }
        for (std::size_t p = 0; p < PP; ++p) {
            VectorXd next = r.residual[l][p] + layer.dec * r.act[l][p] + layer.b_dec + layer.error[p];
            for (std::size_t q = 0; q <= p; ++q) next += layer.mix[p][q] * r.residual[l][q];
            r.residual[l + 1][p] = std::move(next);
        }
    }
    r.logits = m.unembed * r.residual[L][PP - 1];
    return r;
}

struct TraceOptions {
    int top_k_logits = 10;
    // Throw NoActiveFeatureError instead of emitting a featureless graph.
    bool require_features = false;
};

// Builds the attribution graph of one forward pass. Sources are token
// embeddings, active features and nonzero error terms; targets are feature
// pre-activations and the top-k logits. The edge weight is the source's
// write vector carried through the frozen residual map (identity plus
// mixing, with every other feature held at its value) and read by the
// target's encoder row or unembedding row:
//
//   w_ij = a_i * v_in_j^T J_ij v_out_i.
inline AttributionGraph trace_attributions(const ToyReplacementModel& m, const std::vector<int>& tokens,
                                           const TraceOptions& opt = {}) {
    if (opt.top_k_logits < 1) throw InvalidConfigError("top_k_logits must be >= 1");
    const auto& cfg = m.config;
    const auto fw = forward(m, embed_tokens(m, tokens));
    const int P = fw.positions;
    const int L = cfg.num_layers;

    AttributionGraph g;
    g.num_layers = L;
    NodeId next_id = 0;

    // Source bookkeeping: residual layer written, position and write vector.
    struct Source {
        NodeId id;
        int write_layer;
        int position;
        VectorXd vec;
    };
    std::vector<Source> sources;
    // Feature node ids keyed by (layer, position, feature).
    std::map<std::tuple<int, int, int>, NodeId> feature_ids;

    for (int p = 0; p < P; ++p) {
        Node n;
        n.id = next_id++;
        n.kind = NodeKind::Token;
        n.layer = -1;
        n.position = p;
        n.token_id = tokens[static_cast<std::size_t>(p)];
        g.nodes.push_back(n);
        sources.push_back({n.id, 0, p, fw.residual[0][static_cast<std::size_t>(p)]});
    }
    for (int l = 0; l < L; ++l)
        for (int p = 0; p < P; ++p) {
            const VectorXd& a = fw.act[static_cast<std::size_t>(l)][static_cast<std::size_t>(p)];
            for (int i = 0; i < cfg.features; ++i) {
                if (!(a(i) > 0.0)) continue;
                Node n;
                n.id = next_id++;
                n.kind = NodeKind::Feature;
                n.layer = l;
                n.position = p;
                n.feature_index = i;
                n.activation = a(i);
                g.nodes.push_back(n);
                feature_ids[{l, p, i}] = n.id;
                sources.push_back({n.id, l + 1, p, a(i) * m.layers[static_cast<std::size_t>(l)].dec.col(i)});
            }
        }
    const std::int64_t feature_count = static_cast<std::int64_t>(feature_ids.size());
    if (opt.require_features && feature_count == 0) throw NoActiveFeatureError("no feature is active for this input");
    for (int l = 0; l < L; ++l)
        for (int p = 0; p < P; ++p) {
            const VectorXd& e = m.layers[static_cast<std::size_t>(l)].error[static_cast<std::size_t>(p)];
            if (e.isZero(0.0)) continue;
            Node n;
            n.id = next_id++;
            n.kind = NodeKind::Error;
            n.layer = l;
            n.position = p;
            g.nodes.push_back(n);
            sources.push_back({n.id, l + 1, p, e});
        }

    // Top-k logits by probability; ties to the lower token id.
    const VectorXd& z = fw.logits;
    const double zmax = z.maxCoeff();
    const VectorXd ez = (z.array() - zmax).exp().matrix();
    const VectorXd prob = ez / ez.sum();
    std::vector<int> vocab_order(static_cast<std::size_t>(cfg.vocab));
    std::iota(vocab_order.begin(), vocab_order.end(), 0);
    std::stable_sort(vocab_order.begin(), vocab_order.end(), [&](int a, int b) { return prob(a) > prob(b); });
    const int k = std::min(opt.top_k_logits, cfg.vocab);
    std::vector<std::pair<int, NodeId>> logit_nodes;
    for (int r = 0; r < k; ++r) {
        const int t = vocab_order[static_cast<std::size_t>(r)];
        if (!(prob(t) > 0.0)) break;
        Node n;
        n.id = next_id++;
        n.kind = NodeKind::Logit;
        n.layer = L;
        n.position = P - 1;
        n.token_id = t;
        g.nodes.push_back(n);
        g.traced_logits.push_back({t, prob(t)});
        logit_nodes.emplace_back(t, n.id);
    }
    g.total_active_features = feature_count;

    // Push each source through the frozen residual map, reading targets as
    // the signal passes their layer.
    const auto PP = static_cast<std::size_t>(P);
    for (const auto& s : sources) {
        std::vector<VectorXd> state(PP, VectorXd::Zero(cfg.dim));
        state[static_cast<std::size_t>(s.position)] = s.vec;
        for (int l = s.write_layer; l <= L; ++l) {
            if (l == L) {
                for (const auto& [t, id] : logit_nodes) {
                    const double w = m.unembed.row(t).dot(state[PP - 1]);
                    if (w != 0.0) g.edges.push_back({s.id, id, w});
                }
                break;
            }
            const auto& layer = m.layers[static_cast<std::size_t>(l)];
            for (int p = s.position; p < P; ++p)
                for (int i = 0; i < cfg.features; ++i) {
                    auto it = feature_ids.find({l, p, i});
                    if (it == feature_ids.end()) continue;
                    const double w = layer.enc.row(i).dot(state[static_cast<std::size_t>(p)]);
                    if (w != 0.0) g.edges.push_back({s.id, it->second, w});
                }
            std::vector<VectorXd> next = state;
            for (std::size_t p = 0; p < PP; ++p)
                for (std::size_t q = 0; q <= p; ++q) next[p] += layer.mix[p][q] * state[q];
            state = std::move(next);
        }
    }
    return canonicalize(std::move(g));
}

// Logits produced by the decoder biases alone (every source zeroed).
inline VectorXd bias_path_logits(const ToyReplacementModel& m, int positions) {
    const auto PP = static_cast<std::size_t>(positions);
    std::vector<VectorXd> x(PP, VectorXd::Zero(m.config.dim));
    for (const auto& layer : m.layers) {
        std::vector<VectorXd> next(PP);
        for (std::size_t p = 0; p < PP; ++p) {
            next[p] = x[p] + layer.b_dec;
            for (std::size_t q = 0; q <= p; ++q) next[p] += layer.mix[p][q] * x[q];
        }
        x = std::move(next);
    }
    return m.unembed * x[PP - 1];
}

// First-order logit change predicted from the attribution graph alone.
// Edges out of a feature node scale with its activation, so w_jk / a_j is
// the unit effect of feature j on node k; a change in activation spreads
// along those unit effects through every feature whose gate stays open.
inline std::map<std::int64_t, double> predict_logit_delta(const AttributionGraph& g, const Intervention& iv) {
    const auto idx = node_index(g);
    const auto order = topological_order(g);
    if (!order) throw CyclicGraphError("attribution graph contains a cycle");
    std::vector<std::vector<const Edge*>> incoming(g.nodes.size());
    for (const auto& e : g.edges) incoming[idx.at(e.dst)].push_back(&e);

    std::map<std::tuple<int, int, std::int64_t>, std::size_t> targeted;
    for (const auto& t : iv.targets)
        for (std::size_t i = 0; i < g.nodes.size(); ++i) {
            const auto& n = g.nodes[i];
            if (n.kind == NodeKind::Feature && n.layer == t.layer && n.position == t.position &&
                n.feature_index == t.feature)
                targeted[{t.layer, t.position, t.feature}] = i;
        }

    std::vector<double> delta(g.nodes.size(), 0.0);  // change in activation (features) or value (logits)
    for (std::size_t u : *order) {
        const Node& n = g.nodes[u];
        if (n.kind != NodeKind::Feature && n.kind != NodeKind::Logit) continue;
        double d_pre = 0.0;
        for (const Edge* e : incoming[u]) {
            const Node& src = g.nodes[idx.at(e->src)];
            if (src.kind == NodeKind::Feature) d_pre += e->weight / *src.activation * delta[idx.at(e->src)];
        }
        if (n.kind == NodeKind::Feature && targeted.count({n.layer, n.position, *n.feature_index})) {
            const double a = *n.activation;
            delta[u] = iv.apply(a + d_pre) - a;
        } else {
            delta[u] = d_pre;
        }
    }
    std::map<std::int64_t, double> out;
    for (std::size_t u = 0; u < g.nodes.size(); ++u)
        if (g.nodes[u].kind == NodeKind::Logit) out[*g.nodes[u].token_id] = delta[u];
    return out;
}

struct LogitDelta {
    std::int64_t token_id = 0;
    double actual = 0.0;     // free forward pass
    double frozen = 0.0;     // gates held at their original state
    double predicted = 0.0;  // from the attribution graph
};

struct InterventionReport {
    VectorXd original_logits;
    VectorXd new_logits;
    std::vector<LogitDelta> traced;  // one per traced logit
    int gate_flips = 0;              // untargeted features whose gate changed
};

inline void check_targets(const ToyReplacementModel& m, const Intervention& iv, int positions) {
    for (const auto& t : iv.targets)
        if (t.layer < 0 || t.layer >= m.config.num_layers || t.position < 0 || t.position >= positions ||
            t.feature < 0 || t.feature >= m.config.features)
            throw TargetNotFoundError("no feature at (layer " + std::to_string(t.layer) + ", position " +
                                      std::to_string(t.position) + ", index " + std::to_string(t.feature) + ")");
    if (iv.mode == Intervention::Mode::Amplify && !(iv.value >= 0.0))
        throw InvalidConfigError("amplification factor must be >= 0");
}

// Re-runs the free forward pass with the clamp in place and compares the
// result with the frozen-gate recompute and the graph's linear prediction.
inline InterventionReport apply_intervention(const ToyReplacementModel& m, const std::vector<int>& tokens,
                                             const Intervention& iv, int top_k_logits = 0) {
    const int positions = static_cast<int>(tokens.size());
    check_targets(m, iv, positions);
    const auto inputs = embed_tokens(m, tokens);
    const auto base = forward(m, inputs);
    const auto free_run = forward(m, inputs, &iv);
    const auto frozen_run = forward(m, inputs, &iv, &base.gates);
    TraceOptions opt;
    opt.top_k_logits = top_k_logits > 0 ? top_k_logits : m.config.vocab;
    const auto graph = trace_attributions(m, tokens, opt);
    const auto predicted = predict_logit_delta(graph, iv);

    InterventionReport rep;
    rep.original_logits = base.logits;
    rep.new_logits = free_run.logits;
    for (const auto& t : graph.traced_logits) {
        const auto tok = static_cast<Eigen::Index>(t.token_id);
        rep.traced.push_back({t.token_id, free_run.logits(tok) - base.logits(tok),
                              frozen_run.logits(tok) - base.logits(tok), predicted.at(t.token_id)});
    }
    for (std::size_t l = 0; l < base.gates.size(); ++l)
        for (std::size_t p = 0; p < base.gates[l].size(); ++p)
            for (std::size_t i = 0; i < base.gates[l][p].size(); ++i) {
                bool is_target = false;
                for (const auto& t : iv.targets)
                    is_target |= static_cast<std::size_t>(t.layer) == l && static_cast<std::size_t>(t.position) == p &&
                                 static_cast<std::size_t>(t.feature) == i;
                if (!is_target && base.gates[l][p][i] != free_run.gates[l][p][i]) ++rep.gate_flips;
            }
    return rep;
}

}  // namespace codecircuit::sandbox
