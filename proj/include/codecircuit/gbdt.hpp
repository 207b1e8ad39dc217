#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "codecircuit/features.hpp"
#include "codecircuit/util.hpp"

namespace codecircuit {

struct GbdtConfig {
    int num_rounds = 300;
    double learning_rate = 0.05;
    int max_depth = 6;
    int min_samples_leaf = 20;
    double subsample = 1.0;
    std::uint64_t seed = 42;
    double l2_regularization = 1.0;  // lambda in the second-order gain

    void check() const {
        if (num_rounds < 1) throw InvalidConfigError("num_rounds must be >= 1");
        if (!(learning_rate > 0.0)) throw InvalidConfigError("learning_rate must be > 0");
        if (max_depth < 1) throw InvalidConfigError("max_depth must be >= 1");
        if (min_samples_leaf < 1) throw InvalidConfigError("min_samples_leaf must be >= 1");
        if (!(subsample > 0.0 && subsample <= 1.0)) throw InvalidConfigError("subsample must lie in (0, 1]");
        if (!(l2_regularization >= 0.0)) throw InvalidConfigError("l2_regularization must be >= 0");
    }
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // rows with x[feature] < threshold go left
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf output before the learning rate

    bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    double predict(std::span<const double> x) const {
        int i = 0;
        while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
            const auto& n = nodes[static_cast<std::size_t>(i)];
            i = x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(i)].value;
    }
};

struct GbdtModel {
    double prior_logit = 0.0;
    std::vector<RegressionTree> trees;
    std::vector<std::string> manifest;
    std::vector<double> importances;  // total split gain per manifest entry
    double total_gain = 0.0;
    GbdtConfig config;
    // Mean training cross-entropy before the first round and after each one.
    std::vector<double> training_loss;
};

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// Cross-entropy of label y under logit f, written as softplus(f) - y f.
inline double log_loss(double f, int y) {
    const double softplus = f > 0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f));
    return softplus - static_cast<double>(y) * f;
}

inline double predict_raw(const GbdtModel& m, std::span<const double> x) {
    double leaf_sum = 0.0;
    for (const auto& t : m.trees) leaf_sum += t.predict(x);
    return m.prior_logit + m.config.learning_rate * leaf_sum;
}

inline double predict_proba(const GbdtModel& m, const FeatureVector& x) {
    if (x.manifest != m.manifest) throw ManifestMismatchError("feature manifest does not match the model");
    return sigmoid(predict_raw(m, x.values));
}

namespace detail {

struct NodeStats {
    double g = 0.0, h = 0.0;
    std::size_t count = 0;
};

struct SplitChoice {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
};

inline double newton_value(const NodeStats& s, double lambda) {
    const double denom = s.h + lambda;
    return denom > 0.0 ? s.g / denom : 0.0;
}

inline double structure_score(double g, double h, double lambda) {
    const double denom = h + lambda;
    return denom > 0.0 ? g * g / denom : 0.0;
}

}  // namespace detail

// Newton boosting of depth-limited regression trees on the cross-entropy
// loss. Splits are exact (every midpoint between sorted unique values), and
// ties go to the lower feature index, then the lower threshold. Each leaf is
// shrunk if its step would raise the loss of the training rows it holds, so
// the training loss never increases from one round to the next.
inline GbdtModel train_gbdt(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                            std::vector<std::string> manifest, const GbdtConfig& cfg = {}) {
    cfg.check();
    const std::size_t n = X.size();
    if (n != y.size()) throw ShapeMismatchError("X has " + std::to_string(n) + " rows but y has " + std::to_string(y.size()));
    if (n < 2) throw ShapeMismatchError("training needs at least 2 rows");
    const std::size_t p = X.front().size();
    if (manifest.empty())
        for (std::size_t j = 0; j < p; ++j) manifest.push_back("f" + std::to_string(j));
    if (manifest.size() != p) throw ShapeMismatchError("manifest length differs from the column count");
    std::size_t ones = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (X[i].size() != p) throw ShapeMismatchError("row " + std::to_string(i) + " has the wrong length");
        for (double v : X[i])
            if (!std::isfinite(v)) throw NonFiniteError("row " + std::to_string(i) + " holds a non-finite value");
        if (y[i] != 0 && y[i] != 1) throw ShapeMismatchError("labels must be 0 or 1");
        ones += static_cast<std::size_t>(y[i]);
    }
    if (ones == 0 || ones == n) throw SingleClassError("training labels contain a single class");

    GbdtModel model;
    model.config = cfg;
    model.manifest = std::move(manifest);
    model.importances.assign(p, 0.0);
    const double base = static_cast<double>(ones) / static_cast<double>(n);
    model.prior_logit = std::log(base / (1.0 - base));

    // Column-major copy plus one ascending row order per feature.
    std::vector<std::vector<double>> col(p, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) col[j][i] = X[i][j];
    std::vector<std::vector<std::size_t>> sorted(p, std::vector<std::size_t>(n));
    for (std::size_t j = 0; j < p; ++j) {
        std::iota(sorted[j].begin(), sorted[j].end(), 0);
        std::stable_sort(sorted[j].begin(), sorted[j].end(),
                         [&](std::size_t a, std::size_t b) { return col[j][a] < col[j][b]; });
    }

    std::vector<double> f(n, model.prior_logit), grad(n), hess(n);
    auto mean_loss = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += log_loss(f[i], y[i]);
        return s / static_cast<double>(n);
    };
    model.training_loss.push_back(mean_loss());

    const double lambda = cfg.l2_regularization;
    const auto min_leaf = static_cast<std::size_t>(cfg.min_samples_leaf);
    std::vector<int> node_of(n);
    std::vector<std::size_t> rows_all(n);
    std::iota(rows_all.begin(), rows_all.end(), 0);

    for (int round = 0; round < cfg.num_rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            const double prob = sigmoid(f[i]);
            grad[i] = static_cast<double>(y[i]) - prob;
            hess[i] = prob * (1.0 - prob);
        }
        // Row subsample for this round; -1 marks rows outside the tree.
        std::fill(node_of.begin(), node_of.end(), -1);
        if (cfg.subsample < 1.0) {
            Rng rng(splitmix64(cfg.seed ^ static_cast<std::uint64_t>(round)));
            std::vector<std::size_t> perm = rows_all;
            rng.shuffle(perm);
            const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.subsample * static_cast<double>(n)));
            for (std::size_t k = 0; k < take; ++k) node_of[perm[k]] = 0;
        } else {
            std::fill(node_of.begin(), node_of.end(), 0);
        }

        RegressionTree tree;
        tree.nodes.emplace_back();
        std::vector<detail::NodeStats> stats(1);
        for (std::size_t i = 0; i < n; ++i)
            if (node_of[i] == 0) {
                stats[0].g += grad[i];
                stats[0].h += hess[i];
                ++stats[0].count;
            }

        std::vector<int> frontier = {0};
        for (int depth = 0; depth < cfg.max_depth && !frontier.empty(); ++depth) {
            std::vector<int> slot(tree.nodes.size(), -1);
            for (std::size_t k = 0; k < frontier.size(); ++k) slot[static_cast<std::size_t>(frontier[k])] = static_cast<int>(k);
            std::vector<detail::SplitChoice> best(frontier.size());

            struct Scan {
                detail::NodeStats left;
                double last = 0.0;
            };
            std::vector<Scan> scan(frontier.size());
            for (std::size_t j = 0; j < p; ++j) {
                std::fill(scan.begin(), scan.end(), Scan{});
                for (std::size_t r : sorted[j]) {
                    const int node = node_of[r];
                    if (node < 0 || slot[static_cast<std::size_t>(node)] < 0) continue;
                    const auto k = static_cast<std::size_t>(slot[static_cast<std::size_t>(node)]);
                    Scan& s = scan[k];
                    const double v = col[j][r];
                    if (s.left.count > 0 && v != s.last) {
                        const auto& tot = stats[static_cast<std::size_t>(node)];
                        const std::size_t right_count = tot.count - s.left.count;
                        if (s.left.count >= min_leaf && right_count >= min_leaf) {
                            const double gain =
                                0.5 * (detail::structure_score(s.left.g, s.left.h, lambda) +
                                       detail::structure_score(tot.g - s.left.g, tot.h - s.left.h, lambda) -
                                       detail::structure_score(tot.g, tot.h, lambda));
                            if (gain > best[k].gain) {
                                double thr = s.last + (v - s.last) / 2.0;
                                if (!(thr > s.last)) thr = v;
                                best[k] = {gain, static_cast<int>(j), thr};
                            }
                        }
                    }
                    s.left.g += grad[r];
                    s.left.h += hess[r];
                    ++s.left.count;
                    s.last = v;
                }
            }

            std::vector<int> next;
            std::vector<std::pair<int, int>> children(tree.nodes.size(), {-1, -1});
            for (std::size_t k = 0; k < frontier.size(); ++k) {
                if (best[k].feature < 0) continue;
                const int node = frontier[k];
                const int l = static_cast<int>(tree.nodes.size());
                tree.nodes.emplace_back();
                tree.nodes.emplace_back();
                stats.resize(tree.nodes.size());
                auto& tn = tree.nodes[static_cast<std::size_t>(node)];
                tn.feature = best[k].feature;
                tn.threshold = best[k].threshold;
                tn.left = l;
                tn.right = l + 1;
                children[static_cast<std::size_t>(node)] = {l, l + 1};
                model.importances[static_cast<std::size_t>(best[k].feature)] += best[k].gain;
                model.total_gain += best[k].gain;
                next.push_back(l);
                next.push_back(l + 1);
            }
            for (std::size_t i = 0; i < n; ++i) {
                const int node = node_of[i];
                if (node < 0) continue;
                const auto [l, r] = children[static_cast<std::size_t>(node)];
                if (l < 0) continue;
                const auto& tn = tree.nodes[static_cast<std::size_t>(node)];
                const int child = col[static_cast<std::size_t>(tn.feature)][i] < tn.threshold ? l : r;
                node_of[i] = child;
                auto& cs = stats[static_cast<std::size_t>(child)];
                cs.g += grad[i];
                cs.h += hess[i];
                ++cs.count;
            }
            frontier.clear();
            for (int c : next)
                if (stats[static_cast<std::size_t>(c)].count >= 2 * min_leaf) frontier.push_back(c);
        }

        for (std::size_t k = 0; k < tree.nodes.size(); ++k)
            if (tree.nodes[k].is_leaf()) tree.nodes[k].value = detail::newton_value(stats[k], lambda);

        // Step safeguard: halve any leaf whose update would raise the loss of
        // the training rows routed to it; after 40 halvings drop it.
        std::vector<std::vector<std::size_t>> leaf_rows(tree.nodes.size());
        std::vector<int> leaf_of(n);
        for (std::size_t i = 0; i < n; ++i) {
            int t = 0;
            while (!tree.nodes[static_cast<std::size_t>(t)].is_leaf()) {
                const auto& tn = tree.nodes[static_cast<std::size_t>(t)];
                t = col[static_cast<std::size_t>(tn.feature)][i] < tn.threshold ? tn.left : tn.right;
            }
            leaf_of[i] = t;
            leaf_rows[static_cast<std::size_t>(t)].push_back(i);
        }
        for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
            auto& tn = tree.nodes[k];
            if (!tn.is_leaf() || leaf_rows[k].empty()) continue;
            double before = 0.0;
            for (std::size_t i : leaf_rows[k]) before += log_loss(f[i], y[i]);
            int halvings = 0;
            while (tn.value != 0.0) {
                double after = 0.0;
                for (std::size_t i : leaf_rows[k]) after += log_loss(f[i] + cfg.learning_rate * tn.value, y[i]);
                if (after <= before) break;
                if (++halvings > 40) tn.value = 0.0;
                else tn.value *= 0.5;
            }
        }
        for (std::size_t i = 0; i < n; ++i)
            f[i] += cfg.learning_rate * tree.nodes[static_cast<std::size_t>(leaf_of[i])].value;
        model.trees.push_back(std::move(tree));
        model.training_loss.push_back(mean_loss());
    }
    return model;
}

// (name, gain) sorted by descending gain; equal gains keep manifest order.
inline std::vector<std::pair<std::string, double>> feature_importances(const GbdtModel& m) {
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t j = 0; j < m.manifest.size(); ++j)
        out.emplace_back(m.manifest[j], j < m.importances.size() ? m.importances[j] : 0.0);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

inline constexpr int kModelFormatVersion = 1;

inline std::string serialize_model(const GbdtModel& m) {
    using nlohmann::json;
    json trees = json::array();
    for (const auto& t : m.trees) {
        json nodes = json::array();
        for (const auto& n : t.nodes) {
            if (n.is_leaf()) nodes.push_back({{"value", n.value}});
            else nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
        }
        trees.push_back(std::move(nodes));
    }
    const auto& c = m.config;
    json doc = {{"format", "codecircuit-gbdt"},
                {"version", kModelFormatVersion},
                {"config",
                 {{"num_rounds", c.num_rounds},
                  {"learning_rate", c.learning_rate},
                  {"max_depth", c.max_depth},
                  {"min_samples_leaf", c.min_samples_leaf},
                  {"subsample", c.subsample},
                  {"seed", c.seed},
                  {"l2_regularization", c.l2_regularization}}},
                {"manifest", m.manifest},
                {"prior_logit", m.prior_logit},
                {"importances", m.importances},
                {"total_gain", m.total_gain},
                {"training_loss", m.training_loss},
                {"trees", std::move(trees)}};
    return doc.dump() + "\n";
}

inline GbdtModel parse_model(std::string_view bytes) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
        throw SyntaxError(std::string("malformed model document: ") + e.what());
    }
    try {
        if (doc.at("format") != "codecircuit-gbdt") throw SchemaError("not a gbdt model document");
        if (doc.at("version").get<int>() != kModelFormatVersion)
            throw SchemaError("unsupported model version " + doc.at("version").dump());
        GbdtModel m;
        const auto& c = doc.at("config");
        m.config.num_rounds = c.at("num_rounds").get<int>();
        m.config.learning_rate = c.at("learning_rate").get<double>();
        m.config.max_depth = c.at("max_depth").get<int>();
        m.config.min_samples_leaf = c.at("min_samples_leaf").get<int>();
        m.config.subsample = c.at("subsample").get<double>();
        m.config.seed = c.at("seed").get<std::uint64_t>();
        m.config.l2_regularization = c.at("l2_regularization").get<double>();
        m.manifest = doc.at("manifest").get<std::vector<std::string>>();
        m.prior_logit = doc.at("prior_logit").get<double>();
        m.importances = doc.at("importances").get<std::vector<double>>();
        m.total_gain = doc.at("total_gain").get<double>();
        m.training_loss = doc.at("training_loss").get<std::vector<double>>();
        for (const auto& jt : doc.at("trees")) {
            RegressionTree t;
            for (const auto& jn : jt) {
                TreeNode n;
                if (jn.contains("value")) {
                    n.value = jn.at("value").get<double>();
                } else {
                    n.feature = jn.at("feature").get<int>();
                    n.threshold = jn.at("threshold").get<double>();
                    n.left = jn.at("left").get<int>();
                    n.right = jn.at("right").get<int>();
                }
                t.nodes.push_back(n);
            }
            m.trees.push_back(std::move(t));
        }
        if (m.importances.size() != m.manifest.size()) throw SchemaError("importances length differs from manifest");
        for (const auto& t : m.trees) {
            if (t.nodes.empty()) throw SchemaError("empty tree");
            for (std::size_t idx = 0; idx < t.nodes.size(); ++idx) {
                const auto& n = t.nodes[idx];
                if (n.is_leaf()) continue;
                if (static_cast<std::size_t>(n.feature) >= m.manifest.size())
                    throw SchemaError("split feature index out of range");
                const auto sz = static_cast<int>(t.nodes.size());
                const auto self = static_cast<int>(idx);
                if (n.left <= self || n.right <= self || n.left >= sz || n.right >= sz)
                    throw SchemaError("tree child index out of range");
            }
        }
        return m;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("model document: ") + e.what());
    }
}

}  // namespace codecircuit
