#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "codecircuit/baselines.hpp"
#include "codecircuit/eval.hpp"
#include "codecircuit/features.hpp"
#include "codecircuit/gbdt.hpp"
#include "codecircuit/graph_io.hpp"
#include "codecircuit/manifest.hpp"
#include "codecircuit/projection.hpp"
#include "codecircuit/pruner.hpp"
#include "codecircuit/util.hpp"

namespace codecircuit {

inline constexpr const char* kVersion = "0.1.0";

struct EvalConfig {
    // "crossfit": every labeled line is scored by a model that never saw its
    // task (k task-grouped folds). "holdout": train on the 80% split, score
    // the 20% test split.
    std::string protocol = "crossfit";
    int folds = 5;
    bool stratify = true;
    TokenAggregation aggregation = TokenAggregation::Mean;
};

struct RunConfig {
    std::map<std::string, std::filesystem::path> manifests;  // tag -> manifest.jsonl
    std::filesystem::path output_dir = "out";
    PrunerConfig pruner;
    FeatureOptions features;
    GbdtConfig gbdt;
    EvalConfig eval;
    std::vector<std::string> methods = {"gbdt", "maxprob", "ppl", "entropy", "temp", "energy"};
    std::uint64_t seed = 42;      // drives the label shuffle
    bool shuffle_labels = false;  // permutes labels within each tag (null check)
    bool pooled = false;          // one classifier over all tags instead of one per tag
    bool transfer = true;         // cross-tag matrix when two or more tags share a manifest
    unsigned jobs = 1;

    void check() const {
        if (manifests.empty()) throw InvalidConfigError("no input manifests");
        pruner.check();
        gbdt.check();
        if (eval.protocol != "crossfit" && eval.protocol != "holdout")
            throw InvalidConfigError("eval.protocol must be crossfit or holdout");
        if (eval.folds < 2) throw InvalidConfigError("eval.folds must be >= 2");
        if (methods.empty()) throw InvalidConfigError("no methods selected");
        for (const auto& m : methods)
            if (m != "gbdt" && !parse_baseline(m)) throw InvalidConfigError("unknown method '" + m + "'");
    }
};

namespace detail {

inline const char* aggregation_name(TokenAggregation a) {
    switch (a) {
        case TokenAggregation::Mean: return "mean";
        case TokenAggregation::Min: return "min";
        case TokenAggregation::Last: return "last";
    }
    return "mean";
}

inline TokenAggregation parse_aggregation(const std::string& s) {
    if (s == "mean") return TokenAggregation::Mean;
    if (s == "min") return TokenAggregation::Min;
    if (s == "last") return TokenAggregation::Last;
    throw InvalidConfigError("eval.aggregation must be mean, min or last");
}

inline std::optional<std::string> getenv_str(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
}

}  // namespace detail

inline nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json m = nlohmann::ordered_json::object();
    for (const auto& [tag, path] : c.manifests) m[tag] = path.generic_string();
    j["manifests"] = m;
    j["output_dir"] = c.output_dir.generic_string();
    nlohmann::ordered_json pr;
    pr["node_threshold"] = c.pruner.node_threshold;
    pr["edge_threshold"] = c.pruner.edge_threshold;
    pr["max_iterations"] = c.pruner.max_iterations ? nlohmann::ordered_json(*c.pruner.max_iterations) : nlohmann::ordered_json(nullptr);
    pr["epsilon"] = c.pruner.epsilon;
    j["pruner"] = pr;
    j["features"] = {{"epsilon", c.features.epsilon}};
    nlohmann::ordered_json g;
    g["num_rounds"] = c.gbdt.num_rounds;
    g["learning_rate"] = c.gbdt.learning_rate;
    g["max_depth"] = c.gbdt.max_depth;
    g["min_samples_leaf"] = c.gbdt.min_samples_leaf;
    g["subsample"] = c.gbdt.subsample;
    g["seed"] = c.gbdt.seed;
    g["l2_regularization"] = c.gbdt.l2_regularization;
    j["gbdt"] = g;
    nlohmann::ordered_json e;
    e["protocol"] = c.eval.protocol;
    e["folds"] = c.eval.folds;
    e["stratify"] = c.eval.stratify;
    e["aggregation"] = detail::aggregation_name(c.eval.aggregation);
    j["eval"] = e;
    j["methods"] = c.methods;
    j["seed"] = c.seed;
    j["shuffle_labels"] = c.shuffle_labels;
    j["pooled"] = c.pooled;
    j["transfer"] = c.transfer;
    j["jobs"] = c.jobs;
    return j;
}

// Missing keys keep their defaults; relative manifest paths resolve against
// `base_dir` (normally the config file's directory).
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    RunConfig c;
    try {
        auto only = [](const nlohmann::json& obj, const std::string& where, const std::set<std::string>& known) {
            if (!obj.is_object()) throw SchemaError("run config: " + where + " must be an object");
            for (const auto& [key, _] : obj.items())
                if (!known.count(key)) throw SchemaError("unknown run config key '" + where + key + "'");
        };
        only(j, "", {"manifests", "output_dir", "pruner", "features", "gbdt", "eval", "methods", "seed",
                     "shuffle_labels", "pooled", "transfer", "jobs"});
        if (j.contains("pruner")) only(j.at("pruner"), "pruner.", {"node_threshold", "edge_threshold", "max_iterations", "epsilon"});
        if (j.contains("features")) only(j.at("features"), "features.", {"epsilon"});
        if (j.contains("gbdt"))
            only(j.at("gbdt"), "gbdt.",
                 {"num_rounds", "learning_rate", "max_depth", "min_samples_leaf", "subsample", "seed", "l2_regularization"});
        if (j.contains("eval")) only(j.at("eval"), "eval.", {"protocol", "folds", "stratify", "aggregation"});
        if (j.contains("manifests"))
            for (const auto& [tag, path] : j.at("manifests").items()) {
                std::filesystem::path p(path.get<std::string>());
                c.manifests[tag] = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
            }
        if (j.contains("output_dir")) {
            std::filesystem::path p(j.at("output_dir").get<std::string>());
            c.output_dir = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
        }
        if (j.contains("pruner")) {
            const auto& p = j.at("pruner");
            c.pruner.node_threshold = p.value("node_threshold", c.pruner.node_threshold);
            c.pruner.edge_threshold = p.value("edge_threshold", c.pruner.edge_threshold);
            c.pruner.epsilon = p.value("epsilon", c.pruner.epsilon);
            if (p.contains("max_iterations") && !p.at("max_iterations").is_null())
                c.pruner.max_iterations = p.at("max_iterations").get<int>();
        }
        if (j.contains("features")) c.features.epsilon = j.at("features").value("epsilon", c.features.epsilon);
        if (j.contains("gbdt")) {
            const auto& g = j.at("gbdt");
            c.gbdt.num_rounds = g.value("num_rounds", c.gbdt.num_rounds);
            c.gbdt.learning_rate = g.value("learning_rate", c.gbdt.learning_rate);
            c.gbdt.max_depth = g.value("max_depth", c.gbdt.max_depth);
            c.gbdt.min_samples_leaf = g.value("min_samples_leaf", c.gbdt.min_samples_leaf);
            c.gbdt.subsample = g.value("subsample", c.gbdt.subsample);
            c.gbdt.seed = g.value("seed", c.gbdt.seed);
            c.gbdt.l2_regularization = g.value("l2_regularization", c.gbdt.l2_regularization);
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            c.eval.protocol = e.value("protocol", c.eval.protocol);
            c.eval.folds = e.value("folds", c.eval.folds);
            c.eval.stratify = e.value("stratify", c.eval.stratify);
            if (e.contains("aggregation")) c.eval.aggregation = detail::parse_aggregation(e.at("aggregation"));
        }
        if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
        c.seed = j.value("seed", c.seed);
        c.shuffle_labels = j.value("shuffle_labels", c.shuffle_labels);
        c.pooled = j.value("pooled", c.pooled);
        c.transfer = j.value("transfer", c.transfer);
        c.jobs = j.value("jobs", c.jobs);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("run config: ") + e.what());
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SyntaxError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j, path.parent_path());
}

// CODECIRCUIT_OUTPUT_DIR and CODECIRCUIT_JOBS override the file; nothing else does.
inline void apply_env_overrides(RunConfig& c) {
    if (auto v = detail::getenv_str("CODECIRCUIT_OUTPUT_DIR")) c.output_dir = *v;
    if (auto v = detail::getenv_str("CODECIRCUIT_JOBS")) {
        try {
            const long n = std::stol(*v);
            if (n < 1) throw InvalidConfigError("CODECIRCUIT_JOBS must be >= 1");
            c.jobs = static_cast<unsigned>(n);
        } catch (const std::logic_error&) {
            throw InvalidConfigError("CODECIRCUIT_JOBS is not an integer: " + *v);
        }
    }
}

// ---------------------------------------------------------------------------
// Stages shared by the pipeline and the single-stage CLI commands.

struct FeatureTable {
    std::string tag;
    std::vector<std::string> manifest;
    std::vector<StepRecord> records;  // sorted by (task_id, step_index)
    std::vector<std::vector<double>> X;
    std::vector<std::uint64_t> graph_hashes;
};

inline void sort_records(std::vector<StepRecord>& records) {
    std::sort(records.begin(), records.end(), [](const StepRecord& a, const StepRecord& b) {
        return std::tie(a.task_id, a.step_index) < std::tie(b.task_id, b.step_index);
    });
}

// Loads, prunes and featurizes every record of one corpus.
inline FeatureTable build_feature_table(const std::string& tag, const Corpus& corpus, const PrunerConfig& pcfg,
                                        const FeatureOptions& fopt, unsigned jobs) {
    FeatureTable t;
    t.tag = tag;
    t.records = corpus.records;
    sort_records(t.records);
    const std::size_t n = t.records.size();
    std::vector<FeatureVector> fv(n);
    t.graph_hashes.assign(n, 0);
    parallel_for(n, jobs, [&](std::size_t i) {
        const auto path = corpus.resolve(t.records[i]);
        const std::string bytes = read_file(path);
        t.graph_hashes[i] = fnv1a64(bytes);
        AttributionGraph g;
        try {
            g = parse_graph(bytes);
        } catch (const Error& e) {
            throw Error(e.kind(), path.string() + ": " + e.what());
        }
        fv[i] = extract_features(prune_graph(g, pcfg), fopt);
    });
    if (n == 0) return t;
    t.manifest = fv.front().manifest;
    t.X.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (fv[i].manifest != t.manifest)
            throw ManifestMismatchError("corpus '" + tag + "' mixes graphs with different num_layers (" +
                                        t.records[i].graph_path + ")");
        t.X.push_back(std::move(fv[i].values));
    }
    return t;
}

inline std::string feature_table_tsv(const FeatureTable& t) {
    std::string out = "task_id\tstep_index\tlabel";
    for (const auto& name : t.manifest) out += "\t" + name;
    out += "\n";
    for (std::size_t i = 0; i < t.records.size(); ++i) {
        const auto& r = t.records[i];
        out += r.task_id + "\t" + std::to_string(r.step_index) + "\t" + (r.label ? std::to_string(*r.label) : "NA");
        for (double v : t.X[i]) out += "\t" + fixed(v, 9);
        out += "\n";
    }
    return out;
}

// Inverse of feature_table_tsv. Graph hashes are not recoverable and stay empty.
inline FeatureTable parse_feature_table_tsv(std::string_view text, const std::string& tag = {}) {
    FeatureTable t;
    t.tag = tag;
    auto split = [](std::string_view line) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const auto tab = line.find('\t', start);
            cells.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
            if (tab == std::string_view::npos) break;
            start = tab + 1;
        }
        return cells;
    };
    std::size_t pos = 0, lineno = 0;
    std::size_t width = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split(line);
        const std::string where = "feature table line " + std::to_string(lineno);
        if (width == 0) {
            if (cells.size() < 4 || cells[0] != "task_id" || cells[1] != "step_index" || cells[2] != "label")
                throw SchemaError(where + ": header must start with task_id, step_index, label");
            t.manifest.assign(cells.begin() + 3, cells.end());
            width = cells.size();
            continue;
        }
        if (cells.size() != width)
            throw SchemaError(where + ": expected " + std::to_string(width) + " cells, got " +
                              std::to_string(cells.size()));
        StepRecord r;
        r.task_id = cells[0];
        std::vector<double> row;
        try {
            r.step_index = std::stoll(cells[1]);
            if (cells[2] != "NA") {
                const int label = std::stoi(cells[2]);
                if (label != 0 && label != 1) throw SchemaError(where + ": label must be 0, 1 or NA");
                r.label = label;
            }
            for (std::size_t c = 3; c < cells.size(); ++c) row.push_back(std::stod(cells[c]));
        } catch (const std::logic_error&) {
            throw SyntaxError(where + ": malformed number");
        }
        t.records.push_back(std::move(r));
        t.X.push_back(std::move(row));
    }
    if (width == 0) throw SchemaError("feature table has no header");
    return t;
}

// Larger = more likely incorrect.
inline double gbdt_incorrectness(const GbdtModel& m, std::span<const double> x) {
    return -sigmoid(predict_raw(m, x));
}

// ---------------------------------------------------------------------------

struct PipelineResult {
    std::vector<EvalReport> reports;
    std::vector<std::string> notes;
};

namespace detail {

struct TagData {
    FeatureTable table;
    std::vector<std::size_t> labeled;  // indices into table.records with a label
    std::vector<int> fold;             // per labeled index; -1 = never scored (holdout train side)
};

inline std::vector<int> assign_folds(const FeatureTable& t, const std::vector<std::size_t>& labeled,
                                     const EvalConfig& ec) {
    std::vector<int> fold;
    for (auto i : labeled) {
        const auto& id = t.records[i].task_id;
        if (ec.protocol == "holdout")
            fold.push_back(in_test_split(id) ? 0 : -1);
        else
            fold.push_back(task_fold(id, ec.folds));
    }
    return fold;
}

inline int fold_count(const EvalConfig& ec) { return ec.protocol == "holdout" ? 1 : ec.folds; }

// Rows used to train the model that scores fold f.
inline bool trains_for(int row_fold, int f, const EvalConfig& ec) {
    if (ec.protocol == "holdout") return row_fold == -1;
    return row_fold != f;
}

}  // namespace detail

// Runs every stage and writes artifacts into cfg.output_dir. Throws on any
// failure; see run_pipeline_reporting for the CLI contract.
inline PipelineResult run_pipeline(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.check();
    const fs::path out = cfg.output_dir;
    PipelineResult result;

    nlohmann::ordered_json record;
    record["tool"] = "codecircuit";
    record["version"] = kVersion;
    record["graph_schema_version"] = kGraphSchemaVersion;
    record["model_format_version"] = kModelFormatVersion;
    const auto cfg_json = run_config_to_json(cfg);
    record["config"] = cfg_json;
    // Output location and thread count never change results, so they stay out of the hash.
    auto hashed = cfg_json;
    hashed.erase("output_dir");
    hashed.erase("jobs");
    record["config_hash"] = hex64(fnv1a64(hashed.dump()));
    nlohmann::ordered_json inputs = nlohmann::ordered_json::object();

    // Stage 1: features per tag.
    std::vector<detail::TagData> tags;
    for (const auto& [tag, path] : cfg.manifests) {
        const Corpus corpus = load_manifest(path);
        detail::TagData d;
        d.table = build_feature_table(tag, corpus, cfg.pruner, cfg.features, cfg.jobs);
        if (cfg.shuffle_labels) {
            std::vector<std::size_t> idx;
            std::vector<int> labels;
            for (std::size_t i = 0; i < d.table.records.size(); ++i)
                if (d.table.records[i].label) {
                    idx.push_back(i);
                    labels.push_back(*d.table.records[i].label);
                }
            Rng rng(splitmix64(cfg.seed ^ fnv1a64(tag)));
            rng.shuffle(labels);
            for (std::size_t k = 0; k < idx.size(); ++k) d.table.records[idx[k]].label = labels[k];
        }
        for (std::size_t i = 0; i < d.table.records.size(); ++i)
            if (d.table.records[i].label) d.labeled.push_back(i);
        d.fold = detail::assign_folds(d.table, d.labeled, cfg.eval);

        std::string graph_hashes;
        for (auto h : d.table.graph_hashes) graph_hashes += hex64(h);
        nlohmann::ordered_json in;
        in["manifest"] = path.generic_string();
        in["manifest_hash"] = hex64(fnv1a64(read_file(path)));
        in["graphs"] = d.table.records.size();
        in["graphs_hash"] = hex64(fnv1a64(graph_hashes));
        inputs[tag] = in;
        write_file_atomic(out / ("features_" + tag + ".tsv"), feature_table_tsv(d.table));
        tags.push_back(std::move(d));
    }
    record["inputs"] = inputs;

    // Per tag, one score per labeled row and method (NaN = not scored).
    std::vector<std::map<std::string, std::vector<double>>> scores(tags.size());
    nlohmann::ordered_json importances = nlohmann::ordered_json::object();
    const int nfolds = detail::fold_count(cfg.eval);
    const bool want_gbdt = std::find(cfg.methods.begin(), cfg.methods.end(), "gbdt") != cfg.methods.end();

    // Stage 2: classifier, out-of-fold scores plus one model per tag (or pooled).
    if (want_gbdt) {
        std::vector<std::size_t> groups;  // which tags train together
        if (cfg.pooled) {
            for (const auto& d : tags)
                if (d.table.manifest != tags.front().table.manifest)
                    throw ManifestMismatchError("pooled training needs one feature manifest across tags");
        }
        const std::size_t ngroups = cfg.pooled ? 1 : tags.size();
        auto in_group = [&](std::size_t g, std::size_t t) { return cfg.pooled || g == t; };
        for (std::size_t t = 0; t < tags.size(); ++t)
            scores[t]["gbdt"].assign(tags[t].labeled.size(), std::numeric_limits<double>::quiet_NaN());

        for (std::size_t g = 0; g < ngroups; ++g) {
            std::vector<GbdtModel> fold_models(static_cast<std::size_t>(nfolds));
            const auto& manifest = tags[g].table.manifest;
            auto training_rows = [&](auto keep, std::vector<std::vector<double>>& X, std::vector<int>& y) {
                for (std::size_t t = 0; t < tags.size(); ++t) {
                    if (!in_group(g, t)) continue;
                    const auto& d = tags[t];
                    for (std::size_t k = 0; k < d.labeled.size(); ++k)
                        if (keep(d.fold[k])) {
                            X.push_back(d.table.X[d.labeled[k]]);
                            y.push_back(*d.table.records[d.labeled[k]].label);
                        }
                }
            };
            // Index nfolds is the artifact model: all labeled rows (crossfit)
            // or the training split (holdout).
            std::vector<GbdtModel> models(static_cast<std::size_t>(nfolds) + 1);
            parallel_for(models.size(), cfg.jobs, [&](std::size_t f) {
                std::vector<std::vector<double>> X;
                std::vector<int> y;
                if (static_cast<int>(f) == nfolds)
                    training_rows([&](int fd) { return cfg.eval.protocol == "crossfit" || fd == -1; }, X, y);
                else
                    training_rows([&](int fd) { return detail::trains_for(fd, static_cast<int>(f), cfg.eval); }, X, y);
                models[f] = train_gbdt(X, y, manifest, cfg.gbdt);
            });
            for (std::size_t t = 0; t < tags.size(); ++t) {
                if (!in_group(g, t)) continue;
                const auto& d = tags[t];
                auto& s = scores[t]["gbdt"];
                for (std::size_t k = 0; k < d.labeled.size(); ++k)
                    if (d.fold[k] >= 0)
                        s[k] = gbdt_incorrectness(models[static_cast<std::size_t>(d.fold[k])], d.table.X[d.labeled[k]]);
            }
            const std::string name = cfg.pooled ? "pooled" : tags[g].table.tag;
            write_file_atomic(out / ("model_" + name + ".json"), serialize_model(models.back()));
            nlohmann::ordered_json imp = nlohmann::ordered_json::array();
            for (const auto& [feature, gain] : feature_importances(models.back()))
                imp.push_back({{"feature", feature}, {"gain", fixed(gain, 6)}});
            importances[name] = imp;
        }
    }

    // Stage 3: black-box baselines, scored on the same rows as the classifier.
    for (std::size_t t = 0; t < tags.size(); ++t) {
        const auto& d = tags[t];
        bool traced = !d.labeled.empty();
        for (auto i : d.labeled) traced = traced && d.table.records[i].trace.has_value();
        for (const auto& m : cfg.methods) {
            if (m == "gbdt") continue;
            if (!traced) {
                result.notes.push_back(d.table.tag + ": '" + m + "' skipped, records lack token traces");
                continue;
            }
            auto& s = scores[t][m];
            s.assign(d.labeled.size(), std::numeric_limits<double>::quiet_NaN());
            const bool tempered = m == "temp" || m == "energy";
            for (int f = 0; f < nfolds; ++f) {
                double temperature = 1.0;
                if (tempered) {
                    std::vector<StepRecord> train;
                    for (std::size_t k = 0; k < d.labeled.size(); ++k)
                        if (detail::trains_for(d.fold[k], f, cfg.eval)) train.push_back(d.table.records[d.labeled[k]]);
                    temperature = fit_temperature(train, cfg.eval.aggregation);
                }
                const auto method = *parse_baseline(m, temperature);
                for (std::size_t k = 0; k < d.labeled.size(); ++k)
                    if (d.fold[k] == f)
                        s[k] = score_line(*d.table.records[d.labeled[k]].trace, method, cfg.eval.aggregation);
            }
        }
    }

    // Stage 4: reports in tag order, methods in config order.
    for (std::size_t t = 0; t < tags.size(); ++t) {
        const auto& d = tags[t];
        for (const auto& m : cfg.methods) {
            auto it = scores[t].find(m);
            if (it == scores[t].end()) continue;
            std::vector<StepRecord> rows;
            std::vector<double> row_scores;
            for (std::size_t k = 0; k < d.labeled.size(); ++k)
                if (d.fold[k] >= 0) {
                    rows.push_back(d.table.records[d.labeled[k]]);
                    row_scores.push_back(it->second[k]);
                }
            std::size_t cursor = 0;
            const auto eval = evaluate_corpus(
                rows, [&](const StepRecord&) { return row_scores[cursor++]; }, cfg.eval.stratify, m, d.table.tag);
            result.reports.push_back(eval.overall);
            for (const auto& b : eval.buckets) result.reports.push_back(b);
        }
    }

    nlohmann::ordered_json report;
    report["protocol"] = cfg.eval.protocol;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : result.reports) rows.push_back(report_json(r));
    report["reports"] = rows;

    // Stage 5: cross-tag transfer.
    if (want_gbdt && cfg.transfer && tags.size() >= 2) {
        bool same = true;
        for (const auto& d : tags) same = same && d.table.manifest == tags.front().table.manifest;
        if (!same) {
            result.notes.push_back("transfer skipped: tags have different feature manifests");
        } else {
            std::vector<LabeledSet> sets;
            for (const auto& d : tags) {
                LabeledSet s;
                s.tag = d.table.tag;
                s.manifest = d.table.manifest;
                for (auto i : d.labeled) {
                    s.X.push_back(d.table.X[i]);
                    s.y.push_back(*d.table.records[i].label);
                    s.task_ids.push_back(d.table.records[i].task_id);
                }
                sets.push_back(std::move(s));
            }
            const auto tm = transfer_matrix(
                sets,
                [&](const auto& X, const auto& y, const auto& manifest) { return train_gbdt(X, y, manifest, cfg.gbdt); },
                [](const GbdtModel& m, const std::vector<double>& x) { return gbdt_incorrectness(m, x); }, "gbdt");
            report["transfer"] = transfer_json(tm);
        }
    }

    // Stage 6: 2-D projection per tag.
    nlohmann::ordered_json pca = nlohmann::ordered_json::object();
    for (const auto& d : tags) {
        Projection p;
        try {
            p = pca_project(d.table.X);
        } catch (const DegenerateInputError& e) {
            result.notes.push_back(d.table.tag + ": projection skipped, " + e.what());
            continue;
        }
        std::string tsv = "task_id\tstep_index\tx\ty\tlabel\n";
        for (std::size_t i = 0; i < d.table.records.size(); ++i) {
            const auto& r = d.table.records[i];
            tsv += r.task_id + "\t" + std::to_string(r.step_index) + "\t" + fixed(p.coords[i][0], 9) + "\t" +
                   fixed(p.coords[i][1], 9) + "\t" + (r.label ? std::to_string(*r.label) : "NA") + "\n";
        }
        write_file_atomic(out / ("pca_" + d.table.tag + ".tsv"), tsv);
        pca[d.table.tag] = {{"explained", {fixed(p.explained[0], 9), fixed(p.explained[1], 9)}}};
    }
    report["pca"] = pca;
    report["importances"] = importances;
    report["notes"] = result.notes;

    const std::string report_text = report.dump(2) + "\n";
    const std::string tsv_text = reports_tsv(result.reports);
    write_file_atomic(out / "report.json", report_text);
    write_file_atomic(out / "report.tsv", tsv_text);

    nlohmann::ordered_json artifacts = nlohmann::ordered_json::object();
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(out))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        const auto name = f.filename().string();
        if (name == "run_record.json" || name == "error.json" || name.ends_with(".tmp")) continue;
        artifacts[name] = hex64(fnv1a64(read_file(f)));
    }
    record["artifacts"] = artifacts;
    write_file_atomic(out / "run_record.json", record.dump(2) + "\n");
    std::error_code ec;
    fs::remove(out / "error.json", ec);
    return result;
}

// CLI contract: 0 on success; on failure writes error.json into the output
// directory (when possible) and returns nonzero.
inline int run_pipeline_reporting(const RunConfig& cfg, std::string* message = nullptr) {
    auto fail = [&](const std::string& kind, const std::string& what) {
        nlohmann::ordered_json j;
        j["status"] = "error";
        j["kind"] = kind;
        j["message"] = what;
        try {
            write_file_atomic(cfg.output_dir / "error.json", j.dump(2) + "\n");
        } catch (const std::exception&) {
        }
        if (message) *message = kind + ": " + what;
        return 1;
    };
    try {
        run_pipeline(cfg);
        return 0;
    } catch (const Error& e) {
        return fail(e.kind(), e.what());
    } catch (const std::exception& e) {
        return fail("InternalError", e.what());
    }
}

}  // namespace codecircuit
