// codecircuit: command-line front end. Each stage of the verification
// pipeline is its own subcommand; `pipeline` runs them all from a config.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "codecircuit/baselines.hpp"
#include "codecircuit/eval.hpp"
#include "codecircuit/features.hpp"
#include "codecircuit/gbdt.hpp"
#include "codecircuit/graph_io.hpp"
#include "codecircuit/manifest.hpp"
#include "codecircuit/pipeline.hpp"
#include "codecircuit/projection.hpp"
#include "codecircuit/pruner.hpp"
#include "codecircuit/sandbox.hpp"
#include "codecircuit/synth.hpp"

namespace cc = codecircuit;
namespace fs = std::filesystem;

namespace {

// Writes to `path`, or stdout when it is empty or "-".
void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-")
        std::cout << text;
    else
        cc::write_file_atomic(path, text);
}

std::vector<int> parse_int_list(const std::string& s, char sep) {
    std::vector<int> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, sep)) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::logic_error&) {
            throw cc::InvalidConfigError("not an integer list: '" + s + "'");
        }
    }
    return out;
}

struct PrunerFlags {
    double node = 0.8;
    double edge = 0.98;
    int max_iterations = 0;

    void add(CLI::App* app) {
        app->add_option("--node-threshold", node, "Cumulative node influence to keep")->capture_default_str();
        app->add_option("--edge-threshold", edge, "Cumulative edge score to keep")->capture_default_str();
        app->add_option("--max-iterations", max_iterations, "Truncate the influence series (0 = exact)");
    }
    cc::PrunerConfig config() const {
        cc::PrunerConfig c;
        c.node_threshold = node;
        c.edge_threshold = edge;
        if (max_iterations > 0) c.max_iterations = max_iterations;
        c.check();
        return c;
    }
};

struct GbdtFlags {
    cc::GbdtConfig cfg;

    void add(CLI::App* app) {
        app->add_option("--rounds", cfg.num_rounds)->capture_default_str();
        app->add_option("--learning-rate", cfg.learning_rate)->capture_default_str();
        app->add_option("--max-depth", cfg.max_depth)->capture_default_str();
        app->add_option("--min-samples-leaf", cfg.min_samples_leaf)->capture_default_str();
        app->add_option("--subsample", cfg.subsample)->capture_default_str();
        app->add_option("--seed", cfg.seed)->capture_default_str();
        app->add_option("--l2", cfg.l2_regularization)->capture_default_str();
    }
};

cc::TokenAggregation parse_aggregation(const std::string& s) {
    if (s == "mean") return cc::TokenAggregation::Mean;
    if (s == "min") return cc::TokenAggregation::Min;
    if (s == "last") return cc::TokenAggregation::Last;
    throw cc::InvalidConfigError("aggregation must be mean, min or last");
}

std::pair<std::vector<std::vector<double>>, std::vector<int>> labeled_rows(const cc::FeatureTable& t) {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    for (std::size_t i = 0; i < t.records.size(); ++i)
        if (t.records[i].label) {
            X.push_back(t.X[i]);
            y.push_back(*t.records[i].label);
        }
    return {X, y};
}

struct ToyFlags {
    cc::sandbox::ToyConfig cfg;
    std::uint64_t seed = 1;
    std::string nonlinearity = "relu";

    void add(CLI::App* app) {
        app->add_option("--seed", seed, "Model seed")->capture_default_str();
        app->add_option("--layers", cfg.num_layers)->capture_default_str();
        app->add_option("--dim", cfg.dim)->capture_default_str();
        app->add_option("--features", cfg.features)->capture_default_str();
        app->add_option("--vocab", cfg.vocab)->capture_default_str();
        app->add_option("--max-positions", cfg.max_positions)->capture_default_str();
        app->add_option("--nonlinearity", nonlinearity)->check(CLI::IsMember({"relu", "topk"}))->capture_default_str();
        app->add_option("--topk", cfg.topk)->capture_default_str();
        app->add_option("--error-scale", cfg.error_scale)->capture_default_str();
    }
    cc::sandbox::ToyReplacementModel build() {
        cfg.nonlinearity = nonlinearity == "topk" ? cc::sandbox::Nonlinearity::TopK : cc::sandbox::Nonlinearity::ReLU;
        return cc::sandbox::build_toy_model(seed, cfg);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"codecircuit: line-level code correctness from attribution graphs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", cc::kVersion);
    unsigned jobs = 1;
    app.add_option("-j,--jobs", jobs, "Worker threads for per-graph stages")->capture_default_str();

    // prune
    auto* prune = app.add_subcommand("prune", "Prune one attribution graph");
    std::string prune_in, prune_out;
    PrunerFlags prune_flags;
    prune->add_option("graph", prune_in, "Input graph")->required();
    prune->add_option("-o,--out", prune_out, "Output graph (default stdout)");
    prune_flags.add(prune);

    // features
    auto* features = app.add_subcommand("features", "Feature table for a manifest");
    std::string feat_manifest, feat_out;
    PrunerFlags feat_flags;
    features->add_option("manifest", feat_manifest, "manifest.jsonl")->required();
    features->add_option("-o,--out", feat_out, "Output TSV (default stdout)");
    feat_flags.add(features);

    // train
    auto* train = app.add_subcommand("train", "Train the classifier on a feature table");
    std::string train_in, train_out;
    GbdtFlags train_flags;
    train->add_option("features", train_in, "Feature TSV")->required();
    train->add_option("-o,--out", train_out, "Model file (default stdout)");
    train_flags.add(train);

    // score
    auto* score = app.add_subcommand("score", "Score lines with the classifier or a baseline");
    std::string score_method = "gbdt", score_manifest, score_features, score_model, score_out, score_agg = "mean";
    double score_temperature = 1.0;
    score->add_option("--method", score_method)
        ->check(CLI::IsMember({"gbdt", "maxprob", "ppl", "entropy", "temp", "energy"}))
        ->capture_default_str();
    score->add_option("--manifest", score_manifest, "manifest.jsonl (baselines)");
    score->add_option("--features", score_features, "Feature TSV (gbdt)");
    score->add_option("--model", score_model, "Model file (gbdt)");
    score->add_option("--temperature", score_temperature, "Temperature for temp/energy")->capture_default_str();
    score->add_option("--aggregation", score_agg)->check(CLI::IsMember({"mean", "min", "last"}))->capture_default_str();
    score->add_option("-o,--out", score_out, "Output TSV (default stdout)");

    // eval
    auto* eval = app.add_subcommand("eval", "Metrics for a score table against manifest labels");
    std::string eval_scores, eval_manifest, eval_out, eval_method = "scores", eval_tag = "corpus";
    bool eval_stratify = false, eval_json = false;
    eval->add_option("scores", eval_scores, "TSV of task_id, step_index, score")->required();
    eval->add_option("--manifest", eval_manifest, "manifest.jsonl with labels")->required();
    eval->add_option("--method", eval_method)->capture_default_str();
    eval->add_option("--tag", eval_tag)->capture_default_str();
    eval->add_flag("--stratify", eval_stratify, "Add line-count buckets");
    eval->add_flag("--json", eval_json, "Emit JSON instead of TSV");
    eval->add_option("-o,--out", eval_out);

    // transfer
    auto* transfer = app.add_subcommand("transfer", "Cross-corpus transfer matrix");
    std::vector<std::string> transfer_sets;
    std::string transfer_out;
    GbdtFlags transfer_flags;
    transfer->add_option("sets", transfer_sets, "tag=features.tsv, two or more")->required();
    transfer->add_option("-o,--out", transfer_out);
    transfer_flags.add(transfer);

    // project
    auto* project = app.add_subcommand("project", "2-D PCA coordinates of a feature table");
    std::string project_in, project_out;
    project->add_option("features", project_in)->required();
    project->add_option("-o,--out", project_out);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic corpus");
    std::string synth_config, synth_out;
    synth->add_option("--config", synth_config, "JSON config (defaults otherwise)");
    synth->add_option("--out", synth_out, "Output directory")->required();

    // sandbox
    auto* sandbox = app.add_subcommand("sandbox", "Toy replacement model");
    sandbox->require_subcommand(1);
    auto* trace = sandbox->add_subcommand("trace", "Attribution graph of one forward pass");
    ToyFlags trace_toy;
    trace_toy.add(trace);
    std::string trace_tokens = "1,2,3", trace_out;
    int trace_topk = 10;
    trace->add_option("--tokens", trace_tokens, "Comma-separated input token ids")->capture_default_str();
    trace->add_option("--topk-logits", trace_topk)->capture_default_str();
    trace->add_option("--out", trace_out, "Graph file (default stdout)");

    auto* intervene = sandbox->add_subcommand("intervene", "Clamp features and compare logit changes");
    ToyFlags iv_toy;
    iv_toy.add(intervene);
    std::string iv_tokens = "1,2,3", iv_mode = "suppress", iv_out;
    std::vector<std::string> iv_targets;
    double iv_value = 0.0;
    int iv_topk = 10;
    intervene->add_option("--tokens", iv_tokens)->capture_default_str();
    intervene->add_option("--target", iv_targets, "layer,position,feature (repeatable)")->required();
    intervene->add_option("--mode", iv_mode)->check(CLI::IsMember({"suppress", "amplify", "set"}))->capture_default_str();
    intervene->add_option("--value", iv_value, "Factor (amplify) or activation (set)");
    intervene->add_option("--topk-logits", iv_topk)->capture_default_str();
    intervene->add_option("--out", iv_out);

    // pipeline
    auto* pipeline = app.add_subcommand("pipeline", "Run every stage from a config file");
    std::string pipe_config, pipe_out;
    pipeline->add_option("config", pipe_config, "Run config JSON")->required();
    pipeline->add_option("--out", pipe_out, "Override output directory");

    CLI11_PARSE(app, argc, argv);
    const bool jobs_given = app.count("--jobs") > 0;

    try {
        if (*prune) {
            const auto g = cc::load_graph(prune_in);
            emit(prune_out, cc::serialize_graph(cc::prune_graph(g, prune_flags.config()).graph));
        } else if (*features) {
            const auto corpus = cc::load_manifest(feat_manifest);
            const auto table = cc::build_feature_table("cli", corpus, feat_flags.config(), {}, jobs);
            emit(feat_out, cc::feature_table_tsv(table));
        } else if (*train) {
            const auto table = cc::parse_feature_table_tsv(cc::read_file(train_in));
            const auto [X, y] = labeled_rows(table);
            emit(train_out, cc::serialize_model(cc::train_gbdt(X, y, table.manifest, train_flags.cfg)));
        } else if (*score) {
            std::string out = "task_id\tstep_index\tscore\n";
            if (score_method == "gbdt") {
                if (score_features.empty() || score_model.empty())
                    throw cc::InvalidConfigError("gbdt scoring needs --features and --model");
                const auto model = cc::parse_model(cc::read_file(score_model));
                const auto table = cc::parse_feature_table_tsv(cc::read_file(score_features));
                if (table.manifest != model.manifest)
                    throw cc::ManifestMismatchError("feature table columns differ from the model manifest");
                for (std::size_t i = 0; i < table.records.size(); ++i)
                    out += table.records[i].task_id + "\t" + std::to_string(table.records[i].step_index) + "\t" +
                           cc::fixed(cc::gbdt_incorrectness(model, table.X[i]), 9) + "\n";
            } else {
                if (score_manifest.empty()) throw cc::InvalidConfigError("baseline scoring needs --manifest");
                auto corpus = cc::load_manifest(score_manifest);
                cc::sort_records(corpus.records);
                const auto method = *cc::parse_baseline(score_method, score_temperature);
                const auto how = parse_aggregation(score_agg);
                for (const auto& r : corpus.records) {
                    if (!r.trace)
                        throw cc::EmptyTraceError(r.task_id + " step " + std::to_string(r.step_index) +
                                                  " has no token trace");
                    out += r.task_id + "\t" + std::to_string(r.step_index) + "\t" +
                           cc::fixed(cc::score_line(*r.trace, method, how), 9) + "\n";
                }
            }
            emit(score_out, out);
        } else if (*eval) {
            const auto corpus = cc::load_manifest(eval_manifest);
            std::map<std::pair<std::string, std::int64_t>, double> by_key;
            std::stringstream in(cc::read_file(eval_scores));
            std::string line;
            std::getline(in, line);  // header
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                std::stringstream cells(line);
                std::string task, step, value;
                std::getline(cells, task, '\t');
                std::getline(cells, step, '\t');
                std::getline(cells, value, '\t');
                try {
                    by_key[{task, std::stoll(step)}] = std::stod(value);
                } catch (const std::logic_error&) {
                    throw cc::SyntaxError("malformed score row: " + line);
                }
            }
            const auto result = cc::evaluate_corpus(
                corpus.records,
                [&](const cc::StepRecord& r) {
                    auto it = by_key.find({r.task_id, r.step_index});
                    if (it == by_key.end())
                        throw cc::SchemaError("no score for " + r.task_id + " step " + std::to_string(r.step_index));
                    return it->second;
                },
                eval_stratify, eval_method, eval_tag);
            std::vector<cc::EvalReport> reports{result.overall};
            reports.insert(reports.end(), result.buckets.begin(), result.buckets.end());
            if (eval_json) {
                nlohmann::ordered_json j = nlohmann::ordered_json::array();
                for (const auto& r : reports) j.push_back(cc::report_json(r));
                emit(eval_out, j.dump(2) + "\n");
            } else {
                emit(eval_out, cc::reports_tsv(reports));
            }
        } else if (*transfer) {
            std::vector<cc::LabeledSet> sets;
            for (const auto& spec : transfer_sets) {
                const auto eq = spec.find('=');
                if (eq == std::string::npos) throw cc::InvalidConfigError("expected tag=features.tsv, got " + spec);
                const auto table = cc::parse_feature_table_tsv(cc::read_file(spec.substr(eq + 1)), spec.substr(0, eq));
                cc::LabeledSet s;
                s.tag = table.tag;
                s.manifest = table.manifest;
                for (std::size_t i = 0; i < table.records.size(); ++i)
                    if (table.records[i].label) {
                        s.X.push_back(table.X[i]);
                        s.y.push_back(*table.records[i].label);
                        s.task_ids.push_back(table.records[i].task_id);
                    }
                sets.push_back(std::move(s));
            }
            const auto tm = cc::transfer_matrix(
                sets,
                [&](const auto& X, const auto& y, const auto& m) { return cc::train_gbdt(X, y, m, transfer_flags.cfg); },
                [](const cc::GbdtModel& m, const std::vector<double>& x) { return cc::gbdt_incorrectness(m, x); },
                "gbdt");
            emit(transfer_out, cc::transfer_json(tm).dump(2) + "\n");
        } else if (*project) {
            const auto table = cc::parse_feature_table_tsv(cc::read_file(project_in));
            const auto p = cc::pca_project(table.X);
            std::string out = "# explained\t" + cc::fixed(p.explained[0], 9) + "\t" + cc::fixed(p.explained[1], 9) +
                              "\ntask_id\tstep_index\tx\ty\tlabel\n";
            for (std::size_t i = 0; i < table.records.size(); ++i) {
                const auto& r = table.records[i];
                out += r.task_id + "\t" + std::to_string(r.step_index) + "\t" + cc::fixed(p.coords[i][0], 9) + "\t" +
                       cc::fixed(p.coords[i][1], 9) + "\t" + (r.label ? std::to_string(*r.label) : "NA") + "\n";
            }
            emit(project_out, out);
        } else if (*synth) {
            cc::synth::SynthConfig cfg;
            if (!synth_config.empty()) {
                nlohmann::json j;
                try {
                    j = nlohmann::json::parse(cc::read_file(synth_config));
                } catch (const nlohmann::json::parse_error& e) {
                    throw cc::SyntaxError(synth_config + ": " + e.what());
                }
                cfg = cc::synth::config_from_json(j);
            }
            if (jobs_given) cfg.jobs = jobs;
            const auto corpus = cc::synth::generate_corpus(cfg);
            cc::synth::write_corpus(corpus, synth_out, cfg.jobs);
            std::cerr << "wrote " << corpus.records.size() << " steps to " << synth_out << "\n";
        } else if (*trace) {
            const auto model = trace_toy.build();
            cc::sandbox::TraceOptions opt;
            opt.top_k_logits = trace_topk;
            emit(trace_out, cc::serialize_graph(cc::sandbox::trace_attributions(model, parse_int_list(trace_tokens, ','), opt)));
        } else if (*intervene) {
            const auto model = iv_toy.build();
            std::vector<cc::sandbox::FeatureTarget> targets;
            for (const auto& t : iv_targets) {
                const auto v = parse_int_list(t, ',');
                if (v.size() != 3) throw cc::InvalidConfigError("--target wants layer,position,feature; got " + t);
                targets.push_back({v[0], v[1], v[2]});
            }
            cc::sandbox::Intervention iv = iv_mode == "suppress" ? cc::sandbox::Intervention::suppress(targets)
                                           : iv_mode == "amplify" ? cc::sandbox::Intervention::amplify(targets, iv_value)
                                                                  : cc::sandbox::Intervention::set_to(targets, iv_value);
            const auto rep = cc::sandbox::apply_intervention(model, parse_int_list(iv_tokens, ','), iv, iv_topk);
            std::string out = "token_id\tactual\tfrozen\tpredicted\n";
            for (const auto& d : rep.traced)
                out += std::to_string(d.token_id) + "\t" + cc::fixed(d.actual, 9) + "\t" + cc::fixed(d.frozen, 9) +
                       "\t" + cc::fixed(d.predicted, 9) + "\n";
            out += "# gate_flips\t" + std::to_string(rep.gate_flips) + "\n";
            emit(iv_out, out);
        } else if (*pipeline) {
            auto cfg = cc::load_run_config(pipe_config);
            cc::apply_env_overrides(cfg);
            if (jobs_given) cfg.jobs = jobs;
            if (!pipe_out.empty()) cfg.output_dir = pipe_out;
            std::string message;
            const int status = cc::run_pipeline_reporting(cfg, &message);
            if (status != 0) std::cerr << "error: " << message << "\n";
            else std::cerr << "report written to " << (cfg.output_dir / "report.tsv").string() << "\n";
            return status;
        }
    } catch (const cc::ValidationError& e) {
        std::cerr << "error[ValidationError]: " << e.what() << "\n";
        for (const auto& v : e.violations()) std::cerr << "  " << v.invariant << ": " << v.message << "\n";
        return 1;
    } catch (const cc::Error& e) {
        std::cerr << "error[" << e.kind() << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
