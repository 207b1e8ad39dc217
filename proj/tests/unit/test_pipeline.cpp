#include <cstdlib>

#include <gtest/gtest.h>

#include "codecircuit/pipeline.hpp"
#include "codecircuit/synth.hpp"
#include "support/scratch.hpp"

using namespace codecircuit;
namespace fs = std::filesystem;

namespace {

fs::path make_corpus(const std::string& name, std::uint64_t seed, int steps, double separation = 0.9) {
    const auto dir = testing_support::scratch_dir(name);
    synth::SynthConfig sc;
    sc.num_steps = steps;
    sc.seed = seed;
    sc.separation = separation;
    synth::write_corpus(synth::generate_corpus(sc), dir);
    return dir / "manifest.jsonl";
}

RunConfig quick_config(const fs::path& manifest, const fs::path& out) {
    RunConfig c;
    c.manifests["synth"] = manifest;
    c.output_dir = out;
    c.gbdt.num_rounds = 60;
    return c;
}

double report_auroc(const PipelineResult& r, const std::string& method) {
    for (const auto& rep : r.reports)
        if (rep.method == method && rep.bucket == "all") return rep.auroc;
    ADD_FAILURE() << "no report for " << method;
    return 0.0;
}

}  // namespace

TEST(RunConfig, DefaultsRoundTrip) {
    RunConfig c;
    c.manifests["py"] = "/data/py/manifest.jsonl";
    const auto j = run_config_to_json(c);
    const auto back = run_config_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(run_config_to_json(back).dump(), j.dump());
    EXPECT_EQ(j["eval"]["protocol"], "crossfit");
    EXPECT_EQ(j["gbdt"]["num_rounds"], 300);
    EXPECT_EQ(j["pruner"]["node_threshold"], 0.8);
}

TEST(RunConfig, RejectsUnknownKeysAndResolvesPaths) {
    EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"manifest": {}})")), SchemaError);
    EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"gbdt": {"num_round": 3}})")), SchemaError);
    EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"seed": "x"})")), SchemaError);
    EXPECT_THROW(run_config_from_json(nlohmann::json::parse("[1]")), SchemaError);
    const auto c = run_config_from_json(nlohmann::json::parse(R"({"manifests": {"a": "m.jsonl", "b": "/abs/m.jsonl"},
                                                                   "output_dir": "out"})"),
                                        "/cfg");
    EXPECT_EQ(c.manifests.at("a"), fs::path("/cfg/m.jsonl"));
    EXPECT_EQ(c.manifests.at("b"), fs::path("/abs/m.jsonl"));
    EXPECT_EQ(c.output_dir, fs::path("/cfg/out"));
}

TEST(RunConfig, EnvironmentOverrides) {
    RunConfig c;
    ::setenv("CODECIRCUIT_OUTPUT_DIR", "/tmp/elsewhere", 1);
    ::setenv("CODECIRCUIT_JOBS", "3", 1);
    apply_env_overrides(c);
    EXPECT_EQ(c.output_dir, fs::path("/tmp/elsewhere"));
    EXPECT_EQ(c.jobs, 3u);
    ::setenv("CODECIRCUIT_JOBS", "zero", 1);
    EXPECT_THROW(apply_env_overrides(c), InvalidConfigError);
    ::unsetenv("CODECIRCUIT_OUTPUT_DIR");
    ::unsetenv("CODECIRCUIT_JOBS");
}

TEST(RunConfig, Checks) {
    RunConfig c;
    EXPECT_THROW(c.check(), InvalidConfigError);
    c.manifests["a"] = "x";
    c.eval.protocol = "bootstrap";
    EXPECT_THROW(c.check(), InvalidConfigError);
    c.eval.protocol = "crossfit";
    c.methods = {"gbdt", "coe"};
    EXPECT_THROW(c.check(), InvalidConfigError);
}

TEST(FeatureTable, TsvRoundTrip) {
    const auto manifest = make_corpus("ft_roundtrip", 5, 40);
    const auto corpus = load_manifest(manifest);
    const auto t = build_feature_table("synth", corpus, {}, {}, 2);
    ASSERT_EQ(t.records.size(), 40u);
    const auto tsv = feature_table_tsv(t);
    const auto back = parse_feature_table_tsv(tsv, "synth");
    EXPECT_EQ(back.manifest, t.manifest);
    ASSERT_EQ(back.X.size(), t.X.size());
    for (std::size_t i = 0; i < t.X.size(); ++i)
        for (std::size_t j = 0; j < t.X[i].size(); ++j) EXPECT_NEAR(back.X[i][j], t.X[i][j], 1e-9);
    EXPECT_EQ(feature_table_tsv(back), tsv);
    EXPECT_EQ(build_feature_table("synth", corpus, {}, {}, 1).X, t.X);
}

TEST(Pipeline, SeparatedCorpusIsDetectedAndRerunsAreIdentical) {
    const auto manifest = make_corpus("pipe_sep", 21, 600);
    const auto out_a = testing_support::scratch_dir("pipe_out_a");
    const auto out_b = testing_support::scratch_dir("pipe_out_b");
    auto cfg = quick_config(manifest, out_a);
    const auto a = run_pipeline(cfg);
    EXPECT_GE(report_auroc(a, "gbdt"), 0.9);
    cfg.output_dir = out_b;
    cfg.jobs = 3;
    run_pipeline(cfg);
    for (const char* f : {"report.json", "report.tsv", "features_synth.tsv", "model_synth.json", "pca_synth.tsv"})
        EXPECT_EQ(read_file(out_a / f), read_file(out_b / f)) << f;
    const auto ra = nlohmann::json::parse(read_file(out_a / "run_record.json"));
    const auto rb = nlohmann::json::parse(read_file(out_b / "run_record.json"));
    EXPECT_EQ(ra["config_hash"], rb["config_hash"]);
    EXPECT_EQ(ra["inputs"], rb["inputs"]);
    EXPECT_EQ(ra["artifacts"], rb["artifacts"]);
    EXPECT_FALSE(fs::exists(out_a / "error.json"));

    const auto report = nlohmann::json::parse(read_file(out_a / "report.json"));
    EXPECT_EQ(report["protocol"], "crossfit");
    std::set<std::string> methods;
    for (const auto& r : report["reports"]) methods.insert(r["method"].get<std::string>());
    EXPECT_EQ(methods, (std::set<std::string>{"gbdt", "maxprob", "ppl", "entropy", "temp", "energy"}));
}

TEST(Pipeline, ShuffledLabelsCarryNoSignal) {
    const auto manifest = make_corpus("pipe_shuffle", 22, 800);
    auto cfg = quick_config(manifest, testing_support::scratch_dir("pipe_shuffle_out"));
    cfg.shuffle_labels = true;
    cfg.methods = {"gbdt"};
    const double auc = report_auroc(run_pipeline(cfg), "gbdt");
    EXPECT_GT(auc, 0.40);
    EXPECT_LT(auc, 0.60);
}

TEST(Pipeline, HoldoutProtocolAndStratifiedBuckets) {
    const auto manifest = make_corpus("pipe_holdout", 23, 400);
    auto cfg = quick_config(manifest, testing_support::scratch_dir("pipe_holdout_out"));
    cfg.eval.protocol = "holdout";
    cfg.methods = {"gbdt", "ppl"};
    const auto r = run_pipeline(cfg);
    int buckets = 0;
    for (const auto& rep : r.reports) buckets += rep.method == "gbdt" && rep.bucket != "all";
    EXPECT_EQ(buckets, 4);
}

TEST(Pipeline, TwoTagsGiveATransferMatrix) {
    const auto m1 = make_corpus("pipe_t1", 24, 300);
    const auto m2 = make_corpus("pipe_t2", 25, 300);
    RunConfig cfg = quick_config(m1, testing_support::scratch_dir("pipe_transfer_out"));
    cfg.manifests["other"] = m2;
    cfg.methods = {"gbdt"};
    run_pipeline(cfg);
    const auto report = nlohmann::json::parse(read_file(cfg.output_dir / "report.json"));
    ASSERT_TRUE(report["transfer"].is_object());
    EXPECT_EQ(report["transfer"]["cells"].size(), 4u);
    // Same generator on both sides: every cell sits close to its test tag's diagonal.
    std::map<std::pair<std::string, std::string>, double> auc;
    for (const auto& cell : report["transfer"]["cells"])
        auc[{cell["train"], cell["test"]}] = std::stod(cell["auroc"].get<std::string>());
    for (const auto& [key, v] : auc) EXPECT_LE(std::abs(v - auc.at({key.second, key.second})), 5.0);
    EXPECT_TRUE(fs::exists(cfg.output_dir / "model_other.json"));
}

TEST(Pipeline, MissingGraphFailsWithErrorFile) {
    const auto manifest = make_corpus("pipe_missing", 26, 30);
    const auto corpus = load_manifest(manifest);
    const auto victim = corpus.resolve(corpus.records[7]);
    fs::remove(victim);
    auto cfg = quick_config(manifest, testing_support::scratch_dir("pipe_missing_out"));
    std::string msg;
    EXPECT_NE(run_pipeline_reporting(cfg, &msg), 0);
    const auto err = nlohmann::json::parse(read_file(cfg.output_dir / "error.json"));
    EXPECT_EQ(err["status"], "error");
    EXPECT_EQ(err["kind"], "IOError");
    EXPECT_NE(err["message"].get<std::string>().find(victim.filename().string()), std::string::npos);
    EXPECT_FALSE(fs::exists(cfg.output_dir / "report.json"));
}

TEST(Pipeline, CorruptGraphNamesTheFile) {
    const auto manifest = make_corpus("pipe_corrupt", 27, 30);
    const auto corpus = load_manifest(manifest);
    const auto victim = corpus.resolve(corpus.records[3]);
    write_file_atomic(victim, "{\"edges\": [");
    auto cfg = quick_config(manifest, testing_support::scratch_dir("pipe_corrupt_out"));
    std::string msg;
    EXPECT_NE(run_pipeline_reporting(cfg, &msg), 0);
    EXPECT_NE(msg.find(victim.filename().string()), std::string::npos) << msg;
}
