#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "codecircuit/manifest.hpp"
#include "codecircuit/metrics.hpp"
#include "codecircuit/util.hpp"

namespace codecircuit {

struct EvalReport {
    std::string method;
    std::string corpus_tag;
    std::string bucket = "all";
    bool defined = false;  // false when a class is missing
    double auroc = std::numeric_limits<double>::quiet_NaN();
    double aupr = std::numeric_limits<double>::quiet_NaN();
    double fpr_at_95 = std::numeric_limits<double>::quiet_NaN();
    std::size_t n_pos = 0;  // incorrect lines
    std::size_t n_neg = 0;  // correct lines
};

inline EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels, std::string method,
                                  std::string tag, std::string bucket = "all") {
    EvalReport r;
    r.method = std::move(method);
    r.corpus_tag = std::move(tag);
    r.bucket = std::move(bucket);
    if (scores.size() != labels.size()) throw ShapeMismatchError("scores and labels differ in length");
    for (int l : labels) (l == kPositiveLabel ? r.n_pos : r.n_neg) += 1;
    if (r.n_pos == 0 || r.n_neg == 0) return r;
    r.defined = true;
    r.auroc = auroc(scores, labels);
    r.aupr = aupr(scores, labels);
    r.fpr_at_95 = fpr_at_95tpr(scores, labels);
    return r;
}

// Line-count strata keyed by a program's total line count.
struct LineBucket {
    const char* name;
    std::int64_t lo;  // inclusive
    std::int64_t hi;  // inclusive
};

inline const std::vector<LineBucket>& line_buckets() {
    static const std::vector<LineBucket> buckets = {
        {"[1,10]", 1, 10},
        {"(10,20]", 11, 20},
        {"(20,30]", 21, 30},
        {"(30,inf)", 31, std::numeric_limits<std::int64_t>::max()},
    };
    return buckets;
}

struct CorpusEvaluation {
    EvalReport overall;
    std::vector<EvalReport> buckets;  // empty unless stratified
};

using RecordScorer = std::function<double(const StepRecord&)>;

// Scores every labeled record; unlabeled records are skipped. Buckets with a
// missing class come back with defined == false.
inline CorpusEvaluation evaluate_corpus(const std::vector<StepRecord>& records, const RecordScorer& scorer,
                                        bool stratify_by_lines, const std::string& method, const std::string& tag) {
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<std::int64_t> lines;
    for (const auto& r : records) {
        if (!r.label) continue;
        scores.push_back(scorer(r));
        labels.push_back(*r.label);
        lines.push_back(r.total_lines);
    }
    CorpusEvaluation out;
    out.overall = evaluate_scores(scores, labels, method, tag);
    if (!stratify_by_lines) return out;
    for (const auto& b : line_buckets()) {
        std::vector<double> s;
        std::vector<int> l;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (lines[i] >= b.lo && lines[i] <= b.hi) {
                s.push_back(scores[i]);
                l.push_back(labels[i]);
            }
        out.buckets.push_back(evaluate_scores(s, l, method, tag, b.name));
    }
    return out;
}

// Task-grouped deterministic split: a task's hash bucket in [0, 100) decides
// its side, so all lines of one program land together. Buckets >= 80 form
// the test split; k-fold assignment slices the same buckets evenly, making
// the last of 5 folds identical to the test split.
inline int task_bucket(const std::string& task_id) { return static_cast<int>(fnv1a64(task_id) % 100); }
inline bool in_test_split(const std::string& task_id) { return task_bucket(task_id) >= 80; }
inline int task_fold(const std::string& task_id, int folds) { return task_bucket(task_id) * folds / 100; }

// One tagged, labeled feature table (a language).
struct LabeledSet {
    std::string tag;
    std::vector<std::string> manifest;
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    std::vector<std::string> task_ids;
};

struct TransferMatrix {
    std::vector<std::string> tags;
    std::map<std::pair<std::string, std::string>, EvalReport> cells;  // (train, test)

    const EvalReport& at(const std::string& train, const std::string& test) const { return cells.at({train, test}); }
};

// Trains on each set's train split and scores every set's test split.
// train_fn(X, y, manifest) -> model; score_fn(model, row) -> incorrectness.
template <class TrainFn, class ScoreFn>
TransferMatrix transfer_matrix(const std::vector<LabeledSet>& sets, TrainFn&& train_fn, ScoreFn&& score_fn,
                               const std::string& method) {
    if (sets.size() < 2) throw ShapeMismatchError("transfer needs at least two tagged corpora");
    for (const auto& s : sets)
        if (s.manifest != sets.front().manifest)
            throw ManifestMismatchError("corpus '" + s.tag + "' has a different feature manifest");
    TransferMatrix tm;
    for (const auto& s : sets) tm.tags.push_back(s.tag);
    for (const auto& train : sets) {
        std::vector<std::vector<double>> X;
        std::vector<int> y;
        for (std::size_t i = 0; i < train.X.size(); ++i)
            if (!in_test_split(train.task_ids[i])) {
                X.push_back(train.X[i]);
                y.push_back(train.y[i]);
            }
        const auto model = train_fn(X, y, train.manifest);
        for (const auto& test : sets) {
            std::vector<double> scores;
            std::vector<int> labels;
            for (std::size_t i = 0; i < test.X.size(); ++i)
                if (in_test_split(test.task_ids[i])) {
                    scores.push_back(score_fn(model, test.X[i]));
                    labels.push_back(test.y[i]);
                }
            tm.cells.emplace(std::pair(train.tag, test.tag), evaluate_scores(scores, labels, method, train.tag + "->" + test.tag));
        }
    }
    return tm;
}

// Percent with two decimals, or "undefined".
inline std::string percent(double v, bool defined) { return defined ? fixed(100.0 * v, 2) : "undefined"; }

inline std::string reports_tsv(const std::vector<EvalReport>& reports) {
    std::string out = "method\tcorpus\tbucket\tn_pos\tn_neg\tauroc\taupr\tfpr95\n";
    for (const auto& r : reports) {
        out += r.method + "\t" + r.corpus_tag + "\t" + r.bucket + "\t" + std::to_string(r.n_pos) + "\t" +
               std::to_string(r.n_neg) + "\t" + percent(r.auroc, r.defined) + "\t" + percent(r.aupr, r.defined) +
               "\t" + percent(r.fpr_at_95, r.defined) + "\n";
    }
    return out;
}

inline nlohmann::ordered_json report_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["method"] = r.method;
    j["corpus"] = r.corpus_tag;
    j["bucket"] = r.bucket;
    j["n_pos"] = r.n_pos;
    j["n_neg"] = r.n_neg;
    j["auroc"] = percent(r.auroc, r.defined);
    j["aupr"] = percent(r.aupr, r.defined);
    j["fpr95"] = percent(r.fpr_at_95, r.defined);
    return j;
}

inline nlohmann::ordered_json transfer_json(const TransferMatrix& tm) {
    nlohmann::ordered_json j;
    j["tags"] = tm.tags;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& train : tm.tags)
        for (const auto& test : tm.tags) {
            auto cell = report_json(tm.at(train, test));
            cell["train"] = train;
            cell["test"] = test;
            rows.push_back(std::move(cell));
        }
    j["cells"] = std::move(rows);
    return j;
}

}  // namespace codecircuit
