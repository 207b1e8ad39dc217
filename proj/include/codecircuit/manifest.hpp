#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "codecircuit/graph_io.hpp"
#include "codecircuit/util.hpp"

namespace codecircuit {

// Temperatures at which the exporter records per-token statistics.
inline constexpr std::array<double, 5> kTemperatureGrid = {0.5, 1.0, 1.5, 2.0, 2.5};

// Per-token confidence statistics for one code line. Full-vocabulary logits
// are never stored; the exporter reduces them to these grid values.
struct TokenTrace {
    std::vector<double> chosen_logprob;  // <= 0
    std::vector<double> max_prob;        // (0, 1]
    std::vector<double> entropy;         // >= 0
    std::map<double, std::vector<double>> energy_at_T;   // -T * logsumexp(logits / T)
    std::map<double, std::vector<double>> maxprob_at_T;  // max softmax(logits / T)
    std::optional<std::int64_t> vocab_size;

    std::size_t size() const { return chosen_logprob.size(); }

    friend bool operator==(const TokenTrace&, const TokenTrace&) = default;
};

// Grid lookup tolerant to decimal round-off in the key.
inline const std::vector<double>* find_at_temperature(const std::map<double, std::vector<double>>& m, double t) {
    for (const auto& [k, v] : m)
        if (std::abs(k - t) <= 1e-9) return &v;
    return nullptr;
}

inline std::vector<std::string> validate_trace(const TokenTrace& t) {
    std::vector<std::string> out;
    const std::size_t n = t.chosen_logprob.size();
    if (n == 0) out.push_back("trace has no tokens");
    if (t.max_prob.size() != n || t.entropy.size() != n) out.push_back("per-token lists differ in length");
    for (const auto* m : {&t.energy_at_T, &t.maxprob_at_T})
        for (const auto& [temp, v] : *m) {
            if (!(temp > 0.0)) out.push_back("temperature must be > 0");
            if (v.size() != n) out.push_back("per-token lists differ in length");
        }
    for (double lp : t.chosen_logprob)
        if (!std::isfinite(lp) || lp > 0.0) out.push_back("chosen_logprob must be finite and <= 0");
    auto prob_ok = [](double p) { return std::isfinite(p) && p > 0.0 && p <= 1.0; };
    for (double p : t.max_prob)
        if (!prob_ok(p)) out.push_back("max_prob outside (0, 1]");
    for (const auto& [temp, v] : t.maxprob_at_T)
        for (double p : v)
            if (!prob_ok(p)) out.push_back("maxprob_at_T outside (0, 1]");
    for (const auto& [temp, v] : t.energy_at_T)
        for (double e : v)
            if (!std::isfinite(e)) out.push_back("energy must be finite");
    for (double h : t.entropy) {
        if (!std::isfinite(h) || h < 0.0) out.push_back("entropy must be >= 0");
        if (t.vocab_size && h > std::log(static_cast<double>(*t.vocab_size)) + 1e-9)
            out.push_back("entropy exceeds ln(vocab_size)");
    }
    return out;
}

struct StepRecord {
    std::string task_id;
    std::int64_t step_index = 0;
    std::string language;
    std::optional<int> label;  // 1 = correct, 0 = incorrect
    std::int64_t total_lines = 1;
    std::string graph_path;  // as written in the manifest
    std::optional<TokenTrace> trace;
    std::optional<std::string> source_line;

    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct Corpus {
    std::vector<StepRecord> records;
    std::filesystem::path manifest_path;

    // Relative graph paths resolve against the manifest's directory.
    std::filesystem::path resolve(const StepRecord& r) const {
        std::filesystem::path p(r.graph_path);
        if (p.is_absolute() || manifest_path.empty()) return p;
        return manifest_path.parent_path() / p;
    }
};

namespace detail {

inline std::string temperature_key(double t) {
    std::ostringstream os;
    os << t;
    if (os.str().find('.') == std::string::npos) os << ".0";
    return os.str();
}

inline json grid_to_json(const std::map<double, std::vector<double>>& m) {
    json j = json::object();
    for (const auto& [t, v] : m) j[temperature_key(t)] = v;
    return j;
}

inline std::vector<double> real_list(const json& j, const std::string& what) {
    if (!j.is_array()) throw SchemaError(what + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& v : j) {
        if (!v.is_number()) throw SchemaError(what + ": expected an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

inline std::map<double, std::vector<double>> grid_from_json(const json& j, const std::string& what) {
    if (!j.is_object()) throw SchemaError(what + ": expected an object keyed by temperature");
    std::map<double, std::vector<double>> m;
    for (const auto& [k, v] : j.items()) {
        double t = 0.0;
        try {
            std::size_t used = 0;
            t = std::stod(k, &used);
            if (used != k.size()) throw std::invalid_argument(k);
        } catch (const std::exception&) {
            throw SchemaError(what + ": bad temperature key '" + k + "'");
        }
        m[t] = real_list(v, what);
    }
    return m;
}

inline json trace_to_json(const TokenTrace& t) {
    json j = {{"chosen_logprob", t.chosen_logprob},
              {"max_prob", t.max_prob},
              {"entropy", t.entropy},
              {"energy_at_T", grid_to_json(t.energy_at_T)},
              {"maxprob_at_T", grid_to_json(t.maxprob_at_T)}};
    if (t.vocab_size) j["vocab_size"] = *t.vocab_size;
    return j;
}

inline TokenTrace trace_from_json(const json& j, const std::string& what) {
    require_keys(j, what, {"chosen_logprob", "max_prob", "entropy"}, {"energy_at_T", "maxprob_at_T", "vocab_size"});
    TokenTrace t;
    t.chosen_logprob = real_list(j.at("chosen_logprob"), what + ".chosen_logprob");
    t.max_prob = real_list(j.at("max_prob"), what + ".max_prob");
    t.entropy = real_list(j.at("entropy"), what + ".entropy");
    if (j.contains("energy_at_T")) t.energy_at_T = grid_from_json(j.at("energy_at_T"), what + ".energy_at_T");
    if (j.contains("maxprob_at_T")) t.maxprob_at_T = grid_from_json(j.at("maxprob_at_T"), what + ".maxprob_at_T");
    if (j.contains("vocab_size")) t.vocab_size = get_int(j, "vocab_size", what);
    auto problems = validate_trace(t);
    if (!problems.empty()) throw SchemaError(what + ": " + problems.front());
    return t;
}

}  // namespace detail

inline std::string serialize_record(const StepRecord& r) {
    using detail::json;
    json j = {{"task_id", r.task_id},
              {"step_index", r.step_index},
              {"language", r.language},
              {"label", r.label ? json(*r.label) : json(nullptr)},
              {"total_lines", r.total_lines},
              {"graph_path", r.graph_path}};
    if (r.trace) j["trace"] = detail::trace_to_json(*r.trace);
    if (r.source_line) j["source_line"] = *r.source_line;
    return j.dump();
}

inline StepRecord parse_record(std::string_view line, const std::string& where) {
    using detail::json;
    json j;
    try {
        j = json::parse(line.begin(), line.end());
    } catch (const json::parse_error& e) {
        throw SchemaError(where + ": malformed record: " + e.what());
    }
    detail::require_keys(j, where, {"task_id", "step_index", "language", "label", "total_lines", "graph_path"},
                         {"trace", "source_line"});
    StepRecord r;
    auto str = [&](const char* key) {
        if (!j.at(key).is_string()) throw SchemaError(where + ": field '" + key + "' must be a string");
        return j.at(key).get<std::string>();
    };
    r.task_id = str("task_id");
    r.language = str("language");
    r.graph_path = str("graph_path");
    r.step_index = detail::get_int(j, "step_index", where);
    r.total_lines = detail::get_int(j, "total_lines", where);
    if (!j.at("label").is_null()) {
        const auto label = detail::get_int(j, "label", where);
        if (label != 0 && label != 1) throw SchemaError(where + ": label must be 0, 1 or null");
        r.label = static_cast<int>(label);
    }
    if (r.total_lines < 1) throw SchemaError(where + ": total_lines must be >= 1");
    if (r.step_index < 0 || r.step_index >= r.total_lines)
        throw SchemaError(where + ": step_index must lie in [0, total_lines)");
    if (j.contains("trace")) r.trace = detail::trace_from_json(j.at("trace"), where + ".trace");
    if (j.contains("source_line")) r.source_line = str("source_line");
    return r;
}

// Reads a line-delimited manifest. Blank lines are skipped.
inline Corpus load_manifest(const std::filesystem::path& path) {
    Corpus c;
    c.manifest_path = path;
    const std::string text = read_file(path);
    std::set<std::pair<std::string, std::int64_t>> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        StepRecord r = parse_record(line, where);
        if (!seen.emplace(r.task_id, r.step_index).second)
            throw DuplicateStepError(where + ": duplicate (task '" + r.task_id + "', step " +
                                     std::to_string(r.step_index) + ")");
        c.records.push_back(std::move(r));
    }
    return c;
}

inline std::string serialize_manifest(const std::vector<StepRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += serialize_record(r);
        out += '\n';
    }
    return out;
}

}  // namespace codecircuit
