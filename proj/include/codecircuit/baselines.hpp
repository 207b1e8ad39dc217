#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "codecircuit/manifest.hpp"
#include "codecircuit/metrics.hpp"

namespace codecircuit {

// Black-box confidence scorers over recorded token statistics.
struct BaselineMethod {
    enum class Kind { MaxProb, PPL, Entropy, TempScaling, Energy };

    Kind kind = Kind::MaxProb;
    double temperature = 1.0;  // TempScaling and Energy only

    static BaselineMethod max_prob() { return {Kind::MaxProb}; }
    static BaselineMethod ppl() { return {Kind::PPL}; }
    static BaselineMethod entropy() { return {Kind::Entropy}; }
    static BaselineMethod temp_scaling(double t) { return {Kind::TempScaling, t}; }
    static BaselineMethod energy(double t) { return {Kind::Energy, t}; }

    std::string name() const {
        switch (kind) {
            case Kind::MaxProb: return "maxprob";
            case Kind::PPL: return "ppl";
            case Kind::Entropy: return "entropy";
            case Kind::TempScaling: return "temp";
            case Kind::Energy: return "energy";
        }
        return "?";
    }
};

// How per-token statistics collapse to one value per line.
enum class TokenAggregation { Mean, Min, Last };

inline std::optional<BaselineMethod> parse_baseline(const std::string& name, double temperature = 1.0) {
    if (name == "maxprob") return BaselineMethod::max_prob();
    if (name == "ppl") return BaselineMethod::ppl();
    if (name == "entropy") return BaselineMethod::entropy();
    if (name == "temp") return BaselineMethod::temp_scaling(temperature);
    if (name == "energy") return BaselineMethod::energy(temperature);
    return std::nullopt;
}

namespace detail {

inline double aggregate(const std::vector<double>& xs, TokenAggregation how) {
    switch (how) {
        case TokenAggregation::Mean: {
            double s = 0.0;
            for (double x : xs) s += x;
            return s / static_cast<double>(xs.size());
        }
        case TokenAggregation::Min: return *std::min_element(xs.begin(), xs.end());
        case TokenAggregation::Last: return xs.back();
    }
    return 0.0;
}

inline const std::vector<double>& at_temperature(const std::map<double, std::vector<double>>& grid, double t,
                                                 const char* what) {
    const auto* v = find_at_temperature(grid, t);
    if (!v) throw MissingTemperatureError(std::string(what) + " not recorded at T=" + std::to_string(t));
    return *v;
}

}  // namespace detail

// Line score oriented so that larger means more likely incorrect.
inline double score_line(const TokenTrace& trace, const BaselineMethod& method,
                         TokenAggregation how = TokenAggregation::Mean) {
    if (trace.size() == 0) throw EmptyTraceError("trace has no tokens");
    using K = BaselineMethod::Kind;
    switch (method.kind) {
        case K::MaxProb: return -detail::aggregate(trace.max_prob, how);
        case K::PPL: return std::exp(-detail::aggregate(trace.chosen_logprob, how));
        case K::Entropy: return detail::aggregate(trace.entropy, how);
        case K::TempScaling:
            return -detail::aggregate(detail::at_temperature(trace.maxprob_at_T, method.temperature, "maxprob"), how);
        case K::Energy:
            return detail::aggregate(detail::at_temperature(trace.energy_at_T, method.temperature, "energy"), how);
    }
    return 0.0;
}

// Picks the grid temperature with the best validation AUROC for the
// temperature-scaled max-probability scorer; ties go to the smallest T.
inline double fit_temperature(const std::vector<StepRecord>& validation,
                              TokenAggregation how = TokenAggregation::Mean) {
    std::vector<const StepRecord*> usable;
    std::size_t pos = 0, neg = 0;
    for (const auto& r : validation)
        if (r.label && r.trace) {
            usable.push_back(&r);
            (*r.label == 0 ? pos : neg) += 1;
        }
    if (pos == 0 || neg == 0)
        throw InsufficientLabelsError("temperature fitting needs labeled traces from both classes");

    std::vector<int> labels;
    for (const auto* r : usable) labels.push_back(*r->label);
    double best_t = kTemperatureGrid.front();
    double best_auc = -1.0;
    for (double t : kTemperatureGrid) {
        std::vector<double> scores;
        for (const auto* r : usable) scores.push_back(score_line(*r->trace, BaselineMethod::temp_scaling(t), how));
        const double auc = auroc(scores, labels);
        if (auc > best_auc) {
            best_auc = auc;
            best_t = t;
        }
    }
    return best_t;
}

}  // namespace codecircuit
