#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "codecircuit/errors.hpp"

namespace codecircuit {

// Incorrect lines (label 0) are the positive class everywhere. Scores are
// "incorrectness" scores: higher means more likely label 0.
inline constexpr int kPositiveLabel = 0;

namespace detail {

struct ClassCounts {
    std::size_t pos = 0, neg = 0;
};

inline ClassCounts check_inputs(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ShapeMismatchError("scores and labels differ in length");
    ClassCounts c;
    for (int l : labels) (l == kPositiveLabel ? c.pos : c.neg) += 1;
    if (c.pos == 0 || c.neg == 0) throw SingleClassError("metric needs both classes");
    return c;
}

// Indices sorted by descending score.
inline std::vector<std::size_t> descending(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

}  // namespace detail

// Mann-Whitney statistic with average ranks for ties:
// P(score_pos > score_neg) + 0.5 P(equal).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
    const auto counts = detail::check_inputs(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Counting concordant pairs directly keeps the result exact in the
    // common case where every count fits a double mantissa.
    double wins = 0.0;
    std::size_t neg_below = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::size_t pos_block = 0, neg_block = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == kPositiveLabel ? pos_block : neg_block) += 1;
            ++j;
        }
        wins += static_cast<double>(pos_block) * (static_cast<double>(neg_below) + 0.5 * static_cast<double>(neg_block));
        neg_below += neg_block;
        i = j;
    }
    return wins / (static_cast<double>(counts.pos) * static_cast<double>(counts.neg));
}

// Average precision: sum over descending score thresholds of
// (R_n - R_{n-1}) * P_n, with tied scores forming one threshold.
inline double aupr(std::span<const double> scores, std::span<const int> labels) {
    const auto counts = detail::check_inputs(scores, labels);
    const auto order = detail::descending(scores);
    double ap = 0.0;
    std::size_t tp = 0, fp = 0, prev_tp = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == kPositiveLabel ? tp : fp) += 1;
            ++j;
        }
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += static_cast<double>(tp - prev_tp) / static_cast<double>(counts.pos) * precision;
        prev_tp = tp;
        i = j;
    }
    return ap;
}

// Lowest false-positive rate among observed-score thresholds (predict
// positive when score >= threshold) whose true-positive rate is >= 0.95.
inline double fpr_at_95tpr(std::span<const double> scores, std::span<const int> labels) {
    const auto counts = detail::check_inputs(scores, labels);
    const auto order = detail::descending(scores);
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == kPositiveLabel ? tp : fp) += 1;
            ++j;
        }
        // FPR only grows as the threshold drops, so the first threshold
        // reaching the TPR target is optimal.
        if (20 * tp >= 19 * counts.pos) return static_cast<double>(fp) / static_cast<double>(counts.neg);
        i = j;
    }
    return 1.0;
}

}  // namespace codecircuit
