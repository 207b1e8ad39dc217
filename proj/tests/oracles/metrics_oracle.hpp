#pragma once

#include <algorithm>
#include <limits>
#include <set>
#include <vector>

// Brute-force ranking metrics. Positive class = label 0, larger score = more
// likely positive.
namespace oracle {

// Mann-Whitney by enumerating every (positive, negative) pair.
inline double auroc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 0 && y[j] == 1) {
                pairs += 1.0;
                if (s[i] > s[j]) wins += 1.0;
                else if (s[i] == s[j]) wins += 0.5;
            }
    return wins / pairs;
}

// Average precision: at each distinct score t (descending), recount
// everything scored >= t from scratch.
inline double ap_sweep(const std::vector<double>& s, const std::vector<int>& y) {
    std::set<double, std::greater<>> thresholds(s.begin(), s.end());
    double P = 0.0;
    for (int l : y) P += l == 0;
    double ap = 0.0, prev_recall = 0.0;
    for (double t : thresholds) {
        double tp = 0.0, fp = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[i] >= t) (y[i] == 0 ? tp : fp) += 1.0;
        const double recall = tp / P;
        ap += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
    }
    return ap;
}

// Smallest FPR among observed-score thresholds whose TPR reaches 0.95.
inline double fpr95_sweep(const std::vector<double>& s, const std::vector<int>& y) {
    double P = 0.0, N = 0.0;
    for (int l : y) (l == 0 ? P : N) += 1.0;
    double best = std::numeric_limits<double>::infinity();
    for (double t : s) {
        double tp = 0.0, fp = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[i] >= t) (y[i] == 0 ? tp : fp) += 1.0;
        if (tp / P >= 0.95) best = std::min(best, fp / N);
    }
    return best;
}

}  // namespace oracle
