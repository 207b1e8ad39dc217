#include <gtest/gtest.h>

#include "codecircuit/metrics.hpp"
#include "codecircuit/util.hpp"
#include "oracles/metrics_oracle.hpp"

using namespace codecircuit;

namespace {

// Positives (label 0) first, then negatives.
struct Labeled {
    std::vector<double> s;
    std::vector<int> y;
};

Labeled split(std::vector<double> pos, std::vector<double> neg) {
    Labeled l;
    for (double v : pos) {
        l.s.push_back(v);
        l.y.push_back(0);
    }
    for (double v : neg) {
        l.s.push_back(v);
        l.y.push_back(1);
    }
    return l;
}

Labeled random_instance(Rng& rng) {
    Labeled l;
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 50));
    const bool coarse = rng.bernoulli(0.5);
    for (std::size_t i = 0; i < n; ++i) {
        l.s.push_back(coarse ? static_cast<double>(rng.uniform_int(0, 4)) : rng.normal());
        l.y.push_back(rng.bernoulli(0.4) ? 0 : 1);
    }
    l.y[0] = 0;
    l.y[1] = 1;
    return l;
}

}  // namespace

TEST(Auroc, Examples) {
    auto a = split({0.9, 0.8}, {0.2, 0.1});
    EXPECT_DOUBLE_EQ(auroc(a.s, a.y), 1.0);
    auto b = split({0.5, 0.5}, {0.5, 0.5, 0.5});
    EXPECT_DOUBLE_EQ(auroc(b.s, b.y), 0.5);
    auto c = split({0.8, 0.6}, {0.9, 0.5, 0.2});
    EXPECT_NEAR(auroc(c.s, c.y), 4.0 / 6.0, 1e-15);
}

TEST(Aupr, Examples) {
    auto a = split({0.9, 0.8}, {0.2, 0.1});
    EXPECT_DOUBLE_EQ(aupr(a.s, a.y), 1.0);
    // Descending: positive, negative, positive.
    std::vector<double> s = {3, 2, 1};
    std::vector<int> y = {0, 1, 0};
    EXPECT_NEAR(aupr(s, y), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
}

TEST(Aupr, ConvergesToBaseRateForRandomScores) {
    Rng rng(51);
    std::vector<double> s;
    std::vector<int> y;
    std::size_t pos = 0;
    for (int i = 0; i < 10000; ++i) {
        s.push_back(rng.uniform());
        y.push_back(rng.bernoulli(0.3) ? 0 : 1);
        pos += y.back() == 0;
    }
    EXPECT_NEAR(aupr(s, y), static_cast<double>(pos) / 10000.0, 0.05);
}

TEST(Fpr95, Examples) {
    auto a = split({0.9, 0.3}, {0.5, 0.4, 0.2});
    EXPECT_NEAR(fpr_at_95tpr(a.s, a.y), 2.0 / 3.0, 1e-15);
    auto b = split({0.9, 0.8}, {0.2, 0.1});
    EXPECT_EQ(fpr_at_95tpr(b.s, b.y), 0.0);
    auto c = split({1, 1}, {1, 1, 1});
    EXPECT_EQ(fpr_at_95tpr(c.s, c.y), 1.0);
}

TEST(Metrics, Errors) {
    std::vector<double> s = {1, 2};
    std::vector<int> same = {0, 0};
    std::vector<int> shorter = {0};
    EXPECT_THROW(auroc(s, same), SingleClassError);
    EXPECT_THROW(aupr(s, same), SingleClassError);
    EXPECT_THROW(fpr_at_95tpr(s, same), SingleClassError);
    EXPECT_THROW(auroc(s, shorter), ShapeMismatchError);
}

TEST(Metrics, MatchBruteForce) {
    Rng rng(52);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto l = random_instance(rng);
        EXPECT_NEAR(auroc(l.s, l.y), oracle::auroc_pairs(l.s, l.y), 1e-9);
        EXPECT_NEAR(aupr(l.s, l.y), oracle::ap_sweep(l.s, l.y), 1e-9);
        EXPECT_NEAR(fpr_at_95tpr(l.s, l.y), oracle::fpr95_sweep(l.s, l.y), 1e-9);
    }
}

TEST(Metrics, Invariances) {
    Rng rng(53);
    for (int trial = 0; trial < 200; ++trial) {
        const auto l = random_instance(rng);
        std::vector<double> mono, neg;
        for (double v : l.s) {
            mono.push_back(std::exp(v) * 3.0 + 1.0);
            neg.push_back(-v);
        }
        EXPECT_NEAR(auroc(mono, l.y), auroc(l.s, l.y), 1e-12);
        EXPECT_NEAR(aupr(mono, l.y), aupr(l.s, l.y), 1e-12);
        EXPECT_NEAR(fpr_at_95tpr(mono, l.y), fpr_at_95tpr(l.s, l.y), 1e-12);
        EXPECT_NEAR(auroc(neg, l.y), 1.0 - auroc(l.s, l.y), 1e-12);

        auto s2 = l.s;
        auto y2 = l.y;
        s2.insert(s2.end(), l.s.begin(), l.s.end());
        y2.insert(y2.end(), l.y.begin(), l.y.end());
        EXPECT_NEAR(auroc(s2, y2), auroc(l.s, l.y), 1e-12);
        EXPECT_NEAR(aupr(s2, y2), aupr(l.s, l.y), 1e-12);
        EXPECT_NEAR(fpr_at_95tpr(s2, y2), fpr_at_95tpr(l.s, l.y), 1e-12);
    }
}
