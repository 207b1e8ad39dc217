#include <gtest/gtest.h>

#include "codecircuit/projection.hpp"
#include "codecircuit/util.hpp"
#include "oracles/eigen_oracle.hpp"

using namespace codecircuit;

TEST(Projection, CollinearPointsLoadOneAxis) {
    std::vector<std::vector<double>> x;
    for (int i = 0; i < 10; ++i) x.push_back({1.0 * i, 2.0 * i + 1.0, -0.5 * i});
    const auto p = pca_project(x);
    EXPECT_NEAR(p.explained[0], 1.0, 1e-12);
    EXPECT_NEAR(p.explained[1], 0.0, 1e-12);
}

TEST(Projection, SquareCornersSplitVarianceEvenly) {
    const auto p = pca_project({{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    EXPECT_NEAR(p.explained[0], 0.5, 1e-12);
    EXPECT_NEAR(p.explained[1], 0.5, 1e-12);
}

TEST(Projection, ConstantColumnsAreDropped) {
    const auto p = pca_project({{1, 5, 0}, {2, 5, 1}, {4, 5, 0}});
    EXPECT_EQ(p.used_columns, (std::vector<std::size_t>{0, 2}));
}

TEST(Projection, DegenerateInputs) {
    EXPECT_THROW(pca_project({{1, 2}}), DegenerateInputError);
    EXPECT_THROW(pca_project({{1, 2}, {1, 2}, {1, 2}}), DegenerateInputError);
    EXPECT_THROW(pca_project({{1, 2}, {1}}), ShapeMismatchError);
}

TEST(Projection, SignConventionAndOrdering) {
    Rng rng(41);
    std::vector<std::vector<double>> x(30, std::vector<double>(5));
    for (auto& r : x)
        for (auto& v : r) v = rng.normal();
    const auto p = pca_project(x);
    EXPECT_GE(p.explained[0], p.explained[1]);
    for (Eigen::Index c = 0; c < 2; ++c) {
        Eigen::Index arg;
        p.loadings.col(c).cwiseAbs().maxCoeff(&arg);
        EXPECT_GT(p.loadings(arg, c), 0.0);
    }
}

TEST(Projection, MatchesExplicitCovarianceEigendecomposition) {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<double>> x(50, std::vector<double>(8));
        for (auto& r : x) {
            const double shared = rng.normal();
            for (std::size_t c = 0; c < r.size(); ++c) r[c] = rng.normal() + shared * static_cast<double>(c) * 0.3;
        }
        const auto got = pca_project(x);
        const auto want = oracle::pca_by_covariance(x);
        for (int c = 0; c < 2; ++c) EXPECT_NEAR(got.explained[static_cast<std::size_t>(c)], want.explained[c], 1e-8);
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(got.coords[i][c], want.coords[i][c], 1e-8);
    }
}
