#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "codecircuit/errors.hpp"

namespace codecircuit {

struct Projection {
    std::vector<std::array<double, 2>> coords;  // one per input row
    std::array<double, 2> explained{};          // variance ratios, descending
    std::vector<std::size_t> used_columns;      // non-constant input columns
    Eigen::MatrixXd loadings;                   // used_columns x 2
};

// Standardizes columns (sample variance), drops constant ones and projects
// onto the top two principal axes. Each axis is signed so that its
// largest-magnitude loading is positive.
inline Projection pca_project(const std::vector<std::vector<double>>& rows) {
    if (rows.size() < 2) throw DegenerateInputError("projection needs at least 2 rows");
    const std::size_t n = rows.size(), p = rows.front().size();
    for (const auto& r : rows)
        if (r.size() != p) throw ShapeMismatchError("rows differ in length");

    Projection out;
    for (std::size_t c = 0; c < p; ++c)
        for (std::size_t i = 1; i < n; ++i)
            if (rows[i][c] != rows[0][c]) {
                out.used_columns.push_back(c);
                break;
            }
    if (out.used_columns.empty()) throw DegenerateInputError("every column is constant");

    const auto k = static_cast<Eigen::Index>(out.used_columns.size());
    Eigen::MatrixXd z(static_cast<Eigen::Index>(n), k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const std::size_t c = out.used_columns[static_cast<std::size_t>(j)];
        double mean = 0.0;
        for (const auto& r : rows) mean += r[c];
        mean /= static_cast<double>(n);
        double ss = 0.0;
        for (const auto& r : rows) ss += (r[c] - mean) * (r[c] - mean);
        const double sd = std::sqrt(ss / static_cast<double>(n - 1));
        for (std::size_t i = 0; i < n; ++i) z(static_cast<Eigen::Index>(i), j) = (rows[i][c] - mean) / sd;
    }

    // Right singular vectors of the standardized data are the covariance
    // eigenvectors; squared singular values / (n - 1) its eigenvalues.
    Eigen::BDCSVD<Eigen::MatrixXd> svd(z, Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    const double total = sv.squaredNorm();
    out.loadings = Eigen::MatrixXd::Zero(k, 2);
    for (Eigen::Index a = 0; a < 2 && a < sv.size(); ++a) {
        Eigen::VectorXd v = svd.matrixV().col(a);
        Eigen::Index arg = 0;
        for (Eigen::Index j = 1; j < k; ++j)
            if (std::abs(v(j)) > std::abs(v(arg))) arg = j;
        if (v(arg) < 0) v = -v;
        out.loadings.col(a) = v;
        out.explained[static_cast<std::size_t>(a)] = total > 0 ? sv(a) * sv(a) / total : 0.0;
    }
    const Eigen::MatrixXd scores = z * out.loadings;
    out.coords.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        out.coords[i] = {scores(static_cast<Eigen::Index>(i), 0), scores(static_cast<Eigen::Index>(i), 1)};
    return out;
}

}  // namespace codecircuit
