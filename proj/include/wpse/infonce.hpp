#pragma once

#include "wpse/common.hpp"
#include "wpse/world.hpp"

namespace wpse {

/// Symmetric InfoNCE on a B x B batch similarity matrix S, S_ij = g(x_i, y_j).
///
/// 0.5 * mean_i [-S_ii + lse_k S_ki] + 0.5 * mean_i [-S_ii + lse_k S_ik]
inline double empirical_loss(const Matrix& S) {
    detail::require(S.rows() == S.cols() && S.rows() >= 1, "empirical_loss: S must be square and nonempty");
    detail::require(S.allFinite(), "empirical_loss: non-finite similarity");
    const Index B = S.rows();
    double x_to_y = 0.0, y_to_x = 0.0;
    for (Index i = 0; i < B; ++i) {
        y_to_x += detail::logsumexp(S.col(i)) - S(i, i);
        x_to_y += detail::logsumexp(S.row(i)) - S(i, i);
    }
    return 0.5 * (y_to_x + x_to_y) / static_cast<double>(B);
}

/// d empirical_loss / d S.
inline Matrix empirical_grad(const Matrix& S) {
    detail::require(S.rows() == S.cols() && S.rows() >= 1, "empirical_grad: S must be square and nonempty");
    const Index B = S.rows();
    const double scale = 0.5 / static_cast<double>(B);
    Matrix grad = Matrix::Zero(B, B);
    for (Index i = 0; i < B; ++i) {
        const double lc = detail::logsumexp(S.col(i));
        const double lr = detail::logsumexp(S.row(i));
        grad.col(i) += scale * (S.col(i).array() - lc).exp().matrix();
        grad.row(i) += scale * (S.row(i).array() - lr).exp().matrix();
        grad(i, i) -= 2.0 * scale;
    }
    return grad;
}

namespace detail {

inline void require_table_shape(const SimilarityTable& g, const DiscreteWorld& w, const char* what) {
    if (g.rows() != w.n_x() || g.cols() != w.n_y())
        throw DimensionMismatch(std::string(what) + ": table is " + std::to_string(g.rows()) + "x" +
                                std::to_string(g.cols()) + ", world is " + std::to_string(w.n_x()) + "x" +
                                std::to_string(w.n_y()));
}

// log E_{p(x')} exp g(x', y_j) for every column, and log E_{p(y')} exp g(x_i, y') for every row.
inline std::pair<Vector, Vector> population_log_partitions(const Matrix& g, const DiscreteWorld& w) {
    Vector col(g.cols()), row(g.rows());
    for (Index j = 0; j < g.cols(); ++j) col[j] = weighted_logsumexp(g.col(j), w.px());
    for (Index i = 0; i < g.rows(); ++i) row[i] = weighted_logsumexp(g.row(i), w.py());
    return {col, row};
}

}  // namespace detail

/// Population symmetric InfoNCE with exact marginal weights, constant ln N omitted.
/// Never below -I(X; Y); equal to it at g = PMI + const.
inline double population_loss(const SimilarityTable& g, const DiscreteWorld& w) {
    detail::require_table_shape(g, w, "population_loss");
    const auto [col, row] = detail::population_log_partitions(g.values, w);
    const double fit = w.joint().cwiseProduct(g.values).sum();
    return -fit + 0.5 * w.py().dot(col) + 0.5 * w.px().dot(row);
}

/// Gradient of population_loss with respect to every table entry.
inline Matrix population_grad(const SimilarityTable& g, const DiscreteWorld& w) {
    detail::require_table_shape(g, w, "population_grad");
    const auto [col, row] = detail::population_log_partitions(g.values, w);
    Matrix grad = -w.joint();
    for (Index i = 0; i < g.rows(); ++i)
        for (Index j = 0; j < g.cols(); ++j) {
            const double soft_col = w.px()[i] * std::exp(g(i, j) - col[j]);
            const double soft_row = w.py()[j] * std::exp(g(i, j) - row[i]);
            grad(i, j) += 0.5 * (w.py()[j] * soft_col + w.px()[i] * soft_row);
        }
    return grad;
}

}  // namespace wpse
