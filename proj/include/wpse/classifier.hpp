#pragma once

#include "wpse/common.hpp"
#include "wpse/gap.hpp"
#include "wpse/world.hpp"

#include <json.hpp>

#include <optional>

namespace wpse {

/// Per-instance logits h(x)_c, n_x x K.
struct TableClassifier {
    Matrix logits;
};

/// Logit used for labels with P(c | x) = 0 in the Bayes classifier.
inline constexpr double kImpossibleLogit = -1e30;

/// h*(x)_c = ln P(c | x).
inline TableClassifier optimal_classifier(const DiscreteWorld& w) {
    TableClassifier h{Matrix(w.n_x(), w.num_labels())};
    for (Index i = 0; i < w.n_x(); ++i)
        for (Index c = 0; c < w.num_labels(); ++c) {
            const double p = w.label_cond()(i, c);
            h.logits(i, c) = p > 0.0 ? std::log(p) : kImpossibleLogit;
        }
    return h;
}

/// Mean classifier built from a similarity table:
/// h(x)_c = sum_{y in Y_c} p(y | Y_c) g(x, y) + ln P(Y_c).
inline TableClassifier mean_classifier(const SimilarityTable& g, const DiscreteWorld& w, const SubsetPartition& part) {
    if (g.rows() != w.n_x() || g.cols() != w.n_y()) throw DimensionMismatch("mean_classifier: table/world shape");
    const Vector mass = subset_mass(w, part);
    const int K = part.num_subsets();
    Matrix logits = Matrix::Zero(w.n_x(), K);
    for (Index j = 0; j < w.n_y(); ++j) {
        const int c = part.subset_of(j);
        if (c < 0) continue;
        logits.col(c) += (w.py()[j] / mass[c]) * g.values.col(j);
    }
    for (int c = 0; c < K; ++c) logits.col(c).array() += std::log(mass[c]);
    return {std::move(logits)};
}

/// Exact softmax cross-entropy under p(x, c).
inline double sup_loss(const TableClassifier& h, const DiscreteWorld& w) {
    if (h.logits.rows() != w.n_x() || h.logits.cols() != w.num_labels())
        throw DimensionMismatch("sup_loss: classifier is " + std::to_string(h.logits.rows()) + "x" +
                                std::to_string(h.logits.cols()) + ", world needs " + std::to_string(w.n_x()) + "x" +
                                std::to_string(w.num_labels()));
    double loss = 0.0;
    for (Index i = 0; i < w.n_x(); ++i) {
        const double lse = detail::logsumexp(h.logits.row(i));
        for (Index c = 0; c < w.num_labels(); ++c) {
            const double p = w.label_cond()(i, c);
            if (p > 0.0) loss += w.px()[i] * p * (lse - h.logits(i, c));
        }
    }
    return loss;
}

struct ProbeOptions {
    double tol = 1e-8;
    long max_iters = 200000;
};

struct ProbeResult {
    TableClassifier classifier;
    Matrix weight;  // m x K
    Vector bias;    // K
    double loss = 0.0;
    double grad_norm = 0.0;
    long iterations = 0;
};

/// Best affine probe logits = features * W + b under the exact population
/// cross-entropy.
///
/// Features are centered and whitened (p(x)-weighted) before optimization;
/// directions with no variance over the support are dropped since the bias
/// absorbs them. The solver is gradient descent with a Barzilai-Borwein trial
/// step and Armijo backtracking. Convergence is judged on the gradient in the
/// whitened coordinates.
inline ProbeResult fit_linear_probe(const Matrix& features, const DiscreteWorld& w, const ProbeOptions& opt = {}) {
    detail::require_same_dim(features.rows(), w.n_x(), "fit_linear_probe features/world");
    detail::require(features.allFinite(), "fit_linear_probe: non-finite features");
    const Index n = w.n_x(), m = features.cols(), K = w.num_labels();
    const Vector& px = w.px();
    const Matrix& target = w.label_cond();

    const Eigen::RowVectorXd mean = px.transpose() * features;
    const Matrix centered = features.rowwise() - mean;
    Matrix basis(m, 0);  // maps features to whitened coordinates
    if (m > 0) {
        const Matrix weighted = px.cwiseSqrt().asDiagonal() * centered;
        Eigen::JacobiSVD<Matrix> svd(weighted, Eigen::ComputeThinV);
        const Vector& s = svd.singularValues();
        Index rank = 0;
        const double cutoff = s.size() > 0 ? std::max(1e-10 * s[0], 1e-14) : 0.0;
        while (rank < s.size() && s[rank] > cutoff) ++rank;
        basis = svd.matrixV().leftCols(rank) * s.head(rank).cwiseInverse().asDiagonal();
    }
    const Matrix Z = centered * basis;  // n x r, Z^T diag(px) Z = I
    const Index r = Z.cols();

    Matrix A = Matrix::Zero(r, K);
    Vector b = Vector::Zero(K);

    auto logits_of = [&](const Matrix& a, const Vector& bb) -> Matrix {
        Matrix h = Z * a;
        h.rowwise() += bb.transpose();
        return h;
    };
    auto loss_of = [&](const Matrix& h) {
        double loss = 0.0;
        for (Index i = 0; i < n; ++i) {
            const double lse = detail::logsumexp(h.row(i));
            for (Index c = 0; c < K; ++c)
                if (target(i, c) > 0.0) loss += px[i] * target(i, c) * (lse - h(i, c));
        }
        return loss;
    };
    auto grad_of = [&](const Matrix& h, Matrix& gA, Vector& gb) {
        Matrix gh(n, K);
        for (Index i = 0; i < n; ++i) {
            const double lse = detail::logsumexp(h.row(i));
            gh.row(i) = px[i] * ((h.row(i).array() - lse).exp() - target.row(i).array()).matrix();
        }
        gA = Z.transpose() * gh;
        gb = gh.colwise().sum().transpose();
    };
    auto norm_of = [](const Matrix& gA, const Vector& gb) { return std::sqrt(gA.squaredNorm() + gb.squaredNorm()); };

    Matrix h = logits_of(A, b);
    double f = loss_of(h);
    Matrix gA;
    Vector gb;
    grad_of(h, gA, gb);
    double gnorm = norm_of(gA, gb);
    double step = 1.0;
    long it = 0;
    Matrix prevA, prev_gA;
    Vector prevb, prev_gb;
    for (; it < opt.max_iters && gnorm >= opt.tol; ++it) {
        if (it > 0) {
            const double sy = (A - prevA).cwiseProduct(gA - prev_gA).sum() + (b - prevb).dot(gb - prev_gb);
            const double ss = (A - prevA).squaredNorm() + (b - prevb).squaredNorm();
            step = sy > 0.0 ? std::clamp(ss / sy, 1e-10, 1e10) : 1.0;
        }
        prevA = A;
        prevb = b;
        prev_gA = gA;
        prev_gb = gb;
        const double g2 = gnorm * gnorm;
        for (int back = 0; back < 60; ++back) {
            Matrix candA = prevA - step * prev_gA;
            Vector candb = prevb - step * prev_gb;
            Matrix candh = logits_of(candA, candb);
            const double cf = loss_of(candh);
            if (cf <= f - 1e-4 * step * g2 || back == 59) {
                A = std::move(candA);
                b = std::move(candb);
                h = std::move(candh);
                f = cf;
                break;
            }
            step *= 0.5;
        }
        grad_of(h, gA, gb);
        gnorm = norm_of(gA, gb);
    }
    if (gnorm >= opt.tol)
        throw ConvergenceError("fit_linear_probe: gradient norm " + std::to_string(gnorm) + " after " +
                                   std::to_string(it) + " iterations",
                               gnorm);

    ProbeResult out;
    out.weight = basis * A;
    out.bias = b - (mean * out.weight).transpose();
    out.classifier.logits = logits_of(A, b);
    out.loss = f;
    out.grad_norm = gnorm;
    out.iterations = it;
    return out;
}

/// Excess risk of the mean classifier together with both sides of the bounds.
struct ExcessReport {
    double lhs = 0.0;           // sup_loss(mean_classifier(g)) - H(C | X)
    double rhs_expected = 0.0;  // eps1_expected + eps2_expected
    double rhs_sup = 0.0;       // eps1_sup + eps2_sup + 2 * delta
    double delta = 0.0;         // sup gap between g and the PMI, modulo a constant
    KlTerms kl;
    double mean_classifier_loss = 0.0;
    double optimal_loss = 0.0;
};

inline ExcessReport excess_risk(const SimilarityTable& g, const DiscreteWorld& w, const SubsetPartition& part) {
    ExcessReport r;
    r.kl = kl_terms(w, part);
    r.mean_classifier_loss = sup_loss(mean_classifier(g, w, part), w);
    r.optimal_loss = sup_loss_optimal(w);
    r.lhs = r.mean_classifier_loss - r.optimal_loss;
    r.delta = delta_gap(g, pmi(w));
    r.rhs_expected = r.kl.eps1_expected + r.kl.eps2_expected;
    r.rhs_sup = r.kl.eps1_sup + r.kl.eps2_sup + 2.0 * r.delta;
    return r;
}

inline void to_json(nlohmann::json& j, const ExcessReport& r) {
    j = {{"lhs", r.lhs},
         {"rhs_expected", r.rhs_expected},
         {"rhs_sup", r.rhs_sup},
         {"delta", r.delta},
         {"eps1_expected", r.kl.eps1_expected},
         {"eps2_expected", r.kl.eps2_expected},
         {"eps1_sup", r.kl.eps1_sup},
         {"eps2_sup", r.kl.eps2_sup},
         {"mean_classifier_loss", r.mean_classifier_loss},
         {"optimal_loss", r.optimal_loss}};
}

}  // namespace wpse
