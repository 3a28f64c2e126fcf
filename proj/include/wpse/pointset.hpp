#pragma once

#include "wpse/common.hpp"
#include "wpse/kernel.hpp"
#include "wpse/rff.hpp"

#include <json.hpp>

#include <vector>

namespace wpse {

/// A set of M (weight, point) pairs representing one instance. Points are the
/// columns of a d x M matrix. Weights may be negative.
class WeightedPointSet {
public:
    WeightedPointSet() = default;

    WeightedPointSet(Vector weights, Matrix points, bool normalized = false)
        : weights_(std::move(weights)), points_(std::move(points)), normalized_(normalized) {
        detail::require(weights_.size() >= 1, "weighted point set: needs at least one entry");
        detail::require_same_dim(weights_.size(), points_.cols(), "weighted point set weights/points");
        if (normalized_) {
            for (Index i = 0; i < points_.cols(); ++i)
                detail::require(std::abs(points_.col(i).norm() - 1.0) <= 1e-9,
                                "weighted point set: normalized flag set but point " + std::to_string(i) +
                                    " is not unit norm");
        }
    }

    static WeightedPointSet single(const Vector& v, double w = 1.0) {
        return WeightedPointSet(Vector::Constant(1, w), Matrix(v));
    }

    Index size() const noexcept { return weights_.size(); }
    Index dim() const noexcept { return points_.rows(); }
    bool normalized() const noexcept { return normalized_; }

    const Vector& weights() const noexcept { return weights_; }
    const Matrix& points() const noexcept { return points_; }
    double weight(Index i) const { return weights_[i]; }
    auto point(Index i) const { return points_.col(i); }

private:
    Vector weights_;
    Matrix points_;
    bool normalized_ = false;
};

/// Concatenated finite embedding [sqrt(a1) vbar ; sqrt(a2) zbar] of a point set.
struct PointSetEmbedding {
    Vector linear_part;  // sqrt(alpha1) * sum_i w_i v_i
    Vector rff_part;     // sqrt(alpha2) * sum_i w_i z(v_i)
    double alpha1 = 1.0;
    double alpha2 = 0.0;
};

/// sum_{i,j} w_i^A w_j^B k(v_i^A, v_j^B), evaluated exactly.
inline double exact_similarity(const KernelSpec& kernel, const WeightedPointSet& a, const WeightedPointSet& b) {
    detail::require_same_dim(a.dim(), b.dim(), "exact_similarity");
    double s = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        double row = 0.0;
        for (Index j = 0; j < b.size(); ++j) row += b.weight(j) * eval(kernel, a.point(i), b.point(j));
        s += a.weight(i) * row;
    }
    return s;
}

inline PointSetEmbedding embed(const WeightedPointSet& a, const RFFParams& params, double alpha1, double alpha2) {
    detail::require(alpha1 >= 0.0 && alpha2 >= 0.0, "embed: alphas must be nonnegative");
    detail::require_same_dim(a.dim(), params.input_dim(), "embed");
    PointSetEmbedding e;
    e.alpha1 = alpha1;
    e.alpha2 = alpha2;
    e.linear_part = std::sqrt(alpha1) * (a.points() * a.weights());
    e.rff_part = Vector::Zero(params.num_features());
    if (alpha2 > 0.0) {
        for (Index i = 0; i < a.size(); ++i) e.rff_part += a.weight(i) * featurize(params, a.point(i));
        e.rff_part *= std::sqrt(alpha2);
    }
    return e;
}

/// Uses the alphas of a combination kernel.
inline PointSetEmbedding embed(const WeightedPointSet& a, const RFFParams& params, const CombinationKernel& k) {
    return embed(a, params, k.alpha1, k.alpha2);
}

/// Inner product of concatenated embeddings; an unbiased estimate of the exact
/// combination-kernel similarity over RFF draws.
inline double approx_similarity(const PointSetEmbedding& ea, const PointSetEmbedding& eb) {
    if (ea.alpha1 != eb.alpha1 || ea.alpha2 != eb.alpha2)
        throw DimensionMismatch("approx_similarity: embeddings use different alpha coefficients");
    detail::require_same_dim(ea.linear_part.size(), eb.linear_part.size(), "approx_similarity linear part");
    detail::require_same_dim(ea.rff_part.size(), eb.rff_part.size(), "approx_similarity rff part");
    return ea.linear_part.dot(eb.linear_part) + ea.rff_part.dot(eb.rff_part);
}

inline void to_json(nlohmann::json& j, const WeightedPointSet& s) {
    std::vector<std::vector<double>> pts;
    for (Index i = 0; i < s.size(); ++i) {
        const Vector p = s.point(i);
        pts.emplace_back(p.data(), p.data() + p.size());
    }
    j = {{"weights", std::vector<double>(s.weights().data(), s.weights().data() + s.size())}, {"points", pts}};
}

inline void from_json(const nlohmann::json& j, WeightedPointSet& s) {
    detail::reject_unknown_keys(j, {"weights", "points"}, "weighted point set");
    const auto w = j.at("weights").get<std::vector<double>>();
    const auto pts = j.at("points").get<std::vector<std::vector<double>>>();
    detail::require(!w.empty(), "weighted point set: empty weights");
    detail::require_same_dim(static_cast<Index>(w.size()), static_cast<Index>(pts.size()),
                             "weighted point set weights/points");
    const Index d = static_cast<Index>(pts.front().size());
    Matrix p(d, static_cast<Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) {
        detail::require_same_dim(static_cast<Index>(pts[i].size()), d, "weighted point set point");
        for (Index k = 0; k < d; ++k) p(k, static_cast<Index>(i)) = pts[i][static_cast<std::size_t>(k)];
    }
    s = WeightedPointSet(Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size())), std::move(p));
}

}  // namespace wpse
