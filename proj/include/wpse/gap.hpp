#pragma once

#include "wpse/common.hpp"
#include "wpse/world.hpp"

namespace wpse {

struct GapResult {
    double delta = 0.0;
    double shift = 0.0;  // the constant absorbed into the target
};

/// Sup-norm distance between g and g_star modulo an additive constant.
///
/// The residual r = g - g_star spans [lo, hi]; shifting by (lo + hi) / 2 is
/// optimal and leaves a gap of (hi - lo) / 2.
inline GapResult delta_gap_with_shift(const SimilarityTable& g, const SimilarityTable& g_star) {
    if (g.rows() != g_star.rows() || g.cols() != g_star.cols())
        throw DimensionMismatch("delta_gap: tables differ in shape");
    detail::require(g.rows() > 0 && g.cols() > 0, "delta_gap: empty table");
    const Matrix r = g.values - g_star.values;
    const double lo = r.minCoeff(), hi = r.maxCoeff();
    const double shift = 0.5 * (lo + hi);
    return {(r.array() - shift).abs().maxCoeff(), shift};
}

inline double delta_gap(const SimilarityTable& g, const SimilarityTable& g_star) {
    return delta_gap_with_shift(g, g_star).delta;
}

}  // namespace wpse
