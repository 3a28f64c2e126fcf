#pragma once

#include "wpse/common.hpp"
#include "wpse/gap.hpp"
#include "wpse/trainer.hpp"
#include "wpse/world.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <sstream>
#include <vector>

namespace wpse {

struct RankReport {
    std::vector<double> singular_values;  // nonincreasing
    bool rank_bound_ok = false;
    double frobenius_floor = 0.0;  // sqrt(sum_{k > d+1} sigma_k^2)
};

namespace detail {
inline Vector singular_values(const Matrix& m) {
    return Eigen::JacobiSVD<Matrix>(m).singularValues();
}

inline double tail_norm(const Vector& s, Index keep) {
    return keep >= s.size() ? 0.0 : s.tail(s.size() - keep).norm();
}
}  // namespace detail

/// Singular values of A^T B - cJ for d x N factors, and whether
/// sigma_{d+2} <= 1e-8 sigma_1 (the matrix has numerical rank <= d+1).
inline RankReport verify_rank_bound(const Matrix& A, const Matrix& B, double c) {
    if (A.rows() != B.rows() || A.cols() != B.cols())
        throw DimensionMismatch("verify_rank_bound: A and B must have the same shape");
    const Index d = A.rows(), N = A.cols();
    detail::require(N > d + 1, "verify_rank_bound: need N > d + 1");
    const Matrix gram = A.transpose() * B - c * Matrix::Ones(N, N);
    const Vector s = detail::singular_values(gram);
    RankReport r;
    r.singular_values.assign(s.data(), s.data() + s.size());
    r.rank_bound_ok = s[d + 1] <= 1e-8 * s[0];
    r.frobenius_floor = detail::tail_norm(s, d + 1);
    return r;
}

namespace detail {

inline std::vector<double> shift_grid(const Matrix& G, int points = 201) {
    const double lo = G.minCoeff(), hi = G.maxCoeff();
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(points) + 1);
    for (int k = 0; k < points; ++k)
        grid.push_back(points == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / (points - 1));
    grid.push_back(0.0);
    return grid;
}

// Minimizes f over the grid, then refines by golden-section search on the
// bracket around the best grid point.
template <typename F>
std::pair<double, double> grid_minimize(const std::vector<double>& grid, F&& f) {
    std::size_t best = 0;
    std::vector<double> vals(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        vals[k] = f(grid[k]);
        if (vals[k] < vals[best]) best = k;
    }
    double best_x = grid[best], best_f = vals[best];
    const std::size_t regular = grid.size() - 1;  // last entry is the extra 0
    if (regular < 3) return {best_x, best_f};
    const double step = (grid[regular - 1] - grid[0]) / static_cast<double>(regular - 1);
    double a = best_x - step, b = best_x + step;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 80; ++it) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        }
    }
    if (f1 < best_f) return {x1, f1};
    if (f2 < best_f) return {x2, f2};
    return {best_x, best_f};
}

}  // namespace detail

/// Frobenius floor for approximating G by a rank <= d+1 matrix after a constant
/// shift: min over gamma of sqrt(sum_{k > d+1} sigma_k(G - gamma J)^2). Any
/// bilinear-plus-constant similarity in d dimensions is at least this far from G.
inline double bilinear_fit_floor(const SimilarityTable& G, Index d) {
    detail::require(d >= 1, "bilinear_fit_floor: d must be >= 1");
    detail::require(d + 1 < std::min(G.rows(), G.cols()), "bilinear_fit_floor: need d + 1 < min(n_x, n_y)");
    const Matrix ones = Matrix::Ones(G.rows(), G.cols());
    return detail::grid_minimize(detail::shift_grid(G.values), [&](double gamma) {
        return detail::tail_norm(detail::singular_values(G.values - gamma * ones), d + 1);
    }).second;
}

/// Exact Frobenius distance from G to {Z_x^T Z_y + gamma J : Z in R^{d x n}}:
/// min over gamma of the rank-d truncation error of G - gamma J. Never below
/// bilinear_fit_floor.
inline double bilinear_constant_floor(const SimilarityTable& G, Index d) {
    detail::require(d >= 1, "bilinear_constant_floor: d must be >= 1");
    const Matrix ones = Matrix::Ones(G.rows(), G.cols());
    return detail::grid_minimize(detail::shift_grid(G.values), [&](double gamma) {
        return detail::tail_norm(detail::singular_values(G.values - gamma * ones), d);
    }).second;
}

/// Number of singular values above rel_threshold * sigma_1.
inline Index effective_rank(const SimilarityTable& G, double rel_threshold = 1e-2) {
    const Vector s = detail::singular_values(G.values);
    if (s.size() == 0 || s[0] == 0.0) return 0;
    Index r = 0;
    while (r < s.size() && s[r] > rel_threshold * s[0]) ++r;
    return r;
}

/// Frobenius objective modulo a constant: min_gamma ||g + gamma - G||_F^2 / n,
/// whose optimal gamma is the mean residual.
inline TableObjective frobenius_objective(const SimilarityTable& target) {
    return [target](const SimilarityTable& g) {
        Matrix r = g.values - target.values;
        r.array() -= r.mean();
        const double n = static_cast<double>(r.size());
        return std::make_pair(r.squaredNorm() / n, Matrix((2.0 / n) * r));
    };
}

/// Optimizer defaults for universality sweeps.
inline TrainConfig sweep_optimizer() {
    TrainConfig c;
    c.learning_rate = 0.01;
    c.steps = 10000;
    c.grad_check = false;
    return c;
}

struct SweepConfig {
    TrainConfig optimizer = sweep_optimizer();  // M, kernel and d come from the sweep call
    int restarts = 5;
};

struct SweepPoint {
    Index m = 0;
    int restart = 0;
    std::uint64_t seed = 0;
    double frobenius_error = 0.0;
    double sup_error = 0.0;
};

struct SweepResult {
    std::vector<SweepPoint> points;

    std::vector<double> sup_errors(Index m) const {
        std::vector<double> v;
        for (const auto& p : points)
            if (p.m == m) v.push_back(p.sup_error);
        return v;
    }
    std::vector<double> frobenius_errors(Index m) const {
        std::vector<double> v;
        for (const auto& p : points)
            if (p.m == m) v.push_back(p.frobenius_error);
        return v;
    }
};

inline double median(std::vector<double> v) {
    detail::require(!v.empty(), "median of empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double best(const std::vector<double>& v) {
    detail::require(!v.empty(), "best of empty sample");
    return *std::min_element(v.begin(), v.end());
}

/// Fits one point-set model directly to a target table; returns the fitted
/// table's (Frobenius, sup) errors modulo the best constant.
inline SweepPoint fit_to_table(const SimilarityTable& target, const KernelSpec& kernel, Index m, Index d,
                               const TrainConfig& base, std::uint64_t seed) {
    TrainConfig cfg = base;
    cfg.kernel = kernel;
    cfg.d = d;
    cfg.m_x = cfg.m_y = m;
    cfg.seed = seed;
    cfg.mode = ModelMode{};
    cfg.batch_size = 0;
    cfg.grad_check = false;
    cfg.trace_every = cfg.steps;
    validate(cfg);
    std::mt19937_64 rng(seed);
    EmbeddingModel model = init_model(target.rows(), target.cols(), cfg, rng);
    const TableObjective objective = frobenius_objective(target);
    auto run = projected_descent(std::move(model), cfg, [&](long, std::mt19937_64&) { return objective; }, rng);
    const SimilarityTable g = induced_table(run.model);
    Matrix r = g.values - target.values;
    r.array() -= r.mean();
    SweepPoint p;
    p.m = m;
    p.seed = seed;
    p.frobenius_error = r.norm();
    p.sup_error = delta_gap(g, target);
    return p;
}

/// Seed of one (M, restart) fit in a sweep.
inline std::uint64_t sweep_seed(std::uint64_t base, Index m, int restart) {
    return detail::splitmix64(base * 1000003ULL + static_cast<std::uint64_t>(m) * 97ULL + static_cast<std::uint64_t>(restart));
}

/// Error of the best point-set approximation to the PMI as the number of points
/// per instance grows.
inline SweepResult universality_sweep(const SimilarityTable& target, const KernelSpec& kernel,
                                      const std::vector<Index>& m_values, Index d, const SweepConfig& cfg) {
    detail::require(!m_values.empty(), "universality_sweep: no M values");
    detail::require(cfg.restarts >= 1, "universality_sweep: need at least one restart");
    SweepResult res;
    for (Index m : m_values) {
        detail::require(m >= 1, "universality_sweep: M must be >= 1");
        for (int r = 0; r < cfg.restarts; ++r) {
            SweepPoint p = fit_to_table(target, kernel, m, d, cfg.optimizer, sweep_seed(cfg.optimizer.seed, m, r));
            p.restart = r;
            res.points.push_back(p);
        }
    }
    return res;
}

inline SweepResult universality_sweep(const DiscreteWorld& world, const KernelSpec& kernel,
                                      const std::vector<Index>& m_values, Index d, const SweepConfig& cfg) {
    return universality_sweep(pmi(world), kernel, m_values, d, cfg);
}

/// CSV with columns M,frobenius_error,sup_error,seed.
inline std::string sweep_csv(const SweepResult& r) {
    std::ostringstream os;
    os.precision(17);
    os << "# wpse-lab v" << kVersion << "\n";
    os << "M,frobenius_error,sup_error,seed\n";
    for (const auto& p : r.points) os << p.m << ',' << p.frobenius_error << ',' << p.sup_error << ',' << p.seed << '\n';
    return os.str();
}

inline void to_json(nlohmann::json& j, const RankReport& r) {
    j = {{"singular_values", r.singular_values},
         {"rank_bound_ok", r.rank_bound_ok},
         {"frobenius_floor", r.frobenius_floor}};
}

}  // namespace wpse
