#pragma once

#include "wpse/classifier.hpp"
#include "wpse/common.hpp"
#include "wpse/gap.hpp"
#include "wpse/infonce.hpp"
#include "wpse/kernel.hpp"
#include "wpse/pointset.hpp"
#include "wpse/rff.hpp"
#include "wpse/world.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

namespace wpse {

inline constexpr double kMinInvTemperature = 1.0;
inline constexpr double kMaxInvTemperature = 100.0;

enum class SimilarityMode { Exact, Rff };

struct ModelMode {
    SimilarityMode kind = SimilarityMode::Exact;
    Index num_features = kDefaultTrainFeatures;
    ResampleMode resample = ResampleMode::PerStep;
};

/// Free parameters of one modality: weights (M x n) and one d x M point block per instance.
struct SideParams {
    Matrix weights;
    std::vector<Matrix> points;

    Index count() const noexcept { return weights.cols(); }
    Index set_size() const noexcept { return weights.rows(); }
    Index dim() const noexcept { return points.empty() ? 0 : points.front().rows(); }

    WeightedPointSet set(Index i) const { return WeightedPointSet(weights.col(i), points[static_cast<std::size_t>(i)]); }
};

/// Weighted point sets for every x and every y plus an inverse temperature.
struct EmbeddingModel {
    SideParams x;
    SideParams y;
    double inv_temperature = 10.0;
    KernelSpec kernel;
    ModelMode mode;

    Index num_parameters() const {
        return 1 + x.count() * x.set_size() * (1 + x.dim()) + y.count() * y.set_size() * (1 + y.dim());
    }
};

namespace detail {

// Every kernel as a1 <u,v> + a2 phi(|u-v|^2).
struct KernelParts {
    double a1 = 0.0;
    double a2 = 0.0;
    bool gaussian = true;
    double param = 1.0;

    explicit KernelParts(const KernelSpec& k) {
        std::visit([&](const auto& kk) {
            using K = std::decay_t<decltype(kk)>;
            if constexpr (std::is_same_v<K, LinearKernel>) {
                a1 = 1.0;
            } else if constexpr (std::is_same_v<K, CombinationKernel>) {
                a1 = kk.alpha1;
                a2 = kk.alpha2;
                set_nonlinear(kk.nonlinear);
            } else {
                a2 = 1.0;
                set_nonlinear(ShiftInvariantKernel(kk));
            }
        }, k.kind());
    }

    void set_nonlinear(const ShiftInvariantKernel& nl) {
        if (const auto* g = std::get_if<GaussianKernel>(&nl)) {
            gaussian = true;
            param = g->sigma;
        } else {
            gaussian = false;
            param = std::get<ImqKernel>(nl).c;
        }
    }

    // phi(r2) and d phi / d r2
    std::pair<double, double> phi(double r2) const {
        if (gaussian) {
            const double s2 = param * param;
            const double v = std::exp(-r2 / (2.0 * s2));
            return {v, -v / (2.0 * s2)};
        }
        const double q = param * param + r2;
        const double v = param / std::sqrt(q);
        return {v, -0.5 * v / q};
    }
};

struct RffParts {
    double sqrt_a1 = 1.0;
    double sqrt_a2 = 0.0;
};

inline RffParts rff_parts(const KernelSpec& k) {
    KernelParts p(k);
    return {std::sqrt(p.a1), std::sqrt(p.a2)};
}

// Concatenated embeddings (columns) of one side under fixed RFF params.
inline Matrix side_embeddings(const SideParams& s, const RFFParams* params, const RffParts& rp) {
    const Index d = s.dim();
    const Index D = params ? params->num_features() : 0;
    Matrix e = Matrix::Zero(d + D, s.count());
    for (Index i = 0; i < s.count(); ++i) {
        const Matrix& P = s.points[static_cast<std::size_t>(i)];
        e.col(i).head(d) = rp.sqrt_a1 * (P * s.weights.col(i));
        if (D > 0 && rp.sqrt_a2 > 0.0) {
            for (Index a = 0; a < s.set_size(); ++a)
                e.col(i).tail(D) += rp.sqrt_a2 * s.weights(a, i) * featurize(*params, P.col(a));
        }
    }
    return e;
}

inline void require_rff(const EmbeddingModel& m, const RFFParams* params) {
    if (m.mode.kind != SimilarityMode::Rff) return;
    if (params == nullptr) throw InvalidInput("induced_table: rff mode requires rff params");
    detail::require_same_dim(params->input_dim(), m.x.dim(), "induced_table rff params");
}

}  // namespace detail

/// Raw similarities s(x_i, y_j) before the inverse temperature.
inline Matrix raw_similarities(const EmbeddingModel& m, const RFFParams* params = nullptr) {
    detail::require_same_dim(m.x.dim(), m.y.dim(), "model point dimension");
    if (m.mode.kind == SimilarityMode::Rff) {
        detail::require_rff(m, params);
        const auto rp = detail::rff_parts(m.kernel);
        return detail::side_embeddings(m.x, params, rp).transpose() * detail::side_embeddings(m.y, params, rp);
    }
    const detail::KernelParts kp(m.kernel);
    const Index d = m.x.dim();
    Matrix s = Matrix::Zero(m.x.count(), m.y.count());
    for (Index i = 0; i < m.x.count(); ++i) {
        const Matrix& P = m.x.points[static_cast<std::size_t>(i)];
        for (Index j = 0; j < m.y.count(); ++j) {
            const Matrix& Q = m.y.points[static_cast<std::size_t>(j)];
            double acc = 0.0;
            for (Index a = 0; a < m.x.set_size(); ++a)
                for (Index b = 0; b < m.y.set_size(); ++b) {
                    double dot = 0.0, r2 = 0.0;
                    for (Index k = 0; k < d; ++k) {
                        dot += P(k, a) * Q(k, b);
                        const double diff = P(k, a) - Q(k, b);
                        r2 += diff * diff;
                    }
                    double kv = kp.a1 * dot;
                    if (kp.a2 != 0.0) kv += kp.a2 * kp.phi(r2).first;
                    acc += m.x.weights(a, i) * m.y.weights(b, j) * kv;
                }
            s(i, j) = acc;
        }
    }
    return s;
}

/// g(x_i, y_j) = inv_temperature * similarity(x_set_i, y_set_j).
inline SimilarityTable induced_table(const EmbeddingModel& m, const RFFParams* params = nullptr) {
    return SimilarityTable(m.inv_temperature * raw_similarities(m, params));
}

/// Gradient of every model parameter, laid out like the model.
struct ModelGradient {
    double inv_temperature = 0.0;
    Matrix x_weights, y_weights;
    std::vector<Matrix> x_points, y_points;
};

/// Back-propagates dL/dg (n_x x n_y) through the induced table.
inline ModelGradient chain_gradient(const EmbeddingModel& m, const Matrix& table_grad, const RFFParams* params = nullptr) {
    detail::require(table_grad.rows() == m.x.count() && table_grad.cols() == m.y.count(),
                    "chain_gradient: table gradient shape");
    const Index d = m.x.dim();
    const double theta = m.inv_temperature;
    ModelGradient g;
    g.x_weights = Matrix::Zero(m.x.set_size(), m.x.count());
    g.y_weights = Matrix::Zero(m.y.set_size(), m.y.count());
    g.x_points.assign(static_cast<std::size_t>(m.x.count()), Matrix::Zero(d, m.x.set_size()));
    g.y_points.assign(static_cast<std::size_t>(m.y.count()), Matrix::Zero(d, m.y.set_size()));

    if (m.mode.kind == SimilarityMode::Rff) {
        detail::require_rff(m, params);
        const auto rp = detail::rff_parts(m.kernel);
        const Matrix ex = detail::side_embeddings(m.x, params, rp);
        const Matrix ey = detail::side_embeddings(m.y, params, rp);
        g.inv_temperature = table_grad.cwiseProduct(ex.transpose() * ey).sum();
        const Matrix dex = theta * ey * table_grad.transpose();  // (d+D) x n_x
        const Matrix dey = theta * ex * table_grad;              // (d+D) x n_y
        const Index D = params->num_features();
        auto back = [&](const SideParams& s, const Matrix& de, Matrix& gw, std::vector<Matrix>& gp) {
            for (Index i = 0; i < s.count(); ++i) {
                const Matrix& P = s.points[static_cast<std::size_t>(i)];
                const auto lin = de.col(i).head(d);
                const auto rf = de.col(i).tail(D);
                for (Index a = 0; a < s.set_size(); ++a) {
                    const double w = s.weights(a, i);
                    double dw = rp.sqrt_a1 * P.col(a).dot(lin);
                    Vector dv = rp.sqrt_a1 * w * lin;
                    if (rp.sqrt_a2 > 0.0) {
                        dw += rp.sqrt_a2 * featurize(*params, P.col(a)).dot(rf);
                        dv += rp.sqrt_a2 * w * featurize_jacobian(*params, P.col(a)).transpose() * rf;
                    }
                    gw(a, i) = dw;
                    gp[static_cast<std::size_t>(i)].col(a) = dv;
                }
            }
        };
        back(m.x, dex, g.x_weights, g.x_points);
        back(m.y, dey, g.y_weights, g.y_points);
        return g;
    }

    const detail::KernelParts kp(m.kernel);
    for (Index i = 0; i < m.x.count(); ++i) {
        const Matrix& P = m.x.points[static_cast<std::size_t>(i)];
        Matrix& GP = g.x_points[static_cast<std::size_t>(i)];
        for (Index j = 0; j < m.y.count(); ++j) {
            const double gij = table_grad(i, j);
            if (gij == 0.0) continue;
            const Matrix& Q = m.y.points[static_cast<std::size_t>(j)];
            Matrix& GQ = g.y_points[static_cast<std::size_t>(j)];
            for (Index a = 0; a < m.x.set_size(); ++a) {
                const double wa = m.x.weights(a, i);
                for (Index b = 0; b < m.y.set_size(); ++b) {
                    const double wb = m.y.weights(b, j);
                    double dot = 0.0, r2 = 0.0;
                    for (Index k = 0; k < d; ++k) {
                        dot += P(k, a) * Q(k, b);
                        const double diff = P(k, a) - Q(k, b);
                        r2 += diff * diff;
                    }
                    double kv = kp.a1 * dot, dphi = 0.0;
                    if (kp.a2 != 0.0) {
                        const auto [v, dv] = kp.phi(r2);
                        kv += kp.a2 * v;
                        dphi = kp.a2 * dv;
                    }
                    g.inv_temperature += gij * wa * wb * kv;
                    const double c = theta * gij;
                    g.x_weights(a, i) += c * wb * kv;
                    g.y_weights(b, j) += c * wa * kv;
                    const double cw = c * wa * wb;
                    for (Index k = 0; k < d; ++k) {
                        const double diff = P(k, a) - Q(k, b);
                        GP(k, a) += cw * (kp.a1 * Q(k, b) + 2.0 * dphi * diff);
                        GQ(k, b) += cw * (kp.a1 * P(k, a) - 2.0 * dphi * diff);
                    }
                }
            }
        }
    }
    return g;
}

// Flat parameter vector: [inv_temperature, x weights, x points, y weights, y points].
inline Vector pack(const EmbeddingModel& m) {
    Vector v(m.num_parameters());
    Index k = 0;
    v[k++] = m.inv_temperature;
    for (const SideParams* s : {&m.x, &m.y}) {
        for (Index i = 0; i < s->weights.size(); ++i) v[k++] = s->weights.data()[i];
        for (const Matrix& P : s->points)
            for (Index i = 0; i < P.size(); ++i) v[k++] = P.data()[i];
    }
    return v;
}

inline void unpack(EmbeddingModel& m, const Vector& v) {
    detail::require_same_dim(v.size(), m.num_parameters(), "unpack");
    Index k = 0;
    m.inv_temperature = v[k++];
    for (SideParams* s : {&m.x, &m.y}) {
        for (Index i = 0; i < s->weights.size(); ++i) s->weights.data()[i] = v[k++];
        for (Matrix& P : s->points)
            for (Index i = 0; i < P.size(); ++i) P.data()[i] = v[k++];
    }
}

inline Vector pack(const ModelGradient& g) {
    Index n = 1 + g.x_weights.size() + g.y_weights.size();
    for (const auto& P : g.x_points) n += P.size();
    for (const auto& P : g.y_points) n += P.size();
    Vector v(n);
    Index k = 0;
    v[k++] = g.inv_temperature;
    auto put = [&](const Matrix& w, const std::vector<Matrix>& pts) {
        for (Index i = 0; i < w.size(); ++i) v[k++] = w.data()[i];
        for (const Matrix& P : pts)
            for (Index i = 0; i < P.size(); ++i) v[k++] = P.data()[i];
    };
    put(g.x_weights, g.x_points);
    put(g.y_weights, g.y_points);
    return v;
}

/// Maps a table to (objective, d objective / d table).
using TableObjective = std::function<std::pair<double, Matrix>(const SimilarityTable&)>;

inline TableObjective population_objective(const DiscreteWorld& w) {
    return [&w](const SimilarityTable& g) { return std::make_pair(population_loss(g, w), population_grad(g, w)); };
}

/// Relative deviation ||analytic - numeric||_inf / ||numeric||_inf of the full
/// chain gradient against central differences on the raw parameters.
inline double chain_gradient_check(const EmbeddingModel& model, const TableObjective& objective,
                                   const RFFParams* params = nullptr, double step = 1e-5) {
    const auto [f0, table_grad] = objective(induced_table(model, params));
    (void)f0;
    const Vector analytic = pack(chain_gradient(model, table_grad, params));
    EmbeddingModel probe = model;
    const Vector base = pack(model);
    Vector numeric(base.size());
    for (Index k = 0; k < base.size(); ++k) {
        Vector v = base;
        const double h = step * std::max(1.0, std::abs(base[k]));
        v[k] = base[k] + h;
        unpack(probe, v);
        const double fp = objective(induced_table(probe, params)).first;
        v[k] = base[k] - h;
        unpack(probe, v);
        const double fm = objective(induced_table(probe, params)).first;
        numeric[k] = (fp - fm) / (2.0 * h);
    }
    const double scale = numeric.lpNorm<Eigen::Infinity>();
    return (analytic - numeric).lpNorm<Eigen::Infinity>() / std::max(scale, 1e-300);
}

struct TrainConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    long steps = 3000;
    std::uint64_t seed = 0;
    Index m_x = 4;
    Index m_y = 4;
    Index d = 2;
    KernelSpec kernel = KernelSpec::combination(0.5, 0.5, GaussianKernel{1.0});
    ModelMode mode;
    double weight_clip = 100.0;
    double init_inv_temperature = 10.0;
    bool learn_weights = true;
    bool learn_temperature = true;
    Index batch_size = 0;  // 0: exact population objective; otherwise minibatches drawn from p(x, y)
    Index eval_features = kDefaultEvalFeatures;
    bool grad_check = true;
    long trace_every = 1;

    /// One unit-norm point per instance, unit weights, linear kernel.
    static TrainConfig baseline(Index d = 2) {
        TrainConfig c;
        c.m_x = c.m_y = 1;
        c.d = d;
        c.kernel = KernelSpec::linear();
        c.learn_weights = false;
        return c;
    }
};

struct TrainReport {
    double final_loss = 0.0;
    double optimum = 0.0;  // -I(X; Y)
    double delta = 0.0;
    ExcessReport excess;
    std::vector<double> loss_trace;
    double grad_check = 0.0;
    long grad_check_step = -1;
    long temperature_clip_hits = 0;
    std::uint64_t eval_seed = 0;
};

struct FitResult {
    EmbeddingModel model;
    TrainReport report;
    std::optional<RFFParams> eval_params;  // fixed features used for evaluation in rff mode
    SimilarityTable table;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline void normalize_columns(Matrix& P) {
    for (Index a = 0; a < P.cols(); ++a) {
        const double n = P.col(a).norm();
        if (n > 0.0) {
            P.col(a) /= n;
        } else {
            P.col(a).setZero();
            P(0, a) = 1.0;
        }
    }
}

inline SideParams init_side(Index count, Index m, Index d, bool learn_weights, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    SideParams s;
    s.weights.resize(m, count);
    for (Index i = 0; i < s.weights.size(); ++i)
        s.weights.data()[i] = learn_weights ? normal(rng) / std::sqrt(static_cast<double>(m)) : 1.0;
    s.points.resize(static_cast<std::size_t>(count));
    for (Matrix& P : s.points) {
        P.resize(d, m);
        for (Index i = 0; i < P.size(); ++i) P.data()[i] = normal(rng);
        normalize_columns(P);
    }
    return s;
}

}  // namespace detail

/// Unit-norm points, clipped weights and inverse temperature. Returns whether the
/// temperature clip was active.
inline bool project(EmbeddingModel& m, double weight_clip) {
    for (SideParams* s : {&m.x, &m.y}) {
        for (Matrix& P : s->points) detail::normalize_columns(P);
        s->weights = s->weights.cwiseMax(-weight_clip).cwiseMin(weight_clip);
    }
    const double clipped = std::clamp(m.inv_temperature, kMinInvTemperature, kMaxInvTemperature);
    const bool hit = clipped != m.inv_temperature;
    m.inv_temperature = clipped;
    return hit;
}

inline EmbeddingModel init_model(Index n_x, Index n_y, const TrainConfig& cfg, std::mt19937_64& rng) {
    detail::require(cfg.m_x >= 1 && cfg.m_y >= 1 && cfg.d >= 1, "train config: M_x, M_y, d must be >= 1");
    EmbeddingModel m;
    m.kernel = cfg.kernel;
    m.mode = cfg.mode;
    m.inv_temperature = std::clamp(cfg.init_inv_temperature, kMinInvTemperature, kMaxInvTemperature);
    m.x = detail::init_side(n_x, cfg.m_x, cfg.d, cfg.learn_weights, rng);
    m.y = detail::init_side(n_y, cfg.m_y, cfg.d, cfg.learn_weights, rng);
    return m;
}

inline void validate(const TrainConfig& cfg) {
    detail::require(cfg.steps > 0, "train config: steps must be positive");
    detail::require(cfg.learning_rate > 0.0, "train config: learning rate must be positive");
    detail::require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, "train config: momentum must lie in [0, 1)");
    detail::require(cfg.weight_clip > 0.0, "train config: weight clip must be positive");
    detail::require(cfg.trace_every >= 1, "train config: trace_every must be >= 1");
    if (cfg.mode.kind == SimilarityMode::Rff)
        detail::require(cfg.mode.num_features >= 1 && cfg.eval_features >= 1, "train config: D must be >= 1");
}

namespace detail {

// Kernel used for RFF sampling; linear-only models get an unused Gaussian.
inline ShiftInvariantKernel rff_kernel(const KernelSpec& k) {
    if (std::holds_alternative<LinearKernel>(k.kind())) return GaussianKernel{1.0};
    return nonlinear_part(k);
}

}  // namespace detail

/// Projected (momentum) gradient descent of an objective over the induced table.
///
/// `objective_for_step` returns the objective for a given step (minibatch draws
/// vary per step); `monitor` is the deterministic quantity recorded in the trace.
struct DescentOutcome {
    EmbeddingModel model;
    std::vector<double> trace;
    double grad_check = 0.0;
    long grad_check_step = -1;
    long temperature_clip_hits = 0;
};

inline DescentOutcome projected_descent(EmbeddingModel model, const TrainConfig& cfg,
                                        const std::function<TableObjective(long, std::mt19937_64&)>& objective_for_step,
                                        std::mt19937_64& rng) {
    DescentOutcome out;
    Vector velocity = Vector::Zero(model.num_parameters());
    std::optional<RFFParams> params;
    const bool rff = model.mode.kind == SimilarityMode::Rff;
    const auto nl = detail::rff_kernel(model.kernel);
    const long check_step = cfg.grad_check ? std::uniform_int_distribution<long>(0, cfg.steps - 1)(rng) : -1;

    project(model, cfg.weight_clip);
    for (long step = 0; step < cfg.steps; ++step) {
        if (rff && (!params || model.mode.resample == ResampleMode::PerStep))
            params = spectral_sample(nl, cfg.d, model.mode.num_features, detail::splitmix64(cfg.seed ^ (0xA5A5ULL + step)));
        const RFFParams* pp = params ? &*params : nullptr;
        const TableObjective objective = objective_for_step(step, rng);
        const auto [loss, table_grad] = objective(induced_table(model, pp));
        if (!std::isfinite(loss) || !table_grad.allFinite())
            throw DivergenceError("training diverged: non-finite loss at step " + std::to_string(step), step);
        if (step % cfg.trace_every == 0) out.trace.push_back(loss);
        if (step == check_step) {
            out.grad_check = chain_gradient_check(model, objective, pp);
            out.grad_check_step = step;
        }

        ModelGradient grad = chain_gradient(model, table_grad, pp);
        if (!cfg.learn_weights) {
            grad.x_weights.setZero();
            grad.y_weights.setZero();
        }
        if (!cfg.learn_temperature) grad.inv_temperature = 0.0;
        velocity = cfg.momentum * velocity - cfg.learning_rate * pack(grad);
        unpack(model, pack(model) + velocity);
        if (project(model, cfg.weight_clip)) ++out.temperature_clip_hits;
    }
    out.model = std::move(model);
    return out;
}

/// Symmetric-InfoNCE training of free-parameter point sets on a world.
inline FitResult fit(const DiscreteWorld& world, const SubsetPartition& partition, const TrainConfig& cfg) {
    validate(cfg);
    std::mt19937_64 rng(cfg.seed);
    EmbeddingModel model = init_model(world.n_x(), world.n_y(), cfg, rng);

    std::function<TableObjective(long, std::mt19937_64&)> objective_for_step;
    if (cfg.batch_size == 0) {
        const TableObjective pop = population_objective(world);
        objective_for_step = [pop](long, std::mt19937_64&) { return pop; };
    } else {
        // Minibatch: pairs drawn i.i.d. from p(x, y); the batch gradient is scattered back onto table cells.
        std::vector<double> flat(static_cast<std::size_t>(world.joint().size()));
        for (Index i = 0; i < world.n_x(); ++i)
            for (Index j = 0; j < world.n_y(); ++j)
                flat[static_cast<std::size_t>(i * world.n_y() + j)] = world.joint()(i, j);
        const Index B = cfg.batch_size;
        const Index ny = world.n_y();
        objective_for_step = [flat = std::move(flat), B, ny](long, std::mt19937_64& r) -> TableObjective {
            std::discrete_distribution<std::size_t> pick(flat.begin(), flat.end());
            std::vector<Index> xs(static_cast<std::size_t>(B)), ys(static_cast<std::size_t>(B));
            for (Index b = 0; b < B; ++b) {
                const auto cell = static_cast<Index>(pick(r));
                xs[static_cast<std::size_t>(b)] = cell / ny;
                ys[static_cast<std::size_t>(b)] = cell % ny;
            }
            return [xs, ys, B](const SimilarityTable& g) {
                Matrix S(B, B);
                for (Index a = 0; a < B; ++a)
                    for (Index b = 0; b < B; ++b) S(a, b) = g(xs[static_cast<std::size_t>(a)], ys[static_cast<std::size_t>(b)]);
                const Matrix dS = empirical_grad(S);
                Matrix grad = Matrix::Zero(g.rows(), g.cols());
                for (Index a = 0; a < B; ++a)
                    for (Index b = 0; b < B; ++b)
                        grad(xs[static_cast<std::size_t>(a)], ys[static_cast<std::size_t>(b)]) += dS(a, b);
                return std::make_pair(empirical_loss(S), grad);
            };
        };
    }

    DescentOutcome run = projected_descent(std::move(model), cfg, objective_for_step, rng);

    FitResult res;
    res.model = std::move(run.model);
    if (res.model.mode.kind == SimilarityMode::Rff) {
        res.report.eval_seed = detail::splitmix64(cfg.seed ^ 0xE7A1ULL);
        res.eval_params = spectral_sample(detail::rff_kernel(res.model.kernel), cfg.d, cfg.eval_features, res.report.eval_seed);
    }
    res.table = induced_table(res.model, res.eval_params ? &*res.eval_params : nullptr);
    TrainReport& rep = res.report;
    rep.loss_trace = std::move(run.trace);
    rep.grad_check = run.grad_check;
    rep.grad_check_step = run.grad_check_step;
    rep.temperature_clip_hits = run.temperature_clip_hits;
    rep.final_loss = population_loss(res.table, world);
    if (!std::isfinite(rep.final_loss)) throw DivergenceError("training diverged: non-finite final loss", cfg.steps);
    rep.optimum = -mutual_information(world);
    rep.excess = excess_risk(res.table, world, partition);
    rep.delta = rep.excess.delta;
    return res;
}

// Serialization -------------------------------------------------------------

inline void to_json(nlohmann::json& j, const ModelMode& m) {
    j = {{"kind", m.kind == SimilarityMode::Exact ? "exact" : "rff"},
         {"D", m.num_features},
         {"resample_each_step", m.resample == ResampleMode::PerStep}};
}

inline void from_json(const nlohmann::json& j, ModelMode& m) {
    detail::reject_unknown_keys(j, {"kind", "D", "resample_each_step"}, "mode");
    const auto kind = j.value("kind", std::string("exact"));
    detail::require(kind == "exact" || kind == "rff", "mode: kind must be exact or rff");
    m.kind = kind == "exact" ? SimilarityMode::Exact : SimilarityMode::Rff;
    m.num_features = j.value("D", kDefaultTrainFeatures);
    m.resample = j.value("resample_each_step", true) ? ResampleMode::PerStep : ResampleMode::Fixed;
}

inline void to_json(nlohmann::json& j, const EmbeddingModel& m) {
    std::vector<nlohmann::json> xs, ys;
    for (Index i = 0; i < m.x.count(); ++i) xs.emplace_back(m.x.set(i));
    for (Index i = 0; i < m.y.count(); ++i) ys.emplace_back(m.y.set(i));
    j = {{"kernel", m.kernel}, {"inv_temperature", m.inv_temperature}, {"mode", m.mode}, {"x_sets", xs}, {"y_sets", ys}};
}

inline void from_json(const nlohmann::json& j, EmbeddingModel& m) {
    detail::reject_unknown_keys(j, {"kernel", "inv_temperature", "mode", "x_sets", "y_sets"}, "model");
    m.kernel = j.at("kernel").get<KernelSpec>();
    m.inv_temperature = j.at("inv_temperature").get<double>();
    m.mode = j.at("mode").get<ModelMode>();
    auto side = [](const nlohmann::json& arr) {
        SideParams s;
        const auto sets = arr.get<std::vector<WeightedPointSet>>();
        detail::require(!sets.empty(), "model: empty side");
        const Index M = sets.front().size();
        s.weights.resize(M, static_cast<Index>(sets.size()));
        for (std::size_t i = 0; i < sets.size(); ++i) {
            detail::require_same_dim(sets[i].size(), M, "model set size");
            s.weights.col(static_cast<Index>(i)) = sets[i].weights();
            s.points.push_back(sets[i].points());
        }
        return s;
    };
    m.x = side(j.at("x_sets"));
    m.y = side(j.at("y_sets"));
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"learning_rate", c.learning_rate},
         {"momentum", c.momentum},
         {"steps", c.steps},
         {"seed", c.seed},
         {"M_x", c.m_x},
         {"M_y", c.m_y},
         {"d", c.d},
         {"kernel", c.kernel},
         {"mode", c.mode},
         {"weight_clip", c.weight_clip},
         {"init_inv_temperature", c.init_inv_temperature},
         {"learn_weights", c.learn_weights},
         {"learn_temperature", c.learn_temperature},
         {"batch_size", c.batch_size},
         {"eval_features", c.eval_features},
         {"grad_check", c.grad_check},
         {"trace_every", c.trace_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    detail::reject_unknown_keys(j, {"learning_rate", "momentum", "steps", "seed", "M_x", "M_y", "d", "kernel", "mode",
                                    "weight_clip", "init_inv_temperature", "learn_weights", "learn_temperature",
                                    "batch_size", "eval_features", "grad_check", "trace_every"},
                                "train config");
    TrainConfig d;
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.momentum = j.value("momentum", d.momentum);
    c.steps = j.value("steps", d.steps);
    c.seed = j.value("seed", d.seed);
    c.m_x = j.value("M_x", d.m_x);
    c.m_y = j.value("M_y", d.m_y);
    c.d = j.value("d", d.d);
    c.kernel = j.contains("kernel") ? j.at("kernel").get<KernelSpec>() : d.kernel;
    c.mode = j.contains("mode") ? j.at("mode").get<ModelMode>() : d.mode;
    c.weight_clip = j.value("weight_clip", d.weight_clip);
    c.init_inv_temperature = j.value("init_inv_temperature", d.init_inv_temperature);
    c.learn_weights = j.value("learn_weights", d.learn_weights);
    c.learn_temperature = j.value("learn_temperature", d.learn_temperature);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.eval_features = j.value("eval_features", d.eval_features);
    c.grad_check = j.value("grad_check", d.grad_check);
    c.trace_every = j.value("trace_every", d.trace_every);
    validate(c);
}

inline void to_json(nlohmann::json& j, const TrainReport& r) {
    j = {{"final_loss", r.final_loss},
         {"optimum", r.optimum},
         {"delta", r.delta},
         {"excess", r.excess},
         {"grad_check", r.grad_check},
         {"grad_check_step", r.grad_check_step},
         {"temperature_clip_hits", r.temperature_clip_hits},
         {"eval_seed", r.eval_seed},
         {"trace_length", r.loss_trace.size()}};
}

}  // namespace wpse
