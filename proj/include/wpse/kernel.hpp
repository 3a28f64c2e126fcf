#pragma once

#include "wpse/common.hpp"

#include <json.hpp>

#include <array>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace wpse {

struct LinearKernel {};

struct GaussianKernel {
    double sigma = 1.0;
};

/// Inverse multiquadric c / sqrt(c^2 + |u-v|^2); equals 1 on the diagonal.
struct ImqKernel {
    double c = 1.0;
};

using ShiftInvariantKernel = std::variant<GaussianKernel, ImqKernel>;

/// alpha1 * <u,v> + alpha2 * k~(u,v) with k~ shift invariant.
struct CombinationKernel {
    double alpha1 = 0.5;
    double alpha2 = 0.5;
    ShiftInvariantKernel nonlinear = GaussianKernel{};
};

class KernelSpec {
public:
    using Kind = std::variant<LinearKernel, GaussianKernel, ImqKernel, CombinationKernel>;

    KernelSpec() : kind_(LinearKernel{}) {}

    static KernelSpec linear() { return KernelSpec(LinearKernel{}); }

    static KernelSpec gaussian(double sigma) {
        detail::require(sigma > 0.0 && std::isfinite(sigma), "gaussian kernel: sigma must be positive");
        return KernelSpec(GaussianKernel{sigma});
    }

    static KernelSpec imq(double c) {
        detail::require(c > 0.0 && std::isfinite(c), "imq kernel: c must be positive");
        return KernelSpec(ImqKernel{c});
    }

    static KernelSpec combination(double alpha1, double alpha2, ShiftInvariantKernel nonlinear) {
        detail::require(alpha1 >= 0.0 && alpha2 >= 0.0, "combination kernel: alphas must be nonnegative");
        detail::require(alpha1 + alpha2 > 0.0, "combination kernel: alpha1 + alpha2 must be positive");
        std::visit([](const auto& k) {
            if constexpr (std::is_same_v<std::decay_t<decltype(k)>, GaussianKernel>)
                detail::require(k.sigma > 0.0, "gaussian kernel: sigma must be positive");
            else
                detail::require(k.c > 0.0, "imq kernel: c must be positive");
        }, nonlinear);
        return KernelSpec(CombinationKernel{alpha1, alpha2, nonlinear});
    }

    const Kind& kind() const noexcept { return kind_; }

    bool is_shift_invariant() const noexcept {
        return std::holds_alternative<GaussianKernel>(kind_) || std::holds_alternative<ImqKernel>(kind_);
    }

    std::string name() const;

private:
    explicit KernelSpec(Kind k) : kind_(std::move(k)) {}
    Kind kind_;
};

namespace detail {

inline double eval_shift_invariant(const ShiftInvariantKernel& k, double sq_dist) {
    return std::visit([&](const auto& kk) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(kk)>, GaussianKernel>)
            return std::exp(-sq_dist / (2.0 * kk.sigma * kk.sigma));
        else
            return kk.c / std::sqrt(kk.c * kk.c + sq_dist);
    }, k);
}

// d k(u,v) / du = factor * (u - v); returns factor.
inline double shift_invariant_grad_factor(const ShiftInvariantKernel& k, double sq_dist) {
    return std::visit([&](const auto& kk) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(kk)>, GaussianKernel>) {
            const double s2 = kk.sigma * kk.sigma;
            return -std::exp(-sq_dist / (2.0 * s2)) / s2;
        } else {
            const double q = kk.c * kk.c + sq_dist;
            return -kk.c / (q * std::sqrt(q));
        }
    }, k);
}

}  // namespace detail

/// Kernel value k(u, v).
template <typename U, typename V>
double eval(const KernelSpec& kernel, const Eigen::MatrixBase<U>& u, const Eigen::MatrixBase<V>& v) {
    detail::require_same_dim(u.size(), v.size(), "kernel eval");
    return std::visit([&](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, LinearKernel>) {
            return u.dot(v);
        } else if constexpr (std::is_same_v<K, CombinationKernel>) {
            return k.alpha1 * u.dot(v) + k.alpha2 * detail::eval_shift_invariant(k.nonlinear, (u - v).squaredNorm());
        } else {
            return detail::eval_shift_invariant(ShiftInvariantKernel(k), (u - v).squaredNorm());
        }
    }, kernel.kind());
}

/// Gradient of k(u, v) with respect to its first argument.
template <typename U, typename V>
Vector grad_first(const KernelSpec& kernel, const Eigen::MatrixBase<U>& u, const Eigen::MatrixBase<V>& v) {
    detail::require_same_dim(u.size(), v.size(), "kernel gradient");
    return std::visit([&](const auto& k) -> Vector {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, LinearKernel>) {
            return v;
        } else if constexpr (std::is_same_v<K, CombinationKernel>) {
            const Vector diff = u - v;
            return k.alpha1 * v + k.alpha2 * detail::shift_invariant_grad_factor(k.nonlinear, diff.squaredNorm()) * diff;
        } else {
            const Vector diff = u - v;
            return detail::shift_invariant_grad_factor(ShiftInvariantKernel(k), diff.squaredNorm()) * diff;
        }
    }, kernel.kind());
}

/// Gram matrix between the columns of U (d x n) and the columns of V (d x m).
inline Matrix gram(const KernelSpec& kernel, const Matrix& U, const Matrix& V) {
    detail::require_same_dim(U.rows(), V.rows(), "gram");
    Matrix out(U.cols(), V.cols());
    for (Index i = 0; i < U.cols(); ++i)
        for (Index j = 0; j < V.cols(); ++j) out(i, j) = eval(kernel, U.col(i), V.col(j));
    return out;
}

inline Matrix gram(const KernelSpec& kernel, const std::vector<Vector>& U, const std::vector<Vector>& V) {
    Matrix out(static_cast<Index>(U.size()), static_cast<Index>(V.size()));
    for (std::size_t i = 0; i < U.size(); ++i)
        for (std::size_t j = 0; j < V.size(); ++j)
            out(static_cast<Index>(i), static_cast<Index>(j)) = eval(kernel, U[i], V[j]);
    return out;
}

// Hyperparameter grids used for the image-text experiments.
namespace presets {
inline constexpr std::array<double, 3> kBandwidths = {0.5, 0.75, 1.0};
inline constexpr std::array<std::pair<double, double>, 5> kAlphaPairs = {{
    {0.667, 0.333}, {0.6, 0.4}, {0.5, 0.5}, {0.4, 0.6}, {0.333, 0.667}}};

inline std::vector<KernelSpec> gaussian_combinations() {
    std::vector<KernelSpec> out;
    for (auto [a1, a2] : kAlphaPairs)
        for (double s : kBandwidths) out.push_back(KernelSpec::combination(a1, a2, GaussianKernel{s}));
    return out;
}

inline std::vector<KernelSpec> imq_combinations() {
    std::vector<KernelSpec> out;
    for (auto [a1, a2] : kAlphaPairs)
        for (double c : kBandwidths) out.push_back(KernelSpec::combination(a1, a2, ImqKernel{c}));
    return out;
}
}  // namespace presets

// JSON ----------------------------------------------------------------------

namespace detail {

inline nlohmann::json shift_invariant_to_json(const ShiftInvariantKernel& k) {
    return std::visit([](const auto& kk) -> nlohmann::json {
        if constexpr (std::is_same_v<std::decay_t<decltype(kk)>, GaussianKernel>)
            return {{"kind", "gaussian"}, {"sigma", kk.sigma}};
        else
            return {{"kind", "imq"}, {"c", kk.c}};
    }, k);
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const KernelSpec& k) {
    j = std::visit([](const auto& kk) -> nlohmann::json {
        using K = std::decay_t<decltype(kk)>;
        if constexpr (std::is_same_v<K, LinearKernel>) {
            return {{"kind", "linear"}};
        } else if constexpr (std::is_same_v<K, CombinationKernel>) {
            return {{"kind", "combination"},
                    {"alpha1", kk.alpha1},
                    {"alpha2", kk.alpha2},
                    {"nonlinear", detail::shift_invariant_to_json(kk.nonlinear)}};
        } else {
            return detail::shift_invariant_to_json(ShiftInvariantKernel(kk));
        }
    }, k.kind());
}

inline void from_json(const nlohmann::json& j, KernelSpec& k) {
    if (!j.is_object() || !j.contains("kind")) throw InvalidInput("kernel: expected object with \"kind\"");
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "linear") {
        detail::reject_unknown_keys(j, {"kind"}, "kernel");
        k = KernelSpec::linear();
    } else if (kind == "gaussian") {
        detail::reject_unknown_keys(j, {"kind", "sigma"}, "kernel");
        k = KernelSpec::gaussian(j.at("sigma").get<double>());
    } else if (kind == "imq") {
        detail::reject_unknown_keys(j, {"kind", "c"}, "kernel");
        k = KernelSpec::imq(j.at("c").get<double>());
    } else if (kind == "combination") {
        detail::reject_unknown_keys(j, {"kind", "alpha1", "alpha2", "nonlinear"}, "kernel");
        KernelSpec nl;
        from_json(j.at("nonlinear"), nl);
        ShiftInvariantKernel inner;
        if (const auto* g = std::get_if<GaussianKernel>(&nl.kind()))
            inner = *g;
        else if (const auto* m = std::get_if<ImqKernel>(&nl.kind()))
            inner = *m;
        else
            throw InvalidInput("kernel: combination nonlinear part must be gaussian or imq");
        k = KernelSpec::combination(j.at("alpha1").get<double>(), j.at("alpha2").get<double>(), inner);
    } else {
        throw InvalidInput("kernel: unknown kind '" + kind + "'");
    }
}

inline std::string KernelSpec::name() const {
    nlohmann::json j = *this;
    return j.dump();
}

}  // namespace wpse
