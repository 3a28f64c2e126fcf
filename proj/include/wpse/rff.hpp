#pragma once

#include "wpse/common.hpp"
#include "wpse/kernel.hpp"

#include <json.hpp>

#include <cstdint>
#include <numbers>
#include <random>

namespace wpse {

/// Random Fourier features for a shift-invariant kernel.
///
/// Frequencies and phases are a pure function of (kernel, d, D, seed); they are
/// never serialized, only regenerated.
struct RFFParams {
    Matrix omegas;  // D x d
    Vector betas;   // D, each in [0, 2*pi)
    KernelSpec kernel;
    std::uint64_t seed = 0;

    Index num_features() const noexcept { return omegas.rows(); }
    Index input_dim() const noexcept { return omegas.cols(); }
};

/// Training resamples features every step; evaluation keeps them fixed.
enum class ResampleMode { PerStep, Fixed };

inline constexpr Index kDefaultTrainFeatures = 1024;
inline constexpr Index kDefaultEvalFeatures = 512;

/// The shift-invariant part of a kernel: the kernel itself for Gaussian/IMQ, the
/// nonlinear member of a combination. Linear kernels have none.
inline ShiftInvariantKernel nonlinear_part(const KernelSpec& kernel) {
    if (const auto* g = std::get_if<GaussianKernel>(&kernel.kind())) return *g;
    if (const auto* m = std::get_if<ImqKernel>(&kernel.kind())) return *m;
    if (const auto* c = std::get_if<CombinationKernel>(&kernel.kind())) return c->nonlinear;
    throw InvalidInput("linear kernel has no shift-invariant part");
}

inline KernelSpec as_kernel(const ShiftInvariantKernel& k) {
    if (const auto* g = std::get_if<GaussianKernel>(&k)) return KernelSpec::gaussian(g->sigma);
    return KernelSpec::imq(std::get<ImqKernel>(k).c);
}

/// Draw D frequencies from the kernel's spectral density and D uniform phases.
///
/// Gaussian(sigma): omega ~ N(0, sigma^-2 I).
/// IMQ(c): t ~ Gamma(shape 1/2, rate c^2), omega | t ~ N(0, 2t I). The Laplace
/// transform of that Gamma gives E[exp(-t r^2)] = c / sqrt(c^2 + r^2).
inline RFFParams spectral_sample(const KernelSpec& kernel, Index d, Index D, std::uint64_t seed) {
    detail::require(kernel.is_shift_invariant(),
                    "spectral_sample: kernel must be gaussian or imq, got " + kernel.name());
    detail::require(d >= 1 && D >= 1, "spectral_sample: d and D must be >= 1");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

    RFFParams p;
    p.kernel = kernel;
    p.seed = seed;
    p.omegas.resize(D, d);
    p.betas.resize(D);

    if (const auto* g = std::get_if<GaussianKernel>(&kernel.kind())) {
        for (Index t = 0; t < D; ++t)
            for (Index k = 0; k < d; ++k) p.omegas(t, k) = normal(rng) / g->sigma;
    } else {
        const double c = std::get<ImqKernel>(kernel.kind()).c;
        std::gamma_distribution<double> gamma(0.5, 1.0 / (c * c));
        for (Index t = 0; t < D; ++t) {
            const double scale = std::sqrt(2.0 * gamma(rng));
            for (Index k = 0; k < d; ++k) p.omegas(t, k) = scale * normal(rng);
        }
    }
    for (Index t = 0; t < D; ++t) {
        double b = phase(rng);
        // uniform_real_distribution may round up to its upper bound.
        if (b >= 2.0 * std::numbers::pi) b = 0.0;
        p.betas[t] = b;
    }
    return p;
}

inline RFFParams spectral_sample(const ShiftInvariantKernel& kernel, Index d, Index D, std::uint64_t seed) {
    return spectral_sample(as_kernel(kernel), d, D, seed);
}

/// z(v) = sqrt(2/D) cos(Omega v + beta).
template <typename V>
Vector featurize(const RFFParams& params, const Eigen::MatrixBase<V>& v) {
    detail::require_same_dim(v.size(), params.input_dim(), "featurize");
    const double scale = std::sqrt(2.0 / static_cast<double>(params.num_features()));
    return scale * ((params.omegas * v).array() + params.betas.array()).cos().matrix();
}

/// Jacobian dz/dv, D x d.
template <typename V>
Matrix featurize_jacobian(const RFFParams& params, const Eigen::MatrixBase<V>& v) {
    detail::require_same_dim(v.size(), params.input_dim(), "featurize_jacobian");
    const double scale = std::sqrt(2.0 / static_cast<double>(params.num_features()));
    const Vector s = -scale * ((params.omegas * v).array() + params.betas.array()).sin().matrix();
    return s.asDiagonal() * params.omegas;
}

template <typename U, typename V>
double estimate_kernel(const RFFParams& params, const Eigen::MatrixBase<U>& u, const Eigen::MatrixBase<V>& v) {
    detail::require_same_dim(u.size(), v.size(), "estimate_kernel");
    return featurize(params, u).dot(featurize(params, v));
}

inline void to_json(nlohmann::json& j, const RFFParams& p) {
    j = {{"seed", p.seed}, {"D", p.num_features()}, {"d", p.input_dim()}, {"kernel", p.kernel}};
}

inline void from_json(const nlohmann::json& j, RFFParams& p) {
    detail::reject_unknown_keys(j, {"seed", "D", "d", "kernel"}, "rff params");
    p = spectral_sample(j.at("kernel").get<KernelSpec>(), j.at("d").get<Index>(), j.at("D").get<Index>(),
                        j.at("seed").get<std::uint64_t>());
}

}  // namespace wpse
