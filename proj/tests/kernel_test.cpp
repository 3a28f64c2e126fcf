#include "wpse/kernel.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace wpse;

namespace {

std::vector<KernelSpec> all_kinds() {
    return {KernelSpec::linear(), KernelSpec::gaussian(0.75), KernelSpec::imq(0.5),
            KernelSpec::combination(0.5, 0.5, GaussianKernel{1.0}), KernelSpec::combination(0.4, 0.6, ImqKernel{0.75})};
}

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

}  // namespace

TEST(Kernel, GaussianIdentityIsOne) {
    const auto k = KernelSpec::gaussian(1.0);
    std::mt19937_64 rng(1);
    for (int t = 0; t < 10; ++t) {
        const Vector v = oracle::random_matrix(rng, 5, 1, 3.0);
        EXPECT_EQ(eval(k, v, v), 1.0);
    }
}

TEST(Kernel, LinearOrthogonalIsZero) {
    EXPECT_EQ(eval(KernelSpec::linear(), vec({1, 0}), vec({0, 1})), 0.0);
}

TEST(Kernel, GaussianClosedForm) {
    EXPECT_NEAR(eval(KernelSpec::gaussian(1.0), vec({1, 0}), vec({0, 1})), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(std::exp(-1.0), 0.367879, 1e-6);
}

TEST(Kernel, ImqClosedForm) {
    // c / sqrt(c^2 + r^2) with c = 0.5, r^2 = 2
    EXPECT_NEAR(eval(KernelSpec::imq(0.5), vec({1, 0}), vec({0, 1})), 0.5 / std::sqrt(2.25), 1e-15);
    EXPECT_DOUBLE_EQ(eval(KernelSpec::imq(0.5), vec({3, 4}), vec({3, 4})), 1.0);
}

TEST(Kernel, CombinationOnUnitDiagonal) {
    const auto k = KernelSpec::combination(0.5, 0.5, GaussianKernel{1.0});
    const Vector v = vec({0.6, 0.8});
    EXPECT_NEAR(eval(k, v, v), 1.0, 1e-15);
}

TEST(Kernel, DimensionMismatchThrows) {
    for (const auto& k : all_kinds()) EXPECT_THROW(eval(k, vec({1, 2}), vec({1, 2, 3})), DimensionMismatch);
    EXPECT_THROW(gram(KernelSpec::linear(), Matrix::Zero(2, 3), Matrix::Zero(3, 3)), DimensionMismatch);
}

TEST(Kernel, InvalidParametersRejected) {
    EXPECT_THROW(KernelSpec::gaussian(0.0), InvalidInput);
    EXPECT_THROW(KernelSpec::imq(-1.0), InvalidInput);
    EXPECT_THROW(KernelSpec::combination(-0.1, 1.0, GaussianKernel{1.0}), InvalidInput);
    EXPECT_THROW(KernelSpec::combination(0.0, 0.0, GaussianKernel{1.0}), InvalidInput);
    EXPECT_THROW(KernelSpec::combination(0.5, 0.5, ImqKernel{0.0}), InvalidInput);
}

TEST(Kernel, GramSingletonAndSymmetry) {
    const Matrix one = Matrix::Constant(3, 1, 0.2);
    const Matrix g1 = gram(KernelSpec::gaussian(1.0), one, one);
    ASSERT_EQ(g1.rows(), 1);
    EXPECT_EQ(g1(0, 0), 1.0);

    std::mt19937_64 rng(2);
    const Matrix U = oracle::random_matrix(rng, 4, 3);
    for (const auto& k : all_kinds()) {
        const Matrix g = gram(k, U, U);
        EXPECT_EQ((g - g.transpose()).cwiseAbs().maxCoeff(), 0.0) << k.name();
    }
}

TEST(Kernel, GaussianGramIsPsd) {
    std::mt19937_64 rng(3);
    Matrix U(6, 10);
    for (Index i = 0; i < 10; ++i) U.col(i) = oracle::random_unit(rng, 6);
    const Matrix g = gram(KernelSpec::gaussian(0.75), U, U);
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(g).eigenvalues();
    EXPECT_GE(ev.minCoeff(), -1e-10);
}

TEST(Kernel, PsdForAllKindsOnRandomCollections) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 3 + trial % 12;
        const Matrix U = oracle::random_matrix(rng, 1 + trial % 5, n, 1.5);
        for (const auto& k : all_kinds()) {
            const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(gram(k, U, U)).eigenvalues();
            EXPECT_GE(ev.minCoeff(), -1e-8 * std::max(ev.maxCoeff(), 0.0)) << k.name();
        }
    }
}

TEST(Kernel, SymmetryProperty) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 200; ++t) {
        const Vector u = oracle::random_matrix(rng, 3, 1, 2.0), v = oracle::random_matrix(rng, 3, 1, 2.0);
        for (const auto& k : all_kinds()) EXPECT_EQ(eval(k, u, v), eval(k, v, u));
    }
}

TEST(Kernel, ShiftInvariantBoundedAndMonotone) {
    const Vector origin = Vector::Zero(2);
    for (const auto& k : {KernelSpec::gaussian(0.5), KernelSpec::imq(1.0)}) {
        double prev = 2.0;
        for (int s = 0; s <= 50; ++s) {
            Vector v = Vector::Zero(2);
            v[0] = 0.1 * s;
            const double val = eval(k, origin, v);
            EXPECT_LE(std::abs(val), 1.0);
            EXPECT_LT(val, prev);
            prev = val;
        }
    }
}

TEST(Kernel, CombinationEndpointsReduceExactly) {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 50; ++t) {
        const Vector u = oracle::random_matrix(rng, 4, 1), v = oracle::random_matrix(rng, 4, 1);
        EXPECT_EQ(eval(KernelSpec::combination(1.0, 0.0, GaussianKernel{0.5}), u, v), eval(KernelSpec::linear(), u, v));
        EXPECT_EQ(eval(KernelSpec::combination(0.0, 1.0, GaussianKernel{0.5}), u, v),
                  eval(KernelSpec::gaussian(0.5), u, v));
        EXPECT_EQ(eval(KernelSpec::combination(0.0, 1.0, ImqKernel{0.75}), u, v), eval(KernelSpec::imq(0.75), u, v));
    }
}

TEST(Kernel, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    for (const auto& k : all_kinds()) {
        const Vector u = oracle::random_matrix(rng, 3, 1), v = oracle::random_matrix(rng, 3, 1);
        const Vector g = grad_first(k, u, v);
        for (Index i = 0; i < 3; ++i) {
            Vector up = u, um = u;
            up[i] += 1e-6;
            um[i] -= 1e-6;
            EXPECT_NEAR(g[i], (eval(k, up, v) - eval(k, um, v)) / 2e-6, 1e-8) << k.name();
        }
    }
}

TEST(Kernel, PresetsCoverPaperGrid) {
    EXPECT_EQ(presets::gaussian_combinations().size(), 15u);
    EXPECT_EQ(presets::imq_combinations().size(), 15u);
    for (auto [a1, a2] : presets::kAlphaPairs) EXPECT_NEAR(a1 + a2, 1.0, 1e-12);
}

TEST(Kernel, JsonRoundTripAndRejection) {
    for (const auto& k : all_kinds()) {
        const nlohmann::json j = k;
        const auto back = j.get<KernelSpec>();
        EXPECT_EQ(nlohmann::json(back), j);
    }
    const auto j = nlohmann::json::parse(
        R"({"kind":"combination","alpha1":0.6,"alpha2":0.4,"nonlinear":{"kind":"imq","c":0.75}})");
    const auto k = j.get<KernelSpec>();
    const auto& comb = std::get<CombinationKernel>(k.kind());
    EXPECT_EQ(comb.alpha1, 0.6);
    EXPECT_EQ(std::get<ImqKernel>(comb.nonlinear).c, 0.75);

    EXPECT_THROW(nlohmann::json::parse(R"({"kind":"gaussian","sigma":1,"bogus":2})").get<KernelSpec>(), InvalidInput);
    EXPECT_THROW(nlohmann::json::parse(R"({"kind":"laplace"})").get<KernelSpec>(), InvalidInput);
    EXPECT_THROW(nlohmann::json::parse(R"({"kind":"combination","alpha1":1,"alpha2":0,"nonlinear":{"kind":"linear"}})")
                     .get<KernelSpec>(),
                 InvalidInput);
}
