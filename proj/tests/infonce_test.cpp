#include "wpse/gap.hpp"
#include "wpse/infonce.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace wpse;

namespace {

GeneratedWorld world(std::uint64_t seed, Index nx = 5, Index ny = 6) {
    GeneratorConfig c;
    c.n_x = nx;
    c.n_y = ny;
    c.num_labels = 2;
    c.seed = seed;
    c.noise = 0.4;
    c.floor = 1e-3;
    return random_world(c);
}

}  // namespace

TEST(InfoNce, EmpiricalIdentityBatch) {
    const Matrix S = 10.0 * Matrix::Identity(4, 4);
    const double expected = std::log(1.0 + 3.0 * std::exp(-10.0));
    EXPECT_NEAR(empirical_loss(S), expected, 1e-15);
    EXPECT_NEAR(expected, 1.3618e-4, 1e-7);
}

TEST(InfoNce, EmpiricalUniformIsLogB) {
    EXPECT_NEAR(empirical_loss(Matrix::Constant(8, 8, 0.3)), std::log(8.0), 1e-14);
}

TEST(InfoNce, EmpiricalMatchesNaiveAndIsStable) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
        const Matrix S = oracle::random_matrix(rng, 6, 6, 2.0);
        EXPECT_NEAR(empirical_loss(S), oracle::naive_empirical_loss(S), 1e-12);
    }
    const Matrix big = 800.0 * Matrix::Identity(3, 3);
    EXPECT_TRUE(std::isfinite(empirical_loss(big)));
    EXPECT_TRUE(std::isfinite(empirical_loss(big.array() + 1000.0)));
}

TEST(InfoNce, EmpiricalGradMatchesFiniteDifferences) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 10; ++t) {
        const Matrix S = oracle::random_matrix(rng, 5, 5);
        const Matrix fd = oracle::finite_difference([](const Matrix& m) { return empirical_loss(m); }, S);
        EXPECT_LT(oracle::relative_deviation(empirical_grad(S), fd), 1e-7);
    }
}

TEST(InfoNce, EmpiricalRejectsNonSquare) {
    EXPECT_THROW(empirical_loss(Matrix::Zero(2, 3)), InvalidInput);
}

TEST(InfoNce, PopulationMatchesNaive) {
    std::mt19937_64 rng(3);
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto g = world(s);
        const SimilarityTable t(oracle::random_matrix(rng, 5, 6));
        EXPECT_NEAR(population_loss(t, g.world), oracle::naive_population_loss(t.values, g.world.joint()), 1e-12);
    }
}

TEST(InfoNce, PopulationAtPmiIsMinusInformation) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto g = world(s, 3 + s % 9, 2 + s % 11);
        const double mi = mutual_information(g.world);
        EXPECT_NEAR(population_loss(pmi(g.world), g.world), -mi, 1e-12);
        EXPECT_NEAR(population_loss(pmi(g.world).shifted(3.7), g.world), -mi, 1e-12);
    }
}

TEST(InfoNce, PopulationGradVanishesAtPmi) {
    const auto g = world(4);
    EXPECT_LT(population_grad(pmi(g.world), g.world).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(InfoNce, PopulationBoundedBelow) {
    std::mt19937_64 rng(5);
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto g = world(s);
        const SimilarityTable t(oracle::random_matrix(rng, 5, 6, 3.0));
        EXPECT_GE(population_loss(t, g.world), -mutual_information(g.world) - 1e-12);
    }
}

TEST(InfoNce, PopulationGradMatchesFiniteDifferences) {
    std::mt19937_64 rng(6);
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto g = world(s);
        const Matrix G = oracle::random_matrix(rng, 5, 6);
        const auto f = [&](const Matrix& m) { return population_loss(SimilarityTable(m), g.world); };
        EXPECT_LT(oracle::relative_deviation(population_grad(SimilarityTable(G), g.world),
                                             oracle::finite_difference(f, G)),
                  1e-7);
    }
}

TEST(InfoNce, PopulationShapeMismatch) {
    EXPECT_THROW(population_loss(SimilarityTable(Matrix::Zero(2, 2)), world(1).world), DimensionMismatch);
}

TEST(Gap, ConstantShiftHasZeroGap) {
    const auto g = pmi(world(7).world);
    EXPECT_NEAR(delta_gap(g.shifted(5.0), g), 0.0, 1e-14);
    const auto r = delta_gap_with_shift(g.shifted(5.0), g);
    EXPECT_NEAR(r.shift, 5.0, 1e-14);
}

TEST(Gap, MatchesGridOracle) {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 10; ++t) {
        const Matrix a = oracle::random_matrix(rng, 3, 4), b = oracle::random_matrix(rng, 3, 4);
        EXPECT_NEAR(delta_gap(SimilarityTable(a), SimilarityTable(b)), oracle::grid_delta(a, b), 1e-4);
    }
}

TEST(Gap, ShapeMismatch) {
    EXPECT_THROW(delta_gap(SimilarityTable(Matrix::Zero(2, 3)), SimilarityTable(Matrix::Zero(3, 2))),
                 DimensionMismatch);
}

TEST(InfoNce, SmallBatchExamples) {
    EXPECT_EQ(empirical_loss(Matrix::Constant(1, 1, 4.2)), 0.0);
    EXPECT_NEAR(empirical_loss(Matrix::Zero(2, 2)), std::log(2.0), 1e-15);
}

TEST(InfoNce, ConstantTableExamples) {
    const auto g = world(12);
    EXPECT_NEAR(population_loss(SimilarityTable(Matrix::Constant(5, 6, -1.3)), g.world), 0.0, 1e-15);
    const DiscreteWorld uniform(Matrix::Constant(3, 4, 1.0 / 12.0), Matrix::Constant(3, 1, 1.0));
    EXPECT_LT(population_grad(SimilarityTable(Matrix::Constant(3, 4, 0.7)), uniform).cwiseAbs().maxCoeff(), 1e-16);
}

TEST(InfoNce, EmpiricalApproachesPopulation) {
    const auto g = world(13, 4, 4);
    const SimilarityTable t = pmi(g.world);
    std::discrete_distribution<int> pick(g.world.joint().data(), g.world.joint().data() + 16);
    std::mt19937_64 rng(14);
    const Index B = 64;
    double avg = 0.0;
    const int batches = 400;
    for (int b = 0; b < batches; ++b) {
        std::vector<int> xs(B), ys(B);
        for (Index k = 0; k < B; ++k) {
            const int cell = pick(rng);  // column-major storage
            xs[k] = cell % 4;
            ys[k] = cell / 4;
        }
        Matrix S(B, B);
        for (Index a = 0; a < B; ++a)
            for (Index c = 0; c < B; ++c) S(a, c) = t(xs[a], ys[c]);
        avg += empirical_loss(S) - std::log(static_cast<double>(B));
    }
    avg /= batches;
    const double target = population_loss(t, g.world);
    EXPECT_LT(std::abs(avg - target), 0.1 * std::abs(target) + 0.02);
    EXPECT_GE(avg, target - 0.02);
}
