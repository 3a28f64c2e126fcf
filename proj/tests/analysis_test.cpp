#include "wpse/analysis.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace wpse;

TEST(Rank, RandomFactorsRespectBound) {
    std::mt19937_64 rng(1);
    const Matrix A = oracle::random_matrix(rng, 2, 5), B = oracle::random_matrix(rng, 2, 5);
    const auto r = verify_rank_bound(A, B, 1.0);
    EXPECT_TRUE(r.rank_bound_ok);
    EXPECT_LE(r.singular_values[3], 1e-8 * r.singular_values[0]);
    EXPECT_LE(r.singular_values[4], 1e-8 * r.singular_values[0]);
    EXPECT_LT(r.frobenius_floor, 1e-10);
}

TEST(Rank, ZeroFactorsGiveAllOnes) {
    const auto r = verify_rank_bound(Matrix::Zero(2, 5), Matrix::Zero(2, 5), 1.0);
    EXPECT_NEAR(r.singular_values[0], 5.0, 1e-12);
    for (std::size_t k = 1; k < 5; ++k) EXPECT_LT(r.singular_values[k], 1e-12);
}

TEST(Rank, GramWithoutShiftHasRankD) {
    std::mt19937_64 rng(2);
    const Matrix A = oracle::random_matrix(rng, 3, 7);
    const auto r = verify_rank_bound(A, A, 0.0);
    EXPECT_GT(r.singular_values[2], 1e-6 * r.singular_values[0]);
    EXPECT_LT(r.singular_values[3], 1e-10 * r.singular_values[0]);
}

TEST(Rank, ManyRandomTriples) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int t = 0; t < 200; ++t) {
        const int d = 1 + t % 8;
        const int N = d + 2 + t % (19 - d);
        const auto r = verify_rank_bound(oracle::random_matrix(rng, d, N), oracle::random_matrix(rng, d, N), n(rng));
        EXPECT_TRUE(r.rank_bound_ok) << "d=" << d << " N=" << N;
        for (std::size_t k = 1; k < r.singular_values.size(); ++k) {
            EXPECT_LE(r.singular_values[k], r.singular_values[k - 1]);
            EXPECT_GE(r.singular_values[k], 0.0);
        }
    }
}

TEST(Rank, ShapeErrors) {
    EXPECT_THROW(verify_rank_bound(Matrix::Zero(2, 5), Matrix::Zero(2, 4), 1.0), DimensionMismatch);
    EXPECT_THROW(verify_rank_bound(Matrix::Zero(2, 3), Matrix::Zero(2, 3), 1.0), InvalidInput);
}

TEST(Floor, ExactLowRankHasZeroFloor) {
    std::mt19937_64 rng(4);
    const Matrix G = oracle::random_matrix(rng, 8, 3) * oracle::random_matrix(rng, 3, 9);
    EXPECT_LT(bilinear_fit_floor(SimilarityTable(G), 2), 1e-10);
}

TEST(Floor, FullRankPmiHasPositiveFloor) {
    GeneratorConfig c;
    c.n_x = c.n_y = 10;
    c.num_labels = 4;
    c.seed = 3;
    c.noise = 0.5;
    c.floor = 1e-3;
    EXPECT_GT(bilinear_fit_floor(pmi(random_world(c).world), 2), 0.0);
}

TEST(Floor, MatchesTruncatedReconstructionAtBestShift) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 5; ++t) {
        const Matrix G = oracle::random_matrix(rng, 10, 10);
        const double floor = bilinear_fit_floor(SimilarityTable(G), 2);
        double oracle_min = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= 4000; ++k) {
            const double gamma = G.minCoeff() + (G.maxCoeff() - G.minCoeff()) * k / 4000.0;
            oracle_min = std::min(oracle_min,
                                  oracle::truncated_reconstruction_error(G - gamma * Matrix::Ones(10, 10), 3));
        }
        oracle_min = std::min(oracle_min, oracle::truncated_reconstruction_error(G, 3));
        EXPECT_LE(floor, oracle_min + 1e-9);
        EXPECT_NEAR(floor, oracle_min, 1e-3 * oracle_min);
    }
}

TEST(Floor, MonotoneInDimension) {
    std::mt19937_64 rng(6);
    const SimilarityTable G(oracle::random_matrix(rng, 9, 9));
    double prev = std::numeric_limits<double>::infinity();
    for (Index d = 1; d <= 6; ++d) {
        const double f = bilinear_fit_floor(G, d);
        EXPECT_LE(f, prev + 1e-12);
        EXPECT_LE(f, bilinear_constant_floor(G, d) + 1e-12);
        prev = f;
    }
    EXPECT_THROW(bilinear_fit_floor(G, 8), InvalidInput);
}

TEST(Floor, EffectiveRank) {
    EXPECT_EQ(effective_rank(SimilarityTable(Matrix::Identity(5, 5))), 5);
    EXPECT_EQ(effective_rank(SimilarityTable(Matrix::Ones(5, 5))), 1);
    EXPECT_EQ(effective_rank(SimilarityTable(Matrix::Zero(3, 3))), 0);
}

TEST(Frobenius, ObjectiveGradientAndShiftInvariance) {
    std::mt19937_64 rng(7);
    const SimilarityTable target(oracle::random_matrix(rng, 4, 5));
    const auto obj = frobenius_objective(target);
    const Matrix g = oracle::random_matrix(rng, 4, 5);
    const auto [f, grad] = obj(SimilarityTable(g));
    EXPECT_NEAR(obj(SimilarityTable(g.array() + 3.0)).first, f, 1e-12);
    const Matrix fd = oracle::finite_difference([&](const Matrix& m) { return obj(SimilarityTable(m)).first; }, g);
    EXPECT_LT(oracle::relative_deviation(grad, fd), 1e-7);
}

TEST(Sweep, LowRankTargetIsRepresentableByLinear) {
    std::mt19937_64 rng(8);
    Matrix A(2, 6), B(2, 6);
    for (Index i = 0; i < 6; ++i) {
        A.col(i) = oracle::random_unit(rng, 2);
        B.col(i) = oracle::random_unit(rng, 2);
    }
    const SimilarityTable target((2.0 * A.transpose() * B).array() + 0.7);
    SweepConfig cfg;
    cfg.optimizer.learning_rate = 0.05;
    cfg.optimizer.steps = 4000;
    cfg.restarts = 3;
    const auto r = universality_sweep(target, KernelSpec::linear(), {1}, 2, cfg);
    EXPECT_LT(best(r.sup_errors(1)), 1e-3);
}

TEST(Sweep, LinearNeverBeatsFrobeniusFloor) {
    GeneratorConfig c;
    c.n_x = c.n_y = 8;
    c.num_labels = 4;
    c.seed = 11;
    c.noise = 0.5;
    c.floor = 1e-3;
    const SimilarityTable G = pmi(random_world(c).world);
    SweepConfig cfg;
    cfg.optimizer.steps = 3000;
    cfg.restarts = 2;
    const auto r = universality_sweep(G, KernelSpec::linear(), {1}, 2, cfg);
    for (double e : r.frobenius_errors(1)) EXPECT_GE(e, bilinear_fit_floor(G, 2) - 1e-6);
}

TEST(Sweep, CsvAndHelpers) {
    SweepResult r;
    r.points.push_back({1, 0, 42, 1.5, 0.5});
    r.points.push_back({1, 1, 43, 1.0, 0.25});
    const auto csv = sweep_csv(r);
    EXPECT_EQ(csv.rfind(std::string("# wpse-lab v") + kVersion + "\nM,frobenius_error,sup_error,seed\n", 0), 0u);
    EXPECT_DOUBLE_EQ(median(r.sup_errors(1)), 0.375);
    EXPECT_DOUBLE_EQ(best(r.frobenius_errors(1)), 1.0);
    EXPECT_THROW(median({}), InvalidInput);
}
