#pragma once

#include "wpse/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace wpse {

/// Dense n_x x n_y table of similarity values g(x, y).
struct SimilarityTable {
    Matrix values;

    SimilarityTable() = default;
    explicit SimilarityTable(Matrix m) : values(std::move(m)) {}

    Index rows() const noexcept { return values.rows(); }
    Index cols() const noexcept { return values.cols(); }
    double operator()(Index i, Index j) const { return values(i, j); }
    double& operator()(Index i, Index j) { return values(i, j); }

    SimilarityTable shifted(double gamma) const { return SimilarityTable((values.array() + gamma).matrix()); }
};

/// Assignment of every y to one of K disjoint subsets (1..K) or to none (0).
class SubsetPartition {
public:
    SubsetPartition() = default;
    SubsetPartition(std::vector<int> assignment, int num_subsets)
        : assignment_(std::move(assignment)), num_subsets_(num_subsets) {
        detail::require(num_subsets_ >= 1, "partition: need at least one subset");
        for (int a : assignment_)
            detail::require(a >= 0 && a <= num_subsets_, "partition: assignment out of range 0..K");
    }

    /// Subset c is {y_c} for c < K; remaining ys are unassigned.
    static SubsetPartition singletons(Index n_y, int k) {
        detail::require(k <= n_y, "partition: more singleton subsets than ys");
        std::vector<int> a(static_cast<std::size_t>(n_y), 0);
        for (int c = 0; c < k; ++c) a[static_cast<std::size_t>(c)] = c + 1;
        return SubsetPartition(std::move(a), k);
    }

    int num_subsets() const noexcept { return num_subsets_; }
    Index size() const noexcept { return static_cast<Index>(assignment_.size()); }
    const std::vector<int>& assignment() const noexcept { return assignment_; }

    /// Zero-based subset of y, or -1 when unassigned.
    int subset_of(Index y) const { return assignment_[static_cast<std::size_t>(y)] - 1; }

    std::vector<Index> members(int c) const {
        std::vector<Index> out;
        for (std::size_t y = 0; y < assignment_.size(); ++y)
            if (assignment_[y] == c + 1) out.push_back(static_cast<Index>(y));
        return out;
    }

private:
    std::vector<int> assignment_;
    int num_subsets_ = 0;
};

/// Finite joint distribution p(x, y) with label conditionals P(c | x).
class DiscreteWorld {
public:
    DiscreteWorld() = default;

    /// Validates: entries nonnegative, joint and label rows sum to 1 within 1e-12,
    /// strictly positive marginals.
    DiscreteWorld(Matrix joint, Matrix label_cond) : joint_(std::move(joint)), label_cond_(std::move(label_cond)) {
        detail::require(joint_.rows() >= 1 && joint_.cols() >= 1, "world: empty joint");
        detail::require(label_cond_.cols() >= 1, "world: need at least one label");
        detail::require_same_dim(joint_.rows(), label_cond_.rows(), "world joint/label_cond rows");
        detail::require(joint_.allFinite() && label_cond_.allFinite(), "world: non-finite entries");
        detail::require(joint_.minCoeff() >= 0.0, "world: joint entries must be nonnegative");
        detail::require(label_cond_.minCoeff() >= 0.0, "world: label_cond entries must be nonnegative");
        const double total = joint_.sum();
        if (std::abs(total - 1.0) > 1e-12) {
            std::ostringstream os;
            os.precision(17);
            os << "world: joint entries must sum to 1 within 1e-12 (sum = " << total << ")";
            throw InvalidInput(os.str());
        }
        for (Index i = 0; i < label_cond_.rows(); ++i) {
            if (std::abs(label_cond_.row(i).sum() - 1.0) > 1e-12)
                throw InvalidInput("world: label_cond row " + std::to_string(i) + " must sum to 1 within 1e-12");
        }
        px_ = joint_.rowwise().sum();
        py_ = joint_.colwise().sum().transpose();
        for (Index i = 0; i < px_.size(); ++i)
            detail::require(px_[i] > 0.0, "world: marginal p(x) must be strictly positive (x = " +
                                              std::to_string(i) + ")");
        for (Index j = 0; j < py_.size(); ++j)
            detail::require(py_[j] > 0.0, "world: marginal p(y) must be strictly positive (y = " +
                                              std::to_string(j) + ")");
    }

    Index n_x() const noexcept { return joint_.rows(); }
    Index n_y() const noexcept { return joint_.cols(); }
    Index num_labels() const noexcept { return label_cond_.cols(); }

    const Matrix& joint() const noexcept { return joint_; }
    const Matrix& label_cond() const noexcept { return label_cond_; }
    const Vector& px() const noexcept { return px_; }
    const Vector& py() const noexcept { return py_; }

    bool full_support() const { return joint_.minCoeff() > 0.0; }

    /// p(x, c) = P(c | x) p(x).
    Matrix label_joint() const { return px_.asDiagonal() * label_cond_; }

    /// P(c) = sum_x p(x, c).
    Vector label_marginal() const { return label_joint().colwise().sum().transpose(); }

private:
    Matrix joint_;
    Matrix label_cond_;
    Vector px_;
    Vector py_;
};

/// Knobs of the class-structured generator.
struct GeneratorConfig {
    Index n_x = 8;
    Index n_y = 8;
    Index num_labels = 2;
    std::uint64_t seed = 0;
    double concentration = 1.0;    // Dirichlet parameter for every simplex draw
    double floor = 1e-4;           // added to every joint cell, then renormalized
    double noise = 0.0;            // mixing weight of an unstructured p(y|x)
    bool deterministic_labels = false;
    bool uniform_x = false;
    bool independent = false;      // replace the joint by the product of its marginals
};

struct GeneratedWorld {
    DiscreteWorld world;
    SubsetPartition partition;
    GeneratorConfig config;
};

namespace detail {

inline Vector dirichlet(std::mt19937_64& rng, Index n, double alpha) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = gamma(rng);
    const double s = v.sum();
    if (!(s > 0.0)) return Vector::Constant(n, 1.0 / static_cast<double>(n));
    return v / s;
}

struct StructuredDraw {
    Matrix joint;
    Matrix label_cond;
    std::vector<int> groups;
};

inline StructuredDraw draw_structured(const GeneratorConfig& cfg) {
    if (cfg.n_x < 1 || cfg.num_labels < 2 || cfg.n_y < cfg.num_labels)
        throw InvalidInput("random_world: need n_x >= 1 and n_y >= K >= 2 (n_x=" + std::to_string(cfg.n_x) +
                           ", n_y=" + std::to_string(cfg.n_y) + ", K=" + std::to_string(cfg.num_labels) + ")");
    require(cfg.concentration > 0.0, "random_world: concentration must be positive");
    require(cfg.floor >= 0.0, "random_world: floor must be nonnegative");
    require(cfg.noise >= 0.0 && cfg.noise <= 1.0, "random_world: noise must lie in [0, 1]");

    const Index nx = cfg.n_x, ny = cfg.n_y, K = cfg.num_labels;
    std::mt19937_64 rng(cfg.seed);

    const Vector px = cfg.uniform_x ? Vector::Constant(nx, 1.0 / static_cast<double>(nx))
                                    : dirichlet(rng, nx, cfg.concentration);

    Matrix label(nx, K);
    for (Index i = 0; i < nx; ++i) {
        if (cfg.deterministic_labels) {
            label.row(i).setZero();
            label(i, i % K) = 1.0;
        } else {
            label.row(i) = dirichlet(rng, K, cfg.concentration).transpose();
        }
    }

    // The first K ys seed one group each so that no group is empty.
    std::vector<int> groups(static_cast<std::size_t>(ny));
    std::uniform_int_distribution<int> pick(0, static_cast<int>(K) - 1);
    for (Index j = 0; j < ny; ++j) groups[static_cast<std::size_t>(j)] = j < K ? static_cast<int>(j) : pick(rng);

    Vector q(ny);
    for (Index c = 0; c < K; ++c) {
        std::vector<Index> members;
        for (Index j = 0; j < ny; ++j)
            if (groups[static_cast<std::size_t>(j)] == c) members.push_back(j);
        const Vector w = dirichlet(rng, static_cast<Index>(members.size()), cfg.concentration);
        for (std::size_t m = 0; m < members.size(); ++m) q[members[m]] = w[static_cast<Index>(m)];
    }

    Matrix joint(nx, ny);
    for (Index i = 0; i < nx; ++i)
        for (Index j = 0; j < ny; ++j) joint(i, j) = px[i] * label(i, groups[static_cast<std::size_t>(j)]) * q[j];

    if (cfg.noise > 0.0) {
        for (Index i = 0; i < nx; ++i) {
            const Vector r = dirichlet(rng, ny, cfg.concentration);
            joint.row(i) = (1.0 - cfg.noise) * joint.row(i) + cfg.noise * px[i] * r.transpose();
        }
    }
    joint /= joint.sum();
    return {std::move(joint), std::move(label), std::move(groups)};
}

}  // namespace detail

/// The class-structured joint before the independence and floor steps.
inline Matrix class_structured_joint(const GeneratorConfig& cfg) { return detail::draw_structured(cfg).joint; }

/// Generate a world whose ys fall into K generating groups, plus the partition
/// assigning each y to its group.
///
/// p(x, y) = p(x) P(c(y) | x) q(y | c(y)), optionally mixed with an unstructured
/// p(y | x), then floored and renormalized for full support. With noise = 0 and
/// floor = 0 both KL terms of the generating partition vanish.
inline GeneratedWorld random_world(const GeneratorConfig& cfg) {
    auto draw = detail::draw_structured(cfg);
    Matrix joint = std::move(draw.joint);
    if (cfg.independent) {
        const Vector px = joint.rowwise().sum();
        const Vector py = joint.colwise().sum().transpose();
        joint = px * py.transpose();
        joint /= joint.sum();
    } else if (cfg.floor > 0.0) {
        joint.array() += cfg.floor;
        joint /= joint.sum();
    }
    for (Index i = 0; i < draw.label_cond.rows(); ++i) draw.label_cond.row(i) /= draw.label_cond.row(i).sum();

    std::vector<int> assignment(draw.groups.size());
    for (std::size_t j = 0; j < draw.groups.size(); ++j) assignment[j] = draw.groups[j] + 1;

    DiscreteWorld world(std::move(joint), std::move(draw.label_cond));
    if (!world.full_support())
        throw InvalidInput("random_world: generated joint lacks full support; use a positive floor");
    return {std::move(world), SubsetPartition(std::move(assignment), static_cast<int>(cfg.num_labels)), cfg};
}

/// Uniformly random partition of the ys into K nonempty subsets, leaving each y
/// unassigned with probability `unassigned_prob` (never the K seed members).
inline SubsetPartition random_partition(Index n_y, int k, std::uint64_t seed, double unassigned_prob = 0.0) {
    detail::require(k >= 1 && k <= n_y, "random_partition: need 1 <= K <= n_y");
    std::mt19937_64 rng(seed);
    std::vector<Index> order(static_cast<std::size_t>(n_y));
    for (Index j = 0; j < n_y; ++j) order[static_cast<std::size_t>(j)] = j;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> a(static_cast<std::size_t>(n_y), 0);
    std::uniform_int_distribution<int> pick(1, k);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t m = 0; m < order.size(); ++m) {
        const auto y = static_cast<std::size_t>(order[m]);
        if (m < static_cast<std::size_t>(k))
            a[y] = static_cast<int>(m) + 1;
        else
            a[y] = u(rng) < unassigned_prob ? 0 : pick(rng);
    }
    return SubsetPartition(std::move(a), k);
}

// Exact oracles -------------------------------------------------------------

/// G_ij = ln p(x_i, y_j) - ln p(x_i) - ln p(y_j).
inline SimilarityTable pmi(const DiscreteWorld& w) {
    Matrix g(w.n_x(), w.n_y());
    for (Index i = 0; i < w.n_x(); ++i) {
        for (Index j = 0; j < w.n_y(); ++j) {
            const double p = w.joint()(i, j);
            if (!(p > 0.0))
                throw InvalidInput("pmi: zero joint mass at (x=" + std::to_string(i) + ", y=" + std::to_string(j) + ")");
            g(i, j) = std::log(p) - std::log(w.px()[i]) - std::log(w.py()[j]);
        }
    }
    return SimilarityTable(std::move(g));
}

inline double mutual_information(const DiscreteWorld& w) {
    return w.joint().cwiseProduct(pmi(w).values).sum();
}

/// Conditional entropy H(C | X), the supervised loss of the Bayes classifier.
inline double sup_loss_optimal(const DiscreteWorld& w) {
    double h = 0.0;
    for (Index i = 0; i < w.n_x(); ++i)
        for (Index c = 0; c < w.num_labels(); ++c) {
            const double p = w.label_cond()(i, c);
            if (p > 0.0) h -= w.px()[i] * p * std::log(p);
        }
    return h;
}

/// Entropy of the marginal label distribution.
inline double label_entropy(const DiscreteWorld& w) {
    const Vector pc = w.label_marginal();
    double h = 0.0;
    for (Index c = 0; c < pc.size(); ++c)
        if (pc[c] > 0.0) h -= pc[c] * std::log(pc[c]);
    return h;
}

/// The two KL terms of the excess-risk bound, in expectation and in supremum.
///
/// eps1(x)    = KL(P(C | x) || P(Y_C | x) / P(Y~ | x))
/// eps2(x, c) = KL(p(y | Y_c) || p(y | x, Y_c))
struct KlTerms {
    double eps1_expected = 0.0;
    double eps2_expected = 0.0;
    double eps1_sup = 0.0;
    double eps2_sup = 0.0;
};

/// Probability of each subset, P(Y_c).
inline Vector subset_mass(const DiscreteWorld& w, const SubsetPartition& part) {
    detail::require_same_dim(part.size(), w.n_y(), "partition size vs n_y");
    Vector mass = Vector::Zero(part.num_subsets());
    for (Index j = 0; j < w.n_y(); ++j)
        if (const int c = part.subset_of(j); c >= 0) mass[c] += w.py()[j];
    for (int c = 0; c < part.num_subsets(); ++c)
        if (!(mass[c] > 0.0)) throw InvalidInput("partition: subset " + std::to_string(c + 1) + " is empty or has zero mass");
    return mass;
}

inline KlTerms kl_terms(const DiscreteWorld& w, const SubsetPartition& part) {
    detail::require(part.num_subsets() == w.num_labels(), "kl_terms: partition must have one subset per label");
    const Vector mass = subset_mass(w, part);
    const Index K = w.num_labels();

    // P(Y_c | x) * p(x) = sum_{y in Y_c} p(x, y)
    Matrix cond_mass = Matrix::Zero(w.n_x(), K);
    for (Index i = 0; i < w.n_x(); ++i)
        for (Index j = 0; j < w.n_y(); ++j)
            if (const int c = part.subset_of(j); c >= 0) cond_mass(i, c) += w.joint()(i, j);

    KlTerms out;
    for (Index i = 0; i < w.n_x(); ++i) {
        const double total = cond_mass.row(i).sum();
        for (Index c = 0; c < K; ++c)
            if (!(cond_mass(i, c) > 0.0))
                throw InvalidInput("kl_terms: zero conditional mass P(Y_c | x) at (x=" + std::to_string(i) +
                                   ", c=" + std::to_string(c + 1) + ")");
        double kl1 = 0.0;
        for (Index c = 0; c < K; ++c) {
            const double p = w.label_cond()(i, c);
            if (p > 0.0) kl1 += p * std::log(p / (cond_mass(i, c) / total));
        }
        out.eps1_expected += w.px()[i] * kl1;
        out.eps1_sup = std::max(out.eps1_sup, kl1);

        for (Index c = 0; c < K; ++c) {
            double kl2 = 0.0;
            for (Index j = 0; j < w.n_y(); ++j) {
                if (part.subset_of(j) != c) continue;
                const double prior = w.py()[j] / mass[c];
                const double posterior = w.joint()(i, j) / cond_mass(i, c);
                if (prior > 0.0) kl2 += prior * std::log(prior / posterior);
            }
            out.eps2_expected += w.px()[i] * w.label_cond()(i, c) * kl2;
            out.eps2_sup = std::max(out.eps2_sup, kl2);
        }
    }
    return out;
}

// Serialization -------------------------------------------------------------

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
    j = {{"n_x", c.n_x},
         {"n_y", c.n_y},
         {"K", c.num_labels},
         {"seed", c.seed},
         {"concentration", c.concentration},
         {"floor", c.floor},
         {"noise", c.noise},
         {"deterministic_labels", c.deterministic_labels},
         {"uniform_x", c.uniform_x},
         {"independent", c.independent}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
    detail::reject_unknown_keys(j, {"n_x", "n_y", "K", "seed", "concentration", "floor", "noise",
                                    "deterministic_labels", "uniform_x", "independent"},
                                "generator_config");
    GeneratorConfig d;
    c.n_x = j.value("n_x", d.n_x);
    c.n_y = j.value("n_y", d.n_y);
    c.num_labels = j.value("K", d.num_labels);
    c.seed = j.value("seed", d.seed);
    c.concentration = j.value("concentration", d.concentration);
    c.floor = j.value("floor", d.floor);
    c.noise = j.value("noise", d.noise);
    c.deterministic_labels = j.value("deterministic_labels", d.deterministic_labels);
    c.uniform_x = j.value("uniform_x", d.uniform_x);
    c.independent = j.value("independent", d.independent);
}

namespace detail {
inline std::vector<double> row_major(const Matrix& m) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m.size()));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
    return out;
}

inline Matrix from_row_major(const std::vector<double>& v, Index rows, Index cols, const char* what) {
    if (static_cast<Index>(v.size()) != rows * cols)
        throw InvalidInput(std::string(what) + ": expected " + std::to_string(rows * cols) + " entries, got " +
                           std::to_string(v.size()));
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
    return m;
}
}  // namespace detail

/// World file: {"n_x","n_y","K","joint" (row-major),"label_cond" (row-major),
/// "partition","seed","generator_config"}.
inline nlohmann::json world_to_json(const GeneratedWorld& g) {
    return {{"n_x", g.world.n_x()},
            {"n_y", g.world.n_y()},
            {"K", g.world.num_labels()},
            {"joint", detail::row_major(g.world.joint())},
            {"label_cond", detail::row_major(g.world.label_cond())},
            {"partition", g.partition.assignment()},
            {"seed", g.config.seed},
            {"generator_config", g.config}};
}

inline GeneratedWorld world_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"n_x", "n_y", "K", "joint", "label_cond", "partition", "seed", "generator_config"},
                                "world file");
    for (const char* key : {"n_x", "n_y", "K", "joint", "label_cond", "partition"})
        if (!j.contains(key)) throw InvalidInput(std::string("world file: missing key '") + key + "'");
    const auto nx = j.at("n_x").get<Index>();
    const auto ny = j.at("n_y").get<Index>();
    const auto K = j.at("K").get<Index>();
    detail::require(nx >= 1 && ny >= 1 && K >= 1, "world file: sizes must be positive");
    Matrix joint = detail::from_row_major(j.at("joint").get<std::vector<double>>(), nx, ny, "world file joint");
    Matrix label = detail::from_row_major(j.at("label_cond").get<std::vector<double>>(), nx, K, "world file label_cond");
    auto assignment = j.at("partition").get<std::vector<int>>();
    detail::require_same_dim(static_cast<Index>(assignment.size()), ny, "world file partition");

    GeneratedWorld g;
    if (j.contains("generator_config")) g.config = j.at("generator_config").get<GeneratorConfig>();
    g.config.seed = j.value("seed", g.config.seed);
    g.world = DiscreteWorld(std::move(joint), std::move(label));
    g.partition = SubsetPartition(std::move(assignment), static_cast<int>(K));
    return g;
}

inline GeneratedWorld load_world(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open world file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("world file '" + path + "': " + e.what());
    }
    return world_from_json(j);
}

/// Long-format CSV: x,y,joint,pmi.
inline std::string pmi_csv(const DiscreteWorld& w) {
    const SimilarityTable g = pmi(w);
    std::ostringstream os;
    os.precision(17);
    os << "# wpse-lab v" << kVersion << "\n";
    os << "x,y,joint,pmi\n";
    for (Index i = 0; i < w.n_x(); ++i)
        for (Index j = 0; j < w.n_y(); ++j) os << i << ',' << j << ',' << w.joint()(i, j) << ',' << g(i, j) << '\n';
    return os.str();
}

}  // namespace wpse
