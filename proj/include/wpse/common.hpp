#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

namespace wpse {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr const char* kVersion = "0.1.0";

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// An argument or a deserialized object violates a documented invariant.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// An iterative solver stopped at its iteration budget.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double last_grad_norm)
        : Error(what), last_grad_norm_(last_grad_norm) {}
    double last_grad_norm() const noexcept { return last_grad_norm_; }

private:
    double last_grad_norm_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidInput(msg);
}

inline void require_same_dim(Index a, Index b, const char* what) {
    if (a != b) {
        throw DimensionMismatch(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
    }
}

/// log(sum_i w_i exp(a_i)) over entries with w_i > 0.
template <typename A, typename W>
double weighted_logsumexp(const A& a, const W& w) {
    double m = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < a.size(); ++i)
        if (w[i] > 0.0) m = std::max(m, a[i]);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (Index i = 0; i < a.size(); ++i)
        if (w[i] > 0.0) s += w[i] * std::exp(a[i] - m);
    return m + std::log(s);
}

template <typename A>
double logsumexp(const A& a) {
    const double m = a.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((a.array() - m).exp().sum());
}

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const char* what) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw InvalidInput(std::string(what) + ": unknown key '" + key + "'");
    }
}


}  // namespace detail
}  // namespace wpse
