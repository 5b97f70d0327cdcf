#pragma once

// Hand-rolled generators for property tests. Deliberately independent of the
// library's Philox streams.

#include "rbsde/core.hpp"
#include "rbsde/projection.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace testsupport {

class Gen {
public:
    explicit Gen(std::uint64_t seed) : eng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
    std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
        return std::uniform_int_distribution<std::size_t>(lo, hi)(eng_);
    }
    std::vector<double> vec(std::size_t d, double lo, double hi) {
        std::vector<double> v(d);
        for (auto& x : v) x = uniform(lo, hi);
        return v;
    }
    // Off-diagonal entries in [a, 1.9a]: any two sum to at least 2a, so every
    // triangle margin is at least 0.1a.
    rbsde::CostMatrix costs(std::size_t d, double a) {
        std::vector<double> c(d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                if (i != j) c[i * d + j] = uniform(a, 1.9 * a);
        return rbsde::CostMatrix(d, c);
    }
    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

inline double norm2(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// Oblique projection written out directly, for cross-checking.
inline std::vector<double> reference_projection(const rbsde::CostMatrix& c, const std::vector<double>& y) {
    const std::size_t d = y.size();
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) {
        double best = y[0] - c(i, 0);
        for (std::size_t j = 1; j < d; ++j) best = std::max(best, y[j] - c(i, j));
        out[i] = best;
    }
    return out;
}

inline rbsde::Terminal constant_terminal(std::vector<double> g) {
    rbsde::Terminal t;
    t.regimes = g.size();
    t.eval = [g](std::span<const double>, std::span<double> out) { std::copy(g.begin(), g.end(), out.begin()); };
    return t;
}

// g^i(x) = a_i + b_i x, pushed into Q by the projection.
inline rbsde::Terminal affine_terminal(const rbsde::CostMatrix& c, std::vector<double> a, std::vector<double> b) {
    rbsde::Terminal t;
    t.regimes = a.size();
    double lip = 0.0;
    for (double v : b) lip = std::max(lip, std::abs(v));
    t.lipschitz = lip * 2.0;
    t.eval = [c, a, b](std::span<const double> x, std::span<double> out) {
        std::vector<double> raw(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) raw[i] = a[i] + b[i] * x[0];
        for (std::size_t i = 0; i < a.size(); ++i) {
            double best = raw[0] - c(i, 0);
            for (std::size_t j = 1; j < a.size(); ++j) best = std::max(best, raw[j] - c(i, j));
            out[i] = best;
        }
    };
    return t;
}

// f^i = alpha_i + beta_i x + gamma_i y^i, componentwise and z-free.
inline rbsde::Driver linear_driver(std::vector<double> alpha, std::vector<double> beta, std::vector<double> gamma) {
    rbsde::Driver f;
    f.regimes = alpha.size();
    double lip = 0.0;
    for (double g : gamma) lip = std::max(lip, std::abs(g));
    f.lipschitz = lip;
    f.eval = [alpha, beta, gamma](std::span<const double> x, std::span<const double> y, std::span<const double>,
                                  std::span<double> out) {
        for (std::size_t i = 0; i < alpha.size(); ++i) out[i] = alpha[i] + beta[i] * x[0] + gamma[i] * y[i];
    };
    return f;
}

inline rbsde::SdeModel scalar_sde(double x0, double b, double sigma) {
    return rbsde::SdeModel::with_constant_coefficients({x0}, {b}, {sigma}, 1);
}

// Plain backward Euler for Y = g(X_T) + int f(X, Y) dt on the recombining
// binomial tree, with f = alpha + beta x + gamma y solved in closed form.
inline double textbook_backward_euler(double x0, double b, double sigma, double T, std::size_t n, double ga, double gb,
                               double alpha, double beta, double gamma) {
    const double h = T / static_cast<double>(n);
    const double s = std::sqrt(h);
    auto x_at = [&](std::size_t i, std::size_t k) {
        return x0 + b * h * static_cast<double>(i) + sigma * s * (2.0 * static_cast<double>(k) - static_cast<double>(i));
    };
    std::vector<double> y(n + 1);
    for (std::size_t k = 0; k <= n; ++k) y[k] = ga + gb * x_at(n, k);
    for (std::size_t i = n; i-- > 0;) {
        std::vector<double> next(i + 1);
        for (std::size_t k = 0; k <= i; ++k) {
            const double e = 0.5 * (y[k] + y[k + 1]);
            next[k] = (e + h * (alpha + beta * x_at(i, k))) / (1.0 - h * gamma);
        }
        y = std::move(next);
    }
    return y[0];
}

}  // namespace testsupport
