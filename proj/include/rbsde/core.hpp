#pragma once

#include "rbsde/projection.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rbsde {

/// Fine time grid t_0 = 0 < ... < t_n = T with an embedded reflection grid.
/// Reflection dates are grid points by construction; t_0 and t_n are always
/// reflection dates.
class TimeGrid {
public:
    TimeGrid(std::vector<double> points, std::vector<bool> reflection_flags);

    std::size_t steps() const noexcept { return points_.size() - 1; }
    std::size_t reflection_count() const noexcept { return kappa_; }
    double horizon() const noexcept { return points_.back(); }
    double time(std::size_t i) const { return points_.at(i); }
    double dt(std::size_t i) const { return points_.at(i + 1) - points_.at(i); }
    bool is_reflection(std::size_t i) const { return flags_.at(i); }
    std::span<const double> points() const noexcept { return points_; }
    std::vector<std::size_t> reflection_indices() const;

    /// |pi|, the largest step.
    double mesh() const noexcept { return mesh_; }
    /// |Re|, the largest gap between consecutive reflection dates.
    double reflection_mesh() const noexcept { return reflection_mesh_; }
    bool is_uniform(double rel_tol = 1e-12) const noexcept;
    /// |pi| * n <= bound.
    bool satisfies_mesh_bound(double bound) const noexcept { return mesh_ * steps() <= bound; }

    bool operator==(const TimeGrid&) const = default;

private:
    std::vector<double> points_;
    std::vector<bool> flags_;
    std::size_t kappa_ = 0;
    double mesh_ = 0.0;
    double reflection_mesh_ = 0.0;
};

/// Uniform grid with n steps on [0, T]; every (n / kappa)-th point is a
/// reflection date. kappa must divide n.
TimeGrid build_uniform_grid(double horizon, std::size_t n, std::size_t kappa);

/// x -> out, out sized by the caller.
using StateFn = std::function<void(std::span<const double> x, std::span<double> out)>;

/// dX = b(X) dt + sigma(X) dW on R^m driven by a q-dimensional Brownian motion.
struct SdeModel {
    struct Constant {
        std::vector<double> drift;      // m
        std::vector<double> diffusion;  // m x q, row-major
    };

    std::size_t state_dim = 1;
    std::size_t brownian_dim = 1;
    std::vector<double> x0;
    StateFn drift;
    StateFn diffusion;
    std::optional<Constant> constant;  // set when b and sigma do not depend on x
    double lipschitz = 0.0;

    static SdeModel with_constant_coefficients(std::vector<double> x0, std::vector<double> drift,
                                               std::vector<double> diffusion, std::size_t brownian_dim);
};

/// Switching costs x -> (c^{ij}(x)).
class CostModel {
public:
    using Evaluator = std::function<void(std::span<const double> x, CostMatrix& out)>;

    static CostModel constant(CostMatrix costs);
    static CostModel state_dependent(std::size_t regimes, Evaluator eval, double lipschitz);

    std::size_t regimes() const noexcept { return regimes_; }
    bool is_constant() const noexcept { return constant_.has_value(); }
    double lipschitz() const noexcept { return lipschitz_; }
    CostMatrix at(std::span<const double> x) const;
    /// Throws unless is_constant().
    const CostMatrix& constant_matrix() const;

private:
    std::size_t regimes_ = 0;
    std::optional<CostMatrix> constant_;
    Evaluator eval_;
    double lipschitz_ = 0.0;
};

/// f(x, y, z) in R^d with y in R^d and z a d x q matrix (row-major).
using DriverFn = std::function<void(std::span<const double> x, std::span<const double> y,
                                    std::span<const double> z, std::span<double> out)>;

struct Driver {
    std::size_t regimes = 0;
    DriverFn eval;
    bool depends_on_z = false;
    /// f^i reads only y^i and row i of z.
    bool componentwise = true;
    bool bounded_in_z = false;
    double lipschitz = 0.0;

    static Driver zero(std::size_t regimes);
};

struct Terminal {
    std::size_t regimes = 0;
    StateFn eval;
    double lipschitz = 0.0;
};

/// Everything needed to run the scheme on D(Re, c(X), f(X, ., .), g(X)).
struct Problem {
    Problem(SdeModel sde, Driver driver, Terminal terminal, CostModel costs, TimeGrid grid);

    std::size_t regimes() const noexcept { return costs.regimes(); }

    SdeModel sde;
    Driver driver;
    Terminal terminal;
    CostModel costs;
    TimeGrid grid;
};

enum class ViolationKind { dimension, structure, terminal_membership, componentwise, z_dependence };

struct Violation {
    std::size_t probe = 0;
    ViolationKind kind = ViolationKind::dimension;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const noexcept { return violations.empty(); }
};

/// Checks the structure condition, terminal membership g(x) in Q(x), and the
/// driver's declared flags at each probe state. Violations are reported, not
/// thrown. Throws InvalidArgument only when `probes` is empty or a probe has
/// the wrong dimension.
ValidationReport validate_problem(const Problem& problem, std::span<const std::vector<double>> probes);

}  // namespace rbsde
