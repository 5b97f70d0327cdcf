#pragma once

#include "rbsde/forward.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rbsde {

// ---------------------------------------------------------------------------
// Lattice conditional expectations
// ---------------------------------------------------------------------------

/// out[k] = sum_b p_b next[succ_b(k)], for `width` interleaved columns.
/// next is nodes(step + 1) x width, out is nodes(step) x width.
void lattice_cond_exp(const Lattice& lat, std::size_t step, std::span<const double> next, std::size_t width,
                      std::span<double> out);
std::vector<double> lattice_cond_exp(const Lattice& lat, std::size_t step, std::span<const double> next);

/// out[k] = dt^{-1} sum_b p_b next[succ_b(k)] dW_b.
void lattice_z_bar(const Lattice& lat, std::size_t step, std::span<const double> next, std::size_t width, double dt,
                   std::span<double> out);
std::vector<double> lattice_z_bar(const Lattice& lat, std::size_t step, std::span<const double> next, double dt);

// ---------------------------------------------------------------------------
// Polynomial least squares
// ---------------------------------------------------------------------------

/// Monomials of total degree <= degree in state_dim variables.
struct BasisSpec {
    std::size_t state_dim = 1;
    std::size_t degree = 2;

    /// C(m + p, p).
    std::size_t size() const;
    /// Exponent tuples ordered by total degree, constant first.
    std::vector<std::vector<unsigned>> exponents() const;
};

/// Normal-equation solver for one design (one set of sample states), reusable
/// for any number of target columns. States are centred and scaled per
/// coordinate before the basis is applied; a coordinate with zero spread
/// contributes only to the constant.
class RegressionDesign {
public:
    RegressionDesign(const BasisSpec& basis, std::span<const double> states, std::size_t samples);

    const BasisSpec& basis() const noexcept { return basis_; }
    std::size_t samples() const noexcept { return samples_; }
    bool ridge_used() const noexcept { return ridge_used_; }
    const std::vector<double>& shift() const noexcept { return shift_; }
    /// Zero marks a coordinate without spread.
    const std::vector<double>& scale() const noexcept { return scale_; }

    /// Basis row at one raw state.
    void basis_row(std::span<const double> x, std::span<double> row) const;
    /// Coefficients (basis size x width) for targets laid out samples x width.
    Eigen::MatrixXd solve(std::span<const double> targets, std::size_t width) const;
    /// Fitted values at the design's own states, samples x width.
    void fitted(const Eigen::MatrixXd& coefficients, std::span<double> out) const;

private:
    BasisSpec basis_;
    std::vector<std::vector<unsigned>> exponents_;
    // Monomial b > 0 is monomial parent_[b] times coordinate factor_[b].
    std::vector<std::size_t> parent_;
    std::vector<std::size_t> factor_;
    std::size_t samples_;
    std::span<const double> states_;
    std::vector<double> shift_;
    std::vector<double> scale_;
    Eigen::LLT<Eigen::MatrixXd> gram_;
    bool ridge_used_ = false;
};

/// Coefficient representation of a fitted function of the state.
struct RegressionFit {
    BasisSpec basis;
    std::size_t width = 1;
    std::vector<double> shift;
    std::vector<double> scale;
    Eigen::MatrixXd coefficients;  // basis size x width, in the scaled variables
    std::vector<double> fitted;    // samples x width
    bool ridge_used = false;

    /// Evaluate at a raw state; out has `width` entries.
    void predict(std::span<const double> x, std::span<double> out) const;
};

/// Least-squares fit of targets (samples x width) on the basis. `label` is
/// echoed in failure messages (e.g. "step 12").
RegressionFit regress(const BasisSpec& basis, std::span<const double> states, std::span<const double> targets,
                      std::size_t width, const std::string& label = "");

// ---------------------------------------------------------------------------
// Engines
// ---------------------------------------------------------------------------

/// What the backward scheme needs from a conditional-expectation method.
/// Points are lattice nodes or simulated paths; values are laid out
/// points x width.
class ConditionalExpectationEngine {
public:
    virtual ~ConditionalExpectationEngine() = default;

    virtual const TimeGrid& grid() const = 0;
    virtual std::size_t state_dim() const = 0;
    virtual std::size_t brownian_dim() const = 0;
    virtual std::size_t points(std::size_t step) const = 0;
    /// points(step) x state_dim.
    virtual std::span<const double> states_at(std::size_t step) const = 0;
    /// Probability carried by each point at `step`.
    virtual std::vector<double> weights(std::size_t step) const = 0;
    /// E[v_{step+1} | F_step].
    virtual void expectation(std::size_t step, std::span<const double> next, std::size_t width,
                             std::span<double> out) const = 0;
    /// E[v_{step+1} dW' | F_step] / dt, out is points x width x q.
    virtual void weighted_expectation(std::size_t step, std::span<const double> next, std::size_t width,
                                      std::span<double> out) const = 0;
    /// True when values are exact node tables (lattice), false for regression estimates.
    virtual bool exact() const = 0;
};

class LatticeEngine final : public ConditionalExpectationEngine {
public:
    explicit LatticeEngine(Lattice lattice) : lattice_(std::move(lattice)) {}

    const Lattice& lattice() const noexcept { return lattice_; }

    const TimeGrid& grid() const override { return lattice_.grid(); }
    std::size_t state_dim() const override { return 1; }
    std::size_t brownian_dim() const override { return 1; }
    std::size_t points(std::size_t step) const override { return lattice_.nodes(step); }
    std::span<const double> states_at(std::size_t step) const override { return lattice_.states_at(step); }
    std::vector<double> weights(std::size_t step) const override { return lattice_.marginal(step); }
    void expectation(std::size_t step, std::span<const double> next, std::size_t width,
                     std::span<double> out) const override;
    void weighted_expectation(std::size_t step, std::span<const double> next, std::size_t width,
                              std::span<double> out) const override;
    bool exact() const override { return true; }

private:
    Lattice lattice_;
};

struct RegressionOptions {
    BasisSpec basis{};
    /// Fitted conditional expectations are clamped to [lo, hi] when set.
    std::optional<double> clip_lo;
    std::optional<double> clip_hi;
};

/// Least-squares Monte Carlo on simulated Euler paths. One normal-equation
/// factorisation per date is prepared at construction; the engine is
/// read-only afterwards.
class RegressionEngine final : public ConditionalExpectationEngine {
public:
    RegressionEngine(PathBundle paths, RegressionOptions options);
    // Designs view into paths_, so copies would dangle.
    RegressionEngine(const RegressionEngine&) = delete;
    RegressionEngine& operator=(const RegressionEngine&) = delete;
    RegressionEngine(RegressionEngine&&) = default;

    const PathBundle& paths() const noexcept { return paths_; }
    const RegressionDesign& design(std::size_t step) const { return designs_.at(step); }

    const TimeGrid& grid() const override { return paths_.grid(); }
    std::size_t state_dim() const override { return paths_.state_dim(); }
    std::size_t brownian_dim() const override { return paths_.brownian_dim(); }
    std::size_t points(std::size_t) const override { return paths_.paths(); }
    std::span<const double> states_at(std::size_t step) const override { return paths_.states_at(step); }
    std::vector<double> weights(std::size_t) const override;
    void expectation(std::size_t step, std::span<const double> next, std::size_t width,
                     std::span<double> out) const override;
    void weighted_expectation(std::size_t step, std::span<const double> next, std::size_t width,
                              std::span<double> out) const override;
    bool exact() const override { return false; }

private:
    PathBundle paths_;
    RegressionOptions options_;
    std::vector<RegressionDesign> designs_;
};

}  // namespace rbsde
